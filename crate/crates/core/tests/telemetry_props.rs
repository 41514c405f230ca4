use std::collections::BTreeMap;

use parallel_sfl::datagen::LabelDistribution;
use parallel_sfl::telemetry::{
    check_link_symmetry, mbps_to_bytes_per_sec, smooth_estimate, Fleet, FleetSpec, Measurement,
    ProfileTracker, TransferSizes,
};
use proptest::prelude::*;

fn measurement(mu: f64, beta: f64) -> Measurement {
    Measurement {
        ingress_bandwidth: 1e6,
        bottom_compute_time: mu,
        link_time: BTreeMap::from([(1, beta)]),
        uplink_time_to_ps: beta,
    }
}

const SIZES: TransferSizes = TransferSizes {
    smashed_bytes: 16_384,
    model_bytes: 30_000,
};

proptest! {
    #[test]
    fn estimates_stay_within_observed_range(
        xs in prop::collection::vec(0.001f64..100.0, 1..40),
        alpha in 0.0f64..=1.0,
    ) {
        let mut t = ProfileTracker::new(0, 1e6, LabelDistribution::uniform(2));
        let (mut lo, mut hi) = (f64::INFINITY, 0.0f64);
        for &x in &xs {
            t.observe(&measurement(x, 2.0 * x), alpha, 0.5).unwrap();
            lo = lo.min(x);
            hi = hi.max(x);
            let p = t.profile();
            prop_assert!(p.bottom_compute_time >= lo * (1.0 - 1e-12) && p.bottom_compute_time <= hi * (1.0 + 1e-12));
            prop_assert!((p.top_compute_time - 0.5 * p.bottom_compute_time).abs() <= 1e-12 * hi);
            let link = p.link_time[&1];
            prop_assert!(link >= 2.0 * lo * (1.0 - 1e-12) && link <= 2.0 * hi * (1.0 + 1e-12));
        }
        prop_assert_eq!(t.observations(), xs.len() as u64);
    }

    #[test]
    fn smoothing_preserves_order(
        pairs in prop::collection::vec((0.001f64..50.0, 0.0f64..50.0), 1..30),
        alpha in 0.0f64..=1.0,
    ) {
        // Worker B is never faster than A in any round, so its estimate is
        // never below A's.
        let mut a = pairs[0].0;
        let mut b = pairs[0].0 + pairs[0].1;
        for &(x, d) in &pairs[1..] {
            a = smooth_estimate(a, x, alpha).unwrap();
            b = smooth_estimate(b, x + d, alpha).unwrap();
            prop_assert!(b >= a);
        }
    }

    #[test]
    fn fleets_have_exact_spread_and_valid_bandwidths(
        n in 2usize..60,
        spread in 1.0f64..20.0,
        fluct in 0.0f64..0.9,
        seed in any::<u64>(),
        round in 0u64..100,
    ) {
        let spec = FleetSpec { num_workers: n, compute_spread: spread, bandwidth_fluctuation: fluct, ..FleetSpec::default() };
        let fleet = Fleet::synthesize(&spec, seed).unwrap();
        prop_assert_eq!(fleet.len(), n);
        prop_assert!((fleet.compute_spread() - spread).abs() < 1e-9 * spread);
        let lo = mbps_to_bytes_per_sec(spec.bandwidth_min_mbps);
        let hi = mbps_to_bytes_per_sec(spec.bandwidth_max_mbps);
        for bw in fleet.round_bandwidths(seed, round) {
            prop_assert!(bw >= lo && bw <= hi);
        }
        let ms = fleet.measure(SIZES, seed, round);
        prop_assert_eq!(ms.len(), n);
        for (i, m) in ms.iter().enumerate() {
            prop_assert_eq!(m.link_time.len(), n - 1);
            for (&j, &t) in &m.link_time {
                prop_assert_eq!(t, ms[j].link_time[&i]);
            }
        }
    }
}

#[test]
fn tracked_profiles_keep_links_symmetric() {
    let fleet = Fleet::synthesize(&FleetSpec::default(), 11).unwrap();
    let mut trackers: Vec<_> = fleet
        .workers
        .iter()
        .map(|w| ProfileTracker::new(w.worker_id, w.bandwidth, LabelDistribution::uniform(10)))
        .collect();
    for round in 0..10 {
        for (t, m) in trackers.iter_mut().zip(fleet.measure(SIZES, 11, round)) {
            t.observe(&m, 0.8, 0.1).unwrap();
        }
        let profiles: Vec<_> = trackers.iter().map(|t| t.profile().clone()).collect();
        check_link_symmetry(&profiles).unwrap();
    }
}

#[test]
fn measurements_are_reproducible_and_vary_by_round() {
    let fleet = Fleet::synthesize(&FleetSpec::default(), 5).unwrap();
    assert_eq!(fleet.measure(SIZES, 5, 3), fleet.measure(SIZES, 5, 3));
    assert_ne!(fleet.round_bandwidths(5, 3), fleet.round_bandwidths(5, 4));
    let still = Fleet::synthesize(&FleetSpec { bandwidth_fluctuation: 0.0, ..FleetSpec::default() }, 5).unwrap();
    assert_eq!(still.round_bandwidths(5, 3), still.round_bandwidths(5, 4));
}
