mod common;

use common::synthetic_profiles;
use parallel_sfl::clustering::{build_plan, default_k, UtilityWeights};
use parallel_sfl::frequency::{
    assign_frequencies, cluster_round_time, frequencies_from_parts, inter_cluster_waiting,
    uniform_frequencies,
};
use parallel_sfl::rng;
use parallel_sfl::telemetry::{mbps_to_bytes_per_sec, FleetSpec};
use proptest::prelude::*;

#[test]
fn spec_scan_example() {
    // Reference (1, 2) at τ_max = 10 gives T = 12; (2, 2) fits up to τ = 10.
    let taus = frequencies_from_parts(&[(1.0, 2.0), (2.0, 2.0)], 10).unwrap();
    assert_eq!(taus, vec![10, 10]);
    // Only τ ≤ 10 is tried, and ⌊(2τ + 2)/12⌋ = 1 holds for τ in 5..=10.
    let ok: Vec<u32> = (1..=10u32).filter(|t| ((2 * t + 2) as f64 / 12.0).floor() == 1.0).collect();
    assert_eq!(ok, (5..=10).collect::<Vec<_>>());
}

#[test]
fn assigned_frequencies_cut_waiting_on_spread_fleets() {
    for seed in 0..10 {
        let spec = FleetSpec {
            compute_spread: 10.0,
            ..FleetSpec::default()
        };
        let ps = synthetic_profiles(&spec, 10.0, seed);
        let w = UtilityWeights::for_fleet(&ps, 0.5, mbps_to_bytes_per_sec(4.0)).unwrap();
        let plan = build_plan(&ps, &w, default_k(ps.len()), &mut rng::stream(seed, 6), 0).unwrap();
        let adaptive = assign_frequencies(&plan, &ps, 20).unwrap();
        let uniform = uniform_frequencies(&plan, 20);
        let a = inter_cluster_waiting(&adaptive, &ps).unwrap();
        let u = inter_cluster_waiting(&uniform, &ps).unwrap();
        assert!(a <= u, "seed {seed}: {a} > {u}");
        for c in &adaptive.clusters {
            assert!(cluster_round_time(c, &ps, c.tau).unwrap() > 0.0);
        }
    }
}

proptest! {
    #[test]
    fn floor_rule_and_bounds(
        parts in prop::collection::vec((0.01f64..10.0, 0.0f64..5.0), 1..10),
        tau_max in 1u32..40,
    ) {
        let taus = frequencies_from_parts(&parts, tau_max).unwrap();
        let t = |(s, b): (f64, f64), tau: u32| tau as f64 * s + b;
        let t_ref = parts.iter().map(|&p| t(p, tau_max)).fold(f64::INFINITY, f64::min);
        for (&p, &tau) in parts.iter().zip(&taus) {
            prop_assert!((1..=tau_max).contains(&tau));
            let ratio = (t(p, tau) / t_ref).floor();
            prop_assert!(ratio == 0.0 || ratio == 1.0 || tau == 1, "ratio {ratio} at tau {tau}");
            if tau < tau_max {
                // Largest feasible choice: one more iteration breaks the rule.
                prop_assert!((t(p, tau + 1) / t_ref).floor() >= 2.0);
            }
        }
    }

    #[test]
    fn slower_clusters_never_get_more_iterations(
        base in 0.01f64..5.0,
        extra in 0.0f64..5.0,
        uplink in 0.0f64..3.0,
        others in prop::collection::vec((0.01f64..10.0, 0.0f64..5.0), 0..5),
        tau_max in 1u32..30,
    ) {
        let mut parts = others.clone();
        parts.push((base, uplink));
        parts.push((base + extra, uplink));
        let taus = frequencies_from_parts(&parts, tau_max).unwrap();
        let n = parts.len();
        prop_assert!(taus[n - 1] <= taus[n - 2]);
    }
}
