//! Monitored worker state: bandwidth, label distribution, compute and link
//! times, with exponential smoothing of the time measurements.

use std::collections::BTreeMap;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::datagen::LabelDistribution;
use crate::rng::{self, tags};
use crate::{Error, Result, WorkerId};

/// Bits per second to bytes per second.
pub fn mbps_to_bytes_per_sec(mbps: f64) -> f64 {
    mbps * 1e6 / 8.0
}

/// What the parameter server knows about one worker in the current round.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WorkerProfile {
    pub worker_id: WorkerId,
    /// Bytes per second.
    pub ingress_bandwidth: f64,
    pub label_dist: LabelDistribution,
    /// Seconds per bottom-submodel iteration.
    pub bottom_compute_time: f64,
    /// Seconds per top-submodel iteration for one bottom worker's batch.
    pub top_compute_time: f64,
    /// Seconds to exchange one iteration's smashed data and gradients with
    /// another worker.
    pub link_time: BTreeMap<WorkerId, f64>,
    /// Seconds for this worker, acting as a top worker, to ship its cluster
    /// model to the parameter server.
    pub uplink_time_to_ps: f64,
}

impl WorkerProfile {
    pub fn link_to(&self, other: WorkerId) -> Result<f64> {
        self.link_time.get(&other).copied().ok_or_else(|| {
            Error::Profile(format!(
                "worker {} has no link entry for worker {other}",
                self.worker_id
            ))
        })
    }

    pub fn validate(&self) -> Result<()> {
        let positive = |name: &str, v: f64| -> Result<()> {
            if v.is_finite() && v > 0.0 {
                Ok(())
            } else {
                Err(Error::Profile(format!(
                    "worker {}: {name} must be positive, got {v}",
                    self.worker_id
                )))
            }
        };
        positive("ingress_bandwidth", self.ingress_bandwidth)?;
        positive("bottom_compute_time", self.bottom_compute_time)?;
        positive("top_compute_time", self.top_compute_time)?;
        positive("uplink_time_to_ps", self.uplink_time_to_ps)?;
        for (&j, &t) in &self.link_time {
            positive(&format!("link_time[{j}]"), t)?;
        }
        Ok(())
    }
}

/// Checks that `β_ij = β_ji` wherever both directions are recorded.
pub fn check_link_symmetry(profiles: &[WorkerProfile]) -> Result<()> {
    let by_id: BTreeMap<WorkerId, &WorkerProfile> =
        profiles.iter().map(|p| (p.worker_id, p)).collect();
    for p in profiles {
        for (&j, &t) in &p.link_time {
            if let Some(back) = by_id.get(&j).and_then(|q| q.link_time.get(&p.worker_id)) {
                if (back - t).abs() > 1e-9 {
                    return Err(Error::Profile(format!(
                        "link {}<->{j} asymmetric: {t} vs {back}",
                        p.worker_id
                    )));
                }
            }
        }
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SmoothingConfig {
    pub alpha: f64,
}

impl Default for SmoothingConfig {
    fn default() -> Self {
        Self { alpha: 0.8 }
    }
}

impl SmoothingConfig {
    pub fn validate(&self) -> Result<()> {
        check_alpha(self.alpha)
    }
}

fn check_alpha(alpha: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&alpha) {
        return Err(Error::Config(format!("alpha must be in [0, 1], got {alpha}")));
    }
    Ok(())
}

/// `alpha·previous + (1 − alpha)·latest`.
pub fn smooth_estimate(previous: f64, latest: f64, alpha: f64) -> Result<f64> {
    check_alpha(alpha)?;
    if !previous.is_finite() || !latest.is_finite() {
        return Err(Error::Measurement(format!(
            "non-finite estimate inputs {previous}, {latest}"
        )));
    }
    Ok(alpha * previous + (1.0 - alpha) * latest)
}

/// One round's raw timing measurements for a worker.
#[derive(Debug, Clone, PartialEq)]
pub struct Measurement {
    /// Available ingress bandwidth this round, bytes/s.
    pub ingress_bandwidth: f64,
    pub bottom_compute_time: f64,
    pub link_time: BTreeMap<WorkerId, f64>,
    pub uplink_time_to_ps: f64,
}

impl Measurement {
    fn validate(&self, worker: WorkerId) -> Result<()> {
        let ok = |v: f64| v.is_finite() && v > 0.0;
        if !ok(self.bottom_compute_time) || !ok(self.uplink_time_to_ps) || !ok(self.ingress_bandwidth) {
            return Err(Error::Measurement(format!(
                "worker {worker}: non-positive time measurement"
            )));
        }
        if let Some((j, t)) = self.link_time.iter().find(|(_, &t)| !ok(t)) {
            return Err(Error::Measurement(format!(
                "worker {worker}: link time to {j} is {t}"
            )));
        }
        Ok(())
    }
}

/// Smoothed per-worker state. The first observation initializes every
/// estimate directly.
#[derive(Debug, Clone, PartialEq)]
pub struct ProfileTracker {
    profile: WorkerProfile,
    observations: u64,
}

impl ProfileTracker {
    /// `label_dist` is taken as given; `ingress_bandwidth` is a placeholder
    /// until the first [`ProfileTracker::observe`] fills every measured field.
    pub fn new(worker_id: WorkerId, ingress_bandwidth: f64, label_dist: LabelDistribution) -> Self {
        Self {
            profile: WorkerProfile {
                worker_id,
                ingress_bandwidth,
                label_dist,
                bottom_compute_time: 0.0,
                top_compute_time: 0.0,
                link_time: BTreeMap::new(),
                uplink_time_to_ps: 0.0,
            },
            observations: 0,
        }
    }

    pub fn profile(&self) -> &WorkerProfile {
        &self.profile
    }

    pub fn observations(&self) -> u64 {
        self.observations
    }

    pub fn observe(&mut self, m: &Measurement, alpha: f64, top_ratio: f64) -> Result<()> {
        let first = self.observations == 0;
        self.profile = observe_round(
            (!first).then_some(&self.profile),
            &self.profile,
            m,
            alpha,
            top_ratio,
        )?;
        self.observations += 1;
        Ok(())
    }
}

/// Folds one round of measurements into a profile. Times are smoothed; with
/// `previous = None` the measurements become the estimates. Bandwidth is the
/// round's reading as is. The top compute time is always the bottom estimate
/// times `top_ratio`.
pub fn observe_round(
    previous: Option<&WorkerProfile>,
    base: &WorkerProfile,
    m: &Measurement,
    alpha: f64,
    top_ratio: f64,
) -> Result<WorkerProfile> {
    check_alpha(alpha)?;
    m.validate(base.worker_id)?;
    if !(top_ratio.is_finite() && top_ratio > 0.0) {
        return Err(Error::Config(format!("top compute ratio must be positive, got {top_ratio}")));
    }
    let mut next = base.clone();
    next.ingress_bandwidth = m.ingress_bandwidth;
    match previous {
        None => {
            next.bottom_compute_time = m.bottom_compute_time;
            next.uplink_time_to_ps = m.uplink_time_to_ps;
            next.link_time = m.link_time.clone();
        }
        Some(prev) => {
            next.bottom_compute_time =
                smooth_estimate(prev.bottom_compute_time, m.bottom_compute_time, alpha)?;
            next.uplink_time_to_ps =
                smooth_estimate(prev.uplink_time_to_ps, m.uplink_time_to_ps, alpha)?;
            next.link_time = prev.link_time.clone();
            for (&j, &t) in &m.link_time {
                let est = match prev.link_time.get(&j) {
                    Some(&old) => smooth_estimate(old, t, alpha)?,
                    None => t,
                };
                next.link_time.insert(j, est);
            }
        }
    }
    next.top_compute_time = next.bottom_compute_time * top_ratio;
    Ok(next)
}

/// Heterogeneity parameters of a synthetic fleet.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FleetSpec {
    pub num_workers: usize,
    /// Ratio between the slowest and fastest bottom compute time.
    pub compute_spread: f64,
    /// Bottom compute time of the fastest worker, seconds per iteration.
    pub base_compute_time: f64,
    pub bandwidth_min_mbps: f64,
    pub bandwidth_max_mbps: f64,
    /// Relative per-round measurement noise, uniform in `[1 − j, 1 + j]`.
    pub jitter: f64,
    /// Relative per-round swing of each worker's available bandwidth,
    /// uniform in `[1 − f, 1 + f]` around its nominal value and clamped to
    /// the bandwidth range.
    pub bandwidth_fluctuation: f64,
}

impl Default for FleetSpec {
    fn default() -> Self {
        Self {
            num_workers: 40,
            compute_spread: 10.0,
            base_compute_time: 0.05,
            bandwidth_min_mbps: 1.0,
            bandwidth_max_mbps: 30.0,
            jitter: 0.05,
            bandwidth_fluctuation: 0.5,
        }
    }
}

impl FleetSpec {
    pub fn validate(&self) -> Result<()> {
        if self.num_workers == 0 {
            return Err(Error::Config("fleet.num_workers must be at least 1".into()));
        }
        if !(self.compute_spread.is_finite() && self.compute_spread >= 1.0) {
            return Err(Error::Config(format!(
                "fleet.compute_spread must be >= 1, got {}",
                self.compute_spread
            )));
        }
        if !(self.base_compute_time.is_finite() && self.base_compute_time > 0.0) {
            return Err(Error::Config("fleet.base_compute_time must be positive".into()));
        }
        if !(self.bandwidth_min_mbps > 0.0
            && self.bandwidth_max_mbps.is_finite()
            && self.bandwidth_min_mbps <= self.bandwidth_max_mbps)
        {
            return Err(Error::Config(format!(
                "fleet bandwidth range [{}, {}] Mb/s is invalid",
                self.bandwidth_min_mbps, self.bandwidth_max_mbps
            )));
        }
        if !(0.0..1.0).contains(&self.jitter) {
            return Err(Error::Config(format!(
                "fleet.jitter must be in [0, 1), got {}",
                self.jitter
            )));
        }
        if !(0.0..1.0).contains(&self.bandwidth_fluctuation) {
            return Err(Error::Config(format!(
                "fleet.bandwidth_fluctuation must be in [0, 1), got {}",
                self.bandwidth_fluctuation
            )));
        }
        Ok(())
    }
}

/// Ground-truth capability of one simulated worker.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WorkerCapability {
    pub worker_id: WorkerId,
    /// Bytes per second.
    pub bandwidth: f64,
    pub bottom_compute_time: f64,
}

/// Per-iteration payload sizes that turn bandwidths into link times.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TransferSizes {
    pub smashed_bytes: usize,
    pub model_bytes: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Fleet {
    pub workers: Vec<WorkerCapability>,
    pub jitter: f64,
    pub bandwidth_fluctuation: f64,
    /// Clamp range for fluctuating bandwidth, bytes/s.
    pub bandwidth_range: (f64, f64),
}

impl Fleet {
    /// Compute times are log-uniform and stretched so the slowest is exactly
    /// `compute_spread` times the fastest; bandwidths are uniform in the
    /// configured range.
    pub fn synthesize(spec: &FleetSpec, seed: u64) -> Result<Self> {
        spec.validate()?;
        let mut rng = rng::stream(seed, tags::FLEET);
        let raw: Vec<f64> = (0..spec.num_workers).map(|_| rng.random::<f64>()).collect();
        let lo = raw.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = raw.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let log_spread = spec.compute_spread.ln();
        let workers = raw
            .iter()
            .enumerate()
            .map(|(i, &u)| {
                let frac = if hi > lo { (u - lo) / (hi - lo) } else { 0.0 };
                let bw_mbps = spec.bandwidth_min_mbps
                    + rng.random::<f64>() * (spec.bandwidth_max_mbps - spec.bandwidth_min_mbps);
                WorkerCapability {
                    worker_id: i,
                    bandwidth: mbps_to_bytes_per_sec(bw_mbps),
                    bottom_compute_time: spec.base_compute_time * (frac * log_spread).exp(),
                }
            })
            .collect();
        Ok(Self {
            workers,
            jitter: spec.jitter,
            bandwidth_fluctuation: spec.bandwidth_fluctuation,
            bandwidth_range: (
                mbps_to_bytes_per_sec(spec.bandwidth_min_mbps),
                mbps_to_bytes_per_sec(spec.bandwidth_max_mbps),
            ),
        })
    }

    pub fn len(&self) -> usize {
        self.workers.len()
    }

    pub fn is_empty(&self) -> bool {
        self.workers.is_empty()
    }

    pub fn compute_spread(&self) -> f64 {
        let times = self.workers.iter().map(|w| w.bottom_compute_time);
        let max = times.clone().fold(f64::NEG_INFINITY, f64::max);
        let min = times.fold(f64::INFINITY, f64::min);
        max / min
    }

    /// Noise-free link time at nominal bandwidths: smashed data into `j`'s
    /// ingress plus gradients into `i`'s ingress. Symmetric by construction.
    pub fn nominal_link_time(&self, i: WorkerId, j: WorkerId, sizes: TransferSizes) -> f64 {
        link_time(self.workers[i].bandwidth, self.workers[j].bandwidth, sizes)
    }

    pub fn nominal_uplink_time(&self, i: WorkerId, sizes: TransferSizes) -> f64 {
        sizes.model_bytes as f64 / self.workers[i].bandwidth
    }

    /// Available bandwidth of every worker in `round`.
    pub fn round_bandwidths(&self, seed: u64, round: u64) -> Vec<f64> {
        let mut rng = rng::stream(rng::derive_seed(seed, round), tags::BANDWIDTH);
        let f = self.bandwidth_fluctuation;
        let (lo, hi) = self.bandwidth_range;
        self.workers
            .iter()
            .map(|w| {
                let factor = if f > 0.0 { 1.0 + rng.random_range(-f..=f) } else { 1.0 };
                (w.bandwidth * factor).clamp(lo, hi)
            })
            .collect()
    }

    /// Draws this round's measurements for every worker. Link and uplink
    /// times follow the round's bandwidths; link measurements share one noise
    /// factor per unordered pair so they stay symmetric.
    pub fn measure(&self, sizes: TransferSizes, seed: u64, round: u64) -> Vec<Measurement> {
        let bw = self.round_bandwidths(seed, round);
        let mut rng = rng::stream(rng::derive_seed(seed, round), tags::MEASURE);
        let n = self.workers.len();
        let j = self.jitter;
        let mut noise = || {
            if j > 0.0 {
                1.0 + rng.random_range(-j..=j)
            } else {
                1.0
            }
        };
        let mut links = vec![vec![0.0; n]; n];
        for a in 0..n {
            for b in (a + 1)..n {
                let t = link_time(bw[a], bw[b], sizes) * noise();
                links[a][b] = t;
                links[b][a] = t;
            }
        }
        (0..n)
            .map(|i| Measurement {
                ingress_bandwidth: bw[i],
                bottom_compute_time: self.workers[i].bottom_compute_time * noise(),
                uplink_time_to_ps: sizes.model_bytes as f64 / bw[i] * noise(),
                link_time: (0..n).filter(|&k| k != i).map(|k| (k, links[i][k])).collect(),
            })
            .collect()
    }
}

fn link_time(bw_i: f64, bw_j: f64, sizes: TransferSizes) -> f64 {
    let s = sizes.smashed_bytes as f64;
    s / bw_i + s / bw_j
}
