//! Local updating frequencies.
//!
//! The fastest cluster runs `tau_max` local iterations per round; every other
//! cluster runs as many as it can while its round time stays below twice the
//! reference round time, so all clusters reach the barrier at similar times.

use serde::{Deserialize, Serialize};

use crate::clustering::{slowest_iteration_time, Cluster, ClusterPlan};
use crate::telemetry::WorkerProfile;
use crate::{Error, Result};

pub const DEFAULT_TAU_MAX: u32 = 20;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FrequencyConfig {
    pub tau_max: u32,
}

impl Default for FrequencyConfig {
    fn default() -> Self {
        Self {
            tau_max: DEFAULT_TAU_MAX,
        }
    }
}

impl FrequencyConfig {
    pub fn validate(&self) -> Result<()> {
        if self.tau_max == 0 {
            return Err(Error::Config("tau_max must be at least 1".into()));
        }
        Ok(())
    }
}

/// `t_c = τ·t_{c,o} + β_c`: `τ` iterations paced by the slowest member, then
/// the top worker's upload to the parameter server.
pub fn round_time_from_parts(slowest_iteration: f64, uplink: f64, tau: u32) -> f64 {
    tau as f64 * slowest_iteration + uplink
}

pub fn cluster_round_time(cluster: &Cluster, profiles: &[WorkerProfile], tau: u32) -> Result<f64> {
    if tau == 0 {
        return Err(Error::Contract("tau must be at least 1".into()));
    }
    let (slowest, uplink) = parts(cluster, profiles)?;
    Ok(round_time_from_parts(slowest, uplink, tau))
}

fn parts(cluster: &Cluster, profiles: &[WorkerProfile]) -> Result<(f64, f64)> {
    let top = profiles
        .get(cluster.top_worker)
        .ok_or_else(|| Error::Profile(format!("no profile for worker {}", cluster.top_worker)))?;
    Ok((slowest_iteration_time(cluster, profiles)?, top.uplink_time_to_ps))
}

/// Frequencies for clusters given as `(t_{c,o}, β_c)` pairs.
///
/// The reference cluster minimizes the round time at `tau_max` (lowest index
/// on ties) and gets `tau_max`. Others get the largest `τ ≤ tau_max` with
/// `⌊t_c / T_ref⌋ = 1`; when even `τ = 1` overshoots, `τ = 1`. Clusters
/// that stay below `T_ref` at `tau_max` also get `tau_max`.
pub fn frequencies_from_parts(parts: &[(f64, f64)], tau_max: u32) -> Result<Vec<u32>> {
    FrequencyConfig { tau_max }.validate()?;
    if parts.is_empty() {
        return Err(Error::Contract("cannot assign frequencies to an empty plan".into()));
    }
    let round = |(t, b): (f64, f64), tau: u32| round_time_from_parts(t, b, tau);
    let reference = (0..parts.len())
        .min_by(|&a, &b| {
            round(parts[a], tau_max)
                .total_cmp(&round(parts[b], tau_max))
                .then(a.cmp(&b))
        })
        .expect("non-empty");
    let t_ref = round(parts[reference], tau_max);
    Ok(parts
        .iter()
        .enumerate()
        .map(|(c, &p)| {
            if c == reference {
                return tau_max;
            }
            (1..=tau_max)
                .rev()
                .find(|&tau| (round(p, tau) / t_ref).floor() <= 1.0)
                .unwrap_or(1)
        })
        .collect())
}

/// Returns a copy of `plan` with every `τ_c` set.
pub fn assign_frequencies(
    plan: &ClusterPlan,
    profiles: &[WorkerProfile],
    tau_max: u32,
) -> Result<ClusterPlan> {
    let p = plan
        .clusters
        .iter()
        .map(|c| parts(c, profiles))
        .collect::<Result<Vec<_>>>()?;
    let taus = frequencies_from_parts(&p, tau_max)?;
    let mut out = plan.clone();
    for (c, tau) in out.clusters.iter_mut().zip(taus) {
        c.tau = tau;
    }
    Ok(out)
}

/// Copy of `plan` with the same `τ` everywhere.
pub fn uniform_frequencies(plan: &ClusterPlan, tau: u32) -> ClusterPlan {
    let mut out = plan.clone();
    out.clusters.iter_mut().for_each(|c| c.tau = tau);
    out
}

/// Mean idle time of the clusters waiting for the slowest one at the
/// round barrier.
pub fn waiting_from_round_times(times: &[f64]) -> f64 {
    if times.is_empty() {
        return 0.0;
    }
    let max = times.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    times.iter().map(|t| max - t).sum::<f64>() / times.len() as f64
}

pub fn cluster_round_times(plan: &ClusterPlan, profiles: &[WorkerProfile]) -> Result<Vec<f64>> {
    plan.clusters
        .iter()
        .map(|c| cluster_round_time(c, profiles, c.tau))
        .collect()
}

pub fn inter_cluster_waiting(plan: &ClusterPlan, profiles: &[WorkerProfile]) -> Result<f64> {
    Ok(waiting_from_round_times(&cluster_round_times(plan, profiles)?))
}
