//! Worker clustering.
//!
//! Workers are first grouped by label distribution with K-means. Clusters are
//! then built greedily: a top worker with the highest ingress bandwidth is
//! taken from the largest remaining group, and members are drawn from a
//! candidate set holding the slowest remaining worker of every group, always
//! picking the candidate that brings the cluster's label mix closest to the
//! fleet-wide mix while the bandwidth and top-compute constraints hold.
//! Finally, member moves and exchanges between clusters lower the summed
//! utility (normalized waiting time plus normalized KL gap).

use std::collections::BTreeSet;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::datagen::LabelDistribution;
use crate::rng::SimRng;
use crate::telemetry::WorkerProfile;
use crate::{Error, Result, WorkerId};

/// Additive smoothing applied to both KL arguments.
pub const KL_EPSILON: f64 = 1e-9;

/// Minimum utility decrease accepted by refinement.
const IMPROVEMENT_TOL: f64 = 1e-12;

const KMEANS_MAX_ITERS: usize = 100;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Cluster {
    pub top_worker: WorkerId,
    /// Bottom workers, ascending ids. Empty for a solo cluster, where the top
    /// worker trains the whole model on its own shard.
    pub members: Vec<WorkerId>,
    /// Mean label distribution of the members (top worker excluded), or the
    /// top worker's own distribution in a solo cluster.
    pub label_mix: LabelDistribution,
    /// Local updating frequency; 1 until the frequency module assigns it.
    pub tau: u32,
}

impl Cluster {
    pub fn new(top_worker: WorkerId, mut members: Vec<WorkerId>, profiles: &[WorkerProfile]) -> Result<Self> {
        if members.contains(&top_worker) {
            return Err(Error::Contract(format!(
                "top worker {top_worker} also listed as a member"
            )));
        }
        members.sort_unstable();
        let label_mix = if members.is_empty() {
            profile(profiles, top_worker)?.label_dist.clone()
        } else {
            mix_of(&members, profiles)?
        };
        Ok(Self {
            top_worker,
            members,
            label_mix,
            tau: 1,
        })
    }

    /// Number of bottom workers `N_c`.
    pub fn size(&self) -> usize {
        self.members.len()
    }

    pub fn is_solo(&self) -> bool {
        self.members.is_empty()
    }

    /// Workers whose shards the cluster trains on: the members, or the top
    /// worker itself in a solo cluster.
    pub fn trainers(&self) -> Vec<WorkerId> {
        if self.is_solo() {
            vec![self.top_worker]
        } else {
            self.members.clone()
        }
    }

    pub fn workers(&self) -> impl Iterator<Item = WorkerId> + '_ {
        std::iter::once(self.top_worker).chain(self.members.iter().copied())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterPlan {
    pub round: u64,
    pub clusters: Vec<Cluster>,
}

impl ClusterPlan {
    /// Checks that every worker in `0..num_workers` appears exactly once.
    pub fn check_partition(&self, num_workers: usize) -> Result<()> {
        let mut seen = vec![false; num_workers];
        for c in &self.clusters {
            for w in c.workers() {
                match seen.get_mut(w) {
                    None => {
                        return Err(Error::Contract(format!("worker {w} outside the fleet")))
                    }
                    Some(true) => {
                        return Err(Error::Contract(format!("worker {w} assigned twice")))
                    }
                    Some(s) => *s = true,
                }
            }
        }
        if let Some(w) = seen.iter().position(|s| !s) {
            return Err(Error::Contract(format!("worker {w} not assigned")));
        }
        Ok(())
    }

    pub fn member_counts(&self) -> Vec<usize> {
        self.clusters.iter().map(Cluster::size).collect()
    }

    /// Per cluster, the number of shards trained on.
    pub fn trainer_counts(&self) -> Vec<usize> {
        self.clusters.iter().map(|c| c.trainers().len()).collect()
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        Ok(serde_json::from_str(s)?)
    }
}

/// Weights and normalizers of the cluster utility.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct UtilityWeights {
    /// Trade-off between waiting time (1) and label skew (0).
    pub lambda: f64,
    /// Ingress bandwidth one bottom worker occupies at its top worker, bytes/s.
    pub per_worker_bandwidth: f64,
    pub waiting_norm: f64,
    pub kl_norm: f64,
}

impl UtilityWeights {
    /// Normalizers derived from the fleet: the waiting term is divided by the
    /// spread of nominal per-iteration times `μ_b,i + mean_j β_ij`, the KL
    /// term by `ln M`.
    pub fn for_fleet(profiles: &[WorkerProfile], lambda: f64, per_worker_bandwidth: f64) -> Result<Self> {
        let nominal: Vec<f64> = profiles
            .iter()
            .map(|p| {
                let links: Vec<f64> = p
                    .link_time
                    .iter()
                    .filter(|(&j, _)| j != p.worker_id)
                    .map(|(_, &t)| t)
                    .collect();
                let mean_link = if links.is_empty() {
                    0.0
                } else {
                    links.iter().sum::<f64>() / links.len() as f64
                };
                p.bottom_compute_time + mean_link
            })
            .collect();
        let hi = nominal.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let lo = nominal.iter().copied().fold(f64::INFINITY, f64::min);
        let spread = hi - lo;
        let waiting_norm = if spread.is_finite() && spread > 0.0 { spread } else { 1.0 };
        let m = profiles.first().map_or(2, |p| p.label_dist.len()).max(2);
        let w = Self {
            lambda,
            per_worker_bandwidth,
            waiting_norm,
            kl_norm: (m as f64).ln(),
        };
        w.validate()?;
        Ok(w)
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.lambda) {
            return Err(Error::Config(format!("lambda must be in [0, 1], got {}", self.lambda)));
        }
        if !(self.per_worker_bandwidth.is_finite() && self.per_worker_bandwidth > 0.0) {
            return Err(Error::Config("per-worker bandwidth must be positive".into()));
        }
        if !(self.waiting_norm > 0.0 && self.kl_norm > 0.0) {
            return Err(Error::Config("utility normalizers must be positive".into()));
        }
        Ok(())
    }
}

/// `Σ_j p_j ln(p_j / q_j)` with `0·ln 0 = 0`. Infinite when some `q_j = 0`
/// under a positive `p_j`.
pub fn kl_divergence(p: &LabelDistribution, q: &LabelDistribution) -> Result<f64> {
    if p.len() != q.len() {
        return Err(Error::Shape(format!(
            "KL between distributions of length {} and {}",
            p.len(),
            q.len()
        )));
    }
    Ok(kl_raw(p.probs(), q.probs()))
}

fn kl_raw(p: &[f64], q: &[f64]) -> f64 {
    p.iter()
        .zip(q)
        .filter(|(&pj, _)| pj > 0.0)
        .map(|(&pj, &qj)| pj * (pj / qj).ln())
        .sum::<f64>()
        .max(0.0)
}

fn smooth(p: &[f64]) -> Vec<f64> {
    let denom = 1.0 + p.len() as f64 * KL_EPSILON;
    p.iter().map(|v| (v + KL_EPSILON) / denom).collect()
}

/// KL divergence after additive smoothing of both arguments, so that
/// one-hot distributions give finite values.
pub fn smoothed_kl(p: &LabelDistribution, q: &LabelDistribution) -> Result<f64> {
    if p.len() != q.len() {
        return Err(Error::Shape(format!(
            "KL between distributions of length {} and {}",
            p.len(),
            q.len()
        )));
    }
    Ok(kl_raw(&smooth(p.probs()), &smooth(q.probs())))
}

/// Average of both KL directions on smoothed inputs.
pub fn symmetric_kl(p: &[f64], q: &[f64]) -> f64 {
    let (ps, qs) = (smooth(p), smooth(q));
    0.5 * (kl_raw(&ps, &qs) + kl_raw(&qs, &ps))
}

/// The fleet-wide label mix `Φ_0 = (1/N)·Σ_i V_i`.
pub fn iid_reference(profiles: &[WorkerProfile]) -> Result<LabelDistribution> {
    LabelDistribution::mean(profiles.iter().map(|p| &p.label_dist))
}

fn profile(profiles: &[WorkerProfile], id: WorkerId) -> Result<&WorkerProfile> {
    match profiles.get(id) {
        Some(p) if p.worker_id == id => Ok(p),
        _ => Err(Error::Profile(format!(
            "no profile for worker {id} (profiles must be indexed by worker id)"
        ))),
    }
}

fn mix_of(members: &[WorkerId], profiles: &[WorkerProfile]) -> Result<LabelDistribution> {
    let dists = members
        .iter()
        .map(|&m| profile(profiles, m).map(|p| &p.label_dist))
        .collect::<Result<Vec<_>>>()?;
    LabelDistribution::mean(dists)
}

/// Per-iteration completion time of bottom worker `worker` paired with top
/// worker `top`: `μ_b,i + β_i,top + μ_p,top`.
pub fn iteration_time(worker: &WorkerProfile, top: &WorkerProfile) -> Result<f64> {
    Ok(worker.bottom_compute_time + worker.link_to(top.worker_id)? + top.top_compute_time)
}

fn member_times(cluster: &Cluster, profiles: &[WorkerProfile]) -> Result<Vec<f64>> {
    let top = profile(profiles, cluster.top_worker)?;
    if cluster.is_solo() {
        return Ok(vec![top.bottom_compute_time + top.top_compute_time]);
    }
    cluster
        .members
        .iter()
        .map(|&m| iteration_time(profile(profiles, m)?, top))
        .collect()
}

/// Slowest member's per-iteration time `t_{c,o}`.
pub fn slowest_iteration_time(cluster: &Cluster, profiles: &[WorkerProfile]) -> Result<f64> {
    Ok(member_times(cluster, profiles)?
        .into_iter()
        .fold(0.0, f64::max))
}

/// Mean idle time of the members per iteration, waiting for the slowest.
pub fn intra_cluster_waiting(cluster: &Cluster, profiles: &[WorkerProfile]) -> Result<f64> {
    Ok(waiting_of(&member_times(cluster, profiles)?))
}

fn waiting_of(times: &[f64]) -> f64 {
    if times.is_empty() {
        return 0.0;
    }
    let slowest = times.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    times.iter().map(|t| slowest - t).sum::<f64>() / times.len() as f64
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Constraint {
    /// `N_c·b ≤ B_top`.
    Bandwidth,
    /// `N_c·μ_p,top ≤ max_i (μ_b,i + β_i,top)`.
    TopCompute,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Feasibility {
    pub violations: Vec<Constraint>,
}

impl Feasibility {
    pub fn is_feasible(&self) -> bool {
        self.violations.is_empty()
    }
}

fn constraint_violations(
    top: &WorkerProfile,
    members: &[WorkerId],
    profiles: &[WorkerProfile],
    weights: &UtilityWeights,
) -> Result<Vec<Constraint>> {
    if members.is_empty() {
        // A solo cluster exchanges no smashed data.
        return Ok(Vec::new());
    }
    let n = members.len() as f64;
    let mut violations = Vec::new();
    if n * weights.per_worker_bandwidth > top.ingress_bandwidth {
        violations.push(Constraint::Bandwidth);
    }
    let mut slowest_bottom = f64::NEG_INFINITY;
    for &m in members {
        let p = profile(profiles, m)?;
        slowest_bottom = slowest_bottom.max(p.bottom_compute_time + p.link_to(top.worker_id)?);
    }
    if n * top.top_compute_time > slowest_bottom {
        violations.push(Constraint::TopCompute);
    }
    Ok(violations)
}

pub fn feasible(
    cluster: &Cluster,
    profiles: &[WorkerProfile],
    weights: &UtilityWeights,
) -> Result<Feasibility> {
    let top = profile(profiles, cluster.top_worker)?;
    Ok(Feasibility {
        violations: constraint_violations(top, &cluster.members, profiles, weights)?,
    })
}

/// `λ·W_c/waiting_norm + (1 − λ)·KL(Φ_c‖Φ_0)/kl_norm`.
pub fn cluster_utility(
    cluster: &Cluster,
    profiles: &[WorkerProfile],
    weights: &UtilityWeights,
    reference: &LabelDistribution,
) -> Result<f64> {
    let waiting = intra_cluster_waiting(cluster, profiles)?;
    let kl = smoothed_kl(&cluster.label_mix, reference)?;
    Ok(combine_utility(waiting, kl, weights))
}

fn combine_utility(waiting: f64, kl: f64, weights: &UtilityWeights) -> f64 {
    weights.lambda * (waiting / weights.waiting_norm)
        + (1.0 - weights.lambda) * (kl / weights.kl_norm)
}

pub fn plan_utility(
    plan: &ClusterPlan,
    profiles: &[WorkerProfile],
    weights: &UtilityWeights,
    reference: &LabelDistribution,
) -> Result<f64> {
    plan.clusters
        .iter()
        .map(|c| cluster_utility(c, profiles, weights, reference))
        .sum()
}

/// Mean over clusters of `KL(Φ_c‖Φ_0)`.
pub fn mean_cluster_kl(plan: &ClusterPlan, reference: &LabelDistribution) -> Result<f64> {
    if plan.clusters.is_empty() {
        return Ok(0.0);
    }
    let total: f64 = plan
        .clusters
        .iter()
        .map(|c| smoothed_kl(&c.label_mix, reference))
        .sum::<Result<f64>>()?;
    Ok(total / plan.clusters.len() as f64)
}

/// `max(1, round(N/5))`.
pub fn default_k(num_workers: usize) -> usize {
    ((num_workers as f64 / 5.0).round() as usize).max(1)
}

/// Groups workers into `k` non-empty sets by label distribution.
///
/// Lloyd iterations with k-means++ seeding; the distance is the symmetrized
/// smoothed KL divergence and centroids are arithmetic means. Groups that end
/// up empty take the worker farthest from its centroid. Returned groups list
/// ascending worker ids.
pub fn kmeans_label_groups(
    profiles: &[WorkerProfile],
    k: usize,
    rng: &mut SimRng,
) -> Result<Vec<Vec<WorkerId>>> {
    let n = profiles.len();
    if k == 0 || k > n {
        return Err(Error::Config(format!("K must be in [1, {n}], got {k}")));
    }
    let points: Vec<&[f64]> = profiles.iter().map(|p| p.label_dist.probs()).collect();

    let mut centroids: Vec<Vec<f64>> = Vec::with_capacity(k);
    let mut chosen = vec![false; n];
    let first = rng.random_range(0..n);
    chosen[first] = true;
    centroids.push(points[first].to_vec());
    while centroids.len() < k {
        let dist: Vec<f64> = (0..n)
            .map(|i| {
                if chosen[i] {
                    0.0
                } else {
                    centroids
                        .iter()
                        .map(|c| symmetric_kl(points[i], c))
                        .fold(f64::INFINITY, f64::min)
                }
            })
            .collect();
        let total: f64 = dist.iter().sum();
        let pick = if total > 0.0 && total.is_finite() {
            let mut target = rng.random::<f64>() * total;
            let mut pick = None;
            for (i, d) in dist.iter().enumerate() {
                if *d > 0.0 {
                    pick = Some(i);
                    if target < *d {
                        break;
                    }
                    target -= d;
                }
            }
            pick.expect("positive total weight")
        } else {
            let free: Vec<usize> = (0..n).filter(|&i| !chosen[i]).collect();
            free[rng.random_range(0..free.len())]
        };
        chosen[pick] = true;
        centroids.push(points[pick].to_vec());
    }

    let mut assign = vec![usize::MAX; n];
    for _ in 0..KMEANS_MAX_ITERS {
        let mut next: Vec<usize> = points
            .iter()
            .map(|p| nearest(p, &centroids).0)
            .collect();
        fill_empty_groups(&mut next, &points, &centroids, k);
        let changed = next != assign;
        assign = next;
        for (c, centroid) in centroids.iter_mut().enumerate() {
            let idx: Vec<usize> = (0..n).filter(|&i| assign[i] == c).collect();
            let dim = centroid.len();
            let mut mean = vec![0.0; dim];
            for &i in &idx {
                for (m, v) in mean.iter_mut().zip(points[i]) {
                    *m += v;
                }
            }
            mean.iter_mut().for_each(|m| *m /= idx.len() as f64);
            *centroid = mean;
        }
        if !changed {
            break;
        }
    }

    let mut groups = vec![Vec::new(); k];
    for (i, &g) in assign.iter().enumerate() {
        groups[g].push(profiles[i].worker_id);
    }
    Ok(groups)
}

fn nearest(p: &[f64], centroids: &[Vec<f64>]) -> (usize, f64) {
    centroids
        .iter()
        .enumerate()
        .map(|(c, centroid)| (c, symmetric_kl(p, centroid)))
        .min_by(|a, b| a.1.total_cmp(&b.1).then(a.0.cmp(&b.0)))
        .expect("at least one centroid")
}

fn fill_empty_groups(assign: &mut [usize], points: &[&[f64]], centroids: &[Vec<f64>], k: usize) {
    loop {
        let mut counts = vec![0usize; k];
        assign.iter().for_each(|&g| counts[g] += 1);
        let Some(empty) = counts.iter().position(|&c| c == 0) else {
            return;
        };
        let donor = (0..assign.len())
            .filter(|&i| counts[assign[i]] >= 2)
            .max_by(|&a, &b| {
                let da = symmetric_kl(points[a], &centroids[assign[a]]);
                let db = symmetric_kl(points[b], &centroids[assign[b]]);
                da.total_cmp(&db).then(b.cmp(&a))
            })
            .expect("k <= n leaves a group with two points");
        assign[donor] = empty;
    }
}

/// Greedy cluster construction (before refinement).
///
/// Workers that cannot be the top of any feasible cluster are later placed
/// as members of the least-loaded cluster that can take them; failing that,
/// they are paired with a member split off from an existing cluster. A
/// worker that fits nowhere forms a solo cluster.
pub fn build_plan(
    profiles: &[WorkerProfile],
    weights: &UtilityWeights,
    k: usize,
    rng: &mut SimRng,
    round: u64,
) -> Result<ClusterPlan> {
    let n = profiles.len();
    if n < 2 {
        return Err(Error::Config(format!(
            "clustering needs at least 2 workers, got {n}"
        )));
    }
    for (i, p) in profiles.iter().enumerate() {
        if p.worker_id != i {
            return Err(Error::Profile(format!(
                "profile at index {i} has worker_id {}",
                p.worker_id
            )));
        }
    }
    weights.validate()?;
    let reference = iid_reference(profiles)?;
    let groups = kmeans_label_groups(profiles, k, rng)?;
    let mut group_of = vec![0usize; n];
    for (g, ws) in groups.iter().enumerate() {
        for &w in ws {
            group_of[w] = g;
        }
    }

    let mut unassigned: BTreeSet<WorkerId> = (0..n).collect();
    let mut not_top: BTreeSet<WorkerId> = BTreeSet::new();
    let mut built: Vec<(WorkerId, Vec<WorkerId>)> = Vec::new();

    loop {
        let mut group_sizes = vec![0usize; groups.len()];
        unassigned.iter().for_each(|&w| group_sizes[group_of[w]] += 1);
        let top = unassigned
            .iter()
            .copied()
            .filter(|w| !not_top.contains(w))
            .min_by(|&a, &b| {
                group_sizes[group_of[b]]
                    .cmp(&group_sizes[group_of[a]])
                    .then(group_of[a].cmp(&group_of[b]))
                    .then(
                        profiles[b]
                            .ingress_bandwidth
                            .total_cmp(&profiles[a].ingress_bandwidth),
                    )
                    .then(a.cmp(&b))
            });
        let Some(top) = top else { break };
        unassigned.remove(&top);
        let members = grow_cluster(top, &mut unassigned, &group_of, groups.len(), profiles, weights, &reference)?;
        if members.is_empty() {
            unassigned.insert(top);
            not_top.insert(top);
        } else {
            built.push((top, members));
        }
    }

    for w in std::mem::take(&mut unassigned) {
        place_leftover(w, &mut built, profiles, weights)?;
    }

    let clusters = built
        .into_iter()
        .map(|(top, members)| Cluster::new(top, members, profiles))
        .collect::<Result<Vec<_>>>()?;
    Ok(ClusterPlan { round, clusters })
}

fn grow_cluster(
    top: WorkerId,
    unassigned: &mut BTreeSet<WorkerId>,
    group_of: &[usize],
    num_groups: usize,
    profiles: &[WorkerProfile],
    weights: &UtilityWeights,
    reference: &LabelDistribution,
) -> Result<Vec<WorkerId>> {
    let top_profile = &profiles[top];
    let m = reference.len();
    let mut members: Vec<WorkerId> = Vec::new();
    let mut mix_sum = vec![0.0; m];
    let reference_s = smooth(reference.probs());

    let kl_with = |mix_sum: &[f64], count: usize, w: WorkerId| -> f64 {
        let mix: Vec<f64> = mix_sum
            .iter()
            .zip(profiles[w].label_dist.probs())
            .map(|(s, v)| (s + v) / (count + 1) as f64)
            .collect();
        kl_raw(&smooth(&mix), &reference_s)
    };

    loop {
        // Slowest remaining worker of each group, relative to this top.
        let mut candidates: Vec<Option<(WorkerId, f64)>> = vec![None; num_groups];
        for &w in unassigned.iter() {
            let t = iteration_time(&profiles[w], top_profile)?;
            let slot = &mut candidates[group_of[w]];
            if slot.is_none_or(|(_, best)| t > best) {
                *slot = Some((w, t));
            }
        }
        let mut pool: Vec<WorkerId> = candidates.into_iter().flatten().map(|(w, _)| w).collect();
        if pool.is_empty() {
            break;
        }
        if members.is_empty() {
            // The first member may come from anywhere if no candidate fits.
            let any_fits = pool.iter().any(|&w| {
                constraint_violations(top_profile, &[w], profiles, weights)
                    .map(|v| v.is_empty())
                    .unwrap_or(false)
            });
            if !any_fits {
                pool = unassigned.iter().copied().collect();
            }
        }
        let mut best: Option<(WorkerId, f64)> = None;
        for &w in &pool {
            let mut trial = members.clone();
            trial.push(w);
            if !constraint_violations(top_profile, &trial, profiles, weights)?.is_empty() {
                continue;
            }
            let kl = kl_with(&mix_sum, members.len(), w);
            let better = match best {
                None => true,
                Some((bw, bk)) => kl < bk || (kl == bk && w < bw),
            };
            if better {
                best = Some((w, kl));
            }
        }
        let Some((w, _)) = best else { break };
        unassigned.remove(&w);
        for (s, v) in mix_sum.iter_mut().zip(profiles[w].label_dist.probs()) {
            *s += v;
        }
        members.push(w);
    }
    Ok(members)
}

fn load(top: WorkerId, members: &[WorkerId], profiles: &[WorkerProfile], weights: &UtilityWeights) -> f64 {
    members.len() as f64 * weights.per_worker_bandwidth / profiles[top].ingress_bandwidth
}

fn place_leftover(
    w: WorkerId,
    built: &mut Vec<(WorkerId, Vec<WorkerId>)>,
    profiles: &[WorkerProfile],
    weights: &UtilityWeights,
) -> Result<()> {
    let mut best: Option<(usize, f64)> = None;
    for (idx, (top, members)) in built.iter().enumerate() {
        let mut trial = members.clone();
        trial.push(w);
        if constraint_violations(&profiles[*top], &trial, profiles, weights)?.is_empty() {
            let l = load(*top, members, profiles, weights);
            if best.is_none_or(|(_, bl)| l < bl) {
                best = Some((idx, l));
            }
        }
    }
    if let Some((idx, _)) = best {
        built[idx].1.push(w);
        return Ok(());
    }

    // Pair with a member split off from a cluster that can spare one.
    for idx in 0..built.len() {
        if built[idx].1.len() < 2 {
            continue;
        }
        let (top, members) = &built[idx];
        for (pos, &m) in members.iter().enumerate() {
            let (new_top, new_member) =
                if profiles[w].ingress_bandwidth >= profiles[m].ingress_bandwidth {
                    (w, m)
                } else {
                    (m, w)
                };
            let mut rest = members.clone();
            rest.remove(pos);
            let pair_ok = constraint_violations(&profiles[new_top], &[new_member], profiles, weights)?
                .is_empty();
            let rest_ok = constraint_violations(&profiles[*top], &rest, profiles, weights)?.is_empty();
            if pair_ok && rest_ok {
                built[idx].1 = rest;
                built.push((new_top, vec![new_member]));
                return Ok(());
            }
        }
    }

    built.push((w, Vec::new()));
    Ok(())
}

/// Working copy of a plan with cached per-cluster utilities.
struct Search<'a> {
    profiles: &'a [WorkerProfile],
    weights: &'a UtilityWeights,
    reference_s: Vec<f64>,
    tops: Vec<WorkerId>,
    members: Vec<Vec<WorkerId>>,
    utility: Vec<f64>,
    budget: usize,
}

#[derive(Debug, Clone, Copy)]
enum Change {
    Move { from: usize, pos: usize, to: usize },
    Swap { a: usize, pa: usize, b: usize, pb: usize },
    Exchange { a: usize, b: usize },
}

impl<'a> Search<'a> {
    fn utility_of(&self, cluster: usize, members: &[WorkerId]) -> Result<f64> {
        let top = &self.profiles[self.tops[cluster]];
        let mut times = Vec::with_capacity(members.len());
        let mut mix = vec![0.0; self.reference_s.len()];
        for &m in members {
            let p = &self.profiles[m];
            times.push(iteration_time(p, top)?);
            for (s, v) in mix.iter_mut().zip(p.label_dist.probs()) {
                *s += v;
            }
        }
        mix.iter_mut().for_each(|s| *s /= members.len() as f64);
        let kl = kl_raw(&smooth(&mix), &self.reference_s);
        Ok(combine_utility(waiting_of(&times), kl, self.weights))
    }

    fn feasible_members(&self, cluster: usize, members: &[WorkerId]) -> Result<bool> {
        Ok(constraint_violations(&self.profiles[self.tops[cluster]], members, self.profiles, self.weights)?
            .is_empty())
    }

    fn changes(&self) -> Vec<Change> {
        let c = self.tops.len();
        let mut out = Vec::new();
        for from in 0..c {
            if self.members[from].len() < 2 {
                continue;
            }
            for pos in 0..self.members[from].len() {
                for to in 0..c {
                    if to != from {
                        out.push(Change::Move { from, pos, to });
                    }
                }
            }
        }
        for a in 0..c {
            for b in (a + 1)..c {
                for pa in 0..self.members[a].len() {
                    for pb in 0..self.members[b].len() {
                        out.push(Change::Swap { a, pa, b, pb });
                    }
                }
                out.push(Change::Exchange { a, b });
            }
        }
        out
    }

    /// Applies `change` to `members` and returns the touched cluster ids.
    fn apply(members: &mut [Vec<WorkerId>], change: Change) -> [usize; 2] {
        match change {
            Change::Move { from, pos, to } => {
                let w = members[from].remove(pos);
                members[to].push(w);
                [from, to]
            }
            Change::Swap { a, pa, b, pb } => {
                let (wa, wb) = (members[a][pa], members[b][pb]);
                members[a][pa] = wb;
                members[b][pb] = wa;
                [a, b]
            }
            Change::Exchange { a, b } => {
                members.swap(a, b);
                [a, b]
            }
        }
    }

    /// Evaluates the plan in `trial`, where only clusters in `touched`
    /// differ from the current one. Returns the utility change if the
    /// touched clusters are feasible.
    fn delta(&self, trial: &[Vec<WorkerId>], touched: &[usize]) -> Result<Option<f64>> {
        let mut seen: Vec<usize> = Vec::with_capacity(touched.len());
        let mut delta = 0.0;
        for &c in touched {
            if seen.contains(&c) {
                continue;
            }
            seen.push(c);
            if trial[c].is_empty() || !self.feasible_members(c, &trial[c])? {
                return Ok(None);
            }
            delta += self.utility_of(c, &trial[c])? - self.utility[c];
        }
        Ok(Some(delta))
    }

    fn commit(&mut self, trial: Vec<Vec<WorkerId>>, touched: &[usize]) -> Result<()> {
        self.members = trial;
        for &c in touched {
            self.utility[c] = self.utility_of(c, &self.members[c])?;
        }
        Ok(())
    }

    fn spend(&mut self) -> bool {
        if self.budget == 0 {
            return false;
        }
        self.budget -= 1;
        true
    }

    /// First improving single change.
    fn improve_once(&mut self) -> Result<Option<bool>> {
        for change in self.changes() {
            if !self.spend() {
                return Ok(None);
            }
            let mut trial = self.members.clone();
            let touched = Self::apply(&mut trial, change);
            if let Some(d) = self.delta(&trial, &touched)? {
                if d < -IMPROVEMENT_TOL {
                    self.commit(trial, &touched)?;
                    return Ok(Some(true));
                }
            }
        }
        Ok(Some(false))
    }

    /// First improving pair of changes; the intermediate plan may be
    /// infeasible or worse.
    fn improve_pair(&mut self) -> Result<Option<bool>> {
        for first in self.changes() {
            let mut mid = self.members.clone();
            let t1 = Self::apply(&mut mid, first);
            if mid.iter().any(Vec::is_empty) {
                continue;
            }
            let mid_search = Search {
                profiles: self.profiles,
                weights: self.weights,
                reference_s: Vec::new(),
                tops: self.tops.clone(),
                members: mid.clone(),
                utility: Vec::new(),
                budget: 0,
            };
            for second in mid_search.changes() {
                if !self.spend() {
                    return Ok(None);
                }
                let mut trial = mid.clone();
                let t2 = Self::apply(&mut trial, second);
                let touched = [t1[0], t1[1], t2[0], t2[1]];
                if let Some(d) = self.delta(&trial, &touched)? {
                    if d < -IMPROVEMENT_TOL {
                        self.commit(trial, &touched)?;
                        return Ok(Some(true));
                    }
                }
            }
        }
        Ok(Some(false))
    }
}

/// Lowers `Σ_c U_c` by moving single members between clusters, swapping two
/// members, or exchanging whole member sets, keeping top workers fixed.
/// When no single change helps, pairs of changes are tried. Only strict,
/// feasible improvements are applied. `budget` caps the number of evaluated
/// candidate plans.
pub fn refine_plan(
    plan: &ClusterPlan,
    profiles: &[WorkerProfile],
    weights: &UtilityWeights,
    reference: &LabelDistribution,
    budget: usize,
) -> Result<ClusterPlan> {
    // Solo clusters stay as they are.
    let open: Vec<usize> = (0..plan.clusters.len())
        .filter(|&c| !plan.clusters[c].is_solo())
        .collect();
    if budget == 0 || open.len() < 2 {
        return Ok(plan.clone());
    }
    let mut search = Search {
        profiles,
        weights,
        reference_s: smooth(reference.probs()),
        tops: open.iter().map(|&c| plan.clusters[c].top_worker).collect(),
        members: open.iter().map(|&c| plan.clusters[c].members.clone()).collect(),
        utility: Vec::new(),
        budget,
    };
    search.utility = (0..search.tops.len())
        .map(|c| search.utility_of(c, &search.members[c]))
        .collect::<Result<Vec<_>>>()?;

    let mut changed = false;
    loop {
        match search.improve_once()? {
            Some(true) => {
                changed = true;
                continue;
            }
            None => break,
            Some(false) => {}
        }
        match search.improve_pair()? {
            Some(true) => changed = true,
            _ => break,
        }
    }
    if !changed {
        return Ok(plan.clone());
    }
    let mut clusters = plan.clusters.clone();
    for ((&idx, &top), members) in open.iter().zip(&search.tops).zip(search.members) {
        let mut c = Cluster::new(top, members, profiles)?;
        c.tau = plan.clusters[idx].tau;
        clusters[idx] = c;
    }
    Ok(ClusterPlan {
        round: plan.round,
        clusters,
    })
}

/// Random clustering with the given member counts: a shuffled worker order
/// is cut into consecutive chunks whose first worker is the top. A count of
/// zero gives a solo cluster. Constraints are ignored.
pub fn random_plan(
    num_workers: usize,
    member_counts: &[usize],
    profiles: &[WorkerProfile],
    rng: &mut SimRng,
    round: u64,
) -> Result<ClusterPlan> {
    let needed: usize = member_counts.iter().map(|m| m + 1).sum();
    if needed != num_workers {
        return Err(Error::Contract(format!(
            "member counts {member_counts:?} do not cover {num_workers} workers"
        )));
    }
    let mut order: Vec<WorkerId> = (0..num_workers).collect();
    order.shuffle(rng);
    let mut clusters = Vec::with_capacity(member_counts.len());
    let mut rest = &order[..];
    for &m in member_counts {
        let (chunk, tail) = rest.split_at(m + 1);
        rest = tail;
        clusters.push(Cluster::new(chunk[0], chunk[1..].to_vec(), profiles)?);
    }
    Ok(ClusterPlan { round, clusters })
}

/// Keeps the plan's top workers and member counts, reshuffles the members
/// until every cluster is feasible. `None` after `max_tries` failures.
pub fn random_feasible_like(
    plan: &ClusterPlan,
    profiles: &[WorkerProfile],
    weights: &UtilityWeights,
    rng: &mut SimRng,
    max_tries: usize,
) -> Result<Option<ClusterPlan>> {
    let mut pool: Vec<WorkerId> = plan.clusters.iter().flat_map(|c| c.members.clone()).collect();
    for _ in 0..max_tries {
        pool.shuffle(rng);
        let mut rest = &pool[..];
        let mut clusters = Vec::with_capacity(plan.clusters.len());
        let mut ok = true;
        for c in &plan.clusters {
            let (chunk, tail) = rest.split_at(c.size());
            rest = tail;
            let cluster = Cluster::new(c.top_worker, chunk.to_vec(), profiles)?;
            if !feasible(&cluster, profiles, weights)?.is_feasible() {
                ok = false;
                break;
            }
            clusters.push(cluster);
        }
        if ok {
            return Ok(Some(ClusterPlan {
                round: plan.round,
                clusters,
            }));
        }
    }
    Ok(None)
}
