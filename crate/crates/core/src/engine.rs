//! The training loop.
//!
//! Each round: refresh the smoothed worker profiles, build the round's
//! cluster plan, run every cluster's local iterations (clusters in parallel),
//! average bottoms inside each cluster, splice them with the cluster's top,
//! and merge the cluster models at the parameter server. Time and traffic are
//! simulated from the profiles, not measured.

use std::io::Write;
use std::path::Path;

use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::clustering::{
    build_plan, default_k, intra_cluster_waiting, iid_reference, random_plan, refine_plan,
    Cluster, ClusterPlan, UtilityWeights,
};
use crate::config::{ExperimentConfig, Strategy};
use crate::datagen::{dirichlet_partition, Sample, SyntheticTask};
use crate::frequency::{assign_frequencies, cluster_round_times, uniform_frequencies, waiting_from_round_times};
use crate::rng::{self, derive_seed, tags, SimRng};
use crate::splitnet::{Architecture, Batch, SplitModel};
use crate::telemetry::{Fleet, ProfileTracker, TransferSizes, WorkerProfile};
use crate::{Error, Result, WorkerId};

pub const METRICS_COLUMNS: [&str; 6] = [
    "round",
    "sim_time",
    "intra_waiting",
    "inter_waiting",
    "traffic_bytes",
    "test_accuracy",
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterRoundInfo {
    pub cluster: usize,
    pub top_worker: WorkerId,
    pub tau: u32,
    pub round_time: f64,
    pub size: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundMetrics {
    /// 1-based round index.
    pub round: u64,
    /// Simulated duration of this round, `max_c t_c`.
    pub sim_time: f64,
    /// Mean over clusters of the members' idle time across the round.
    pub intra_waiting: f64,
    /// Mean idle time of clusters at the global barrier.
    pub inter_waiting: f64,
    pub traffic_bytes: u64,
    pub test_accuracy: f64,
    pub per_cluster: Vec<ClusterRoundInfo>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GlobalModelState {
    pub params: Vec<f64>,
    /// Number of completed rounds.
    pub round: u64,
}

/// Cycles through a shard in per-epoch shuffled order.
#[derive(Debug, Clone)]
pub struct ShardCursor {
    order: Vec<usize>,
    pos: usize,
    epoch: u64,
    seed: u64,
}

impl ShardCursor {
    pub fn new(shard_len: usize, seed: u64) -> Result<Self> {
        if shard_len == 0 {
            return Err(Error::EmptyShard);
        }
        let mut c = Self {
            order: (0..shard_len).collect(),
            pos: 0,
            epoch: 0,
            seed,
        };
        c.shuffle();
        Ok(c)
    }

    fn shuffle(&mut self) {
        self.order.sort_unstable();
        let mut r = rng::stream(derive_seed(self.seed, self.epoch), tags::BATCHES);
        self.order.shuffle(&mut r);
    }

    /// Next `batch_size` samples, wrapping into a new epoch when the shard
    /// runs out (short shards repeat samples within a batch).
    pub fn next_batch(&mut self, shard: &[Sample], batch_size: usize) -> Result<Batch> {
        if shard.len() != self.order.len() {
            return Err(Error::Data(format!(
                "cursor built for {} samples, shard has {}",
                self.order.len(),
                shard.len()
            )));
        }
        let mut picked = Vec::with_capacity(batch_size);
        while picked.len() < batch_size {
            if self.pos == self.order.len() {
                self.epoch += 1;
                self.pos = 0;
                self.shuffle();
            }
            picked.push(&shard[self.order[self.pos]]);
            self.pos += 1;
        }
        Batch::from_samples(picked)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClusterRoundOutput {
    /// Updated bottom per member, in member order.
    pub bottoms: Vec<Vec<f64>>,
    pub top: Vec<f64>,
    pub batches_consumed: usize,
}

/// `tau` local iterations of one cluster starting from `model`: members
/// forward their bottoms, the top worker steps on all smashed batches, and
/// members back-propagate the returned activation gradients.
pub fn run_cluster_round(
    arch: &Architecture,
    model: &SplitModel,
    shards: &[&[Sample]],
    cursors: &mut [ShardCursor],
    tau: u32,
    lr: f64,
    batch_size: usize,
) -> Result<ClusterRoundOutput> {
    if tau == 0 {
        return Err(Error::Contract("tau must be at least 1".into()));
    }
    if shards.is_empty() || shards.len() != cursors.len() {
        return Err(Error::Contract(format!(
            "{} shards for {} cursors",
            shards.len(),
            cursors.len()
        )));
    }
    if shards.iter().any(|s| s.is_empty()) {
        return Err(Error::Data("cluster member has an empty shard".into()));
    }
    let mut bottoms = vec![model.bottom.clone(); shards.len()];
    let mut top = model.top.clone();
    let mut consumed = 0;
    for _ in 0..tau {
        let passes = shards
            .iter()
            .zip(cursors.iter_mut())
            .zip(&bottoms)
            .map(|((shard, cursor), bottom)| {
                let batch = cursor.next_batch(shard, batch_size)?;
                arch.bottom_pass(bottom, &batch)
            })
            .collect::<Result<Vec<_>>>()?;
        consumed += passes.len();
        let smashed: Vec<_> = passes.iter().map(|p| p.smashed.clone()).collect();
        let out = arch.top_step(&mut top, &smashed, lr)?;
        for ((bottom, pass), grad) in bottoms.iter_mut().zip(&passes).zip(&out.activation_grads) {
            arch.apply_bottom_gradient(bottom, pass, grad, lr)?;
        }
    }
    Ok(ClusterRoundOutput {
        bottoms,
        top,
        batches_consumed: consumed,
    })
}

/// `tau` plain SGD steps of the whole model on one worker's shard, for a
/// solo cluster.
pub fn run_solo_round(
    arch: &Architecture,
    model: &SplitModel,
    shard: &[Sample],
    cursor: &mut ShardCursor,
    tau: u32,
    lr: f64,
    batch_size: usize,
) -> Result<ClusterRoundOutput> {
    if tau == 0 {
        return Err(Error::Contract("tau must be at least 1".into()));
    }
    let mut full = model.full();
    for _ in 0..tau {
        let batch = cursor.next_batch(shard, batch_size)?;
        arch.sgd_step(&mut full, &batch, lr)?;
    }
    let (bottom, top) = arch.split(&full)?;
    Ok(ClusterRoundOutput {
        bottoms: vec![bottom],
        top,
        batches_consumed: tau as usize,
    })
}

/// Unweighted mean, summed in index order.
pub fn aggregate_bottoms(bottoms: &[Vec<f64>]) -> Result<Vec<f64>> {
    let first = bottoms
        .first()
        .ok_or_else(|| Error::Contract("no bottoms to aggregate".into()))?;
    let mut sum = vec![0.0; first.len()];
    for b in bottoms {
        if b.len() != sum.len() {
            return Err(Error::Shape(format!(
                "bottom of length {} among bottoms of length {}",
                b.len(),
                sum.len()
            )));
        }
        for (s, v) in sum.iter_mut().zip(b) {
            *s += v;
        }
    }
    let n = bottoms.len() as f64;
    sum.iter_mut().for_each(|s| *s /= n);
    Ok(sum)
}

/// Aggregation weights `N_c·τ_c / Σ N_c·τ_c`, where `N_c` counts the shards
/// a cluster trained on.
pub fn aggregation_weights(sizes: &[usize], taus: &[u32]) -> Result<Vec<f64>> {
    if sizes.is_empty() || sizes.len() != taus.len() {
        return Err(Error::Contract(format!(
            "{} cluster sizes for {} frequencies",
            sizes.len(),
            taus.len()
        )));
    }
    let raw: Vec<f64> = sizes
        .iter()
        .zip(taus)
        .map(|(&n, &t)| n as f64 * t as f64)
        .collect();
    if raw.iter().any(|&w| w <= 0.0) {
        return Err(Error::Contract("aggregation weights must be positive".into()));
    }
    let total: f64 = raw.iter().sum();
    Ok(raw.iter().map(|w| w / total).collect())
}

/// Parameter-server merge of cluster models weighted by `N_c·τ_c`. With
/// equal weights this is the plain mean, computed as an index-ordered sum
/// divided by the cluster count.
pub fn global_aggregate(models: &[Vec<f64>], sizes: &[usize], taus: &[u32]) -> Result<Vec<f64>> {
    if models.len() != sizes.len() {
        return Err(Error::Contract(format!(
            "{} cluster models for {} sizes",
            models.len(),
            sizes.len()
        )));
    }
    let weights = aggregation_weights(sizes, taus)?;
    let len = models[0].len();
    if models.iter().any(|m| m.len() != len) {
        return Err(Error::Shape("cluster models differ in length".into()));
    }
    let products: Vec<u64> = sizes.iter().zip(taus).map(|(&n, &t)| n as u64 * t as u64).collect();
    if products.iter().all(|&p| p == products[0]) {
        return aggregate_bottoms(models);
    }
    let mut out = vec![0.0; len];
    for (m, w) in models.iter().zip(&weights) {
        for (o, v) in out.iter_mut().zip(m) {
            *o += w * v;
        }
    }
    Ok(out)
}

/// Byte sizes that enter the traffic count.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TrafficSizes {
    /// One batch of split-layer activations.
    pub smashed_bytes: u64,
    pub bottom_bytes: u64,
    pub full_model_bytes: u64,
}

impl TrafficSizes {
    pub fn for_architecture(arch: &Architecture, batch_size: usize) -> Self {
        Self {
            smashed_bytes: arch.smashed_bytes(batch_size) as u64,
            bottom_bytes: arch.bottom_bytes() as u64,
            full_model_bytes: arch.full_model_bytes() as u64,
        }
    }
}

/// One round's traffic: per cluster, activations up and gradients down for
/// every member and iteration, bottoms handed out and collected by the top
/// worker (optional), and the top worker's model exchange with the
/// parameter server. A solo cluster only exchanges its model.
pub fn account_traffic(plan: &ClusterPlan, sizes: TrafficSizes, count_bottom_distribution: bool) -> u64 {
    plan.clusters
        .iter()
        .map(|c| {
            let n = c.size() as u64;
            let tau = c.tau as u64;
            let smashed = tau * n * 2 * sizes.smashed_bytes;
            let bottoms = if count_bottom_distribution {
                n * 2 * sizes.bottom_bytes
            } else {
                0
            };
            smashed + bottoms + 2 * sizes.full_model_bytes
        })
        .sum()
}

/// One cluster holding every worker: the highest-bandwidth worker (lowest id
/// on ties) is the top, `τ = 1`.
pub fn single_cluster_plan(profiles: &[WorkerProfile], round: u64) -> Result<ClusterPlan> {
    let top = profiles
        .iter()
        .min_by(|a, b| {
            b.ingress_bandwidth
                .total_cmp(&a.ingress_bandwidth)
                .then(a.worker_id.cmp(&b.worker_id))
        })
        .ok_or_else(|| Error::Config("empty fleet".into()))?
        .worker_id;
    let members = profiles
        .iter()
        .map(|p| p.worker_id)
        .filter(|&w| w != top)
        .collect();
    Ok(ClusterPlan {
        round,
        clusters: vec![Cluster::new(top, members, profiles)?],
    })
}

/// Seed of worker `worker`'s batch cursor in a run seeded with `seed`.
pub fn cursor_seed(seed: u64, worker: WorkerId) -> u64 {
    derive_seed(seed, 1000 + worker as u64)
}

/// Everything a run produces.
#[derive(Debug, Clone)]
pub struct TrainingRun {
    pub metrics: Vec<RoundMetrics>,
    pub plans: Vec<ClusterPlan>,
    pub final_state: GlobalModelState,
    /// Per worker, the number of training samples of each class.
    pub shard_histograms: Vec<Vec<usize>>,
}

/// A run in progress; [`Simulation::step`] executes one round.
pub struct Simulation {
    cfg: ExperimentConfig,
    arch: Architecture,
    top_ratio: f64,
    shards: Vec<Vec<Sample>>,
    test_set: Vec<Sample>,
    fleet: Fleet,
    trackers: Vec<ProfileTracker>,
    cursors: Vec<Option<ShardCursor>>,
    global: GlobalModelState,
    transfer: TransferSizes,
    traffic: TrafficSizes,
}

impl Simulation {
    pub fn new(cfg: &ExperimentConfig) -> Result<Self> {
        cfg.validate()?;
        let seed = cfg.seed;
        let arch = cfg.model.architecture()?;
        let d = &cfg.data;
        let task = SyntheticTask::new(d.num_classes, d.feature_dim, d.class_separation, seed)?;
        let train = task.sample(d.samples_per_class, seed)?;
        let test = task.sample(d.test_samples_per_class, derive_seed(seed, tags::TEST_SAMPLES))?;
        let n = cfg.fleet.num_workers;
        let partition = dirichlet_partition(&train, n, d.heterogeneity.concentration()?, seed)?;
        let dists = partition.label_distributions()?;
        let fleet = Fleet::synthesize(&cfg.fleet, seed)?;
        let trackers = fleet
            .workers
            .iter()
            .zip(dists)
            .map(|(w, dist)| ProfileTracker::new(w.worker_id, w.bandwidth, dist))
            .collect();
        let cursors = partition
            .shards
            .iter()
            .enumerate()
            .map(|(i, s)| ShardCursor::new(s.len(), cursor_seed(seed, i)).map(Some))
            .collect::<Result<Vec<_>>>()?;
        let global = GlobalModelState {
            params: arch.init_params(seed),
            round: 0,
        };
        let transfer = TransferSizes {
            smashed_bytes: arch.smashed_bytes(cfg.model.batch_size),
            model_bytes: arch.full_model_bytes(),
        };
        let traffic = TrafficSizes::for_architecture(&arch, cfg.model.batch_size);
        Ok(Self {
            top_ratio: cfg.model.top_ratio(&arch),
            cfg: cfg.clone(),
            arch,
            shards: partition.shards,
            test_set: test.samples,
            fleet,
            trackers,
            cursors,
            global,
            transfer,
            traffic,
        })
    }

    pub fn config(&self) -> &ExperimentConfig {
        &self.cfg
    }

    pub fn architecture(&self) -> &Architecture {
        &self.arch
    }

    pub fn state(&self) -> &GlobalModelState {
        &self.global
    }

    pub fn shards(&self) -> &[Vec<Sample>] {
        &self.shards
    }

    /// Per worker, the number of training samples of each class.
    pub fn shard_histograms(&self) -> Vec<Vec<usize>> {
        let classes = self.arch.num_classes();
        self.shards
            .iter()
            .map(|shard| {
                let mut h = vec![0; classes];
                for s in shard {
                    h[s.label] += 1;
                }
                h
            })
            .collect()
    }

    pub fn fleet(&self) -> &Fleet {
        &self.fleet
    }

    /// Current smoothed profiles, indexed by worker id.
    pub fn profiles(&self) -> Vec<WorkerProfile> {
        self.trackers.iter().map(|t| t.profile().clone()).collect()
    }

    pub fn test_accuracy(&self) -> Result<f64> {
        self.arch.accuracy(&self.global.params, &self.test_set)
    }

    fn observe(&mut self, round: u64) -> Result<Vec<WorkerProfile>> {
        let measurements = self.fleet.measure(self.transfer, self.cfg.seed, round);
        for (t, m) in self.trackers.iter_mut().zip(&measurements) {
            t.observe(m, self.cfg.telemetry.alpha, self.top_ratio)?;
        }
        Ok(self.profiles())
    }

    pub fn utility_weights(&self, profiles: &[WorkerProfile]) -> Result<UtilityWeights> {
        let c = &self.cfg.clustering;
        let mut w = UtilityWeights::for_fleet(profiles, c.lambda, c.per_worker_bandwidth())?;
        if let Some(v) = c.waiting_norm {
            w.waiting_norm = v;
        }
        if let Some(v) = c.kl_norm {
            w.kl_norm = v;
        }
        Ok(w)
    }

    fn clustered_plan(&self, profiles: &[WorkerProfile], round: u64) -> Result<ClusterPlan> {
        let c = &self.cfg.clustering;
        let weights = self.utility_weights(profiles)?;
        let k = c.k.unwrap_or_else(|| default_k(profiles.len()));
        let mut r = rng::stream(derive_seed(self.cfg.seed, round), tags::KMEANS);
        let plan = build_plan(profiles, &weights, k, &mut r, round)?;
        let reference = iid_reference(profiles)?;
        refine_plan(&plan, profiles, &weights, &reference, c.refine_budget)
    }

    /// The round's plan under the configured strategy, with `τ` set.
    pub fn plan_round(&self, profiles: &[WorkerProfile], round: u64) -> Result<ClusterPlan> {
        let tau_max = self.cfg.frequency.tau_max;
        match self.cfg.strategy {
            Strategy::ParallelSfl => {
                assign_frequencies(&self.clustered_plan(profiles, round)?, profiles, tau_max)
            }
            Strategy::FixedFrequency => Ok(uniform_frequencies(
                &self.clustered_plan(profiles, round)?,
                tau_max,
            )),
            Strategy::RandomCluster => {
                let counts = self.clustered_plan(profiles, round)?.member_counts();
                let mut r: SimRng = rng::stream(derive_seed(self.cfg.seed, round), tags::RANDOM_PLAN);
                let plan = random_plan(profiles.len(), &counts, profiles, &mut r, round)?;
                Ok(uniform_frequencies(&plan, tau_max))
            }
            Strategy::SingleClusterSfl => single_cluster_plan(profiles, round),
        }
    }

    /// Runs one round and returns its metrics and plan.
    pub fn step(&mut self) -> Result<(RoundMetrics, ClusterPlan)> {
        let h = self.global.round;
        let profiles = self.observe(h)?;
        let plan = self.plan_round(&profiles, h)?;
        plan.check_partition(profiles.len())?;

        let lr = self.cfg.model.learning_rate * self.cfg.model.lr_decay.powi(h as i32);
        let batch_size = self.cfg.model.batch_size;
        let model = SplitModel::from_full(&self.arch, &self.global.params)?;

        let mut jobs = Vec::with_capacity(plan.clusters.len());
        for c in &plan.clusters {
            let cursors = c
                .trainers()
                .iter()
                .map(|&m| {
                    self.cursors[m]
                        .take()
                        .ok_or_else(|| Error::Contract(format!("worker {m} used twice")))
                })
                .collect::<Result<Vec<_>>>()?;
            jobs.push((c, cursors));
        }
        let arch = &self.arch;
        let shards = &self.shards;
        let results: Vec<Result<(ClusterRoundOutput, Vec<ShardCursor>)>> = jobs
            .into_par_iter()
            .map(|(c, mut cursors)| {
                let out = if c.is_solo() {
                    run_solo_round(arch, &model, &shards[c.top_worker], &mut cursors[0], c.tau, lr, batch_size)?
                } else {
                    let member_shards: Vec<&[Sample]> =
                        c.members.iter().map(|&m| shards[m].as_slice()).collect();
                    run_cluster_round(arch, &model, &member_shards, &mut cursors, c.tau, lr, batch_size)?
                };
                Ok((out, cursors))
            })
            .collect();

        let mut cluster_models = Vec::with_capacity(plan.clusters.len());
        for (c, res) in plan.clusters.iter().zip(results) {
            let (out, cursors) = res?;
            for (m, cur) in c.trainers().into_iter().zip(cursors) {
                self.cursors[m] = Some(cur);
            }
            let bottom = aggregate_bottoms(&out.bottoms)?;
            cluster_models.push(self.arch.splice(&bottom, &out.top)?);
        }
        let sizes = plan.trainer_counts();
        let taus: Vec<u32> = plan.clusters.iter().map(|c| c.tau).collect();
        self.global.params = global_aggregate(&cluster_models, &sizes, &taus)?;
        self.global.round += 1;

        let round_times = cluster_round_times(&plan, &profiles)?;
        let mut intra = 0.0;
        for c in &plan.clusters {
            intra += c.tau as f64 * intra_cluster_waiting(c, &profiles)?;
        }
        let per_cluster = plan
            .clusters
            .iter()
            .zip(&round_times)
            .enumerate()
            .map(|(i, (c, &t))| ClusterRoundInfo {
                cluster: i,
                top_worker: c.top_worker,
                tau: c.tau,
                round_time: t,
                size: c.size(),
            })
            .collect();
        let metrics = RoundMetrics {
            round: self.global.round,
            sim_time: round_times.iter().copied().fold(0.0, f64::max),
            intra_waiting: intra / plan.clusters.len() as f64,
            inter_waiting: waiting_from_round_times(&round_times),
            traffic_bytes: account_traffic(
                &plan,
                self.traffic,
                self.cfg.traffic.count_bottom_distribution,
            ),
            test_accuracy: self.test_accuracy()?,
            per_cluster,
        };
        Ok((metrics, plan))
    }
}

/// Runs all configured rounds.
pub fn run_training(cfg: &ExperimentConfig) -> Result<TrainingRun> {
    let mut sim = Simulation::new(cfg)?;
    let shard_histograms = sim.shard_histograms();
    let mut metrics = Vec::with_capacity(cfg.rounds as usize);
    let mut plans = Vec::with_capacity(cfg.rounds as usize);
    for _ in 0..cfg.rounds {
        let (m, p) = sim.step()?;
        metrics.push(m);
        plans.push(p);
    }
    Ok(TrainingRun {
        metrics,
        plans,
        final_state: sim.global,
        shard_histograms,
    })
}

pub fn write_metrics_csv<W: Write>(out: W, metrics: &[RoundMetrics]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(METRICS_COLUMNS)?;
    for m in metrics {
        w.write_record([
            m.round.to_string(),
            m.sim_time.to_string(),
            m.intra_waiting.to_string(),
            m.inter_waiting.to_string(),
            m.traffic_bytes.to_string(),
            m.test_accuracy.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// A metrics row as read back from CSV.
#[derive(Debug, Clone, PartialEq, Deserialize)]
pub struct MetricsRow {
    pub round: u64,
    pub sim_time: f64,
    pub intra_waiting: f64,
    pub inter_waiting: f64,
    pub traffic_bytes: u64,
    pub test_accuracy: f64,
}

pub fn read_metrics_csv(path: &Path) -> Result<Vec<MetricsRow>> {
    let mut r = csv::Reader::from_path(path)?;
    let header: Vec<String> = r.headers()?.iter().map(str::to_owned).collect();
    if header != METRICS_COLUMNS {
        return Err(Error::Format(format!(
            "{}: columns {:?} differ from {:?}",
            path.display(),
            header,
            METRICS_COLUMNS
        )));
    }
    r.deserialize()
        .map(|row| row.map_err(|e| Error::Format(format!("{}: {e}", path.display()))))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn aggregate_bottoms_examples() {
        let v = vec![0.5, -1.25, 3.0];
        assert_eq!(aggregate_bottoms(&[v.clone(), v.clone()]).unwrap(), v);
        let neg: Vec<f64> = v.iter().map(|x| -x).collect();
        assert_eq!(aggregate_bottoms(&[v, neg]).unwrap(), vec![0.0; 3]);
        assert_eq!(aggregate_bottoms(&[vec![1.0], vec![2.0], vec![3.0]]).unwrap(), vec![2.0]);
        assert!(matches!(aggregate_bottoms(&[vec![1.0], vec![1.0, 2.0]]), Err(Error::Shape(_))));
    }

    #[test]
    fn global_aggregate_examples() {
        let w = global_aggregate(&[vec![1.0], vec![3.0]], &[3, 2], &[4, 6]).unwrap();
        assert_eq!(w, vec![2.0]);
        assert_eq!(global_aggregate(&[vec![0.25, 7.0]], &[5], &[3]).unwrap(), vec![0.25, 7.0]);
        assert!(global_aggregate(&[], &[], &[]).is_err());
        let ws = aggregation_weights(&[1, 2, 3], &[5, 1, 2]).unwrap();
        assert!((ws.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn cursor_cycles_short_shards() {
        let shard: Vec<Sample> = (0..3)
            .map(|i| Sample { id: i, features: vec![i as f64, 0.0], label: i % 2 })
            .collect();
        let mut c = ShardCursor::new(3, 9).unwrap();
        let b = c.next_batch(&shard, 7).unwrap();
        assert_eq!(b.len(), 7);
        assert!(ShardCursor::new(0, 9).is_err());
    }
}
