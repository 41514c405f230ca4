//! Helpers shared by the integration test targets.
#![allow(dead_code)]

use std::collections::BTreeMap;

use parallel_sfl::clustering::{
    feasible, plan_utility, Cluster, ClusterPlan, UtilityWeights,
};
use parallel_sfl::config::ModelConfig;
use parallel_sfl::datagen::{sample_dirichlet, LabelDistribution};
use parallel_sfl::rng::{self, SimRng};
use parallel_sfl::datagen::Sample;
use parallel_sfl::engine::{run_cluster_round, ShardCursor};
use parallel_sfl::splitnet::{Activation, Architecture, Batch, Matrix, SplitModel};
use parallel_sfl::telemetry::{Fleet, FleetSpec, ProfileTracker, TransferSizes, WorkerProfile};
use parallel_sfl::WorkerId;
use rand::Rng;

pub fn random_batch(rng: &mut SimRng, rows: usize, cols: usize, classes: usize) -> Batch {
    let data = (0..rows * cols).map(|_| rng.random_range(-1.0..1.0)).collect();
    Batch {
        features: Matrix { rows, cols, data },
        labels: (0..rows).map(|_| rng.random_range(0..classes)).collect(),
    }
}

/// Label distribution drawn from `Dir(δ·q)` with `q` uniform and `δ = 1/p`.
pub fn dirichlet_dist(rng: &mut SimRng, classes: usize, level: f64) -> LabelDistribution {
    let alpha = vec![1.0 / level / classes as f64; classes];
    let mut v = sample_dirichlet(&alpha, rng);
    let s: f64 = v.iter().sum();
    v.iter_mut().for_each(|x| *x /= s);
    LabelDistribution::new(v).unwrap()
}

/// Profiles of a synthetic fleet after one observed round, with the default
/// architecture's payload sizes.
pub fn synthetic_profiles(spec: &FleetSpec, level: f64, seed: u64) -> Vec<WorkerProfile> {
    let model = ModelConfig::default();
    let arch = model.architecture().unwrap();
    let sizes = TransferSizes {
        smashed_bytes: arch.smashed_bytes(model.batch_size),
        model_bytes: arch.full_model_bytes(),
    };
    let fleet = Fleet::synthesize(spec, seed).unwrap();
    let ms = fleet.measure(sizes, seed, 0);
    let mut r = rng::stream(seed, 777);
    fleet
        .workers
        .iter()
        .zip(&ms)
        .map(|(w, m)| {
            let mut t = ProfileTracker::new(w.worker_id, w.bandwidth, dirichlet_dist(&mut r, 10, level));
            t.observe(m, 0.8, model.top_ratio(&arch)).unwrap();
            t.profile().clone()
        })
        .collect()
}

/// Small hand-controlled fleet: bandwidth, bottom time, label distribution
/// per worker; links are `link` for every pair.
pub fn simple_profiles(specs: &[(f64, f64, Vec<f64>)], link: f64, top_ratio: f64) -> Vec<WorkerProfile> {
    let n = specs.len();
    specs
        .iter()
        .enumerate()
        .map(|(i, (bw, mu, v))| WorkerProfile {
            worker_id: i,
            ingress_bandwidth: *bw,
            label_dist: LabelDistribution::new(v.clone()).unwrap(),
            bottom_compute_time: *mu,
            top_compute_time: mu * top_ratio,
            link_time: (0..n).filter(|&j| j != i).map(|j| (j, link)).collect::<BTreeMap<_, _>>(),
            uplink_time_to_ps: 1.0,
        })
        .collect()
}

/// Exhaustive minimum of `Σ U_c` over every way of assigning the plan's
/// members to its (fixed) tops with all clusters non-empty and feasible.
/// Solo clusters are kept as they are.
pub fn brute_force_optimum(
    plan: &ClusterPlan,
    profiles: &[WorkerProfile],
    weights: &UtilityWeights,
    reference: &LabelDistribution,
) -> Option<f64> {
    let solos: Vec<Cluster> = plan.clusters.iter().filter(|c| c.is_solo()).cloned().collect();
    let tops: Vec<WorkerId> = plan.clusters.iter().filter(|c| !c.is_solo()).map(|c| c.top_worker).collect();
    let members: Vec<WorkerId> = plan.clusters.iter().flat_map(|c| c.members.clone()).collect();
    let c = tops.len();
    let total = c.pow(members.len() as u32);
    let mut best: Option<f64> = None;
    for code in 0..total {
        let mut groups = vec![Vec::new(); c];
        let mut x = code;
        for &m in &members {
            groups[x % c].push(m);
            x /= c;
        }
        if groups.iter().any(Vec::is_empty) {
            continue;
        }
        let mut clusters: Vec<Cluster> = tops
            .iter()
            .zip(groups)
            .map(|(&t, g)| Cluster::new(t, g, profiles).unwrap())
            .collect();
        clusters.extend(solos.iter().cloned());
        if !clusters
            .iter()
            .all(|cl| feasible(cl, profiles, weights).unwrap().is_feasible())
        {
            continue;
        }
        let candidate = ClusterPlan { round: 0, clusters };
        let u = plan_utility(&candidate, profiles, weights, reference).unwrap();
        if best.is_none_or(|b| u < b) {
            best = Some(u);
        }
    }
    best
}

/// Fewest clusters any plan can have when only bandwidth binds: repeatedly
/// make the highest-bandwidth remaining worker a top that takes
/// `floor(B/b)` members.
pub fn bandwidth_lower_bound(profiles: &[WorkerProfile], b: f64) -> usize {
    let mut bws: Vec<f64> = profiles.iter().map(|p| p.ingress_bandwidth).collect();
    bws.sort_by(|x, y| y.total_cmp(x));
    let mut left = profiles.len();
    let mut clusters = 0;
    for bw in bws {
        if left == 0 {
            break;
        }
        let cap = (bw / b).floor() as usize;
        clusters += 1;
        left -= 1 + cap.min(left - 1);
    }
    clusters
}

/// Random architecture with 2–4 weight layers, widths 1–6 and a random split.
pub fn random_architecture(rng: &mut SimRng, activation: Activation) -> Architecture {
    let layers = rng.random_range(2..=4);
    let mut dims: Vec<usize> = (0..=layers).map(|_| rng.random_range(1..=6)).collect();
    dims[layers] = rng.random_range(2..=5);
    let split = rng.random_range(1..layers);
    Architecture::new(dims, split, activation).unwrap()
}

/// Norm-wise relative error between the analytic gradient and central
/// finite differences of the loss, `‖g − ĝ‖ / max(‖g‖, ‖ĝ‖, 1e-12)`.
pub fn gradient_check(arch: &Architecture, params: &[f64], batch: &Batch, h: f64) -> f64 {
    let (_, analytic) = arch.loss_and_gradient(params, batch).unwrap();
    let mut p = params.to_vec();
    let numeric: Vec<f64> = (0..p.len())
        .map(|k| {
            let orig = p[k];
            p[k] = orig + h;
            let up = arch.loss(&p, batch).unwrap();
            p[k] = orig - h;
            let down = arch.loss(&p, batch).unwrap();
            p[k] = orig;
            (up - down) / (2.0 * h)
        })
        .collect();
    let norm = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
    let diff: Vec<f64> = analytic.iter().zip(&numeric).map(|(a, n)| a - n).collect();
    norm(&diff) / norm(&analytic).max(norm(&numeric)).max(1e-12)
}

/// Largest per-parameter gap between split training with one bottom worker
/// (through the engine's cluster round) and plain SGD on the unsplit network,
/// both consuming the same batches for `iters` iterations.
pub fn split_vs_monolithic_gap(seed: u64, iters: u32, lr: f64) -> f64 {
    let mut r = rng::stream(seed, 900);
    let arch = random_architecture(&mut r, Activation::Tanh);
    let shard: Vec<Sample> = (0..37)
        .map(|id| Sample {
            id,
            features: (0..arch.input_dim()).map(|_| r.random_range(-1.0..1.0)).collect(),
            label: r.random_range(0..arch.num_classes()),
        })
        .collect();
    let init = arch.init_params(seed);
    let model = SplitModel::from_full(&arch, &init).unwrap();
    let cursor = ShardCursor::new(shard.len(), seed).unwrap();

    let mut cursors = vec![cursor.clone()];
    let out = run_cluster_round(&arch, &model, &[&shard], &mut cursors, iters, lr, 8).unwrap();
    let split = arch.splice(&out.bottoms[0], &out.top).unwrap();

    let mut mono = init;
    let mut c = cursor;
    for _ in 0..iters {
        let batch = c.next_batch(&shard, 8).unwrap();
        arch.sgd_step(&mut mono, &batch, lr).unwrap();
    }
    split.iter().zip(&mono).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max)
}
