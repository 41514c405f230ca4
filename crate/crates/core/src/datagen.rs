//! Synthetic classification data and non-IID partitioning across workers.
//!
//! Each class is a Gaussian blob around a random center. Worker shards follow
//! per-worker class mixtures drawn from `Dir(δ·q)`, where `q` is the global
//! class prior; `δ → ∞` is represented by [`Concentration::Iid`].

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, Gamma, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::rng::{self, tags, SimRng};
use crate::{Error, Result};

const NORMALIZATION_TOL: f64 = 1e-9;

/// Default per-coordinate standard deviation of the class centers.
pub const DEFAULT_CLASS_SEPARATION: f64 = 0.5;

/// Categorical distribution over class labels.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct LabelDistribution(Vec<f64>);

impl LabelDistribution {
    pub fn new(probs: Vec<f64>) -> Result<Self> {
        if probs.is_empty() {
            return Err(Error::Shape("label distribution has no classes".into()));
        }
        if probs.iter().any(|p| !p.is_finite() || *p < 0.0) {
            return Err(Error::Data(format!(
                "label distribution has a negative or non-finite entry: {probs:?}"
            )));
        }
        let sum: f64 = probs.iter().sum();
        if (sum - 1.0).abs() > NORMALIZATION_TOL {
            return Err(Error::Data(format!(
                "label distribution sums to {sum}, expected 1"
            )));
        }
        Ok(Self(probs))
    }

    pub fn uniform(num_classes: usize) -> Self {
        Self(vec![1.0 / num_classes as f64; num_classes])
    }

    /// Normalizes raw non-negative counts. Fails on an all-zero histogram.
    pub fn from_counts(counts: &[usize]) -> Result<Self> {
        let total: usize = counts.iter().sum();
        if total == 0 {
            return Err(Error::EmptyShard);
        }
        Ok(Self(
            counts.iter().map(|&c| c as f64 / total as f64).collect(),
        ))
    }

    /// Arithmetic mean of several distributions over the same classes.
    pub fn mean<'a, I>(dists: I) -> Result<Self>
    where
        I: IntoIterator<Item = &'a LabelDistribution>,
    {
        let mut acc: Vec<f64> = Vec::new();
        let mut n = 0usize;
        for d in dists {
            if acc.is_empty() {
                acc = vec![0.0; d.len()];
            } else if acc.len() != d.len() {
                return Err(Error::Shape(format!(
                    "cannot average distributions of length {} and {}",
                    acc.len(),
                    d.len()
                )));
            }
            for (a, p) in acc.iter_mut().zip(&d.0) {
                *a += p;
            }
            n += 1;
        }
        if n == 0 {
            return Err(Error::Contract("mean of zero distributions".into()));
        }
        acc.iter_mut().for_each(|a| *a /= n as f64);
        Ok(Self(acc))
    }

    pub fn probs(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    /// Largest class share.
    pub fn max_share(&self) -> f64 {
        self.0.iter().copied().fold(0.0, f64::max)
    }
}

impl TryFrom<Vec<f64>> for LabelDistribution {
    type Error = Error;
    fn try_from(v: Vec<f64>) -> Result<Self> {
        Self::new(v)
    }
}

impl From<LabelDistribution> for Vec<f64> {
    fn from(d: LabelDistribution) -> Self {
        d.0
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    /// Position of the sample in the dataset it was generated in.
    pub id: usize,
    pub features: Vec<f64>,
    pub label: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub samples: Vec<Sample>,
    pub num_classes: usize,
    pub feature_dim: usize,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn class_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.num_classes];
        for s in &self.samples {
            counts[s.label] += 1;
        }
        counts
    }
}

/// Class centers of a Gaussian-blob task. Train and test sets sampled from
/// the same task share the centers.
#[derive(Debug, Clone)]
pub struct SyntheticTask {
    centers: Vec<Vec<f64>>,
    feature_dim: usize,
}

impl SyntheticTask {
    pub fn new(
        num_classes: usize,
        feature_dim: usize,
        class_separation: f64,
        seed: u64,
    ) -> Result<Self> {
        if num_classes < 2 {
            return Err(Error::Config(format!(
                "num_classes must be at least 2, got {num_classes}"
            )));
        }
        if feature_dim < 2 {
            return Err(Error::Config(format!(
                "feature_dim must be at least 2, got {feature_dim}"
            )));
        }
        if !(class_separation.is_finite() && class_separation > 0.0) {
            return Err(Error::Config(format!(
                "class_separation must be positive, got {class_separation}"
            )));
        }
        let mut rng = rng::stream(seed, tags::CENTERS);
        let centers = (0..num_classes)
            .map(|_| {
                (0..feature_dim)
                    .map(|_| class_separation * rng.sample::<f64, _>(StandardNormal))
                    .collect()
            })
            .collect();
        Ok(Self {
            centers,
            feature_dim,
        })
    }

    pub fn num_classes(&self) -> usize {
        self.centers.len()
    }

    /// Draws `samples_per_class` unit-variance points around each center,
    /// class-major order.
    pub fn sample(&self, samples_per_class: usize, seed: u64) -> Result<Dataset> {
        if samples_per_class == 0 {
            return Err(Error::Config("samples_per_class must be at least 1".into()));
        }
        let mut rng = rng::stream(seed, tags::SAMPLES);
        let mut samples = Vec::with_capacity(self.centers.len() * samples_per_class);
        for (label, center) in self.centers.iter().enumerate() {
            for _ in 0..samples_per_class {
                let features = center
                    .iter()
                    .map(|c| c + rng.sample::<f64, _>(StandardNormal))
                    .collect();
                samples.push(Sample {
                    id: samples.len(),
                    features,
                    label,
                });
            }
        }
        Ok(Dataset {
            samples,
            num_classes: self.centers.len(),
            feature_dim: self.feature_dim,
        })
    }
}

/// Builds a balanced Gaussian-blob dataset with `num_classes·samples_per_class`
/// samples.
pub fn make_synthetic_dataset(
    num_classes: usize,
    samples_per_class: usize,
    feature_dim: usize,
    seed: u64,
) -> Result<Dataset> {
    if samples_per_class == 0 {
        return Err(Error::Config("samples_per_class must be at least 1".into()));
    }
    SyntheticTask::new(num_classes, feature_dim, DEFAULT_CLASS_SEPARATION, seed)?
        .sample(samples_per_class, seed)
}

/// Dirichlet concentration `δ`. The non-IID level is `p = 1/δ`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Concentration {
    /// `δ → ∞`: every worker follows the global prior.
    Iid,
    Finite(f64),
}

impl Concentration {
    /// Maps a non-IID level `p` to a concentration; `p = 0` is IID.
    pub fn from_level(p: f64) -> Result<Self> {
        if !p.is_finite() || p < 0.0 {
            return Err(Error::Config(format!("non-IID level must be >= 0, got {p}")));
        }
        Ok(if p == 0.0 {
            Concentration::Iid
        } else {
            Concentration::Finite(1.0 / p)
        })
    }

    pub fn level(&self) -> f64 {
        match self {
            Concentration::Iid => 0.0,
            Concentration::Finite(d) => 1.0 / d,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PartitionedDataset {
    pub shards: Vec<Vec<Sample>>,
    pub num_classes: usize,
    pub prior: LabelDistribution,
}

impl PartitionedDataset {
    pub fn num_workers(&self) -> usize {
        self.shards.len()
    }

    pub fn total_samples(&self) -> usize {
        self.shards.iter().map(Vec::len).sum()
    }

    pub fn label_distributions(&self) -> Result<Vec<LabelDistribution>> {
        self.shards
            .iter()
            .map(|s| label_distribution_of(s, self.num_classes))
            .collect()
    }
}

/// Normalized label histogram of a shard.
pub fn label_distribution_of(shard: &[Sample], num_classes: usize) -> Result<LabelDistribution> {
    if shard.is_empty() {
        return Err(Error::EmptyShard);
    }
    let mut counts = vec![0usize; num_classes];
    for s in shard {
        let slot = counts.get_mut(s.label).ok_or_else(|| {
            Error::Data(format!("label {} outside [0, {num_classes})", s.label))
        })?;
        *slot += 1;
    }
    LabelDistribution::from_counts(&counts)
}

/// Draws `Dir(alpha)` with gamma variates taken in log space, so that tiny
/// concentrations do not underflow every component to zero.
pub fn sample_dirichlet(alpha: &[f64], rng: &mut SimRng) -> Vec<f64> {
    let logs: Vec<f64> = alpha
        .iter()
        .map(|&a| {
            if a <= 0.0 {
                return f64::NEG_INFINITY;
            }
            if a >= 1.0 {
                let g: f64 = Gamma::new(a, 1.0).expect("shape > 0").sample(rng);
                g.ln()
            } else {
                // Gamma(a) = Gamma(a + 1) * U^(1/a)
                let g: f64 = Gamma::new(a + 1.0, 1.0).expect("shape > 0").sample(rng);
                let u: f64 = 1.0 - rng.random::<f64>();
                g.ln() + u.ln() / a
            }
        })
        .collect();
    let max = logs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return vec![0.0; alpha.len()];
    }
    let exps: Vec<f64> = logs.iter().map(|l| (l - max).exp()).collect();
    let total: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / total).collect()
}

/// Splits `total` items proportionally to `weights` with largest-remainder
/// rounding; remainder ties go to the lowest index.
pub(crate) fn largest_remainder(total: usize, weights: &[f64]) -> Vec<usize> {
    let sum: f64 = weights.iter().sum();
    let uniform;
    let weights = if sum > 0.0 && sum.is_finite() {
        weights
    } else {
        uniform = vec![1.0; weights.len()];
        &uniform[..]
    };
    let sum: f64 = weights.iter().sum();
    let quotas: Vec<f64> = weights.iter().map(|w| total as f64 * w / sum).collect();
    let mut counts: Vec<usize> = quotas.iter().map(|q| q.floor() as usize).collect();
    let assigned: usize = counts.iter().sum();
    let mut order: Vec<usize> = (0..weights.len()).collect();
    order.sort_by(|&a, &b| {
        let ra = quotas[a] - quotas[a].floor();
        let rb = quotas[b] - quotas[b].floor();
        rb.total_cmp(&ra).then(a.cmp(&b))
    });
    for &i in order.iter().take(total.saturating_sub(assigned)) {
        counts[i] += 1;
    }
    counts
}

/// Partitions `dataset` across `num_workers` workers with per-worker class
/// mixtures drawn from `Dir(δ·q)`.
///
/// Each class's samples are shuffled and split among workers in proportion to
/// the workers' mixture weights for that class (largest remainder), so class
/// totals are preserved exactly. A worker left with no samples receives one
/// sample from the largest shard, taken from the class it weights highest.
pub fn dirichlet_partition(
    dataset: &Dataset,
    num_workers: usize,
    concentration: Concentration,
    seed: u64,
) -> Result<PartitionedDataset> {
    if num_workers == 0 {
        return Err(Error::Config("num_workers must be at least 1".into()));
    }
    if num_workers > dataset.len() {
        return Err(Error::Config(format!(
            "{num_workers} workers but only {} samples",
            dataset.len()
        )));
    }
    if let Concentration::Finite(d) = concentration {
        if !(d.is_finite() && d > 0.0) {
            return Err(Error::Config(format!(
                "Dirichlet concentration must be positive, got {d}"
            )));
        }
    }
    let m = dataset.num_classes;
    let mut rng = rng::stream(seed, tags::PARTITION);

    let mut by_class: Vec<Vec<usize>> = vec![Vec::new(); m];
    for (idx, s) in dataset.samples.iter().enumerate() {
        if s.label >= m {
            return Err(Error::Data(format!("label {} outside [0, {m})", s.label)));
        }
        by_class[s.label].push(idx);
    }
    for list in &mut by_class {
        list.shuffle(&mut rng);
    }
    let class_counts: Vec<usize> = by_class.iter().map(Vec::len).collect();
    let prior = LabelDistribution::from_counts(&class_counts)?;

    let mixtures: Vec<Vec<f64>> = match concentration {
        Concentration::Iid => vec![prior.probs().to_vec(); num_workers],
        Concentration::Finite(delta) => {
            let alpha: Vec<f64> = prior.probs().iter().map(|q| delta * q).collect();
            (0..num_workers)
                .map(|_| sample_dirichlet(&alpha, &mut rng))
                .collect()
        }
    };

    // alloc[i][j]: samples of class j handed to worker i
    let mut alloc = vec![vec![0usize; m]; num_workers];
    for j in 0..m {
        let weights: Vec<f64> = mixtures.iter().map(|v| v[j]).collect();
        for (i, c) in largest_remainder(class_counts[j], &weights)
            .into_iter()
            .enumerate()
        {
            alloc[i][j] = c;
        }
    }

    loop {
        let totals: Vec<usize> = alloc.iter().map(|row| row.iter().sum()).collect();
        let Some(empty) = totals.iter().position(|&t| t == 0) else {
            break;
        };
        let donor = (0..num_workers)
            .max_by(|&a, &b| totals[a].cmp(&totals[b]).then(b.cmp(&a)))
            .expect("at least one worker");
        let class = (0..m)
            .filter(|&j| alloc[donor][j] > 0)
            .max_by(|&a, &b| {
                mixtures[empty][a]
                    .total_cmp(&mixtures[empty][b])
                    .then(b.cmp(&a))
            })
            .expect("donor shard is non-empty");
        alloc[donor][class] -= 1;
        alloc[empty][class] += 1;
    }

    let mut cursors = vec![0usize; m];
    let shards = alloc
        .iter()
        .map(|row| {
            let mut shard = Vec::with_capacity(row.iter().sum());
            for (j, &count) in row.iter().enumerate() {
                for &idx in &by_class[j][cursors[j]..cursors[j] + count] {
                    shard.push(dataset.samples[idx].clone());
                }
                cursors[j] += count;
            }
            shard
        })
        .collect();

    Ok(PartitionedDataset {
        shards,
        num_classes: m,
        prior,
    })
}
