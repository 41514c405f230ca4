//! Experiment configuration, scenario presets and validation.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::datagen::{Concentration, DEFAULT_CLASS_SEPARATION};
use crate::frequency::FrequencyConfig;
use crate::splitnet::{Activation, Architecture};
use crate::telemetry::{mbps_to_bytes_per_sec, FleetSpec, SmoothingConfig};
use crate::{Error, Result};

/// Non-IID levels with a named scenario.
pub const PRESET_LEVELS: [u32; 6] = [0, 1, 2, 4, 5, 10];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Strategy {
    /// KL- and waiting-aware clustering with adaptive frequencies.
    ParallelSfl,
    /// Random clusters of the same sizes and random tops, `τ = tau_max`
    /// everywhere.
    RandomCluster,
    /// The full clustering with `τ = tau_max` everywhere.
    FixedFrequency,
    /// One cluster holding every worker, one iteration per round.
    SingleClusterSfl,
}

impl Strategy {
    pub const ALL: [Strategy; 4] = [
        Strategy::ParallelSfl,
        Strategy::RandomCluster,
        Strategy::FixedFrequency,
        Strategy::SingleClusterSfl,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Strategy::ParallelSfl => "parallel-sfl",
            Strategy::RandomCluster => "random-cluster",
            Strategy::FixedFrequency => "fixed-frequency",
            Strategy::SingleClusterSfl => "single-cluster-sfl",
        }
    }
}

impl fmt::Display for Strategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Strategy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Strategy::ALL
            .into_iter()
            .find(|st| st.name() == s)
            .ok_or_else(|| {
                Error::Config(format!(
                    "unknown strategy {s:?}; expected one of parallel-sfl, random-cluster, \
                     fixed-frequency, single-cluster-sfl"
                ))
            })
    }
}

/// Label skew across workers: `"iid"`, `{"p": level}` or `{"delta": δ}`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Heterogeneity {
    Iid,
    P(f64),
    Delta(f64),
}

impl Heterogeneity {
    pub fn concentration(&self) -> Result<Concentration> {
        match *self {
            Heterogeneity::Iid => Ok(Concentration::Iid),
            Heterogeneity::P(p) => Concentration::from_level(p),
            Heterogeneity::Delta(d) if d.is_finite() && d > 0.0 => Ok(Concentration::Finite(d)),
            Heterogeneity::Delta(d) => Err(Error::Config(format!(
                "data.heterogeneity.delta must be positive, got {d}"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    pub num_classes: usize,
    pub samples_per_class: usize,
    pub test_samples_per_class: usize,
    pub feature_dim: usize,
    pub class_separation: f64,
    pub heterogeneity: Heterogeneity,
}

impl Default for DataConfig {
    fn default() -> Self {
        Self {
            num_classes: 10,
            samples_per_class: 600,
            test_samples_per_class: 100,
            feature_dim: 32,
            class_separation: DEFAULT_CLASS_SEPARATION,
            heterogeneity: Heterogeneity::Iid,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub layer_dims: Vec<usize>,
    pub split_layer: usize,
    pub activation: Activation,
    pub learning_rate: f64,
    /// Per-round multiplicative learning-rate decay.
    pub lr_decay: f64,
    pub batch_size: usize,
    /// Top-to-bottom compute time ratio; derived from the layer sizes when
    /// absent.
    pub top_compute_ratio: Option<f64>,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            layer_dims: vec![32, 64, 64, 10],
            split_layer: 2,
            activation: Activation::Tanh,
            learning_rate: 0.1,
            lr_decay: 0.993,
            batch_size: 64,
            top_compute_ratio: None,
        }
    }
}

impl ModelConfig {
    pub fn architecture(&self) -> Result<Architecture> {
        Architecture::new(self.layer_dims.clone(), self.split_layer, self.activation)
            .map_err(|e| Error::Config(format!("model: {e}")))
    }

    pub fn top_ratio(&self, arch: &Architecture) -> f64 {
        self.top_compute_ratio
            .unwrap_or_else(|| arch.top_to_bottom_compute_ratio())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ClusteringConfig {
    pub lambda: f64,
    /// Number of label groups; `max(1, round(N/5))` when absent.
    pub k: Option<usize>,
    /// Ingress bandwidth one bottom worker occupies at its top worker.
    pub occupied_bandwidth_mbps: f64,
    /// Candidate plans evaluated by refinement per round.
    pub refine_budget: usize,
    /// Overrides of the utility normalizers; fleet-derived when absent.
    pub waiting_norm: Option<f64>,
    pub kl_norm: Option<f64>,
}

impl Default for ClusteringConfig {
    fn default() -> Self {
        Self {
            lambda: 0.5,
            k: None,
            occupied_bandwidth_mbps: 4.0,
            refine_budget: 20_000,
            waiting_norm: None,
            kl_norm: None,
        }
    }
}

impl ClusteringConfig {
    pub fn per_worker_bandwidth(&self) -> f64 {
        mbps_to_bytes_per_sec(self.occupied_bandwidth_mbps)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrafficConfig {
    /// Count the top worker handing out and collecting bottom submodels.
    pub count_bottom_distribution: bool,
}

impl Default for TrafficConfig {
    fn default() -> Self {
        Self {
            count_bottom_distribution: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub rounds: u64,
    pub strategy: Strategy,
    pub fleet: FleetSpec,
    pub data: DataConfig,
    pub model: ModelConfig,
    pub clustering: ClusteringConfig,
    pub frequency: FrequencyConfig,
    pub telemetry: SmoothingConfig,
    pub traffic: TrafficConfig,
    pub out_dir: PathBuf,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            rounds: 60,
            strategy: Strategy::ParallelSfl,
            fleet: FleetSpec::default(),
            data: DataConfig::default(),
            model: ModelConfig::default(),
            clustering: ClusteringConfig::default(),
            frequency: FrequencyConfig::default(),
            telemetry: SmoothingConfig::default(),
            traffic: TrafficConfig::default(),
            out_dir: PathBuf::from("out"),
        }
    }
}

fn positive(name: &str, v: f64) -> Result<()> {
    if v.is_finite() && v > 0.0 {
        Ok(())
    } else {
        Err(Error::Config(format!("{name} must be positive, got {v}")))
    }
}

impl ExperimentConfig {
    /// Named scenario: `iid` or `noniid-p<level>` for the preset levels.
    pub fn preset(name: &str) -> Result<Self> {
        let heterogeneity = match name {
            "iid" | "noniid-p0" => Heterogeneity::Iid,
            _ => {
                let level = name
                    .strip_prefix("noniid-p")
                    .and_then(|l| l.parse::<u32>().ok())
                    .filter(|l| PRESET_LEVELS.contains(l))
                    .ok_or_else(|| {
                        Error::Config(format!(
                            "unknown scenario {name:?}; expected iid or noniid-p{{1,2,4,5,10}}"
                        ))
                    })?;
                Heterogeneity::P(level as f64)
            }
        };
        let mut cfg = Self::default();
        cfg.data.heterogeneity = heterogeneity;
        Ok(cfg)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: Self = serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    pub fn validate(&self) -> Result<()> {
        if self.rounds == 0 {
            return Err(Error::Config("rounds must be at least 1".into()));
        }
        self.fleet.validate()?;
        if self.fleet.num_workers < 2 {
            return Err(Error::Config("fleet.num_workers must be at least 2".into()));
        }
        let d = &self.data;
        if d.num_classes < 2 {
            return Err(Error::Config("data.num_classes must be at least 2".into()));
        }
        if d.samples_per_class == 0 || d.test_samples_per_class == 0 || d.feature_dim == 0 {
            return Err(Error::Config(
                "data.samples_per_class, data.test_samples_per_class and data.feature_dim must be positive"
                    .into(),
            ));
        }
        if d.samples_per_class * d.num_classes < self.fleet.num_workers {
            return Err(Error::Config(
                "data: fewer training samples than workers".into(),
            ));
        }
        positive("data.class_separation", d.class_separation)?;
        d.heterogeneity.concentration()?;

        let m = &self.model;
        let arch = m.architecture()?;
        if arch.input_dim() != d.feature_dim {
            return Err(Error::Config(format!(
                "model.layer_dims starts at {} but data.feature_dim is {}",
                arch.input_dim(),
                d.feature_dim
            )));
        }
        if arch.num_classes() != d.num_classes {
            return Err(Error::Config(format!(
                "model.layer_dims ends at {} but data.num_classes is {}",
                arch.num_classes(),
                d.num_classes
            )));
        }
        if !(m.learning_rate.is_finite() && m.learning_rate >= 0.0) {
            return Err(Error::Config("model.learning_rate must be >= 0".into()));
        }
        if !(m.lr_decay > 0.0 && m.lr_decay <= 1.0) {
            return Err(Error::Config("model.lr_decay must be in (0, 1]".into()));
        }
        if m.batch_size == 0 {
            return Err(Error::Config("model.batch_size must be positive".into()));
        }
        if let Some(r) = m.top_compute_ratio {
            positive("model.top_compute_ratio", r)?;
        }

        let c = &self.clustering;
        if !(0.0..=1.0).contains(&c.lambda) {
            return Err(Error::Config(format!(
                "clustering.lambda must be in [0, 1], got {}",
                c.lambda
            )));
        }
        if let Some(k) = c.k {
            if k == 0 || k > self.fleet.num_workers {
                return Err(Error::Config(format!(
                    "clustering.k must be in [1, {}], got {k}",
                    self.fleet.num_workers
                )));
            }
        }
        positive("clustering.occupied_bandwidth_mbps", c.occupied_bandwidth_mbps)?;
        if let Some(v) = c.waiting_norm {
            positive("clustering.waiting_norm", v)?;
        }
        if let Some(v) = c.kl_norm {
            positive("clustering.kl_norm", v)?;
        }
        self.frequency.validate()?;
        self.telemetry.validate()?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_are_valid() {
        ExperimentConfig::default().validate().unwrap();
    }

    #[test]
    fn presets() {
        for name in ["iid", "noniid-p1", "noniid-p2", "noniid-p4", "noniid-p5", "noniid-p10"] {
            ExperimentConfig::preset(name).unwrap().validate().unwrap();
        }
        assert_eq!(
            ExperimentConfig::preset("noniid-p10").unwrap().data.heterogeneity,
            Heterogeneity::P(10.0)
        );
        assert!(ExperimentConfig::preset("noniid-p3").is_err());
        assert!(ExperimentConfig::preset("bogus").is_err());
    }

    #[test]
    fn heterogeneity_json_forms() {
        let h: Heterogeneity = serde_json::from_str("\"iid\"").unwrap();
        assert_eq!(h, Heterogeneity::Iid);
        let h: Heterogeneity = serde_json::from_str("{\"p\": 4}").unwrap();
        assert_eq!(h, Heterogeneity::P(4.0));
        let h: Heterogeneity = serde_json::from_str("{\"delta\": 0.3}").unwrap();
        assert_eq!(h.concentration().unwrap(), Concentration::Finite(0.3));
        assert!(Heterogeneity::Delta(0.0).concentration().is_err());
    }

    #[test]
    fn strategy_names() {
        for s in Strategy::ALL {
            assert_eq!(s.name().parse::<Strategy>().unwrap(), s);
            assert_eq!(serde_json::to_string(&s).unwrap(), format!("\"{}\"", s.name()));
        }
        assert!("fastest".parse::<Strategy>().is_err());
    }

    #[test]
    fn validation_names_fields() {
        let mut c = ExperimentConfig::default();
        c.clustering.lambda = 1.5;
        let msg = c.validate().unwrap_err().to_string();
        assert!(msg.contains("clustering.lambda"), "{msg}");

        let mut c = ExperimentConfig::default();
        c.data.feature_dim = 16;
        assert!(c.validate().unwrap_err().to_string().contains("feature_dim"));

        let err = ExperimentConfig::from_json("{\"rounds\": 3, \"colour\": 1}").unwrap_err();
        assert!(err.is_config());
        assert!(err.to_string().contains("colour"));
    }
}
