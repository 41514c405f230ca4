//! Split federated learning over heterogeneous worker fleets.
//!
//! Workers are grouped into clusters, each with one top worker that holds the
//! top submodel and several bottom workers that train bottom submodels on
//! their local shards. Clusters run different numbers of local iterations so
//! they finish a round at roughly the same simulated time, and the parameter
//! server merges the spliced cluster models with weights proportional to
//! cluster size times local iterations.
//!
//! Modules, bottom-up:
//!
//! * [`datagen`]: synthetic classification data and Dirichlet non-IID shards.
//! * [`splitnet`]: an MLP with manual backprop, split into bottom and top.
//! * [`telemetry`]: per-worker monitored state and its moving average.
//! * [`clustering`]: greedy worker clustering and exchange refinement.
//! * [`frequency`]: per-cluster local updating frequencies.
//! * [`engine`]: the round loop plus time, waiting and traffic accounting.
//! * [`config`] and [`cli`]: experiment configuration and the runner.

pub mod cli;
pub mod clustering;
pub mod config;
pub mod datagen;
pub mod engine;
pub mod error;
pub mod frequency;
pub mod rng;
pub mod splitnet;
pub mod telemetry;

pub use error::{Error, Result};

/// Index of a worker in the fleet.
pub type WorkerId = usize;
