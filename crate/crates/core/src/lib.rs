//! Bayesian optimization over domain-randomization parameters with
//! checkpoint fine-tuning, plus the baselines, environments and tooling
//! needed to run and compare desk-scale experiments.
//!
//! The outer loop lives in [`orchestrator`]; [`strategies`] decides which
//! earlier policy each fine-tuning step starts from.

pub mod bo;
pub mod checkpoint;
pub mod config;
pub mod envs;
pub mod error;
pub mod eval;
pub mod gp;
pub mod orchestrator;
pub mod policy;
pub mod report;
pub mod rng;
pub mod rundir;
pub mod space;
pub mod strategies;
pub mod trainer;

pub use bo::{BayesOpt, BoConfig};
pub use config::{ExperimentConfig, Runner};
pub use envs::{EnvId, EnvSpec, GroundTruth};
pub use error::{Error, Result};
pub use gp::GpSurrogate;
pub use orchestrator::RunRecord;
pub use policy::{Arch, Policy};
pub use space::{ParamSpace, ParamVector, RunningStats};
pub use strategies::{History, StrategyKind};
pub use trainer::EsConfig;
