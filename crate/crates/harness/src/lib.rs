//! Configuration, execution and comparison of evolutionary meta-learning
//! experiments.

pub mod compare;
pub mod config;
pub mod error;
pub mod metrics;
pub mod run;

pub use config::{ExperimentConfig, Preset};
pub use error::HarnessError;
pub use run::{run, RunOptions, RunSummary};
