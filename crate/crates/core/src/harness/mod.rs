//! Training, evaluation and verification tooling.

pub mod checkpoint;
pub mod config;
pub mod gradcheck;
pub mod metrics;
pub mod optim;
pub mod ridge;
pub mod train;

pub use config::TrainConfig;
pub use metrics::{mse, normalize_scores, pcc, EvalReport, MetricReport};
pub use train::{evaluate, run_experiment, train, Dataset, TrainResult};
