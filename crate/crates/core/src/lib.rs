//! Fairness evaluation and mitigation toolkit for thresholded regression
//! models: rated datasets, group and conditional FPR metrics, small
//! regressors, correlation and adversarial regularizers, a training harness
//! and a synthetic data generator.

pub mod config;
pub mod dataset;
pub mod metrics;
pub mod model;
pub mod regularization;
pub mod synthgen;
pub mod trainer;

pub use dataset::{Dataset, Example, Threshold};
pub use metrics::{EvalSpec, MetricsReport};
pub use model::{Architecture, ModelParams};
pub use trainer::{RunResult, TrainConfig};
