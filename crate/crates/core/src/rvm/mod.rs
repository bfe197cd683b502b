//! Sparse Bayesian kernel regression.
//!
//! A kernelized linear model `y = w0 + sum_i w_i K(x, x_i)` with independent
//! zero-mean Gaussian priors on the weights, one precision hyperparameter per
//! weight. Hyperparameters and the noise variance are re-estimated by
//! fixed-point updates that maximize the marginal likelihood; weights whose
//! precision diverges are pruned, leaving a sparse set of relevance vectors.
//! The predictive distribution is Gaussian with input-dependent variance,
//! which downstream code uses to weight pseudo-measurements.

mod kernel;
mod model;
mod train;

pub use kernel::{design_matrix, rbf_kernel};
pub use model::{PredictiveDistribution, RvmModel, TrainSummary};
pub use train::{
    em_iteration, posterior, select_bandwidth, train, CvConfig, EmStep, KernelConfig,
};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum RvmError {
    #[error("feature dimension mismatch: {0} vs {1}")]
    DimensionMismatch(usize, usize),
    #[error("need at least {need} training samples, got {got}")]
    TooFewSamples { need: usize, got: usize },
    #[error("every basis function was pruned; the model is degenerate")]
    AllPruned,
    #[error("invalid configuration: {0}")]
    BadConfig(String),
    #[error("numerical failure: {0}")]
    Numerical(String),
    #[error("serialization: {0}")]
    Serialization(String),
}
