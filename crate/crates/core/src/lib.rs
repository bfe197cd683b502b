//! Closed-loop distribution system state estimation.
//!
//! The crate combines seasonal sparse-Bayesian load estimators with a
//! regret-minimizing aggregation layer to produce weighted pseudo-measurements,
//! feeds them into a branch-current weighted-least-squares state estimator, and
//! closes the loop by converting estimated voltages back into nodal power
//! feedback signals that refine the estimators.
//!
//! Modules:
//! - [`grid`]: radial three-phase feeder model, power-flow oracle, voltage
//!   reconstruction from branch currents.
//! - [`dataset`]: AMI ingestion, synthetic data generation, preprocessing and
//!   corruption procedures.
//! - [`rvm`]: sparse Bayesian kernel regression with automatic pruning.
//! - [`aggregator`]: exponentially-weighted combination of seasonal experts
//!   with regret tracking.
//! - [`bcse`]: branch-current state estimator (Gauss-Newton WLS).
//! - [`dle`]: nodal power recovery from estimated voltages (the feedback
//!   signal).
//! - [`pipeline`]: offline/online orchestration, estimator registry, metrics
//!   and report emission.

pub mod aggregator;
pub mod bcse;
pub mod dataset;
pub mod dle;
pub mod grid;
pub mod pipeline;
pub mod rvm;

pub use grid::{Feeder, FeederTopology, Phasor};
