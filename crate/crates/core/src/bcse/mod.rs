//! Branch-current state estimation: weighted least squares over per-branch,
//! per-phase real/imaginary current components, solved by Gauss-Newton with
//! Levenberg damping on ill-conditioned steps.

mod measurement;
mod model;
mod solver;

pub use measurement::{
    load_measurement_csv, save_measurement_csv, Measurement, MeasurementKind,
    MeasurementLocation, MeasurementSource,
};
pub use model::{MeasurementModel, StateIndex};
pub use solver::{solve_wls, WlsOptions, WlsSolution};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum BcseError {
    #[error("measurement references unknown {0}")]
    UnknownLocation(String),
    #[error("sigma must be positive, got {0}")]
    BadSigma(f64),
    #[error("state vector length {got}, expected {expected}")]
    StateLength { expected: usize, got: usize },
    #[error("gain matrix singular; weakly observed state components: {0}")]
    Unobservable(String),
    #[error("grid error: {0}")]
    Grid(#[from] crate::grid::GridError),
    #[error("csv error: {0}")]
    Csv(String),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}
