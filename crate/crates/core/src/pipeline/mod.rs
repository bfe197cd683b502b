//! Orchestration: offline training stages, the per-hour online loop with its
//! inner estimation cycle, baseline estimators behind a common registry, and
//! metric/report emission.

mod estimator;
mod evaluate;
mod mrvm;
mod offline;
mod online;
mod reports;
mod run;
mod sweep;

pub use estimator::{
    create_estimator, registered_estimators, GaussianMleEstimator, LoadEstimator, Prediction,
    RidgeEstimator, SeasonalMeanEstimator, TrainingSet,
};
pub use evaluate::{EvaluationReport, Histogram, StateErrorStats};
pub use mrvm::{ExpertForecast, MrvmEstimator, WeightTraceRow};
pub use offline::{offline_stage, CustomerInfo, OfflineArtifacts};
pub use online::{online_horizon, OnlineRecord};
pub use reports::write_reports;
pub use run::{run_scenario, RunArtifacts, ScenarioInputs};
pub use sweep::{run_baddata_sweep, SweepConfig, SweepRow};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Grid(#[from] crate::grid::GridError),
    #[error(transparent)]
    Data(#[from] crate::dataset::DataError),
    #[error(transparent)]
    Rvm(#[from] crate::rvm::RvmError),
    #[error(transparent)]
    Aggregator(#[from] crate::aggregator::AggregatorError),
    #[error(transparent)]
    Bcse(#[from] crate::bcse::BcseError),
    #[error(transparent)]
    Dle(#[from] crate::dle::DleError),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum LoopMode {
    OpenLoop,
    #[default]
    ClosedLoop,
}

impl LoopMode {
    pub fn as_str(self) -> &'static str {
        match self {
            LoopMode::OpenLoop => "open_loop",
            LoopMode::ClosedLoop => "closed_loop",
        }
    }

    pub fn parse(s: &str) -> Option<LoopMode> {
        match s {
            "open_loop" => Some(LoopMode::OpenLoop),
            "closed_loop" => Some(LoopMode::ClosedLoop),
            _ => None,
        }
    }

    pub fn is_closed(self) -> bool {
        self == LoopMode::ClosedLoop
    }
}

/// Inner-loop cycling controls.
#[derive(Debug, Clone)]
pub struct LoopConfig {
    /// Relative pseudo-measurement change below which the inner loop stops.
    pub inner_threshold: f64,
    pub max_inner_cycles: usize,
    /// Optional expert retraining cadence during the online horizon
    /// (experimentation flag; None trains once offline).
    pub retrain_interval_hours: Option<usize>,
}

impl Default for LoopConfig {
    fn default() -> Self {
        LoopConfig {
            inner_threshold: 0.01,
            max_inner_cycles: 5,
            retrain_interval_hours: None,
        }
    }
}

/// Learner knobs shared by the expert pool and the registry baselines.
#[derive(Debug, Clone)]
pub struct LearnerSettings {
    pub kernel: crate::rvm::KernelConfig,
    pub cv: crate::rvm::CvConfig,
    /// Cap on training samples per (customer, season) model.
    pub train_cap: usize,
    /// Customers with fewer usable seasonal samples fall back to a
    /// seasonal-mean expert.
    pub min_train_samples: usize,
}

impl Default for LearnerSettings {
    fn default() -> Self {
        LearnerSettings {
            kernel: crate::rvm::KernelConfig::default(),
            cv: crate::rvm::CvConfig::default(),
            train_cap: 500,
            min_train_samples: 50,
        }
    }
}

/// Measurement weighting conventions.
#[derive(Debug, Clone)]
pub struct MeasurementSettings {
    /// Loads' reactive power is synthesized at this lagging power factor.
    pub power_factor: f64,
    /// Meter sigma = |reading| / divisor (3 sigma = 1% at 300).
    pub meter_divisor: f64,
    pub meter_sigma_floor_pu: f64,
    pub pmu_sigma_pu: f64,
    pub zero_injection_sigma_pu: f64,
    /// Scaffold pseudo-measurements carry sigma = frac * |value|.
    pub scaffold_sigma_frac: f64,
}

impl Default for MeasurementSettings {
    fn default() -> Self {
        MeasurementSettings {
            power_factor: 0.95,
            meter_divisor: 300.0,
            meter_sigma_floor_pu: 1e-6,
            pmu_sigma_pu: 1e-4,
            zero_injection_sigma_pu: 1e-5,
            scaffold_sigma_frac: 0.5,
        }
    }
}

#[derive(Debug, Clone, Default)]
pub struct PipelineConfig {
    pub mode: LoopMode,
    pub loop_config: LoopConfig,
    pub learner: LearnerSettings,
    pub measurements: MeasurementSettings,
}
