//! AMI data: ingestion, synthetic generation, preprocessing and the
//! corruption procedures used by the robustness experiments.

mod corrupt;
mod csvio;
mod features;
mod preprocess;
mod synthesize;
mod types;

pub use corrupt::{inject_bad_data, mask_missing, mask_unmetered};
pub use csvio::{load_ami_csv, save_ami_csv, LoadStats};
pub use features::{cyclic_pair, FeatureBuilder, FeatureLayout, FeatureVector, VoltageField};
pub use preprocess::{
    remove_gross_errors, split, split_at, DataSplit, FieldScale, Scaling, GROSS_ERROR_SIGMA,
};
pub use synthesize::{
    synthesize_history, FlowReadings, GroundTruth, SynthesisConfig, SyntheticWorld,
};
pub use types::{AmiHistory, Quality};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum DataError {
    #[error("schema error: {0}")]
    Schema(String),
    #[error("duplicate records for {0}")]
    Duplicate(String),
    #[error("bad timestamp '{0}': {1}")]
    BadTimestamp(String, String),
    #[error("history is empty")]
    Empty,
    #[error("need at least {need} samples, got {got}")]
    TooFewSamples { need: usize, got: usize },
    #[error("{0} corruption targets requested but only {1} train samples exist")]
    CountExceedsTrain(usize, usize),
    #[error("rate {0} outside [0, 1]")]
    BadRate(f64),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
}
