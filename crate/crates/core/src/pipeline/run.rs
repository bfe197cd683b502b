//! End-to-end scenario driver: clean, train offline, walk the online
//! horizon, evaluate against ground truth when available.

use chrono::{DateTime, Utc};

use crate::dataset::{remove_gross_errors, AmiHistory, DataSplit, FlowReadings, GroundTruth};
use crate::grid::Feeder;

use super::evaluate::{evaluate, EvaluationReport};
use super::offline::{offline_stage, OfflineArtifacts};
use super::online::{online_horizon, OnlineRecord};
use super::{LoopMode, PipelineConfig, PipelineError};

pub struct ScenarioInputs {
    pub history: AmiHistory,
    pub flows: FlowReadings,
    pub truth: Option<GroundTruth>,
    pub split: DataSplit,
}

pub struct RunArtifacts {
    pub mode: LoopMode,
    pub timestamps: Vec<DateTime<Utc>>,
    pub offline: OfflineArtifacts,
    pub records: Vec<OnlineRecord>,
    pub evaluation: Option<EvaluationReport>,
    pub removed_samples: usize,
}

pub fn run_scenario(
    feeder: &Feeder,
    inputs: &ScenarioInputs,
    config: &PipelineConfig,
) -> Result<RunArtifacts, PipelineError> {
    let (cleaned, removal_mask) = remove_gross_errors(&inputs.history);
    let removed = removal_mask
        .iter()
        .map(|row| row.iter().filter(|&&m| m).count())
        .sum();

    let mut offline = offline_stage(feeder, &cleaned, &inputs.flows, &inputs.split, config)?;
    let records = online_horizon(
        feeder,
        &cleaned,
        &inputs.flows,
        &inputs.split,
        config,
        &mut offline,
    )?;
    let evaluation = match &inputs.truth {
        Some(truth) => Some(evaluate(
            feeder,
            truth,
            &inputs.split,
            &records,
            &offline,
            config,
        )?),
        None => None,
    };
    Ok(RunArtifacts {
        mode: config.mode,
        timestamps: cleaned.timestamps.clone(),
        offline,
        records,
        evaluation,
        removed_samples: removed,
    })
}
