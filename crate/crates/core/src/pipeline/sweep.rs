//! Bad-data robustness sweep: corrupt a growing share of the training
//! samples, retrain every registered strategy, measure the test MAPE.
//! Runs at the learning layer with open-loop features so the comparison
//! isolates the estimators themselves.

use crate::dataset::{
    inject_bad_data, remove_gross_errors, AmiHistory, DataSplit, FeatureVector, FieldScale,
    GroundTruth, Quality, VoltageField,
};
use crate::grid::Feeder;

use super::estimator::{create_estimator, TrainingSet};
use super::offline::customer_roster;
use super::{LearnerSettings, PipelineError};

#[derive(Debug, Clone)]
pub struct SweepConfig {
    /// Corruption levels as fractions of the train sample count.
    pub fractions: Vec<f64>,
    pub trials: usize,
    pub methods: Vec<String>,
    pub seed: u64,
}

impl Default for SweepConfig {
    fn default() -> Self {
        SweepConfig {
            fractions: vec![0.0, 0.05, 0.10, 0.20],
            trials: 3,
            methods: vec![
                "mrvm".to_string(),
                "ridge_linear".to_string(),
                "gaussian_mle".to_string(),
            ],
            seed: 17,
        }
    }
}

#[derive(Debug, Clone)]
pub struct SweepRow {
    pub method: String,
    pub fraction: f64,
    pub n_bad: usize,
    pub trial: usize,
    pub mape_pct: f64,
}

struct MlProblem {
    training: TrainingSet,
    test: Vec<Vec<(usize, FeatureVector, f64)>>,
}

/// Open-loop feature/target assembly straight from a (possibly corrupted)
/// history. Targets are measured samples only.
fn build_ml_problem(
    feeder: &Feeder,
    history: &AmiHistory,
    truth: &GroundTruth,
    split: &DataSplit,
) -> MlProblem {
    let customers = customer_roster(feeder, history);
    let train_end = split.train_hours.len();

    let voltage_scale = FieldScale::fit(
        customers
            .iter()
            .filter_map(|c| c.history_row)
            .flat_map(|row| history.voltage[row][..train_end].iter())
            .flatten()
            .copied(),
    );
    let mut series: Vec<Vec<Option<f64>>> =
        vec![vec![None; history.n_hours()]; feeder.n_buses()];
    for info in &customers {
        if let Some(row) = info.history_row {
            for t in 0..history.n_hours() {
                if let Some(v) = history.voltage[row][t] {
                    series[info.bus][t] = Some(voltage_scale.normalize(v));
                }
            }
        }
    }
    let builder = crate::dataset::FeatureBuilder {
        feeder,
        voltages: VoltageField::new(series, train_end),
        timestamps: &history.timestamps,
    };

    let mut samples = Vec::new();
    let mut test = Vec::new();
    let mut kw_scales = Vec::new();
    for info in &customers {
        let mut train_rows = Vec::new();
        let mut test_rows = Vec::new();
        if let Some(row) = info.history_row {
            for &t in &split.train_hours {
                if history.quality[row][t] == Quality::Measured {
                    if let Some(kw) = history.kw[row][t] {
                        train_rows.push((t, builder.build(info.bus, t, None), kw));
                    }
                }
            }
            for &t in &split.test_hours {
                let kw = truth.kw[row][t];
                test_rows.push((t, builder.build(info.bus, t, None), kw));
            }
        }
        kw_scales.push(FieldScale::fit(train_rows.iter().map(|(_, _, kw)| *kw)));
        samples.push(train_rows);
        test.push(test_rows);
    }
    MlProblem {
        training: TrainingSet {
            timestamps: history.timestamps.clone(),
            samples,
            kw_scales,
        },
        test,
    }
}

/// Fits one strategy and scores it on the held-out block, feeding realized
/// values back in hour order so adaptive strategies adapt.
fn fit_and_score(
    method: &str,
    settings: &LearnerSettings,
    problem: &MlProblem,
) -> Result<f64, PipelineError> {
    let mut est = create_estimator(method, settings)?;
    est.fit(&problem.training)?;
    let mut ratios = Vec::new();
    // Hour-major iteration so online adaptation sees time order.
    let max_len = problem.test.iter().map(|t| t.len()).max().unwrap_or(0);
    for slot in 0..max_len {
        for (c, rows) in problem.test.iter().enumerate() {
            if let Some((hour, x, truth_kw)) = rows.get(slot) {
                let floor = 0.01
                    * problem.training.kw_scales[c].max.max(1.0).abs();
                let p = est.predict(c, x, *hour);
                if truth_kw.abs() >= floor {
                    ratios.push(((p.mean_kw - truth_kw) / truth_kw).abs());
                }
                est.observe(c, x, *hour, *truth_kw);
            }
        }
    }
    Ok(100.0 * ratios.iter().sum::<f64>() / ratios.len().max(1) as f64)
}

pub fn run_baddata_sweep(
    feeder: &Feeder,
    history: &AmiHistory,
    truth: &GroundTruth,
    split: &DataSplit,
    settings: &LearnerSettings,
    sweep: &SweepConfig,
) -> Result<Vec<SweepRow>, PipelineError> {
    let train_samples: usize = {
        let customers = customer_roster(feeder, history);
        customers
            .iter()
            .filter_map(|c| c.history_row)
            .map(|row| {
                split
                    .train_hours
                    .iter()
                    .filter(|&&t| history.quality[row][t] == Quality::Measured)
                    .count()
            })
            .sum()
    };

    let mut rows = Vec::new();
    for &fraction in &sweep.fractions {
        let n_bad = (fraction * train_samples as f64).round() as usize;
        if n_bad > train_samples {
            return Err(PipelineError::Config(format!(
                "corruption fraction {fraction} exceeds the train population"
            )));
        }
        for trial in 0..sweep.trials {
            let seed = sweep
                .seed
                .wrapping_mul(1_000_003)
                .wrapping_add((fraction * 1e4) as u64)
                .wrapping_add(trial as u64);
            let (corrupted, _) = inject_bad_data(history, &split.train_hours, n_bad, seed)?;
            // The paper's preprocessing applies to corrupted data too.
            let (cleaned, _) = remove_gross_errors(&corrupted);
            let problem = build_ml_problem(feeder, &cleaned, truth, split);
            for method in &sweep.methods {
                let mape = fit_and_score(method, settings, &problem)?;
                rows.push(SweepRow {
                    method: method.clone(),
                    fraction,
                    n_bad,
                    trial,
                    mape_pct: mape,
                });
            }
        }
    }
    Ok(rows)
}
