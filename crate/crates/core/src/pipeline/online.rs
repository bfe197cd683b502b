//! Online horizon: for each test hour, combine expert forecasts into
//! weighted pseudo-measurements, estimate the state, recover feedback powers,
//! re-predict with the refreshed feedback feature, and cycle until the
//! pseudo-measurements settle; then update the expert weights from the latest
//! available observation.

use nalgebra::DVector;

use crate::bcse::MeasurementSource;
use crate::dataset::{AmiHistory, DataSplit, FeatureVector, FlowReadings, Quality};
use crate::grid::Feeder;

use super::estimator::LoadEstimator;
use super::offline::{solve_and_disaggregate, Assembler, OfflineArtifacts};
use super::{PipelineConfig, PipelineError};

#[derive(Debug, Clone)]
pub struct OnlineRecord {
    /// Absolute hour index into the history grid.
    pub hour: usize,
    /// Inner-loop cycles executed (the BCSE/DLE/re-predict passes).
    pub cycles: usize,
    /// Max relative pseudo-measurement change per cycle.
    pub cycle_changes: Vec<f64>,
    pub pseudo_kw: Vec<f64>,
    pub pseudo_sigma_kw: Vec<f64>,
    pub expert_means_kw: Vec<[f64; 4]>,
    pub dle_kw: Vec<f64>,
    pub realized_kw: Vec<f64>,
    pub observed: Vec<bool>,
    pub state: DVector<f64>,
    pub solver_ok: bool,
}

pub fn online_horizon(
    feeder: &Feeder,
    history: &AmiHistory,
    flows: &FlowReadings,
    split: &DataSplit,
    config: &PipelineConfig,
    offline: &mut OfflineArtifacts,
) -> Result<Vec<OnlineRecord>, PipelineError> {
    let closed = config.mode.is_closed();
    let n = offline.customers.len();
    let builder = offline.feature_builder(feeder, &history.timestamps);
    let assembler = Assembler::new(feeder, &offline.customers, flows, &config.measurements);

    let measured_kw = |c: usize, t: usize| -> Option<f64> {
        offline.customers[c].history_row.and_then(|row| {
            (history.quality[row][t] == Quality::Measured)
                .then(|| history.kw[row][t])
                .flatten()
        })
    };

    let mut state = offline.last_state.clone();
    let mut dle_prev = offline.last_dle.clone();
    let mut records = Vec::with_capacity(split.test_hours.len());

    for (step, &t) in split.test_hours.iter().enumerate() {
        let features = |dle: &[f64]| -> Vec<FeatureVector> {
            (0..n)
                .map(|c| {
                    let p = closed.then(|| offline.p_tilde_norm(c, dle[c]));
                    builder.build(offline.customers[c].bus, t, p)
                })
                .collect()
        };

        // Stage IV: initial inference with the previous hour's feedback.
        let mut xs = features(&dle_prev);
        let mut forecasts: Vec<_> = (0..n)
            .map(|c| offline.estimator.expert_forecasts(c, &xs[c]))
            .collect();
        let mut combined: Vec<_> = (0..n)
            .map(|c| offline.estimator.combine_forecast(c, &forecasts[c]))
            .collect();

        // Stages V-VII: estimate, recover feedback, re-predict, cycle.
        let mut cycles = 0usize;
        let mut cycle_changes = Vec::new();
        let mut dle_now = dle_prev.clone();
        let mut solver_ok = true;
        loop {
            cycles += 1;
            let value_of = |c: usize| -> (f64, f64, MeasurementSource) {
                match measured_kw(c, t) {
                    Some(kw) => (
                        kw,
                        (kw.abs() / config.measurements.meter_divisor).max(1e-3),
                        MeasurementSource::Meter,
                    ),
                    None => (
                        combined[c].mean_kw,
                        combined[c].variance_kw2.sqrt().max(1e-3),
                        MeasurementSource::Pseudo,
                    ),
                }
            };
            match solve_and_disaggregate(
                feeder,
                &assembler,
                t,
                &value_of,
                &state,
                &offline.shares,
                &offline.customers,
            ) {
                Ok((new_state, dle_kw, converged)) => {
                    solver_ok = converged;
                    state = new_state;
                    dle_now = dle_kw;
                }
                Err(PipelineError::Bcse(_)) => {
                    // Divergence: fall back to the previous state and flag.
                    solver_ok = false;
                }
                Err(e) => return Err(e),
            }

            if !closed {
                break;
            }
            // Re-predict with the refreshed feedback feature.
            xs = features(&dle_now);
            let new_forecasts: Vec<_> = (0..n)
                .map(|c| offline.estimator.expert_forecasts(c, &xs[c]))
                .collect();
            let new_combined: Vec<_> = (0..n)
                .map(|c| offline.estimator.combine_forecast(c, &new_forecasts[c]))
                .collect();
            let change = (0..n)
                .map(|c| {
                    let floor = 0.01 * offline.customers[c].size_kw;
                    (new_combined[c].mean_kw - combined[c].mean_kw).abs()
                        / combined[c].mean_kw.abs().max(floor)
                })
                .fold(0.0f64, f64::max);
            forecasts = new_forecasts;
            combined = new_combined;
            cycle_changes.push(change);
            if change < config.loop_config.inner_threshold
                || cycles >= config.loop_config.max_inner_cycles
            {
                break;
            }
        }

        // Stage VIII: weight update from the latest available observation.
        let observed: Vec<bool> = (0..n).map(|c| measured_kw(c, t).is_some()).collect();
        let realized: Vec<f64> = (0..n)
            .map(|c| measured_kw(c, t).unwrap_or(dle_now[c].max(0.0)))
            .collect();
        for c in 0..n {
            offline
                .estimator
                .update_regret(c, &forecasts[c], combined[c].mean_kw, realized[c]);
        }

        records.push(OnlineRecord {
            hour: t,
            cycles,
            cycle_changes,
            pseudo_kw: combined.iter().map(|p| p.mean_kw).collect(),
            pseudo_sigma_kw: combined.iter().map(|p| p.variance_kw2.sqrt()).collect(),
            expert_means_kw: forecasts.iter().map(|f| f.means_kw).collect(),
            dle_kw: dle_now.clone(),
            realized_kw: realized,
            observed,
            state: state.clone(),
            solver_ok,
        });
        dle_prev = dle_now;

        // Experimental full-retrain cadence: refit the experts on the train
        // block extended with the online targets resolved so far.
        if let Some(every) = config.loop_config.retrain_interval_hours {
            if every > 0 && (step + 1) % every == 0 {
                retrain_with_online(feeder, history, config, offline, &records)?;
            }
        }
    }
    Ok(records)
}

fn retrain_with_online(
    feeder: &Feeder,
    history: &AmiHistory,
    config: &PipelineConfig,
    offline: &mut OfflineArtifacts,
    records: &[OnlineRecord],
) -> Result<(), PipelineError> {
    let closed = config.mode.is_closed();
    let builder = offline.feature_builder(feeder, &history.timestamps);
    let n = offline.customers.len();
    let mut samples: Vec<Vec<(usize, FeatureVector, f64)>> = vec![Vec::new(); n];
    for (c, info) in offline.customers.iter().enumerate() {
        for t in 0..offline.train_end {
            let p = closed.then(|| offline.p_tilde_norm(c, offline.dle_train[c][t]));
            samples[c].push((t, builder.build(info.bus, t, p), offline.targets[c][t]));
        }
        for r in records {
            let p = closed.then(|| offline.p_tilde_norm(c, r.dle_kw[c]));
            samples[c].push((r.hour, builder.build(info.bus, r.hour, p), r.realized_kw[c]));
        }
    }
    let training_set = super::estimator::TrainingSet {
        timestamps: history.timestamps.clone(),
        samples,
        kw_scales: offline
            .customers
            .iter()
            .map(|info| offline.scaling.kw[&info.id])
            .collect(),
    };
    // Refit preserves the regret state: weights are part of the outer loop,
    // not the experts.
    let regret_backup: Vec<_> = (0..n)
        .map(|c| offline.estimator.regret_state(c).clone())
        .collect();
    let traces_backup = offline.estimator.weight_traces().to_vec();
    offline.estimator.fit(&training_set)?;
    offline
        .estimator
        .restore_outer_state(regret_backup, traces_backup);
    Ok(())
}
