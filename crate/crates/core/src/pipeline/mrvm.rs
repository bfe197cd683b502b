//! The paper-style strategy: four per-season sparse Bayesian experts per
//! customer, combined by regret-weighted averaging. Training is per
//! (customer, season) and embarrassingly parallel.

use chrono::{DateTime, Utc};
use rayon::prelude::*;

use crate::aggregator::{combine, combine_variance, eta, regret_bound, RegretState, Season};
use crate::dataset::{FeatureVector, FieldScale};
use crate::rvm::{select_bandwidth, train, KernelConfig, RvmModel};

use super::estimator::{LoadEstimator, Prediction, TrainingSet};
use super::{LearnerSettings, PipelineError};

pub enum Expert {
    Rvm(RvmModel),
    /// Customers with too few usable samples (or a degenerate fit) fall back
    /// to their seasonal mean with empirical variance, in normalized units.
    Fallback { mean: f64, variance: f64 },
}

impl Expert {
    fn predict_norm(&self, x: &FeatureVector) -> (f64, f64) {
        match self {
            Expert::Rvm(model) => match model.predict(x.as_slice()) {
                Ok(p) => (p.mean, p.variance),
                Err(_) => (0.5, 1.0),
            },
            Expert::Fallback { mean, variance } => (*mean, *variance),
        }
    }

    pub fn is_fallback(&self) -> bool {
        matches!(self, Expert::Fallback { .. })
    }
}

/// Per-expert forecast for one (customer, hour), engineering units.
#[derive(Debug, Clone, Copy)]
pub struct ExpertForecast {
    pub means_kw: [f64; 4],
    pub variances_kw2: [f64; 4],
}

#[derive(Debug, Clone)]
pub struct WeightTraceRow {
    pub t: usize,
    pub weights: [f64; 4],
    pub eta: f64,
    pub max_regret: f64,
    pub bound: f64,
}

pub struct MrvmEstimator {
    settings: LearnerSettings,
    timestamps: Vec<DateTime<Utc>>,
    experts: Vec<[Expert; 4]>,
    scales: Vec<FieldScale>,
    regret: Vec<RegretState>,
    traces: Vec<Vec<WeightTraceRow>>,
    bandwidths: Vec<[f64; 4]>,
}

impl MrvmEstimator {
    pub fn new(settings: LearnerSettings) -> MrvmEstimator {
        MrvmEstimator {
            settings,
            timestamps: Vec::new(),
            experts: Vec::new(),
            scales: Vec::new(),
            regret: Vec::new(),
            traces: Vec::new(),
            bandwidths: Vec::new(),
        }
    }

    pub fn weights(&self, customer: usize) -> Vec<f64> {
        self.regret[customer].weights()
    }

    pub fn regret_state(&self, customer: usize) -> &RegretState {
        &self.regret[customer]
    }

    pub fn weight_traces(&self) -> &[Vec<WeightTraceRow>] {
        &self.traces
    }

    pub fn loss_scale(&self, customer: usize) -> f64 {
        self.regret[customer].loss_scale
    }

    pub fn expert(&self, customer: usize, season: Season) -> &Expert {
        &self.experts[customer][season.index()]
    }

    pub fn bandwidth(&self, customer: usize, season: Season) -> f64 {
        self.bandwidths[customer][season.index()]
    }

    /// All four expert forecasts, denormalized and floored at zero.
    pub fn expert_forecasts(&self, customer: usize, x: &FeatureVector) -> ExpertForecast {
        let scale = &self.scales[customer];
        let range2 = scale.range() * scale.range();
        let mut means = [0.0f64; 4];
        let mut vars = [0.0f64; 4];
        for s in 0..4 {
            let (m, v) = self.experts[customer][s].predict_norm(x);
            means[s] = scale.denormalize(m).max(0.0);
            vars[s] = (v * range2).max(1e-9);
        }
        ExpertForecast {
            means_kw: means,
            variances_kw2: vars,
        }
    }

    pub fn combine_forecast(&self, customer: usize, forecast: &ExpertForecast) -> Prediction {
        let w = self.regret[customer].weights();
        let mean = combine(&forecast.means_kw, &w).expect("simplex weights");
        let var = combine_variance(&forecast.variances_kw2, &w).expect("simplex weights");
        Prediction {
            mean_kw: mean,
            variance_kw2: var,
        }
    }

    /// Reinstalls outer-loop state (regret, traces) across an expert refit.
    pub fn restore_outer_state(
        &mut self,
        regret: Vec<RegretState>,
        traces: Vec<Vec<WeightTraceRow>>,
    ) {
        assert_eq!(regret.len(), self.experts.len());
        self.regret = regret;
        self.traces = traces;
    }

    /// One regret round: losses normalized by the customer's training range.
    pub fn update_regret(
        &mut self,
        customer: usize,
        forecast: &ExpertForecast,
        combined_kw: f64,
        realized_kw: f64,
    ) {
        let state = &mut self.regret[customer];
        state
            .update(&forecast.means_kw, combined_kw, realized_kw)
            .expect("forecast arity matches expert count");
        let w = state.weights();
        self.traces[customer].push(WeightTraceRow {
            t: state.t,
            weights: [w[0], w[1], w[2], w[3]],
            eta: eta(state.t + 1, 4),
            max_regret: state.max_regret(),
            bound: regret_bound(state.t.max(1), 4),
        });
    }
}

fn train_expert(
    samples: &[(usize, FeatureVector, f64)],
    season_hours: &[bool],
    scale: &FieldScale,
    settings: &LearnerSettings,
) -> (Expert, f64) {
    let seasonal: Vec<&(usize, FeatureVector, f64)> = samples
        .iter()
        .filter(|(h, _, _)| season_hours[*h])
        .collect();
    let fallback = |rows: &[&(usize, FeatureVector, f64)]| {
        let n = rows.len().max(1) as f64;
        let mean = rows.iter().map(|(_, _, t)| scale.normalize(*t)).sum::<f64>() / n;
        let var = rows
            .iter()
            .map(|(_, _, t)| {
                let d = scale.normalize(*t) - mean;
                d * d
            })
            .sum::<f64>()
            / n.max(2.0);
        Expert::Fallback {
            mean,
            variance: var.max(1e-6),
        }
    };
    if seasonal.len() < settings.min_train_samples {
        return (fallback(&seasonal), settings.kernel.bandwidth);
    }

    // Uniform-in-time thinning down to the per-model cap.
    let stride = seasonal.len().div_ceil(settings.train_cap).max(1);
    let kept: Vec<&(usize, FeatureVector, f64)> =
        seasonal.iter().step_by(stride).copied().collect();
    let xs: Vec<Vec<f64>> = kept.iter().map(|(_, x, _)| x.as_slice().to_vec()).collect();
    let ys: Vec<f64> = kept.iter().map(|(_, _, t)| scale.normalize(*t)).collect();

    let bandwidth = select_bandwidth(&xs, &ys, &settings.cv, &settings.kernel)
        .unwrap_or(settings.kernel.bandwidth);
    let config = KernelConfig {
        bandwidth,
        ..settings.kernel.clone()
    };
    match train(&xs, &ys, &config) {
        Ok(model) => (Expert::Rvm(model), bandwidth),
        Err(_) => (fallback(&kept), bandwidth),
    }
}

impl LoadEstimator for MrvmEstimator {
    fn name(&self) -> &'static str {
        "mrvm"
    }

    fn fit(&mut self, data: &TrainingSet) -> Result<(), PipelineError> {
        self.timestamps = data.timestamps.clone();
        self.scales = data.kw_scales.clone();
        let season_masks: [Vec<bool>; 4] = {
            let mut masks: [Vec<bool>; 4] = Default::default();
            for s in 0..4 {
                masks[s] = data
                    .timestamps
                    .iter()
                    .map(|ts| Season::of(*ts).index() == s)
                    .collect();
            }
            masks
        };

        let settings = &self.settings;
        let trained: Vec<([Expert; 4], [f64; 4])> = data
            .samples
            .par_iter()
            .enumerate()
            .map(|(c, samples)| {
                let scale = &data.kw_scales[c];
                let mut experts: Vec<Expert> = Vec::with_capacity(4);
                let mut bandwidths = [0.0f64; 4];
                for s in 0..4 {
                    let (expert, bw) = train_expert(samples, &season_masks[s], scale, settings);
                    experts.push(expert);
                    bandwidths[s] = bw;
                }
                let arr: [Expert; 4] = experts
                    .try_into()
                    .unwrap_or_else(|_| unreachable!("exactly four seasons"));
                (arr, bandwidths)
            })
            .collect();

        self.experts = Vec::with_capacity(trained.len());
        self.bandwidths = Vec::with_capacity(trained.len());
        for (experts, bw) in trained {
            self.experts.push(experts);
            self.bandwidths.push(bw);
        }
        self.regret = data
            .kw_scales
            .iter()
            .map(|s| {
                let scale = if s.range() > 0.0 { s.range() } else { 1.0 };
                RegretState::new(4, scale).expect("positive loss scale")
            })
            .collect();
        self.traces = vec![Vec::new(); data.n_customers()];
        Ok(())
    }

    fn predict(&self, customer: usize, x: &FeatureVector, _hour: usize) -> Prediction {
        let forecast = self.expert_forecasts(customer, x);
        self.combine_forecast(customer, &forecast)
    }

    fn observe(&mut self, customer: usize, x: &FeatureVector, _hour: usize, realized_kw: f64) {
        let forecast = self.expert_forecasts(customer, x);
        let combined = self.combine_forecast(customer, &forecast);
        self.update_regret(customer, &forecast, combined.mean_kw, realized_kw);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use chrono::Duration;

    fn training_set() -> TrainingSet {
        let t0: DateTime<Utc> = "2016-01-01T00:00:00Z".parse().unwrap();
        let hours = 24 * 366;
        let timestamps: Vec<DateTime<Utc>> =
            (0..hours).map(|h| t0 + Duration::hours(h as i64)).collect();
        // Season-dependent level plus a diurnal ripple carried by a feature.
        let samples: Vec<(usize, FeatureVector, f64)> = (0..hours)
            .step_by(3)
            .map(|h| {
                let season = Season::of(timestamps[h]).index() as f64;
                let phase = (h % 24) as f64 / 24.0;
                let x = FeatureVector(vec![
                    phase,
                    (2.0 * std::f64::consts::PI * phase).sin(),
                ]);
                let kw = 20.0 + 10.0 * season + 5.0 * (2.0 * std::f64::consts::PI * phase).sin();
                (h, x, kw)
            })
            .collect();
        let scale = FieldScale::fit(samples.iter().map(|(_, _, t)| *t));
        TrainingSet {
            timestamps,
            samples: vec![samples],
            kw_scales: vec![scale],
        }
    }

    fn fast_settings() -> LearnerSettings {
        LearnerSettings {
            train_cap: 120,
            cv: crate::rvm::CvConfig {
                grid: vec![0.3, 1.0],
                folds: 3,
                subsample: 60,
                max_iters: 30,
            },
            ..Default::default()
        }
    }

    #[test]
    fn fits_four_experts_and_predicts_in_range() {
        let data = training_set();
        let mut est = MrvmEstimator::new(fast_settings());
        est.fit(&data).unwrap();
        assert_eq!(est.experts.len(), 1);
        for s in Season::ALL {
            assert!(!est.expert(0, s).is_fallback(), "{s:?} fell back");
        }
        let (h, x, kw) = &data.samples[0][100];
        let p = est.predict(0, x, *h);
        assert!(p.mean_kw > 0.0 && p.variance_kw2 > 0.0);
        assert!((p.mean_kw - kw).abs() < 30.0);
    }

    #[test]
    fn sharp_expert_wins_weights() {
        let data = training_set();
        let mut est = MrvmEstimator::new(fast_settings());
        est.fit(&data).unwrap();
        // Feed 120 winter rounds: the winter expert should dominate.
        let rounds: Vec<&(usize, FeatureVector, f64)> = data.samples[0]
            .iter()
            .filter(|(h, _, _)| Season::of(data.timestamps[*h]) == Season::Winter)
            .take(120)
            .collect();
        for (h, x, kw) in rounds {
            est.observe(0, x, *h, *kw);
        }
        let w = est.weights(0);
        assert!(
            w[Season::Winter.index()] > 0.9,
            "winter weight {w:?} after winter-only feedback"
        );
        let trace = &est.weight_traces()[0];
        assert_eq!(trace.len(), 120);
        assert!(trace.iter().all(|row| {
            let sum: f64 = row.weights.iter().sum();
            (sum - 1.0).abs() < 1e-9 && row.max_regret <= row.bound + 1e-9
        }));
    }

    #[test]
    fn no_feedback_means_frozen_uniform_weights() {
        let data = training_set();
        let mut est = MrvmEstimator::new(fast_settings());
        est.fit(&data).unwrap();
        let w = est.weights(0);
        for x in w {
            assert!((x - 0.25).abs() < 1e-12);
        }
    }

    #[test]
    fn tiny_customer_falls_back_to_seasonal_mean() {
        let t0: DateTime<Utc> = "2016-01-01T00:00:00Z".parse().unwrap();
        let timestamps: Vec<DateTime<Utc>> =
            (0..48).map(|h| t0 + Duration::hours(h)).collect();
        let samples: Vec<(usize, FeatureVector, f64)> = (0..48)
            .map(|h| (h, FeatureVector(vec![0.5]), 10.0))
            .collect();
        let scale = FieldScale::fit(samples.iter().map(|(_, _, t)| *t));
        let data = TrainingSet {
            timestamps,
            samples: vec![samples],
            kw_scales: vec![scale],
        };
        let mut est = MrvmEstimator::new(LearnerSettings::default());
        est.fit(&data).unwrap();
        assert!(est.expert(0, Season::Winter).is_fallback());
        let p = est.predict(0, &FeatureVector(vec![0.5]), 0);
        assert!((p.mean_kw - 10.0).abs() < 1e-9);
    }
}
