//! Game-theoretic combination of seasonal experts.
//!
//! Forecasts from M parallel per-season models are blended by exponentially
//! weighted averaging driven by cumulative regret: after each round the
//! per-expert regret (aggregate loss minus expert loss, absolute-error loss,
//! normalized to [0, 1]) is accumulated, and the next round's weights are the
//! softmax of the regret vector at learning rate eta(t) = sqrt(8 ln M / t).
//! With that schedule the maximum regret after m rounds is bounded by
//! 2*sqrt(m ln M / 2) + sqrt(ln M / 8).

use chrono::{DateTime, Datelike, Utc};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum AggregatorError {
    #[error("all-zero combination weights")]
    ZeroWeights,
    #[error("expected {0} entries, got {1}")]
    LengthMismatch(usize, usize),
    #[error("loss scale must be positive, got {0}")]
    BadLossScale(f64),
}

/// Meteorological seasons in fixed index order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Season {
    Winter,
    Spring,
    Summer,
    Autumn,
}

impl Season {
    pub const ALL: [Season; 4] = [Season::Winter, Season::Spring, Season::Summer, Season::Autumn];

    pub fn index(self) -> usize {
        match self {
            Season::Winter => 0,
            Season::Spring => 1,
            Season::Summer => 2,
            Season::Autumn => 3,
        }
    }

    pub fn of(ts: DateTime<Utc>) -> Season {
        match ts.month() {
            12 | 1 | 2 => Season::Winter,
            3..=5 => Season::Spring,
            6..=8 => Season::Summer,
            _ => Season::Autumn,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Season::Winter => "winter",
            Season::Spring => "spring",
            Season::Summer => "summer",
            Season::Autumn => "autumn",
        }
    }
}

/// Partitions timestamp indices into the four meteorological seasons
/// (DJF / MAM / JJA / SON). Exhaustive and pairwise disjoint.
pub fn season_partition(timestamps: &[DateTime<Utc>]) -> [Vec<usize>; 4] {
    let mut out: [Vec<usize>; 4] = Default::default();
    for (i, ts) in timestamps.iter().enumerate() {
        out[Season::of(*ts).index()].push(i);
    }
    out
}

/// Weighted average of expert forecasts. Lies inside the forecast hull.
pub fn combine(forecasts: &[f64], weights: &[f64]) -> Result<f64, AggregatorError> {
    if forecasts.len() != weights.len() {
        return Err(AggregatorError::LengthMismatch(forecasts.len(), weights.len()));
    }
    let wsum: f64 = weights.iter().sum();
    if wsum <= 0.0 {
        return Err(AggregatorError::ZeroWeights);
    }
    Ok(forecasts
        .iter()
        .zip(weights.iter())
        .map(|(f, w)| f * w)
        .sum::<f64>()
        / wsum)
}

/// Combined pseudo-measurement variance:
/// sum w_j^2 sigma_j^2 / (sum w_j)^2.
pub fn combine_variance(variances: &[f64], weights: &[f64]) -> Result<f64, AggregatorError> {
    if variances.len() != weights.len() {
        return Err(AggregatorError::LengthMismatch(variances.len(), weights.len()));
    }
    let wsum: f64 = weights.iter().sum();
    if wsum <= 0.0 {
        return Err(AggregatorError::ZeroWeights);
    }
    Ok(variances
        .iter()
        .zip(weights.iter())
        .map(|(v, w)| w * w * v)
        .sum::<f64>()
        / (wsum * wsum))
}

/// Per-customer cumulative regret state. Losses are normalized by
/// `loss_scale` and saturate at 1 so the regret bound's precondition
/// (losses in [0, 1]) holds by construction.
#[derive(Debug, Clone, PartialEq)]
pub struct RegretState {
    /// Cumulative regret per expert, normalized loss units.
    pub regret: Vec<f64>,
    /// Rounds elapsed.
    pub t: usize,
    pub loss_scale: f64,
}

impl RegretState {
    pub fn new(m: usize, loss_scale: f64) -> Result<RegretState, AggregatorError> {
        if loss_scale <= 0.0 {
            return Err(AggregatorError::BadLossScale(loss_scale));
        }
        Ok(RegretState {
            regret: vec![0.0; m],
            t: 0,
            loss_scale,
        })
    }

    pub fn m(&self) -> usize {
        self.regret.len()
    }

    fn loss(&self, estimate: f64, target: f64) -> f64 {
        ((estimate - target).abs() / self.loss_scale).min(1.0)
    }

    /// Adds one round: r_j = l(combined, target) - l(f_j, target) in
    /// normalized units.
    pub fn update(
        &mut self,
        forecasts: &[f64],
        combined: f64,
        target: f64,
    ) -> Result<(), AggregatorError> {
        if forecasts.len() != self.m() {
            return Err(AggregatorError::LengthMismatch(forecasts.len(), self.m()));
        }
        let combined_loss = self.loss(combined, target);
        for (r, f) in self.regret.iter_mut().zip(forecasts.iter()) {
            let expert_loss = ((f - target).abs() / self.loss_scale).min(1.0);
            *r += combined_loss - expert_loss;
        }
        self.t += 1;
        Ok(())
    }

    /// Weights for the upcoming round: softmax of the regret vector at
    /// eta(t+1), computed with max-subtraction so huge regrets cannot
    /// overflow. At t = 0 this is exactly uniform.
    pub fn weights(&self) -> Vec<f64> {
        let m = self.m();
        let round = self.t + 1;
        let e = eta(round, m);
        let max = self.regret.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let exps: Vec<f64> = self.regret.iter().map(|r| (e * (r - max)).exp()).collect();
        let sum: f64 = exps.iter().sum();
        exps.iter().map(|x| x / sum).collect()
    }

    pub fn max_regret(&self) -> f64 {
        self.regret.iter().cloned().fold(f64::NEG_INFINITY, f64::max)
    }
}

/// Learning rate for round t (1-based): sqrt(8 ln M / t).
pub fn eta(t: usize, m: usize) -> f64 {
    assert!(t >= 1 && m >= 2);
    (8.0 * (m as f64).ln() / t as f64).sqrt()
}

/// Upper bound on the maximum cumulative regret after m rounds with M
/// experts and normalized losses: 2 sqrt(m ln M / 2) + sqrt(ln M / 8).
pub fn regret_bound(rounds: usize, m: usize) -> f64 {
    let ln_m = (m as f64).ln();
    2.0 * (rounds as f64 * ln_m / 2.0).sqrt() + (ln_m / 8.0).sqrt()
}
