//! Deterministic corruption procedures for the robustness experiments.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::types::{AmiHistory, Quality};
use super::DataError;

/// Perturbs exactly `n` distinct measured train samples with zero-mean
/// Gaussian noise whose standard deviation is 50% of the selected sample's
/// magnitude. Everything else is left bit-identical.
pub fn inject_bad_data(
    history: &AmiHistory,
    train_hours: &[usize],
    n: usize,
    seed: u64,
) -> Result<(AmiHistory, Vec<(usize, usize)>), DataError> {
    // Candidates in deterministic (customer, hour) order.
    let mut candidates = Vec::new();
    for c in 0..history.n_customers() {
        for &t in train_hours {
            if history.quality[c][t] == Quality::Measured && history.kw[c][t].is_some() {
                candidates.push((c, t));
            }
        }
    }
    if n > candidates.len() {
        return Err(DataError::CountExceedsTrain(n, candidates.len()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    // Partial Fisher-Yates: the first n entries become the selection.
    let len = candidates.len();
    for i in 0..n {
        let j = rng.gen_range(i..len);
        candidates.swap(i, j);
    }
    let mut selected: Vec<(usize, usize)> = candidates[..n].to_vec();
    selected.sort_unstable();

    let mut corrupted = history.clone();
    let unit = Normal::new(0.0, 1.0).unwrap();
    for &(c, t) in &selected {
        let value = corrupted.kw[c][t].unwrap();
        let noisy = value + 0.5 * value.abs() * unit.sample(&mut rng);
        corrupted.kw[c][t] = Some(noisy.max(0.0));
    }
    Ok((corrupted, selected))
}

/// Flags each measured sample missing with probability `rate`.
pub fn mask_missing(
    history: &AmiHistory,
    rate: f64,
    seed: u64,
) -> Result<(AmiHistory, usize), DataError> {
    if !(0.0..=1.0).contains(&rate) {
        return Err(DataError::BadRate(rate));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut masked = history.clone();
    let mut count = 0;
    for c in 0..history.n_customers() {
        for t in 0..history.n_hours() {
            if masked.quality[c][t] == Quality::Measured && rng.gen_bool(rate) {
                masked.quality[c][t] = Quality::Missing;
                masked.kw[c][t] = None;
                masked.voltage[c][t] = None;
                count += 1;
            }
        }
    }
    Ok((masked, count))
}

/// Whole-customer masking: keeps a `penetration` fraction of customers
/// metered and wipes the rest entirely, modelling partial smart-meter
/// coverage. At least one customer stays metered. Returns the ids that lost
/// their meters.
pub fn mask_unmetered(
    history: &AmiHistory,
    penetration: f64,
    seed: u64,
) -> Result<(AmiHistory, Vec<String>), DataError> {
    if !(0.0..=1.0).contains(&penetration) {
        return Err(DataError::BadRate(penetration));
    }
    let n = history.n_customers();
    let metered = ((n as f64 * penetration).round() as usize).clamp(1, n);
    let mut order: Vec<usize> = (0..n).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for i in (1..order.len()).rev() {
        let j = rng.gen_range(0..=i);
        order.swap(i, j);
    }
    let mut masked = history.clone();
    let mut unmetered = Vec::new();
    for &c in order.iter().skip(metered) {
        for t in 0..history.n_hours() {
            masked.quality[c][t] = Quality::Missing;
            masked.kw[c][t] = None;
            masked.voltage[c][t] = None;
        }
        unmetered.push(history.customers[c].clone());
    }
    unmetered.sort();
    Ok((masked, unmetered))
}
