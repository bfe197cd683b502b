use std::collections::BTreeMap;
use std::path::Path;

use chrono::{DateTime, Utc};

use super::types::{AmiHistory, Quality};
use super::DataError;

/// Gross-error threshold: samples farther than this many standard deviations
/// from the customer's own mean are removed.
pub const GROSS_ERROR_SIGMA: f64 = 5.0;

/// Flags samples beyond `GROSS_ERROR_SIGMA` deviations from that customer's
/// mean as `RemovedBad`. The mean and deviation are computed per customer
/// over its full measured series; a constant series removes nothing.
pub fn remove_gross_errors(history: &AmiHistory) -> (AmiHistory, Vec<Vec<bool>>) {
    let mut cleaned = history.clone();
    let mut mask = vec![vec![false; history.n_hours()]; history.n_customers()];
    for c in 0..history.n_customers() {
        let samples: Vec<(usize, f64)> = history.measured(c).collect();
        if samples.len() < 2 {
            continue;
        }
        let n = samples.len() as f64;
        let mean = samples.iter().map(|(_, v)| v).sum::<f64>() / n;
        let var = samples.iter().map(|(_, v)| (v - mean) * (v - mean)).sum::<f64>() / n;
        let sd = var.sqrt();
        if sd == 0.0 {
            continue;
        }
        for (t, v) in samples {
            if (v - mean).abs() > GROSS_ERROR_SIGMA * sd {
                cleaned.quality[c][t] = Quality::RemovedBad;
                mask[c][t] = true;
            }
        }
    }
    (cleaned, mask)
}

/// Min/max range of one normalized field. A constant field maps to 0.5.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FieldScale {
    pub min: f64,
    pub max: f64,
    pub constant: bool,
}

impl FieldScale {
    pub fn fit(values: impl Iterator<Item = f64>) -> FieldScale {
        let mut min = f64::INFINITY;
        let mut max = f64::NEG_INFINITY;
        for v in values {
            min = min.min(v);
            max = max.max(v);
        }
        if !min.is_finite() || !max.is_finite() {
            return FieldScale {
                min: 0.0,
                max: 1.0,
                constant: true,
            };
        }
        FieldScale {
            min,
            max,
            constant: max <= min,
        }
    }

    pub fn normalize(&self, x: f64) -> f64 {
        if self.constant {
            0.5
        } else {
            (x - self.min) / (self.max - self.min)
        }
    }

    /// Normalize and clamp into [0, 1]; used for kernel inputs so that
    /// out-of-range inference values cannot leave the training cube.
    pub fn normalize_clamped(&self, x: f64) -> f64 {
        self.normalize(x).clamp(0.0, 1.0)
    }

    pub fn denormalize(&self, y: f64) -> f64 {
        if self.constant {
            self.min
        } else {
            self.min + y * (self.max - self.min)
        }
    }

    pub fn range(&self) -> f64 {
        if self.constant {
            0.0
        } else {
            self.max - self.min
        }
    }
}

/// Per-customer kW ranges plus one shared voltage range. Fitted on training
/// data only and persisted as a key/value sidecar so inference reuses the
/// exact training normalization.
#[derive(Debug, Clone, PartialEq)]
pub struct Scaling {
    pub kw: BTreeMap<String, FieldScale>,
    pub voltage: FieldScale,
}

impl Scaling {
    /// Fits over measured samples at hours `< train_end`.
    pub fn fit(history: &AmiHistory, train_end: usize) -> Scaling {
        let mut kw = BTreeMap::new();
        for (c, id) in history.customers.iter().enumerate() {
            let scale = FieldScale::fit(
                history
                    .measured(c)
                    .take_while(|(t, _)| *t < train_end)
                    .map(|(_, v)| v),
            );
            kw.insert(id.clone(), scale);
        }
        let voltage = FieldScale::fit(
            (0..history.n_customers())
                .flat_map(|c| history.voltage[c][..train_end.min(history.n_hours())].iter())
                .flatten()
                .copied(),
        );
        Scaling { kw, voltage }
    }

    /// Maps kW and voltage columns into [0, 1] (where non-constant).
    pub fn normalize_history(&self, history: &AmiHistory) -> AmiHistory {
        let mut out = history.clone();
        for (c, id) in history.customers.iter().enumerate() {
            let scale = &self.kw[id];
            for t in 0..history.n_hours() {
                out.kw[c][t] = history.kw[c][t].map(|v| scale.normalize(v));
                out.voltage[c][t] = history.voltage[c][t].map(|v| self.voltage.normalize(v));
            }
        }
        out
    }

    pub fn denormalize_history(&self, history: &AmiHistory) -> AmiHistory {
        let mut out = history.clone();
        for (c, id) in history.customers.iter().enumerate() {
            let scale = &self.kw[id];
            for t in 0..history.n_hours() {
                out.kw[c][t] = history.kw[c][t].map(|v| scale.denormalize(v));
                out.voltage[c][t] = history.voltage[c][t].map(|v| self.voltage.denormalize(v));
            }
        }
        out
    }

    /// Key/value sidecar format, one `key=value` per line, keys sorted.
    pub fn save_kv(&self, path: &Path) -> Result<(), DataError> {
        let mut text = String::new();
        for (id, s) in &self.kw {
            text.push_str(&format!(
                "kw.{id}.min={:.17e}\nkw.{id}.max={:.17e}\nkw.{id}.constant={}\n",
                s.min, s.max, s.constant
            ));
        }
        text.push_str(&format!(
            "voltage.min={:.17e}\nvoltage.max={:.17e}\nvoltage.constant={}\n",
            self.voltage.min, self.voltage.max, self.voltage.constant
        ));
        std::fs::write(path, text)?;
        Ok(())
    }

    pub fn load_kv(path: &Path) -> Result<Scaling, DataError> {
        let text = std::fs::read_to_string(path)?;
        let mut map: BTreeMap<String, String> = BTreeMap::new();
        for line in text.lines() {
            if line.trim().is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| DataError::Schema(format!("bad sidecar line '{line}'")))?;
            map.insert(k.to_string(), v.to_string());
        }
        let get = |k: &str| -> Result<f64, DataError> {
            map.get(k)
                .ok_or_else(|| DataError::Schema(format!("missing sidecar key '{k}'")))?
                .parse()
                .map_err(|e| DataError::Schema(format!("bad value for '{k}': {e}")))
        };
        let mut kw = BTreeMap::new();
        let ids: std::collections::BTreeSet<String> = map
            .keys()
            .filter_map(|k| {
                k.strip_prefix("kw.")
                    .and_then(|rest| rest.rsplit_once('.').map(|(id, _)| id.to_string()))
            })
            .collect();
        for id in ids {
            kw.insert(
                id.clone(),
                FieldScale {
                    min: get(&format!("kw.{id}.min"))?,
                    max: get(&format!("kw.{id}.max"))?,
                    constant: map.get(&format!("kw.{id}.constant")).map(|s| s == "true")
                        == Some(true),
                },
            );
        }
        Ok(Scaling {
            kw,
            voltage: FieldScale {
                min: get("voltage.min")?,
                max: get("voltage.max")?,
                constant: map.get("voltage.constant").map(|s| s == "true") == Some(true),
            },
        })
    }
}

/// Chronological train/test split with contiguous folds over the train block.
#[derive(Debug, Clone)]
pub struct DataSplit {
    /// Hour indices in the train block, ascending.
    pub train_hours: Vec<usize>,
    pub test_hours: Vec<usize>,
    /// Fold assignment per train hour, values in 0..k.
    pub folds: Vec<u8>,
}

impl DataSplit {
    pub fn k(&self) -> usize {
        self.folds.iter().map(|&f| f as usize + 1).max().unwrap_or(0)
    }
}

/// 80/20 chronological split: the test set is the trailing time block.
pub fn split(history: &AmiHistory, k_folds: usize) -> Result<DataSplit, DataError> {
    if history.n_hours() == 0 {
        return Err(DataError::Empty);
    }
    let n = history.n_hours();
    let train_len = (n as f64 * 0.8).round() as usize;
    split_indices(n, train_len, k_folds)
}

/// Split at an explicit boundary timestamp: hours strictly before `at` are
/// train, the rest test.
pub fn split_at(
    history: &AmiHistory,
    at: DateTime<Utc>,
    k_folds: usize,
) -> Result<DataSplit, DataError> {
    if history.n_hours() == 0 {
        return Err(DataError::Empty);
    }
    let train_len = history.timestamps.iter().take_while(|t| **t < at).count();
    split_indices(history.n_hours(), train_len, k_folds)
}

fn split_indices(n: usize, train_len: usize, k_folds: usize) -> Result<DataSplit, DataError> {
    if k_folds < 2 || train_len < k_folds {
        return Err(DataError::TooFewSamples {
            need: k_folds.max(2),
            got: train_len,
        });
    }
    let train_hours: Vec<usize> = (0..train_len).collect();
    let test_hours: Vec<usize> = (train_len..n).collect();
    // Contiguous folds whose sizes differ by at most one.
    let base = train_len / k_folds;
    let extra = train_len % k_folds;
    let mut folds = Vec::with_capacity(train_len);
    for f in 0..k_folds {
        let size = base + usize::from(f < extra);
        folds.extend(std::iter::repeat(f as u8).take(size));
    }
    Ok(DataSplit {
        train_hours,
        test_hours,
        folds,
    })
}
