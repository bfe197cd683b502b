//! Regression inputs: own-bus voltage, neighbor-bus voltages, cyclic time
//! coordinates and (in closed-loop mode) the feedback power signal.
//!
//! Hour-of-day and day-of-week are encoded as sine/cosine pairs so that the
//! kernel distance respects wrap-around (hour 23 sits next to hour 0).

use chrono::{DateTime, Datelike, Timelike, Utc};

use crate::grid::Feeder;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FeatureLayout {
    pub n_neighbors: usize,
    pub closed_loop: bool,
}

impl FeatureLayout {
    pub fn dim(&self) -> usize {
        1 + self.n_neighbors + 4 + usize::from(self.closed_loop)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FeatureVector(pub Vec<f64>);

impl FeatureVector {
    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }
}

/// (sin, cos) of 2*pi*value/period.
pub fn cyclic_pair(value: f64, period: f64) -> (f64, f64) {
    let angle = 2.0 * std::f64::consts::PI * value / period;
    (angle.sin(), angle.cos())
}

/// Normalized per-bus voltage series with train-median imputation for buses
/// whose meters are absent at some (or all) hours.
#[derive(Debug, Clone)]
pub struct VoltageField {
    /// series[bus][t], normalized; None when no meter reported.
    pub series: Vec<Vec<Option<f64>>>,
    /// Imputation value per bus: the bus's train median where it ever had a
    /// reading, otherwise the network-wide train median.
    pub fallback: Vec<f64>,
}

impl VoltageField {
    /// Builds from per-bus normalized series, computing medians over the
    /// train block.
    pub fn new(series: Vec<Vec<Option<f64>>>, train_end: usize) -> VoltageField {
        let mut all: Vec<f64> = Vec::new();
        for bus in &series {
            for v in bus[..train_end.min(bus.len())].iter().flatten() {
                all.push(*v);
            }
        }
        let global = median(&mut all).unwrap_or(0.5);
        let fallback = series
            .iter()
            .map(|bus| {
                let mut vals: Vec<f64> = bus[..train_end.min(bus.len())]
                    .iter()
                    .flatten()
                    .copied()
                    .collect();
                median(&mut vals).unwrap_or(global)
            })
            .collect();
        VoltageField { series, fallback }
    }

    pub fn value(&self, bus: usize, t: usize) -> f64 {
        self.series[bus].get(t).copied().flatten().unwrap_or(self.fallback[bus])
    }
}

fn median(values: &mut Vec<f64>) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    values.sort_by(|a, b| a.partial_cmp(b).unwrap());
    Some(values[values.len() / 2])
}

/// Assembles feature vectors for a bus at an hour. Neighbor buses are taken
/// in ascending bus-id order so the layout is stable.
pub struct FeatureBuilder<'a> {
    pub feeder: &'a Feeder,
    pub voltages: VoltageField,
    pub timestamps: &'a [DateTime<Utc>],
}

impl<'a> FeatureBuilder<'a> {
    pub fn layout(&self, bus: usize, closed_loop: bool) -> FeatureLayout {
        FeatureLayout {
            n_neighbors: self.feeder.neighbors(bus).len(),
            closed_loop,
        }
    }

    /// `p_tilde_norm` present if and only if the model is closed-loop; open-
    /// and closed-loop feature spaces have different dimensions on purpose.
    pub fn build(&self, bus: usize, t: usize, p_tilde_norm: Option<f64>) -> FeatureVector {
        let ts = self.timestamps[t];
        let mut v = Vec::with_capacity(self.layout(bus, p_tilde_norm.is_some()).dim());
        v.push(self.voltages.value(bus, t));
        for nb in self.feeder.neighbors(bus) {
            v.push(self.voltages.value(nb, t));
        }
        let (st, ct) = cyclic_pair(ts.hour() as f64, 24.0);
        let (sd, cd) = cyclic_pair(ts.weekday().num_days_from_monday() as f64, 7.0);
        v.push(st);
        v.push(ct);
        v.push(sd);
        v.push(cd);
        if let Some(p) = p_tilde_norm {
            v.push(p.clamp(0.0, 1.0));
        }
        FeatureVector(v)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::thirteen_bus_feeder;
    use chrono::Duration;

    #[test]
    fn cyclic_encoding_at_zero() {
        let (s, c) = cyclic_pair(0.0, 24.0);
        assert_eq!(s, 0.0);
        assert_eq!(c, 1.0);
    }

    #[test]
    fn cyclic_pairs_on_unit_circle_and_wraparound() {
        for h in 0..24 {
            let (s, c) = cyclic_pair(h as f64, 24.0);
            assert!((s * s + c * c - 1.0).abs() < 1e-12);
        }
        // Hour 23 must sit near hour 0, far from hour 12.
        let (s23, c23) = cyclic_pair(23.0, 24.0);
        let (s0, c0) = cyclic_pair(0.0, 24.0);
        let (s12, c12) = cyclic_pair(12.0, 24.0);
        let d_wrap = ((s23 - s0).powi(2) + (c23 - c0).powi(2)).sqrt();
        let d_far = ((s23 - s12).powi(2) + (c23 - c12).powi(2)).sqrt();
        assert!(d_wrap < 0.3 && d_far > 1.5);
    }

    fn builder_fixture(feeder: &Feeder) -> (Vec<DateTime<Utc>>, VoltageField) {
        let start: DateTime<Utc> = "2020-01-06T00:00:00Z".parse().unwrap(); // Monday
        let timestamps: Vec<_> = (0..48).map(|h| start + Duration::hours(h)).collect();
        let mut series = vec![vec![Some(0.5); 48]; feeder.n_buses()];
        series[2] = vec![None; 48]; // a bus without any meter
        (timestamps, VoltageField::new(series, 48))
    }

    #[test]
    fn open_and_closed_features_differ_only_in_ptilde() {
        let feeder = Feeder::new(thirteen_bus_feeder()).unwrap();
        let (timestamps, voltages) = builder_fixture(&feeder);
        let fb = FeatureBuilder {
            feeder: &feeder,
            voltages,
            timestamps: &timestamps,
        };
        let bus = feeder.bus_idx(6).unwrap();
        let open = fb.build(bus, 5, None);
        let closed = fb.build(bus, 5, Some(0.7));
        assert_eq!(open.dim() + 1, closed.dim());
        assert_eq!(open.as_slice(), &closed.as_slice()[..open.dim()]);
        assert_eq!(*closed.as_slice().last().unwrap(), 0.7);
        assert_eq!(fb.layout(bus, false).dim(), open.dim());
        assert_eq!(fb.layout(bus, true).dim(), closed.dim());
    }

    #[test]
    fn normalized_coordinates_clamped_and_imputed() {
        let feeder = Feeder::new(thirteen_bus_feeder()).unwrap();
        let (timestamps, voltages) = builder_fixture(&feeder);
        let fb = FeatureBuilder {
            feeder: &feeder,
            voltages,
            timestamps: &timestamps,
        };
        // Bus index 2 has no readings: falls back to the global median.
        let v = fb.voltages.value(2, 10);
        assert_eq!(v, 0.5);
        let bus = feeder.bus_idx(4).unwrap();
        let x = fb.build(bus, 0, Some(1.7));
        assert_eq!(*x.as_slice().last().unwrap(), 1.0, "p_tilde clamped");
        // Normalized (non-cyclic) coordinates stay in [0, 1].
        let layout = fb.layout(bus, true);
        for &vi in &x.as_slice()[..1 + layout.n_neighbors] {
            assert!((0.0..=1.0).contains(&vi));
        }
    }
}
