use chrono::{DateTime, Duration, Utc};

/// Sample quality flag carried through the whole pipeline.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Quality {
    Measured,
    Missing,
    /// Removed by gross-error cleaning; the offending value is retained for
    /// audit but never used as a training target.
    RemovedBad,
    /// Estimated (pseudo) value, not a meter reading.
    Pseudo,
}

impl Quality {
    pub fn as_str(self) -> &'static str {
        match self {
            Quality::Measured => "measured",
            Quality::Missing => "missing",
            Quality::RemovedBad => "removed_bad",
            Quality::Pseudo => "pseudo",
        }
    }

    pub fn parse(s: &str) -> Option<Quality> {
        match s {
            "measured" => Some(Quality::Measured),
            "missing" => Some(Quality::Missing),
            "removed_bad" => Some(Quality::RemovedBad),
            "pseudo" => Some(Quality::Pseudo),
            _ => None,
        }
    }
}

/// Hour-aligned AMI history: one kW / voltage sample per customer per hour.
/// Customers are kept in ascending id order; the hour axis is contiguous.
#[derive(Debug, Clone)]
pub struct AmiHistory {
    pub timestamps: Vec<DateTime<Utc>>,
    pub customers: Vec<String>,
    /// kw[c][t], engineering kW. `None` when the sample is missing.
    pub kw: Vec<Vec<Option<f64>>>,
    /// Per-unit voltage magnitude seen by the customer's meter.
    pub voltage: Vec<Vec<Option<f64>>>,
    pub quality: Vec<Vec<Quality>>,
}

impl AmiHistory {
    pub fn empty() -> AmiHistory {
        AmiHistory {
            timestamps: Vec::new(),
            customers: Vec::new(),
            kw: Vec::new(),
            voltage: Vec::new(),
            quality: Vec::new(),
        }
    }

    /// All-missing history over a fixed hour grid.
    pub fn blank(customers: Vec<String>, start: DateTime<Utc>, hours: usize) -> AmiHistory {
        let timestamps = (0..hours)
            .map(|h| start + Duration::hours(h as i64))
            .collect();
        let n = customers.len();
        AmiHistory {
            timestamps,
            customers,
            kw: vec![vec![None; hours]; n],
            voltage: vec![vec![None; hours]; n],
            quality: vec![vec![Quality::Missing; hours]; n],
        }
    }

    pub fn n_hours(&self) -> usize {
        self.timestamps.len()
    }

    pub fn n_customers(&self) -> usize {
        self.customers.len()
    }

    pub fn customer_index(&self, id: &str) -> Option<usize> {
        self.customers.iter().position(|c| c == id)
    }

    /// Measured kW samples of one customer as (hour, value) pairs.
    pub fn measured(&self, customer: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        self.quality[customer]
            .iter()
            .enumerate()
            .filter_map(move |(t, q)| match q {
                Quality::Measured => self.kw[customer][t].map(|v| (t, v)),
                _ => None,
            })
    }
}
