//! AMI CSV schema: `timestamp,customer_id,kw,voltage_pu,quality` with
//! ISO-8601 hour timestamps. Unparsable kw/voltage cells flag the record
//! missing rather than failing the load.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use chrono::{DateTime, Duration, Timelike, Utc};

use super::types::{AmiHistory, Quality};
use super::DataError;

pub const AMI_HEADER: [&str; 5] = ["timestamp", "customer_id", "kw", "voltage_pu", "quality"];

#[derive(Debug, Clone, Default)]
pub struct LoadStats {
    pub rows: usize,
    pub flagged_missing: usize,
}

pub fn load_ami_csv(path: &Path) -> Result<(AmiHistory, LoadStats), DataError> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .comment(Some(b'#'))
        .from_path(path)?;
    {
        let headers = reader.headers()?;
        let got: Vec<&str> = headers.iter().collect();
        if got != AMI_HEADER {
            return Err(DataError::Schema(format!(
                "expected header '{}', got '{}'",
                AMI_HEADER.join(","),
                got.join(",")
            )));
        }
    }

    struct Row {
        ts: DateTime<Utc>,
        customer: String,
        kw: Option<f64>,
        voltage: Option<f64>,
        quality: Quality,
    }

    let mut rows: Vec<Row> = Vec::new();
    let mut stats = LoadStats::default();
    let mut seen: BTreeSet<(String, DateTime<Utc>)> = BTreeSet::new();
    let mut duplicates: Vec<String> = Vec::new();
    for record in reader.records() {
        let record = record?;
        stats.rows += 1;
        let ts_raw = record.get(0).unwrap_or("").to_string();
        let ts: DateTime<Utc> = ts_raw
            .parse()
            .map_err(|e: chrono::ParseError| DataError::BadTimestamp(ts_raw.clone(), e.to_string()))?;
        if ts.minute() != 0 || ts.second() != 0 {
            return Err(DataError::BadTimestamp(
                ts_raw,
                "timestamps must be on hour boundaries".to_string(),
            ));
        }
        let customer = record.get(1).unwrap_or("").to_string();
        if customer.is_empty() {
            return Err(DataError::Schema(format!("row {}: empty customer id", stats.rows)));
        }
        if !seen.insert((customer.clone(), ts)) {
            duplicates.push(format!("({customer}, {ts})"));
            continue;
        }
        let kw = record.get(2).and_then(|s| s.trim().parse::<f64>().ok());
        let voltage = record.get(3).and_then(|s| s.trim().parse::<f64>().ok());
        let declared = record.get(4).map(|s| s.trim()).unwrap_or("");
        let mut quality = Quality::parse(declared).unwrap_or(Quality::Measured);
        if kw.is_none() && quality == Quality::Measured {
            quality = Quality::Missing;
            stats.flagged_missing += 1;
        }
        rows.push(Row {
            ts,
            customer,
            kw,
            voltage,
            quality,
        });
    }
    if !duplicates.is_empty() {
        return Err(DataError::Duplicate(duplicates.join(", ")));
    }
    if rows.is_empty() {
        return Ok((AmiHistory::empty(), stats));
    }

    let start = rows.iter().map(|r| r.ts).min().unwrap();
    let end = rows.iter().map(|r| r.ts).max().unwrap();
    let hours = ((end - start).num_hours() + 1) as usize;
    let customers: Vec<String> = rows
        .iter()
        .map(|r| r.customer.clone())
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect();
    let index: BTreeMap<&str, usize> = customers
        .iter()
        .enumerate()
        .map(|(i, c)| (c.as_str(), i))
        .collect();

    let mut history = AmiHistory::blank(customers.clone(), start, hours);
    for r in rows {
        let c = index[r.customer.as_str()];
        let t = (r.ts - start).num_hours() as usize;
        history.kw[c][t] = r.kw;
        history.voltage[c][t] = r.voltage;
        history.quality[c][t] = r.quality;
    }
    // Timestamps arrive strictly increasing per customer by construction of
    // the hour grid; `Duration::hours` keeps the cadence exact.
    debug_assert!(history
        .timestamps
        .windows(2)
        .all(|w| w[1] - w[0] == Duration::hours(1)));
    Ok((history, stats))
}

/// Writes the full hour grid, one row per (hour, customer); missing samples
/// keep their row with empty value cells. An optional provenance comment is
/// emitted before the header.
pub fn save_ami_csv(
    history: &AmiHistory,
    path: &Path,
    provenance: Option<&str>,
) -> Result<(), DataError> {
    let mut out = String::new();
    if let Some(p) = provenance {
        out.push_str(&format!("# {p}\n"));
    }
    out.push_str(&AMI_HEADER.join(","));
    out.push('\n');
    for t in 0..history.n_hours() {
        let ts = history.timestamps[t].format("%Y-%m-%dT%H:%M:%SZ");
        for c in 0..history.n_customers() {
            let kw = history.kw[c][t]
                .map(|v| format!("{v:.6}"))
                .unwrap_or_default();
            let volt = history.voltage[c][t]
                .map(|v| format!("{v:.8}"))
                .unwrap_or_default();
            out.push_str(&format!(
                "{ts},{},{kw},{volt},{}\n",
                history.customers[c],
                history.quality[c][t].as_str()
            ));
        }
    }
    std::fs::write(path, out)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn write_tmp(content: &str) -> (tempfile::TempDir, std::path::PathBuf) {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("ami.csv");
        std::fs::write(&path, content).unwrap();
        (dir, path)
    }

    #[test]
    fn empty_data_section_is_empty_history() {
        let (_d, path) = write_tmp("timestamp,customer_id,kw,voltage_pu,quality\n");
        let (history, stats) = load_ami_csv(&path).unwrap();
        assert_eq!(history.n_customers(), 0);
        assert_eq!(stats.rows, 0);
    }

    #[test]
    fn well_formed_rows_load_as_measured() {
        let (_d, path) = write_tmp(
            "timestamp,customer_id,kw,voltage_pu,quality\n\
             2020-01-01T00:00:00Z,c1,5.0,0.99,measured\n\
             2020-01-01T01:00:00Z,c1,6.0,0.98,measured\n\
             2020-01-01T02:00:00Z,c1,7.0,0.97,measured\n",
        );
        let (history, stats) = load_ami_csv(&path).unwrap();
        assert_eq!(stats.rows, 3);
        assert_eq!(history.n_hours(), 3);
        assert_eq!(history.kw[0][2], Some(7.0));
        assert!(history.quality[0].iter().all(|q| *q == Quality::Measured));
    }

    #[test]
    fn non_numeric_kw_cell_flags_missing() {
        let (_d, path) = write_tmp(
            "timestamp,customer_id,kw,voltage_pu,quality\n\
             2020-01-01T00:00:00Z,c1,5.0,0.99,measured\n\
             2020-01-01T01:00:00Z,c1,oops,0.98,measured\n\
             2020-01-01T02:00:00Z,c1,7.0,0.97,measured\n",
        );
        let (history, stats) = load_ami_csv(&path).unwrap();
        assert_eq!(stats.flagged_missing, 1);
        assert_eq!(history.quality[0][1], Quality::Missing);
        assert_eq!(history.kw[0][1], None);
        assert_eq!(history.kw[0][0], Some(5.0));
    }

    #[test]
    fn malformed_header_rejected() {
        let (_d, path) = write_tmp("time,customer,kw,v,q\n");
        assert!(matches!(load_ami_csv(&path), Err(DataError::Schema(_))));
    }

    #[test]
    fn duplicates_listed() {
        let (_d, path) = write_tmp(
            "timestamp,customer_id,kw,voltage_pu,quality\n\
             2020-01-01T00:00:00Z,c1,5.0,0.99,measured\n\
             2020-01-01T00:00:00Z,c1,6.0,0.98,measured\n",
        );
        match load_ami_csv(&path) {
            Err(DataError::Duplicate(s)) => assert!(s.contains("c1")),
            other => panic!("expected duplicate error, got {other:?}"),
        }
    }

    #[test]
    fn round_trip_preserves_grid() {
        let (_d, path) = write_tmp(
            "timestamp,customer_id,kw,voltage_pu,quality\n\
             2020-01-01T00:00:00Z,c1,5.0,0.99,measured\n\
             2020-01-01T02:00:00Z,c1,7.0,0.97,measured\n\
             2020-01-01T01:00:00Z,c2,1.0,1.0,measured\n",
        );
        let (history, _) = load_ami_csv(&path).unwrap();
        assert_eq!(history.n_hours(), 3);
        assert_eq!(history.quality[0][1], Quality::Missing, "hole in the grid");

        let dir = tempfile::tempdir().unwrap();
        let out = dir.path().join("round.csv");
        save_ami_csv(&history, &out, Some("manifest_sha256=test")).unwrap();
        let (back, _) = load_ami_csv(&out).unwrap();
        assert_eq!(back.customers, history.customers);
        assert_eq!(back.kw, history.kw);
        assert_eq!(
            back.quality[0][1],
            Quality::Missing,
            "missing rows survive the round trip"
        );
    }
}
