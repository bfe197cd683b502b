//! CSV and summary emission. Every file starts with a provenance comment
//! line carrying the manifest hash (no clock data), then a header row.

use std::path::Path;

use serde_json::json;

use super::offline::OfflineArtifacts;
use super::online::OnlineRecord;
use super::run::RunArtifacts;
use super::PipelineError;

fn write_csv(path: &Path, hash: &str, header: &str, rows: &[String]) -> Result<(), PipelineError> {
    let mut out = String::with_capacity(rows.len() * 64 + 128);
    out.push_str(&format!("# manifest_sha256={hash}\n"));
    out.push_str(header);
    out.push('\n');
    for row in rows {
        out.push_str(row);
        out.push('\n');
    }
    std::fs::write(path, out)?;
    Ok(())
}

pub fn write_reports(
    dir: &Path,
    hash: &str,
    artifacts: &RunArtifacts,
    truth_available: bool,
) -> Result<(), PipelineError> {
    std::fs::create_dir_all(dir)?;
    let offline = &artifacts.offline;
    let records = &artifacts.records;

    // metrics.csv
    if let Some(eval) = &artifacts.evaluation {
        let mut rows = Vec::new();
        for m in eval.customers.iter().chain(std::iter::once(&eval.overall)) {
            rows.push(format!(
                "{},{},{},{:.6},{:.6},{:.6e},{:.6e},{:.6e}",
                m.id,
                m.samples_all,
                m.samples_unobserved,
                m.mape_all_pct,
                m.mape_unobserved_pct,
                m.precision,
                m.error_mean_kw,
                m.error_var_kw2
            ));
        }
        write_csv(
            &dir.join("metrics.csv"),
            hash,
            "customer_id,samples,samples_unobserved,mape_all_pct,mape_unobserved_pct,precision,error_mean_kw,error_var_kw2",
            &rows,
        )?;

        // state_errors.csv
        let mut rows = Vec::new();
        for e in &eval.state_errors {
            rows.push(format!(
                "{},{},{},{:.6},{:.6},{:.6},{:.6}",
                e.branch,
                e.phase,
                e.stats.samples,
                e.stats.mape_real_pct,
                e.stats.mape_imag_pct,
                e.stats.mape_mag_pct,
                e.stats.mean_abs_phase_deg
            ));
        }
        rows.push(format!(
            "ALL,,{},{:.6},{:.6},{:.6},{:.6}",
            eval.state_overall.samples,
            eval.state_overall.mape_real_pct,
            eval.state_overall.mape_imag_pct,
            eval.state_overall.mape_mag_pct,
            eval.state_overall.mean_abs_phase_deg
        ));
        write_csv(
            &dir.join("state_errors.csv"),
            hash,
            "branch,phase,samples,mape_real_pct,mape_imag_pct,mape_mag_pct,mean_abs_phase_deg",
            &rows,
        )?;

        // histogram.csv
        let mut rows = Vec::new();
        for (series, hist) in [
            ("pseudo_error_kw", &eval.pseudo_error_histogram),
            ("current_mag_error_pct", &eval.current_error_histogram),
        ] {
            for (b, count) in hist.counts.iter().enumerate() {
                rows.push(format!(
                    "{series},{:.9e},{:.9e},{count}",
                    hist.edges[b],
                    hist.edges[b + 1]
                ));
            }
        }
        write_csv(
            &dir.join("histogram.csv"),
            hash,
            "series,bin_lo,bin_hi,count",
            &rows,
        )?;
    }

    // weights_trace.csv
    let mut rows = Vec::new();
    for (c, trace) in offline.estimator.weight_traces().iter().enumerate() {
        let id = &offline.customers[c].id;
        for row in trace {
            rows.push(format!(
                "{id},{},{:.9},{:.9},{:.9},{:.9},{:.6},{:.6},{:.6}",
                row.t,
                row.weights[0],
                row.weights[1],
                row.weights[2],
                row.weights[3],
                row.eta,
                row.max_regret,
                row.bound
            ));
        }
    }
    write_csv(
        &dir.join("weights_trace.csv"),
        hash,
        "customer_id,t,w_winter,w_spring,w_summer,w_autumn,eta,max_regret,bound",
        &rows,
    )?;

    // pseudo_trace.csv
    let mut rows = Vec::new();
    for r in records {
        let ts = artifacts.timestamps[r.hour].format("%Y-%m-%dT%H:%M:%SZ");
        for (c, info) in offline.customers.iter().enumerate() {
            rows.push(format!(
                "{},{ts},{},{},{:.6},{:.6},{:.6},{:.6},{}",
                r.hour,
                info.id,
                u8::from(r.observed[c]),
                r.pseudo_kw[c],
                r.pseudo_sigma_kw[c],
                r.dle_kw[c],
                r.realized_kw[c],
                r.cycles
            ));
        }
    }
    write_csv(
        &dir.join("pseudo_trace.csv"),
        hash,
        "hour,timestamp,customer_id,observed,pseudo_kw,sigma_kw,dle_kw,realized_kw,cycles",
        &rows,
    )?;

    // summary.json
    let summary = summary_json(artifacts, hash, truth_available);
    std::fs::write(
        dir.join("summary.json"),
        serde_json::to_string_pretty(&summary).expect("serializable summary"),
    )?;
    Ok(())
}

pub fn summary_json(
    artifacts: &RunArtifacts,
    hash: &str,
    truth_available: bool,
) -> serde_json::Value {
    let records: &[OnlineRecord] = &artifacts.records;
    let offline: &OfflineArtifacts = &artifacts.offline;
    let mut doc = json!({
        "manifest_sha256": hash,
        "mode": artifacts.mode.as_str(),
        "customers": offline.customers.len(),
        "train_hours": offline.train_end,
        "test_hours": records.len(),
        "offline_solver_failures": offline.solver_failures,
        "truth_available": truth_available,
    });
    if let Some(eval) = &artifacts.evaluation {
        doc["pseudo_mape_pct"] = json!(eval.overall.mape_unobserved_pct);
        doc["pseudo_mape_all_pct"] = json!(eval.overall.mape_all_pct);
        doc["precision"] = json!(eval.overall.precision);
        doc["expert_mape_pct"] = json!(eval.expert_mape_pct);
        doc["min_expert_mape_pct"] = json!(eval.min_expert_mape_pct);
        doc["state_mape_real_pct"] = json!(eval.state_overall.mape_real_pct);
        doc["state_mape_imag_pct"] = json!(eval.state_overall.mape_imag_pct);
        doc["state_mape_mag_pct"] = json!(eval.state_overall.mape_mag_pct);
        doc["state_mean_abs_phase_deg"] = json!(eval.state_overall.mean_abs_phase_deg);
        doc["inner_mean_cycles"] = json!(eval.inner_loop.mean_cycles);
        doc["inner_frac_cycles_le_2"] = json!(eval.inner_loop.frac_cycles_le_2);
        doc["inner_frac_nonincreasing"] = json!(eval.inner_loop.frac_nonincreasing);
        doc["online_solver_failures"] = json!(eval.inner_loop.solver_failures);
        doc["regret_all_within_bound"] = json!(eval.regret_all_ok);
        doc["regret_max"] = json!(eval
            .regret
            .iter()
            .map(|r| r.max_regret)
            .fold(f64::NEG_INFINITY, f64::max));
        doc["regret_bound"] = json!(eval
            .regret
            .iter()
            .map(|r| r.bound)
            .fold(f64::NEG_INFINITY, f64::max));
    }
    doc
}
