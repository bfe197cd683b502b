//! Metric computation over a finished run: pseudo-measurement accuracy and
//! precision, per-expert accuracy, branch-current state errors against the
//! power-flow oracle, inner-loop convergence statistics and the regret
//! guarantee check.

use crate::aggregator::regret_bound;
use crate::dataset::{DataSplit, GroundTruth};
use crate::grid::{balanced_injections, forward_power_flow, Feeder, PowerFlowOptions};

use super::offline::OfflineArtifacts;
use super::online::OnlineRecord;
use super::{PipelineConfig, PipelineError};

pub const PRECISION_CAP: f64 = 1e12;
/// Samples with |truth| below this share of the customer's mean are excluded
/// from MAPE (division blow-up guard).
pub const MAPE_FLOOR_FRAC: f64 = 0.01;

#[derive(Debug, Clone)]
pub struct CustomerMetrics {
    pub id: String,
    pub samples_all: usize,
    pub samples_unobserved: usize,
    pub mape_all_pct: f64,
    pub mape_unobserved_pct: f64,
    pub precision: f64,
    pub error_mean_kw: f64,
    pub error_var_kw2: f64,
}

#[derive(Debug, Clone, Copy, Default)]
pub struct StateErrorStats {
    pub mape_real_pct: f64,
    pub mape_imag_pct: f64,
    pub mape_mag_pct: f64,
    pub mean_abs_phase_deg: f64,
    pub samples: usize,
}

#[derive(Debug, Clone)]
pub struct BranchPhaseError {
    pub branch: String,
    pub phase: char,
    pub stats: StateErrorStats,
}

#[derive(Debug, Clone)]
pub struct Histogram {
    pub edges: Vec<f64>,
    pub counts: Vec<usize>,
}

impl Histogram {
    pub fn build(values: &[f64], bins: usize) -> Histogram {
        if values.is_empty() {
            return Histogram {
                edges: vec![0.0, 1.0],
                counts: vec![0],
            };
        }
        let lo = values.iter().cloned().fold(f64::INFINITY, f64::min);
        let hi = values.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let span = (hi - lo).max(1e-12);
        let edges: Vec<f64> = (0..=bins)
            .map(|b| lo + span * b as f64 / bins as f64)
            .collect();
        let mut counts = vec![0usize; bins];
        for v in values {
            let slot = (((v - lo) / span) * bins as f64).floor() as usize;
            counts[slot.min(bins - 1)] += 1;
        }
        Histogram { edges, counts }
    }

    pub fn total(&self) -> usize {
        self.counts.iter().sum()
    }
}

#[derive(Debug, Clone, Copy, Default)]
pub struct InnerLoopStats {
    pub mean_cycles: f64,
    pub frac_cycles_le_2: f64,
    pub frac_nonincreasing: f64,
    pub solver_failures: usize,
}

#[derive(Debug, Clone)]
pub struct RegretCheck {
    pub id: String,
    pub rounds: usize,
    pub max_regret: f64,
    pub bound: f64,
    pub ok: bool,
}

#[derive(Debug, Clone)]
pub struct EvaluationReport {
    pub customers: Vec<CustomerMetrics>,
    pub overall: CustomerMetrics,
    pub expert_mape_pct: [f64; 4],
    pub min_expert_mape_pct: f64,
    pub state_errors: Vec<BranchPhaseError>,
    pub state_overall: StateErrorStats,
    pub pseudo_error_histogram: Histogram,
    pub current_error_histogram: Histogram,
    pub inner_loop: InnerLoopStats,
    pub regret: Vec<RegretCheck>,
    pub regret_all_ok: bool,
}

fn mape(errors: &[(f64, f64)]) -> f64 {
    // (error, truth) pairs already floored by the caller.
    if errors.is_empty() {
        return 0.0;
    }
    100.0 * errors.iter().map(|(e, t)| (e / t).abs()).sum::<f64>() / errors.len() as f64
}

pub fn evaluate(
    feeder: &Feeder,
    truth: &GroundTruth,
    split: &DataSplit,
    records: &[OnlineRecord],
    offline: &OfflineArtifacts,
    config: &PipelineConfig,
) -> Result<EvaluationReport, PipelineError> {
    let n = offline.customers.len();
    let train_end = offline.train_end;

    // Truth row per customer and the per-customer MAPE floor.
    let truth_row: Vec<Option<usize>> = offline.customers.iter().map(|c| c.history_row).collect();
    let floor: Vec<f64> = (0..n)
        .map(|c| match truth_row[c] {
            Some(row) => {
                let series = &truth.kw[row][..train_end.min(truth.kw[row].len())];
                MAPE_FLOOR_FRAC * series.iter().sum::<f64>() / series.len().max(1) as f64
            }
            None => f64::INFINITY,
        })
        .collect();

    // Pseudo-measurement accuracy.
    let mut customers = Vec::with_capacity(n);
    let mut pooled_all: Vec<(f64, f64)> = Vec::new();
    let mut pooled_unobs: Vec<(f64, f64)> = Vec::new();
    let mut pooled_errors: Vec<f64> = Vec::new();
    let mut expert_pool: [Vec<(f64, f64)>; 4] = Default::default();
    for c in 0..n {
        let Some(row) = truth_row[c] else {
            continue;
        };
        let mut all = Vec::new();
        let mut unobs = Vec::new();
        let mut errors = Vec::new();
        for r in records {
            let t_kw = truth.kw[row][r.hour];
            if t_kw.abs() < floor[c] {
                continue;
            }
            let e = r.pseudo_kw[c] - t_kw;
            all.push((e, t_kw));
            if !r.observed[c] {
                unobs.push((e, t_kw));
                errors.push(e);
                for s in 0..4 {
                    expert_pool[s].push((r.expert_means_kw[c][s] - t_kw, t_kw));
                }
            }
        }
        let mean = errors.iter().sum::<f64>() / errors.len().max(1) as f64;
        let var = errors
            .iter()
            .map(|e| (e - mean) * (e - mean))
            .sum::<f64>()
            / errors.len().max(1) as f64;
        customers.push(CustomerMetrics {
            id: offline.customers[c].id.clone(),
            samples_all: all.len(),
            samples_unobserved: unobs.len(),
            mape_all_pct: mape(&all),
            mape_unobserved_pct: mape(&unobs),
            precision: if var > 0.0 {
                (1.0 / var).min(PRECISION_CAP)
            } else {
                PRECISION_CAP
            },
            error_mean_kw: mean,
            error_var_kw2: var,
        });
        pooled_all.extend(all);
        pooled_unobs.extend(unobs);
        pooled_errors.extend(errors);
    }
    let pooled_mean = pooled_errors.iter().sum::<f64>() / pooled_errors.len().max(1) as f64;
    let pooled_var = pooled_errors
        .iter()
        .map(|e| (e - pooled_mean) * (e - pooled_mean))
        .sum::<f64>()
        / pooled_errors.len().max(1) as f64;
    let overall = CustomerMetrics {
        id: "ALL".to_string(),
        samples_all: pooled_all.len(),
        samples_unobserved: pooled_unobs.len(),
        mape_all_pct: mape(&pooled_all),
        mape_unobserved_pct: mape(&pooled_unobs),
        precision: if pooled_var > 0.0 {
            (1.0 / pooled_var).min(PRECISION_CAP)
        } else {
            PRECISION_CAP
        },
        error_mean_kw: pooled_mean,
        error_var_kw2: pooled_var,
    };
    let expert_mape_pct = [
        mape(&expert_pool[0]),
        mape(&expert_pool[1]),
        mape(&expert_pool[2]),
        mape(&expert_pool[3]),
    ];
    let min_expert_mape_pct = expert_mape_pct.iter().cloned().fold(f64::INFINITY, f64::min);

    // Branch-current errors against the power-flow oracle.
    let (state_errors, state_overall, current_errors) =
        state_error_stats(feeder, truth, records, offline, config)?;

    // Inner loop statistics.
    let hours = records.len().max(1) as f64;
    let le2 = records.iter().filter(|r| r.cycles <= 2).count() as f64 / hours;
    let mean_cycles = records.iter().map(|r| r.cycles as f64).sum::<f64>() / hours;
    let nonincreasing = records
        .iter()
        .filter(|r| r.cycle_changes.windows(2).all(|w| w[1] <= w[0] + 1e-12))
        .count() as f64
        / hours;
    let solver_failures = records.iter().filter(|r| !r.solver_ok).count();

    // Regret guarantee per customer.
    let mut regret = Vec::with_capacity(n);
    let mut regret_all_ok = true;
    for c in 0..n {
        let state = offline.estimator.regret_state(c);
        let bound = regret_bound(state.t.max(1), state.m());
        let ok = state.max_regret() <= bound + 1e-9;
        regret_all_ok &= ok;
        regret.push(RegretCheck {
            id: offline.customers[c].id.clone(),
            rounds: state.t,
            max_regret: state.max_regret(),
            bound,
            ok,
        });
    }

    Ok(EvaluationReport {
        customers,
        overall,
        expert_mape_pct,
        min_expert_mape_pct,
        state_errors,
        state_overall,
        pseudo_error_histogram: Histogram::build(&pooled_errors, 41),
        current_error_histogram: Histogram::build(&current_errors, 41),
        inner_loop: InnerLoopStats {
            mean_cycles,
            frac_cycles_le_2: le2,
            frac_nonincreasing: nonincreasing,
            solver_failures,
        },
        regret,
        regret_all_ok,
    })
}

fn state_error_stats(
    feeder: &Feeder,
    truth: &GroundTruth,
    records: &[OnlineRecord],
    offline: &OfflineArtifacts,
    config: &PipelineConfig,
) -> Result<(Vec<BranchPhaseError>, StateErrorStats, Vec<f64>), PipelineError> {
    let index = crate::bcse::StateIndex::new(feeder);
    let n_pairs = index.pairs().len();
    let slack = crate::grid::nominal_slack_voltage();
    let options = PowerFlowOptions::default();

    struct Acc {
        re: Vec<(f64, f64)>,
        im: Vec<(f64, f64)>,
        mag: Vec<(f64, f64)>,
        phase: Vec<f64>,
    }
    let mut acc: Vec<Acc> = (0..n_pairs)
        .map(|_| Acc {
            re: Vec::new(),
            im: Vec::new(),
            mag: Vec::new(),
            phase: Vec::new(),
        })
        .collect();
    let mut mag_pct_errors = Vec::new();

    // Per-pair magnitude floors from a nominal-load snapshot keep the MAPE
    // well defined on lightly loaded phases.
    let mut mag_scale = vec![0.0f64; n_pairs];

    for r in records {
        // Recompute the true state at this hour from the true loads.
        let kw_of = |cid: &str| -> f64 {
            offline
                .customers
                .iter()
                .position(|c| c.id == cid)
                .and_then(|c| offline.customers[c].history_row)
                .map(|row| truth.kw[row][r.hour])
                .unwrap_or(0.0)
        };
        let inj = balanced_injections(feeder.topology(), &kw_of, config.measurements.power_factor);
        let sol = forward_power_flow(feeder, &inj, &slack, &options)?;
        let s_true = index.encode(&sol.branch_currents);
        for k in 0..n_pairs {
            let (tr, ti) = (s_true[2 * k], s_true[2 * k + 1]);
            let (er, ei) = (r.state[2 * k], r.state[2 * k + 1]);
            let tmag = (tr * tr + ti * ti).sqrt();
            mag_scale[k] = mag_scale[k].max(tmag);
            let emag = (er * er + ei * ei).sqrt();
            acc[k].re.push((er - tr, tr));
            acc[k].im.push((ei - ti, ti));
            acc[k].mag.push((emag - tmag, tmag));
            let dphase = ((ei.atan2(er) - ti.atan2(tr)).rem_euclid(2.0 * std::f64::consts::PI))
                .min((ti.atan2(tr) - ei.atan2(er)).rem_euclid(2.0 * std::f64::consts::PI));
            acc[k].phase.push(dphase.to_degrees());
        }
    }

    let floor_of = |k: usize| MAPE_FLOOR_FRAC * mag_scale[k];
    let mut out = Vec::with_capacity(n_pairs);
    let mut pooled = Acc {
        re: Vec::new(),
        im: Vec::new(),
        mag: Vec::new(),
        phase: Vec::new(),
    };
    for (k, a) in acc.iter().enumerate() {
        let f = floor_of(k);
        let keep = |v: &[(f64, f64)]| -> Vec<(f64, f64)> {
            v.iter().filter(|(_, t)| t.abs() >= f).cloned().collect()
        };
        let re = keep(&a.re);
        let im = keep(&a.im);
        let mag = keep(&a.mag);
        for (e, t) in &mag {
            mag_pct_errors.push(100.0 * e / t);
        }
        let stats = StateErrorStats {
            mape_real_pct: mape(&re),
            mape_imag_pct: mape(&im),
            mape_mag_pct: mape(&mag),
            mean_abs_phase_deg: a.phase.iter().sum::<f64>() / a.phase.len().max(1) as f64,
            samples: mag.len(),
        };
        let (bi, phase) = index.pairs()[k];
        let (up, down) = feeder.branch_ends(bi);
        out.push(BranchPhaseError {
            branch: format!("{}-{}", feeder.bus_id(up), feeder.bus_id(down)),
            phase: phase.as_char(),
            stats,
        });
        pooled.re.extend(re);
        pooled.im.extend(im);
        pooled.mag.extend(mag);
        pooled.phase.extend(a.phase.iter());
    }
    let overall = StateErrorStats {
        mape_real_pct: mape(&pooled.re),
        mape_imag_pct: mape(&pooled.im),
        mape_mag_pct: mape(&pooled.mag),
        mean_abs_phase_deg: pooled.phase.iter().sum::<f64>() / pooled.phase.len().max(1) as f64,
        samples: pooled.mag.len(),
    };
    Ok((out, overall, mag_pct_errors))
}
