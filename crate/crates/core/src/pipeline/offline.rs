//! Offline stages: fill unobserved history with scaled-pattern scaffolds,
//! run the state estimator over the training horizon to obtain the feedback
//! power column, augment the training set with it, and train the seasonal
//! expert pool.

use nalgebra::DVector;

use crate::bcse::{
    solve_wls, Measurement, MeasurementKind, MeasurementLocation, MeasurementModel,
    MeasurementSource, WlsOptions,
};
use crate::dataset::{
    AmiHistory, DataSplit, FeatureBuilder, FieldScale, Quality, Scaling, VoltageField,
};
use crate::dle::{disaggregate_bus_power, nodal_power_from_voltages};
use crate::grid::{nominal_slack_voltage, voltages_from_branch_currents, Feeder};

use super::estimator::{LoadEstimator, TrainingSet};
use super::mrvm::MrvmEstimator;
use super::{LoopMode, MeasurementSettings, PipelineConfig, PipelineError};

#[derive(Debug, Clone)]
pub struct CustomerInfo {
    pub id: String,
    /// Bus index in the feeder.
    pub bus: usize,
    pub size_kw: f64,
    /// Row in the history, when the customer ever reported.
    pub history_row: Option<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TargetSource {
    Measured,
    Scaffold,
    Dle,
}

pub struct OfflineArtifacts {
    pub customers: Vec<CustomerInfo>,
    pub scaling: Scaling,
    pub voltage_series: Vec<Vec<Option<f64>>>,
    pub train_end: usize,
    /// Final per-customer training targets over the train block, kW.
    pub targets: Vec<Vec<f64>>,
    pub target_source: Vec<Vec<TargetSource>>,
    /// Feedback power column over the train block (closed loop only), kW.
    pub dle_train: Vec<Vec<f64>>,
    pub estimator: MrvmEstimator,
    /// Warm-start state and feedback values at the end of the train block.
    pub last_state: DVector<f64>,
    pub last_dle: Vec<f64>,
    pub solver_failures: usize,
    /// Per-customer disaggregation shares within each bus.
    pub shares: Vec<f64>,
}

impl OfflineArtifacts {
    pub fn feature_builder<'a>(
        &self,
        feeder: &'a Feeder,
        timestamps: &'a [chrono::DateTime<chrono::Utc>],
    ) -> FeatureBuilder<'a> {
        FeatureBuilder {
            feeder,
            voltages: VoltageField::new(self.voltage_series.clone(), self.train_end),
            timestamps,
        }
    }

    pub fn p_tilde_norm(&self, customer: usize, dle_kw: f64) -> f64 {
        self.scaling.kw[&self.customers[customer].id]
            .normalize(dle_kw)
            .clamp(0.0, 1.0)
    }
}

/// Customer roster: topology groups in ascending id order, joined against
/// the history rows.
pub fn customer_roster(feeder: &Feeder, history: &AmiHistory) -> Vec<CustomerInfo> {
    let group_bus = feeder.group_bus();
    let mut sizes = std::collections::BTreeMap::new();
    for bus in &feeder.topology().buses {
        for g in &bus.groups {
            sizes.insert(g.id.clone(), g.size_kw);
        }
    }
    group_bus
        .iter()
        .map(|(id, &bus)| CustomerInfo {
            id: id.clone(),
            bus,
            size_kw: sizes[id],
            history_row: history.customer_index(id),
        })
        .collect()
}

/// Builds the per-hour measurement set: aggregated bus powers split per
/// phase, zero-injection constraints at customerless buses, instrumented
/// branch flows, and the substation PMU magnitude.
pub(crate) struct Assembler<'a> {
    pub feeder: &'a Feeder,
    pub customers: &'a [CustomerInfo],
    pub flows: &'a crate::dataset::FlowReadings,
    pub settings: &'a MeasurementSettings,
    bus_customers: Vec<Vec<usize>>,
    tan_phi: f64,
}

impl<'a> Assembler<'a> {
    pub fn new(
        feeder: &'a Feeder,
        customers: &'a [CustomerInfo],
        flows: &'a crate::dataset::FlowReadings,
        settings: &'a MeasurementSettings,
    ) -> Assembler<'a> {
        let mut bus_customers = vec![Vec::new(); feeder.n_buses()];
        for (c, info) in customers.iter().enumerate() {
            bus_customers[info.bus].push(c);
        }
        Assembler {
            feeder,
            customers,
            flows,
            settings,
            bus_customers,
            tan_phi: settings.power_factor.acos().tan(),
        }
    }

    /// `value_of(c)` returns (kW, sigma kW, source) for customer c at the
    /// assembled hour.
    pub fn assemble(
        &self,
        t: usize,
        value_of: &dyn Fn(usize) -> (f64, f64, MeasurementSource),
    ) -> Vec<Measurement> {
        let topo = self.feeder.topology();
        let mut out = Vec::new();
        for (bus_idx, bus) in topo.buses.iter().enumerate() {
            if bus.id == topo.slack_bus {
                continue;
            }
            let members = &self.bus_customers[bus_idx];
            let np = bus.phases.len().max(1) as f64;
            if members.is_empty() {
                for p in bus.phases.iter() {
                    for kind in [MeasurementKind::CustomerP, MeasurementKind::CustomerQ] {
                        out.push(Measurement {
                            kind,
                            location: MeasurementLocation::Bus(bus.id),
                            phase: Some(p),
                            z: 0.0,
                            sigma: self.settings.zero_injection_sigma_pu,
                            source: MeasurementSource::Pseudo,
                        });
                    }
                }
                continue;
            }
            let mut p_kw = 0.0;
            let mut var_kw2 = 0.0;
            let mut source = MeasurementSource::Meter;
            for &c in members {
                let (kw, sigma_kw, src) = value_of(c);
                p_kw += kw;
                var_kw2 += sigma_kw * sigma_kw;
                if src == MeasurementSource::Pseudo {
                    source = MeasurementSource::Pseudo;
                }
            }
            let p_pu = topo.kw_to_pu(p_kw);
            let sigma_pu = topo
                .kw_to_pu(var_kw2.sqrt())
                .max(self.settings.meter_sigma_floor_pu);
            let q_pu = p_pu * self.tan_phi;
            let sigma_q_pu = (sigma_pu * self.tan_phi).max(self.settings.meter_sigma_floor_pu);
            for p in bus.phases.iter() {
                out.push(Measurement {
                    kind: MeasurementKind::CustomerP,
                    location: MeasurementLocation::Bus(bus.id),
                    phase: Some(p),
                    z: p_pu / np,
                    sigma: sigma_pu / np,
                    source,
                });
                out.push(Measurement {
                    kind: MeasurementKind::CustomerQ,
                    location: MeasurementLocation::Bus(bus.id),
                    phase: Some(p),
                    z: q_pu / np,
                    sigma: sigma_q_pu / np,
                    source,
                });
            }
        }
        for (slot, &(a, b)) in self.flows.branches.iter().enumerate() {
            let p_pu = topo.kw_to_pu(self.flows.p_kw[slot][t]);
            let q_pu = topo.kw_to_pu(self.flows.q_kvar[slot][t]);
            let sp = (p_pu.abs() / self.settings.meter_divisor).max(1e-5);
            let sq = (q_pu.abs() / self.settings.meter_divisor).max(1e-5);
            out.push(Measurement {
                kind: MeasurementKind::FlowP,
                location: MeasurementLocation::Branch(a, b),
                phase: None,
                z: p_pu,
                sigma: sp,
                source: MeasurementSource::Meter,
            });
            out.push(Measurement {
                kind: MeasurementKind::FlowQ,
                location: MeasurementLocation::Branch(a, b),
                phase: None,
                z: q_pu,
                sigma: sq,
                source: MeasurementSource::Meter,
            });
        }
        out.push(Measurement {
            kind: MeasurementKind::SubstationVPmu,
            location: MeasurementLocation::Bus(topo.slack_bus),
            phase: Some(crate::grid::Phase::A),
            z: self.flows.pmu_v_pu[t],
            sigma: self.settings.pmu_sigma_pu,
            source: MeasurementSource::Pmu,
        });
        out
    }
}

/// Solve one hour and recover the per-customer feedback powers.
pub(crate) fn solve_and_disaggregate(
    feeder: &Feeder,
    assembler: &Assembler<'_>,
    t: usize,
    value_of: &dyn Fn(usize) -> (f64, f64, MeasurementSource),
    warm: &DVector<f64>,
    shares: &[f64],
    customers: &[CustomerInfo],
) -> Result<(DVector<f64>, Vec<f64>, bool), PipelineError> {
    let measurements = assembler.assemble(t, value_of);
    let model = MeasurementModel::new(feeder, measurements, nominal_slack_voltage())?;
    let solution = solve_wls(&model, warm, &WlsOptions::default())?;
    let currents = model.state_index().currents(&solution.state);
    let voltages = voltages_from_branch_currents(feeder, &currents, &nominal_slack_voltage())?;
    let bus_power = nodal_power_from_voltages(feeder, &voltages)?;

    let topo = feeder.topology();
    let mut dle_kw = vec![0.0f64; customers.len()];
    let mut bus_members: std::collections::BTreeMap<usize, Vec<usize>> = Default::default();
    for (c, info) in customers.iter().enumerate() {
        bus_members.entry(info.bus).or_default().push(c);
    }
    for (&bus, members) in &bus_members {
        let member_shares: Vec<f64> = members.iter().map(|&c| shares[c]).collect();
        let parts = disaggregate_bus_power(bus_power[bus], &member_shares);
        for (&c, part) in members.iter().zip(parts.iter()) {
            dle_kw[c] = topo.pu_to_kw(*part).max(0.0);
        }
    }
    Ok((solution.state, dle_kw, solution.converged))
}

/// Stages: scaffold unobserved history, state-estimate the training horizon,
/// augment targets with the feedback column, train the expert pool.
pub fn offline_stage(
    feeder: &Feeder,
    history: &AmiHistory,
    flows: &crate::dataset::FlowReadings,
    split: &DataSplit,
    config: &PipelineConfig,
) -> Result<OfflineArtifacts, PipelineError> {
    let customers = customer_roster(feeder, history);
    let n = customers.len();
    let train_end = split.train_hours.len();
    if train_end == 0 {
        return Err(PipelineError::Config("empty training block".into()));
    }
    let quality = |c: &CustomerInfo, t: usize| -> Quality {
        c.history_row
            .map(|row| history.quality[row][t])
            .unwrap_or(Quality::Missing)
    };
    let measured_kw = |c: &CustomerInfo, t: usize| -> Option<f64> {
        c.history_row.and_then(|row| {
            (history.quality[row][t] == Quality::Measured)
                .then(|| history.kw[row][t])
                .flatten()
        })
    };

    // Scaled-pattern scaffold: the mean per-kW-of-size consumption of the
    // customers observed at each hour, projected onto everyone else.
    let mut pattern = vec![1.0f64; train_end];
    let mut last = 1.0;
    for t in 0..train_end {
        let mut kw_sum = 0.0;
        let mut size_sum = 0.0;
        for info in &customers {
            if let Some(kw) = measured_kw(info, t) {
                kw_sum += kw;
                size_sum += info.size_kw;
            }
        }
        if size_sum > 0.0 {
            last = kw_sum / size_sum;
        }
        pattern[t] = last;
    }
    let mut targets: Vec<Vec<f64>> = vec![vec![0.0; train_end]; n];
    let mut target_source: Vec<Vec<TargetSource>> = vec![vec![TargetSource::Scaffold; train_end]; n];
    for (c, info) in customers.iter().enumerate() {
        for t in 0..train_end {
            match measured_kw(info, t) {
                Some(kw) => {
                    targets[c][t] = kw;
                    target_source[c][t] = TargetSource::Measured;
                }
                None => {
                    targets[c][t] = info.size_kw * pattern[t];
                }
            }
        }
    }

    // Normalization: per-customer target ranges plus the global voltage range,
    // fitted on the training block only.
    let mut kw_scales: Vec<FieldScale> = targets
        .iter()
        .map(|series| FieldScale::fit(series.iter().copied()))
        .collect();
    let voltage_scale = FieldScale::fit(
        customers
            .iter()
            .filter_map(|c| c.history_row)
            .flat_map(|row| history.voltage[row][..train_end].iter())
            .flatten()
            .copied(),
    );

    // Normalized per-bus voltage series over the full horizon.
    let hours = history.n_hours();
    let mut voltage_series: Vec<Vec<Option<f64>>> = vec![vec![None; hours]; feeder.n_buses()];
    for t in 0..hours {
        let mut acc: Vec<(f64, usize)> = vec![(0.0, 0); feeder.n_buses()];
        for info in &customers {
            if let Some(row) = info.history_row {
                if let Some(v) = history.voltage[row][t] {
                    acc[info.bus].0 += v;
                    acc[info.bus].1 += 1;
                }
            }
        }
        for (bus, (sum, count)) in acc.into_iter().enumerate() {
            if count > 0 {
                voltage_series[bus][t] = Some(voltage_scale.normalize(sum / count as f64));
            }
        }
    }

    // Disaggregation shares: training-set mean target per customer.
    let shares: Vec<f64> = targets
        .iter()
        .map(|series| (series.iter().sum::<f64>() / train_end as f64).max(1e-6))
        .collect();

    // Offline state estimation over the train horizon (closed loop).
    let closed = config.mode.is_closed();
    let assembler = Assembler::new(feeder, &customers, flows, &config.measurements);
    let state_dim = crate::bcse::StateIndex::new(feeder).n_state();
    let mut dle_train: Vec<Vec<f64>> = vec![Vec::new(); n];
    let mut last_state = DVector::zeros(state_dim);
    let mut last_dle: Vec<f64> = (0..n).map(|c| targets[c][train_end - 1]).collect();
    let mut solver_failures = 0usize;
    if closed {
        for series in dle_train.iter_mut() {
            series.resize(train_end, 0.0);
        }
        let mut warm = DVector::zeros(state_dim);
        let mut prev_dle: Vec<f64> = (0..n).map(|c| targets[c][0]).collect();
        for t in 0..train_end {
            let value_of = |c: usize| -> (f64, f64, MeasurementSource) {
                let info = &customers[c];
                match measured_kw(info, t) {
                    Some(kw) => (
                        kw,
                        (kw.abs() / config.measurements.meter_divisor).max(1e-3),
                        MeasurementSource::Meter,
                    ),
                    None => (
                        targets[c][t],
                        (config.measurements.scaffold_sigma_frac * targets[c][t].abs())
                            .max(0.05 * info.size_kw),
                        MeasurementSource::Pseudo,
                    ),
                }
            };
            match solve_and_disaggregate(
                feeder, &assembler, t, &value_of, &warm, &shares, &customers,
            ) {
                Ok((state, dle_kw, converged)) => {
                    if !converged {
                        solver_failures += 1;
                    }
                    warm = state;
                    prev_dle = dle_kw;
                }
                Err(PipelineError::Bcse(_)) => {
                    solver_failures += 1;
                    // keep previous state and feedback
                }
                Err(e) => return Err(e),
            }
            for c in 0..n {
                dle_train[c][t] = prev_dle[c];
            }
        }
        last_state = warm;
        last_dle = prev_dle;

        // Stage II augmentation: unobserved targets switch from the scaffold
        // to the feedback estimate, and the target ranges move with them.
        for (c, info) in customers.iter().enumerate() {
            for t in 0..train_end {
                if quality(info, t) != Quality::Measured {
                    targets[c][t] = dle_train[c][t];
                    target_source[c][t] = TargetSource::Dle;
                }
            }
            kw_scales[c] = FieldScale::fit(targets[c].iter().copied());
        }
    }
    let scaling = Scaling {
        kw: customers
            .iter()
            .enumerate()
            .map(|(c, info)| (info.id.clone(), kw_scales[c]))
            .collect(),
        voltage: voltage_scale,
    };

    // Feature assembly and expert training.
    let builder = FeatureBuilder {
        feeder,
        voltages: VoltageField::new(voltage_series.clone(), train_end),
        timestamps: &history.timestamps,
    };
    let mut samples: Vec<Vec<(usize, crate::dataset::FeatureVector, f64)>> =
        vec![Vec::with_capacity(train_end); n];
    for (c, info) in customers.iter().enumerate() {
        for t in 0..train_end {
            let p_tilde = closed.then(|| {
                kw_scales[c]
                    .normalize(dle_train[c][t])
                    .clamp(0.0, 1.0)
            });
            let x = builder.build(info.bus, t, p_tilde);
            samples[c].push((t, x, targets[c][t]));
        }
    }
    let training_set = TrainingSet {
        timestamps: history.timestamps.clone(),
        samples,
        kw_scales: kw_scales.clone(),
    };
    let mut estimator = MrvmEstimator::new(config.learner.clone());
    estimator.fit(&training_set)?;

    Ok(OfflineArtifacts {
        customers,
        scaling,
        voltage_series,
        train_end,
        targets,
        target_source,
        dle_train,
        estimator,
        last_state,
        last_dle,
        solver_failures,
        shares,
    })
}
