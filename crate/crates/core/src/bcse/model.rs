use nalgebra::{DMatrix, DVector};
use num_complex::Complex;

use crate::grid::{voltages_from_branch_currents, Feeder, Phase, Phasor, PhasorAbc};

use super::measurement::{Measurement, MeasurementKind, MeasurementLocation};
use super::BcseError;

/// Layout of the state vector: for each branch, for each of its phases, the
/// pair (real, imaginary) of the parent-to-child current in pu.
#[derive(Debug, Clone)]
pub struct StateIndex {
    /// (branch index, phase) per pair slot.
    pairs: Vec<(usize, Phase)>,
    /// pair slot by (branch, phase index); usize::MAX when absent.
    slot: Vec<[usize; 3]>,
}

impl StateIndex {
    pub fn new(feeder: &Feeder) -> StateIndex {
        let mut pairs = Vec::new();
        let mut slot = vec![[usize::MAX; 3]; feeder.n_branches()];
        for bi in 0..feeder.n_branches() {
            for p in feeder.branch(bi).phases.iter() {
                slot[bi][p.index()] = pairs.len();
                pairs.push((bi, p));
            }
        }
        StateIndex { pairs, slot }
    }

    pub fn n_state(&self) -> usize {
        2 * self.pairs.len()
    }

    pub fn pair_slot(&self, branch: usize, phase: Phase) -> Option<usize> {
        let s = self.slot[branch][phase.index()];
        (s != usize::MAX).then_some(s)
    }

    pub fn pairs(&self) -> &[(usize, Phase)] {
        &self.pairs
    }

    /// Decodes the state vector into per-branch phasors.
    pub fn currents(&self, state: &DVector<f64>) -> Vec<PhasorAbc> {
        let n_br = self.slot.len();
        let mut out = vec![[Complex::new(0.0, 0.0); 3]; n_br];
        for (k, &(bi, p)) in self.pairs.iter().enumerate() {
            out[bi][p.index()] = Complex::new(state[2 * k], state[2 * k + 1]);
        }
        out
    }

    /// Encodes per-branch phasors into a state vector.
    pub fn encode(&self, currents: &[PhasorAbc]) -> DVector<f64> {
        let mut s = DVector::zeros(self.n_state());
        for (k, &(bi, p)) in self.pairs.iter().enumerate() {
            s[2 * k] = currents[bi][p.index()].re;
            s[2 * k + 1] = currents[bi][p.index()].im;
        }
        s
    }

    pub fn describe(&self, feeder: &Feeder, pair: usize) -> String {
        let (bi, p) = self.pairs[pair];
        let (up, down) = feeder.branch_ends(bi);
        format!(
            "branch {}-{} phase {}",
            feeder.bus_id(up),
            feeder.bus_id(down),
            p
        )
    }
}

enum Compiled {
    /// Per-phase or three-phase-total injected power at a bus.
    BusPower {
        bus: usize,
        phase: Option<Phase>,
        reactive: bool,
    },
    /// Three-phase-total sending-end flow through a branch.
    Flow { branch: usize, reactive: bool },
    /// Substation voltage magnitude; constant in the branch-current state.
    PmuVoltage { phase: Phase },
}

/// Measurement function h(s) and its Jacobian for a fixed measurement set.
pub struct MeasurementModel<'a> {
    feeder: &'a Feeder,
    index: StateIndex,
    slack_voltage: PhasorAbc,
    compiled: Vec<Compiled>,
    pub measurements: Vec<Measurement>,
}

impl<'a> MeasurementModel<'a> {
    pub fn new(
        feeder: &'a Feeder,
        measurements: Vec<Measurement>,
        slack_voltage: PhasorAbc,
    ) -> Result<MeasurementModel<'a>, BcseError> {
        let mut compiled = Vec::with_capacity(measurements.len());
        for m in &measurements {
            if m.sigma <= 0.0 {
                return Err(BcseError::BadSigma(m.sigma));
            }
            let c = match (m.kind, m.location) {
                (MeasurementKind::CustomerP, MeasurementLocation::Bus(id)) => Compiled::BusPower {
                    bus: feeder.bus_idx(id).map_err(|_| unknown_bus(id))?,
                    phase: m.phase,
                    reactive: false,
                },
                (MeasurementKind::CustomerQ, MeasurementLocation::Bus(id)) => Compiled::BusPower {
                    bus: feeder.bus_idx(id).map_err(|_| unknown_bus(id))?,
                    phase: m.phase,
                    reactive: true,
                },
                (MeasurementKind::FlowP, MeasurementLocation::Branch(a, b)) => Compiled::Flow {
                    branch: feeder
                        .branch_between(a, b)
                        .map_err(|_| unknown_branch(a, b))?,
                    reactive: false,
                },
                (MeasurementKind::FlowQ, MeasurementLocation::Branch(a, b)) => Compiled::Flow {
                    branch: feeder
                        .branch_between(a, b)
                        .map_err(|_| unknown_branch(a, b))?,
                    reactive: true,
                },
                (MeasurementKind::SubstationVPmu, MeasurementLocation::Bus(id)) => {
                    if feeder.bus_idx(id)? != feeder.slack_index() {
                        return Err(BcseError::UnknownLocation(format!(
                            "PMU voltage must sit at the slack bus, got bus {id}"
                        )));
                    }
                    Compiled::PmuVoltage {
                        phase: m.phase.unwrap_or(Phase::A),
                    }
                }
                (kind, loc) => {
                    return Err(BcseError::UnknownLocation(format!(
                        "{} at {loc} is not a valid combination",
                        kind.as_str()
                    )))
                }
            };
            compiled.push(c);
        }
        Ok(MeasurementModel {
            index: StateIndex::new(feeder),
            feeder,
            slack_voltage,
            compiled,
            measurements,
        })
    }

    pub fn feeder(&self) -> &Feeder {
        self.feeder
    }

    pub fn state_index(&self) -> &StateIndex {
        &self.index
    }

    pub fn n_measurements(&self) -> usize {
        self.compiled.len()
    }

    pub fn n_state(&self) -> usize {
        self.index.n_state()
    }

    pub fn sigmas(&self) -> DVector<f64> {
        DVector::from_iterator(
            self.measurements.len(),
            self.measurements.iter().map(|m| m.sigma),
        )
    }

    pub fn values(&self) -> DVector<f64> {
        DVector::from_iterator(
            self.measurements.len(),
            self.measurements.iter().map(|m| m.z),
        )
    }

    fn check_state(&self, state: &DVector<f64>) -> Result<(), BcseError> {
        if state.len() != self.n_state() {
            return Err(BcseError::StateLength {
                expected: self.n_state(),
                got: state.len(),
            });
        }
        Ok(())
    }

    /// Net injected current at each bus/phase: parent inflow minus child
    /// outflows (consumption positive).
    fn injection_currents(&self, currents: &[PhasorAbc]) -> Vec<PhasorAbc> {
        let n = self.feeder.n_buses();
        let mut inj = vec![[Complex::new(0.0, 0.0); 3]; n];
        for bus in 0..n {
            if let Some((_, bi)) = self.feeder.parent_of(bus) {
                for p in self.feeder.branch(bi).phases.iter() {
                    inj[bus][p.index()] += currents[bi][p.index()];
                }
            }
            for &(_, bi) in self.feeder.children_of(bus) {
                for p in self.feeder.branch(bi).phases.iter() {
                    inj[bus][p.index()] -= currents[bi][p.index()];
                }
            }
        }
        inj
    }

    /// Predicted measurement vector h(s).
    pub fn measurement_function(&self, state: &DVector<f64>) -> Result<DVector<f64>, BcseError> {
        self.check_state(state)?;
        let currents = self.index.currents(state);
        let voltages =
            voltages_from_branch_currents(self.feeder, &currents, &self.slack_voltage)?;
        let inj = self.injection_currents(&currents);

        let mut h = DVector::zeros(self.compiled.len());
        for (row, c) in self.compiled.iter().enumerate() {
            h[row] = match c {
                Compiled::BusPower { bus, phase, reactive } => {
                    let mut s = Complex::new(0.0, 0.0);
                    match phase {
                        Some(p) => {
                            s = voltages[*bus][p.index()] * inj[*bus][p.index()].conj();
                        }
                        None => {
                            for p in self.feeder.topology().buses[*bus].phases.iter() {
                                s += voltages[*bus][p.index()] * inj[*bus][p.index()].conj();
                            }
                        }
                    }
                    if *reactive {
                        s.im
                    } else {
                        s.re
                    }
                }
                Compiled::Flow { branch, reactive } => {
                    let (up, _) = self.feeder.branch_ends(*branch);
                    let mut s = Complex::new(0.0, 0.0);
                    for p in self.feeder.branch(*branch).phases.iter() {
                        s += voltages[up][p.index()] * currents[*branch][p.index()].conj();
                    }
                    if *reactive {
                        s.im
                    } else {
                        s.re
                    }
                }
                Compiled::PmuVoltage { phase } => self.slack_voltage[phase.index()].norm(),
            };
        }
        Ok(h)
    }

    /// Analytic Jacobian H[i][j] = d h_i / d s_j.
    ///
    /// Voltages are complex-linear in the branch currents
    /// (V_k = V_slack - sum_path Z*I), so each row assembles from
    /// dV/dI = -Z over the slack path plus the conjugated direct current
    /// terms of the power products.
    pub fn jacobian(&self, state: &DVector<f64>) -> Result<DMatrix<f64>, BcseError> {
        self.check_state(state)?;
        let currents = self.index.currents(state);
        let voltages =
            voltages_from_branch_currents(self.feeder, &currents, &self.slack_voltage)?;
        let inj = self.injection_currents(&currents);

        let mut jac = DMatrix::zeros(self.compiled.len(), self.n_state());
        for (row, c) in self.compiled.iter().enumerate() {
            match c {
                Compiled::BusPower { bus, phase, reactive } => {
                    let phases: Vec<Phase> = match phase {
                        Some(p) => vec![*p],
                        None => self.feeder.topology().buses[*bus].phases.iter().collect(),
                    };
                    for p in phases {
                        let v = voltages[*bus][p.index()];
                        let i_conj = inj[*bus][p.index()].conj();
                        // Voltage sensitivity along the slack path.
                        for &bi in self.feeder.path_to(*bus) {
                            let br = self.feeder.branch(bi);
                            for q in br.phases.iter() {
                                let k = self.index.pair_slot(bi, q).unwrap();
                                let z = br.z[p.index()][q.index()];
                                let d_re = -z * i_conj;
                                let d_im = Complex::<f64>::i() * (-z) * i_conj;
                                add(&mut jac, row, k, d_re, d_im, *reactive);
                            }
                        }
                        // Direct current terms: parent +1, children -1.
                        if let Some((_, bi)) = self.feeder.parent_of(*bus) {
                            if let Some(k) = self.index.pair_slot(bi, p) {
                                let d_re = v;
                                let d_im = -Complex::<f64>::i() * v;
                                add(&mut jac, row, k, d_re, d_im, *reactive);
                            }
                        }
                        for &(_, bi) in self.feeder.children_of(*bus) {
                            if let Some(k) = self.index.pair_slot(bi, p) {
                                let d_re = -v;
                                let d_im = Complex::<f64>::i() * v;
                                add(&mut jac, row, k, d_re, d_im, *reactive);
                            }
                        }
                    }
                }
                Compiled::Flow { branch, reactive } => {
                    let (up, _) = self.feeder.branch_ends(*branch);
                    for p in self.feeder.branch(*branch).phases.iter() {
                        let i_conj = currents[*branch][p.index()].conj();
                        for &bi in self.feeder.path_to(up) {
                            let br = self.feeder.branch(bi);
                            for q in br.phases.iter() {
                                let k = self.index.pair_slot(bi, q).unwrap();
                                let z = br.z[p.index()][q.index()];
                                let d_re = -z * i_conj;
                                let d_im = Complex::<f64>::i() * (-z) * i_conj;
                                add(&mut jac, row, k, d_re, d_im, *reactive);
                            }
                        }
                        let v = voltages[up][p.index()];
                        let k = self.index.pair_slot(*branch, p).unwrap();
                        add(&mut jac, row, k, v, -Complex::<f64>::i() * v, *reactive);
                    }
                }
                Compiled::PmuVoltage { .. } => {
                    // The slack voltage is an input, not a state function.
                }
            }
        }
        Ok(jac)
    }
}

fn add(
    jac: &mut DMatrix<f64>,
    row: usize,
    pair: usize,
    d_re: Phasor,
    d_im: Phasor,
    reactive: bool,
) {
    if reactive {
        jac[(row, 2 * pair)] += d_re.im;
        jac[(row, 2 * pair + 1)] += d_im.im;
    } else {
        jac[(row, 2 * pair)] += d_re.re;
        jac[(row, 2 * pair + 1)] += d_im.re;
    }
}

fn unknown_bus(id: u32) -> BcseError {
    BcseError::UnknownLocation(format!("bus {id}"))
}

fn unknown_branch(a: u32, b: u32) -> BcseError {
    BcseError::UnknownLocation(format!("branch {a}-{b}"))
}
