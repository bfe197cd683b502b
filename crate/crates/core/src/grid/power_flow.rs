use num_complex::Complex;

use super::topology::{Feeder, Phasor, PhasorAbc};
use super::GridError;

#[derive(Debug, Clone, Copy)]
pub struct PowerFlowOptions {
    /// Convergence threshold on the worst per-phase complex power mismatch, pu.
    pub tol: f64,
    pub max_sweeps: usize,
}

impl Default for PowerFlowOptions {
    fn default() -> Self {
        PowerFlowOptions {
            tol: 1e-10,
            max_sweeps: 50,
        }
    }
}

#[derive(Debug, Clone)]
pub struct PowerFlowSolution {
    /// Per bus index, per phase.
    pub voltages: Vec<PhasorAbc>,
    /// Per branch index, per phase, positive parent-to-child.
    pub branch_currents: Vec<PhasorAbc>,
    pub sweeps: usize,
    pub mismatch: f64,
    pub converged: bool,
}

impl PowerFlowSolution {
    /// Complex power delivered by the slack bus, summed over phases.
    pub fn slack_injection(&self, feeder: &Feeder) -> Phasor {
        let slack = feeder.slack_index();
        let mut s = Phasor::new(0.0, 0.0);
        for &(_, bi) in feeder.children_of(slack) {
            for p in feeder.branch(bi).phases.iter() {
                let v = self.voltages[slack][p.index()];
                let i = self.branch_currents[bi][p.index()];
                s += v * i.conj();
            }
        }
        s
    }

    /// Total series losses, summed over branches and phases.
    pub fn losses(&self, feeder: &Feeder) -> Phasor {
        let mut s = Phasor::new(0.0, 0.0);
        for (bi, br) in feeder.topology().branches.iter().enumerate() {
            let dv = br.drop(&self.branch_currents[bi]);
            for p in br.phases.iter() {
                s += dv[p.index()] * self.branch_currents[bi][p.index()].conj();
            }
        }
        s
    }
}

/// Backward/forward sweep power flow on a radial feeder with constant-power
/// injections (consumption positive, pu).
///
/// The backward pass accumulates load currents into branch currents leaf to
/// root, the forward pass re-propagates voltages root to leaf; iteration
/// stops when every bus satisfies its power balance within `tol`.
pub fn forward_power_flow(
    feeder: &Feeder,
    injections: &[PhasorAbc],
    slack_voltage: &PhasorAbc,
    options: &PowerFlowOptions,
) -> Result<PowerFlowSolution, GridError> {
    let n = feeder.n_buses();
    assert_eq!(injections.len(), n, "one injection entry per bus");
    let slack = feeder.slack_index();

    let mut voltages: Vec<PhasorAbc> = vec![*slack_voltage; n];
    let mut branch_currents: Vec<PhasorAbc> = vec![[Complex::new(0.0, 0.0); 3]; feeder.n_branches()];
    let mut mismatch = f64::INFINITY;

    for sweep in 1..=options.max_sweeps {
        // Backward: load currents from current voltage estimate, accumulated
        // into branch currents child to parent.
        let mut acc: Vec<PhasorAbc> = vec![[Complex::new(0.0, 0.0); 3]; n];
        for bus in (0..feeder.bfs_order().len()).rev() {
            let u = feeder.bfs_order()[bus];
            let mut total = load_current(feeder, u, &voltages[u], &injections[u]);
            for &(_, bi) in feeder.children_of(u) {
                for p in feeder.branch(bi).phases.iter() {
                    total[p.index()] += branch_currents[bi][p.index()];
                }
            }
            acc[u] = total;
            if let Some((_, bi)) = feeder.parent_of(u) {
                let mut cur = [Complex::new(0.0, 0.0); 3];
                for p in feeder.branch(bi).phases.iter() {
                    cur[p.index()] = total[p.index()];
                }
                branch_currents[bi] = cur;
            }
        }

        // Forward: propagate voltage drops from the slack outward.
        for &u in feeder.bfs_order() {
            if let Some((parent, bi)) = feeder.parent_of(u) {
                let dv = feeder.branch(bi).drop(&branch_currents[bi]);
                let mut v = voltages[parent];
                for p in feeder.branch(bi).phases.iter() {
                    v[p.index()] = voltages[parent][p.index()] - dv[p.index()];
                }
                voltages[u] = v;
            }
        }

        // Power balance at every non-slack bus with the refreshed voltages.
        mismatch = 0.0;
        for &u in feeder.bfs_order() {
            if u == slack {
                continue;
            }
            let mut inflow = [Complex::new(0.0, 0.0); 3];
            if let Some((_, bi)) = feeder.parent_of(u) {
                for p in feeder.branch(bi).phases.iter() {
                    inflow[p.index()] += branch_currents[bi][p.index()];
                }
            }
            for &(_, bi) in feeder.children_of(u) {
                for p in feeder.branch(bi).phases.iter() {
                    inflow[p.index()] -= branch_currents[bi][p.index()];
                }
            }
            for p in feeder.topology().buses[u].phases.iter() {
                let s = voltages[u][p.index()] * inflow[p.index()].conj();
                let err = (s - injections[u][p.index()]).norm();
                if err > mismatch {
                    mismatch = err;
                }
            }
        }

        if mismatch < options.tol {
            return Ok(PowerFlowSolution {
                voltages,
                branch_currents,
                sweeps: sweep,
                mismatch,
                converged: true,
            });
        }
    }

    Err(GridError::Diverged {
        sweeps: options.max_sweeps,
        mismatch,
    })
}

fn load_current(feeder: &Feeder, bus: usize, v: &PhasorAbc, s: &PhasorAbc) -> PhasorAbc {
    let mut out = [Complex::new(0.0, 0.0); 3];
    for p in feeder.topology().buses[bus].phases.iter() {
        let vp = v[p.index()];
        if vp.norm() > 0.0 {
            out[p.index()] = (s[p.index()] / vp).conj();
        }
    }
    out
}

/// Nodal voltages from branch currents: V_k = V_slack minus the cumulative
/// Z*I drops along the slack-to-k path. Exact linear map, no iteration.
pub fn voltages_from_branch_currents(
    feeder: &Feeder,
    branch_currents: &[PhasorAbc],
    slack_voltage: &PhasorAbc,
) -> Result<Vec<PhasorAbc>, GridError> {
    if branch_currents.len() != feeder.n_branches() {
        return Err(GridError::CurrentLengthMismatch {
            expected: feeder.n_branches(),
            got: branch_currents.len(),
        });
    }
    let mut voltages: Vec<PhasorAbc> = vec![*slack_voltage; feeder.n_buses()];
    for &u in feeder.bfs_order() {
        if let Some((parent, bi)) = feeder.parent_of(u) {
            let dv = feeder.branch(bi).drop(&branch_currents[bi]);
            let mut v = voltages[parent];
            for p in feeder.branch(bi).phases.iter() {
                v[p.index()] = voltages[parent][p.index()] - dv[p.index()];
            }
            voltages[u] = v;
        }
    }
    Ok(voltages)
}

/// Balanced slack reference: 1 pu magnitude, phases 120 degrees apart.
pub fn nominal_slack_voltage() -> PhasorAbc {
    let third = 2.0 * std::f64::consts::PI / 3.0;
    [
        Complex::from_polar(1.0, 0.0),
        Complex::from_polar(1.0, -third),
        Complex::from_polar(1.0, third),
    ]
}

#[cfg(test)]
mod tests {
    use super::super::topology::{Branch, Bus, FeederTopology, PhaseSet};
    use super::*;
    use approx::assert_abs_diff_eq;

    fn z_diag(r: f64, x: f64) -> [[Phasor; 3]; 3] {
        let mut z = [[Phasor::new(0.0, 0.0); 3]; 3];
        for p in 0..3 {
            z[p][p] = Phasor::new(r, x);
        }
        z
    }

    fn two_bus(r: f64, x: f64) -> Feeder {
        Feeder::new(FeederTopology {
            base_kv: 4.16,
            base_mva: 1.0,
            slack_bus: 1,
            buses: vec![
                Bus {
                    id: 1,
                    phases: PhaseSet::abc(),
                    groups: Vec::new(),
                },
                Bus {
                    id: 2,
                    phases: PhaseSet::abc(),
                    groups: Vec::new(),
                },
            ],
            branches: vec![Branch {
                from: 1,
                to: 2,
                phases: PhaseSet::abc(),
                z: z_diag(r, x),
            }],
        })
        .unwrap()
    }

    #[test]
    fn no_load_network_is_flat() {
        let feeder = two_bus(0.01, 0.02);
        let inj = vec![[Phasor::new(0.0, 0.0); 3]; 2];
        let slack = nominal_slack_voltage();
        let sol =
            forward_power_flow(&feeder, &inj, &slack, &PowerFlowOptions::default()).unwrap();
        for v in &sol.voltages {
            for p in 0..3 {
                assert_eq!(v[p], slack[p]);
            }
        }
        for i in &sol.branch_currents {
            for p in 0..3 {
                assert_eq!(i[p], Phasor::new(0.0, 0.0));
            }
        }
    }

    #[test]
    fn two_bus_matches_scalar_fixed_point() {
        // Independent oracle: scalar fixed-point iteration of
        // V2 = 1 - Z * conj(S / V2) run to 1e-14.
        let z = Phasor::new(0.01, 0.02);
        let s = Phasor::new(0.1, 0.0);
        let mut v2 = Phasor::new(1.0, 0.0);
        for _ in 0..200 {
            v2 = Phasor::new(1.0, 0.0) - z * (s / v2).conj();
        }

        let feeder = two_bus(0.01, 0.02);
        let mut inj = vec![[Phasor::new(0.0, 0.0); 3]; 2];
        let b2 = feeder.bus_idx(2).unwrap();
        for p in 0..3 {
            inj[b2][p] = s;
        }
        // Per-phase problem is a rotated copy of the scalar one.
        let slack = nominal_slack_voltage();
        let sol = forward_power_flow(
            &feeder,
            &inj,
            &slack,
            &PowerFlowOptions {
                tol: 1e-12,
                max_sweeps: 100,
            },
        )
        .unwrap();
        for p in 0..3 {
            let rotated = sol.voltages[b2][p] / slack[p];
            assert_abs_diff_eq!(rotated.re, v2.re, epsilon = 1e-10);
            assert_abs_diff_eq!(rotated.im, v2.im, epsilon = 1e-10);
        }
    }

    #[test]
    fn diverges_with_absurd_load() {
        let feeder = two_bus(0.5, 1.0);
        let mut inj = vec![[Phasor::new(0.0, 0.0); 3]; 2];
        let b2 = feeder.bus_idx(2).unwrap();
        inj[b2][0] = Phasor::new(50.0, 0.0);
        let err = forward_power_flow(
            &feeder,
            &inj,
            &nominal_slack_voltage(),
            &PowerFlowOptions::default(),
        )
        .unwrap_err();
        assert!(matches!(err, GridError::Diverged { .. }));
    }

    #[test]
    fn single_branch_voltage_reconstruction() {
        let feeder = two_bus(0.0, 0.1);
        let currents = vec![[
            Phasor::new(1.0, 0.0),
            Phasor::new(0.0, 0.0),
            Phasor::new(0.0, 0.0),
        ]];
        let slack = [Phasor::new(1.0, 0.0); 3];
        let v = voltages_from_branch_currents(&feeder, &currents, &slack).unwrap();
        let b2 = feeder.bus_idx(2).unwrap();
        assert_abs_diff_eq!(v[b2][0].re, 1.0, epsilon = 1e-15);
        assert_abs_diff_eq!(v[b2][0].im, -0.1, epsilon = 1e-15);
        assert_eq!(v[b2][1], Phasor::new(1.0, 0.0));
    }

    #[test]
    fn zero_currents_give_slack_everywhere() {
        let feeder = two_bus(0.01, 0.02);
        let currents = vec![[Phasor::new(0.0, 0.0); 3]];
        let slack = nominal_slack_voltage();
        let v = voltages_from_branch_currents(&feeder, &currents, &slack).unwrap();
        for bus_v in &v {
            for p in 0..3 {
                assert_eq!(bus_v[p], slack[p]);
            }
        }
    }

    #[test]
    fn current_length_mismatch_rejected() {
        let feeder = two_bus(0.01, 0.02);
        let err =
            voltages_from_branch_currents(&feeder, &[], &nominal_slack_voltage()).unwrap_err();
        assert!(matches!(err, GridError::CurrentLengthMismatch { .. }));
    }
}
