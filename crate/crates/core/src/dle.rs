//! Load estimation from estimated voltages: after the state estimator
//! converges, the per-bus active power is recovered from the nodal voltage
//! phasors through the line impedances. The result feeds back into the
//! learning layer as a per-customer power signal.

use nalgebra::DMatrix;
use num_complex::Complex;
use thiserror::Error;

use crate::grid::{Feeder, Phase, PhasorAbc};

#[derive(Debug, Error)]
pub enum DleError {
    #[error("impedance block of branch {0} is singular on its phases")]
    SingularImpedance(usize),
    #[error("expected one voltage entry per bus ({expected}), got {got}")]
    LengthMismatch { expected: usize, got: usize },
}

/// Per-bus active power recovered from nodal voltages, consumption positive,
/// pu. For each neighbor m of k the branch current is reconstructed as
/// Z_km^-1 (V_m - V_k) restricted to the branch's phases, and the per-phase
/// real powers V_k * conj(I) are summed.
pub fn nodal_power_from_voltages(
    feeder: &Feeder,
    voltages: &[PhasorAbc],
) -> Result<Vec<f64>, DleError> {
    if voltages.len() != feeder.n_buses() {
        return Err(DleError::LengthMismatch {
            expected: feeder.n_buses(),
            got: voltages.len(),
        });
    }

    // Invert each branch's impedance block once.
    let mut z_inv: Vec<Vec<(Phase, Vec<(Phase, Complex<f64>)>)>> =
        Vec::with_capacity(feeder.n_branches());
    for bi in 0..feeder.n_branches() {
        let br = feeder.branch(bi);
        let phases: Vec<Phase> = br.phases.iter().collect();
        let np = phases.len();
        let block = DMatrix::from_fn(np, np, |r, c| br.z[phases[r].index()][phases[c].index()]);
        let inv = block
            .try_inverse()
            .ok_or(DleError::SingularImpedance(bi))?;
        let mut rows = Vec::with_capacity(np);
        for (r, pr) in phases.iter().enumerate() {
            let cols = phases
                .iter()
                .enumerate()
                .map(|(c, pc)| (*pc, inv[(r, c)]))
                .collect();
            rows.push((*pr, cols));
        }
        z_inv.push(rows);
    }

    let mut power = vec![0.0f64; feeder.n_buses()];
    for bus in 0..feeder.n_buses() {
        let mut neighbors: Vec<(usize, usize)> = feeder.children_of(bus).to_vec();
        if let Some(pb) = feeder.parent_of(bus) {
            neighbors.push(pb);
        }
        let mut p = 0.0;
        for (other, bi) in neighbors {
            for (pr, cols) in &z_inv[bi] {
                // Current flowing from `other` into `bus` on phase pr.
                let mut current = Complex::new(0.0, 0.0);
                for (pc, zi) in cols {
                    let dv = voltages[other][pc.index()] - voltages[bus][pc.index()];
                    current += zi * dv;
                }
                p += (voltages[bus][pr.index()] * current.conj()).re;
            }
        }
        power[bus] = p;
    }
    Ok(power)
}

/// Splits a per-bus power across that bus's customer groups using fixed
/// shares (training-set means or nominal sizes). Share vectors are
/// normalized defensively; a bus without groups keeps its power unassigned.
pub fn disaggregate_bus_power(bus_power_pu: f64, shares: &[f64]) -> Vec<f64> {
    let total: f64 = shares.iter().sum();
    if total <= 0.0 {
        let n = shares.len().max(1);
        return vec![bus_power_pu / n as f64; n];
    }
    shares.iter().map(|s| bus_power_pu * s / total).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::{
        balanced_injections, forward_power_flow, nominal_slack_voltage, random_radial_feeder,
        thirteen_bus_feeder, Branch, Bus, FeederTopology, PhaseSet, Phasor, PowerFlowOptions,
        RandomFeederConfig,
    };
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn equal_voltages_mean_zero_power() {
        let feeder = Feeder::new(thirteen_bus_feeder()).unwrap();
        let v = vec![nominal_slack_voltage(); feeder.n_buses()];
        let p = nodal_power_from_voltages(&feeder, &v).unwrap();
        for x in p {
            assert_eq!(x, 0.0);
        }
    }

    #[test]
    fn in_phase_voltages_through_pure_reactance_transfer_no_real_power() {
        let mut z = [[Phasor::new(0.0, 0.0); 3]; 3];
        z[0][0] = Phasor::new(0.0, 0.1);
        let feeder = Feeder::new(FeederTopology {
            base_kv: 4.16,
            base_mva: 1.0,
            slack_bus: 1,
            buses: vec![
                Bus { id: 1, phases: PhaseSet::from_str("a").unwrap(), groups: vec![] },
                Bus { id: 2, phases: PhaseSet::from_str("a").unwrap(), groups: vec![] },
            ],
            branches: vec![Branch {
                from: 1,
                to: 2,
                phases: PhaseSet::from_str("a").unwrap(),
                z,
            }],
        })
        .unwrap();
        let mut v = vec![[Phasor::new(0.0, 0.0); 3]; 2];
        v[0][0] = Phasor::new(1.0, 0.0);
        v[1][0] = Phasor::new(0.95, 0.0);
        let p = nodal_power_from_voltages(&feeder, &v).unwrap();
        assert!(p[1].abs() < 1e-15, "purely reactive transfer: {}", p[1]);
    }

    #[test]
    fn round_trips_power_flow_loads_on_bundled_feeder() {
        let feeder = Feeder::new(thirteen_bus_feeder()).unwrap();
        let topo = feeder.topology();
        let inj = balanced_injections(topo, &|id| 15.0 + id.len() as f64 * 9.0, 0.95);
        let sol = forward_power_flow(
            &feeder,
            &inj,
            &nominal_slack_voltage(),
            &PowerFlowOptions::default(),
        )
        .unwrap();
        let p = nodal_power_from_voltages(&feeder, &sol.voltages).unwrap();
        for bus in 0..feeder.n_buses() {
            if bus == feeder.slack_index() {
                continue;
            }
            let truth: f64 = inj[bus].iter().map(|s| s.re).sum();
            assert!(
                (p[bus] - truth).abs() < 1e-6,
                "bus {}: {} vs {}",
                feeder.bus_id(bus),
                p[bus],
                truth
            );
        }
    }

    #[test]
    fn round_trips_on_random_feeders() {
        let mut rng = ChaCha8Rng::seed_from_u64(19);
        for seed in 0..100 {
            let cfg = RandomFeederConfig {
                n_buses: rng.gen_range(2..=25),
                ..Default::default()
            };
            let topo = random_radial_feeder(&cfg, &mut rng);
            let scale = rng.gen_range(0.3..1.2);
            let inj = balanced_injections(&topo, &|id| scale * (10.0 + id.len() as f64 * 8.0), 0.95);
            let feeder = Feeder::new(topo).unwrap();
            let sol = forward_power_flow(
                &feeder,
                &inj,
                &nominal_slack_voltage(),
                &PowerFlowOptions::default(),
            )
            .unwrap();
            let p = nodal_power_from_voltages(&feeder, &sol.voltages).unwrap();
            for bus in 0..feeder.n_buses() {
                if bus == feeder.slack_index() {
                    continue;
                }
                let truth: f64 = inj[bus].iter().map(|s| s.re).sum();
                assert!(
                    (p[bus] - truth).abs() < 1e-6,
                    "seed {seed} bus {bus}: {} vs {truth}",
                    p[bus]
                );
            }
        }
    }

    #[test]
    fn wrong_voltage_count_rejected() {
        let feeder = Feeder::new(thirteen_bus_feeder()).unwrap();
        assert!(matches!(
            nodal_power_from_voltages(&feeder, &[]),
            Err(DleError::LengthMismatch { .. })
        ));
    }

    #[test]
    fn disaggregation_follows_shares() {
        let parts = disaggregate_bus_power(1.0, &[3.0, 1.0]);
        assert!((parts[0] - 0.75).abs() < 1e-15);
        assert!((parts[1] - 0.25).abs() < 1e-15);
        let even = disaggregate_bus_power(1.0, &[0.0, 0.0]);
        assert_eq!(even, vec![0.5, 0.5]);
    }
}
