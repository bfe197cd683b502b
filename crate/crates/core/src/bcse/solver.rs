use nalgebra::{Cholesky, DMatrix, DVector};

use super::model::MeasurementModel;
use super::BcseError;

#[derive(Debug, Clone, Copy)]
pub struct WlsOptions {
    pub max_iters: usize,
    /// Convergence when the infinity norm of the state update drops below.
    pub step_tol: f64,
    /// Convergence when the gradient norm drops below.
    pub gradient_tol: f64,
    /// Levenberg damping ladder on failed or non-descending steps.
    pub lambda_init: f64,
    pub lambda_max: f64,
}

impl Default for WlsOptions {
    fn default() -> Self {
        WlsOptions {
            max_iters: 50,
            step_tol: 1e-6,
            gradient_tol: 1e-8,
            lambda_init: 1e-8,
            lambda_max: 1e-2,
        }
    }
}

#[derive(Debug, Clone)]
pub struct WlsSolution {
    pub state: DVector<f64>,
    pub iterations: usize,
    pub converged: bool,
    /// Weighted residual objective at the final state.
    pub objective: f64,
    pub objective_trace: Vec<f64>,
    /// Largest condition-number estimate of the gain matrix seen during the
    /// solve (ratio of extreme diagonal entries of the Cholesky factor).
    pub condition_estimate: f64,
}

fn objective(model: &MeasurementModel<'_>, weights: &DVector<f64>, state: &DVector<f64>) -> Result<f64, BcseError> {
    let h = model.measurement_function(state)?;
    let z = model.values();
    let mut j = 0.0;
    for i in 0..z.len() {
        let r = z[i] - h[i];
        j += weights[i] * r * r;
    }
    Ok(j)
}

/// Gauss-Newton weighted least squares with Levenberg damping:
/// s <- s + (H^T R^-1 H + lambda diag)^-1 H^T R^-1 (z - h(s)).
///
/// Steps that fail to factor or do not decrease the objective escalate the
/// damping; a gain matrix that stays singular at the damping ceiling is
/// reported with the weakest state components named.
pub fn solve_wls(
    model: &MeasurementModel<'_>,
    initial: &DVector<f64>,
    options: &WlsOptions,
) -> Result<WlsSolution, BcseError> {
    if initial.len() != model.n_state() {
        return Err(BcseError::StateLength {
            expected: model.n_state(),
            got: initial.len(),
        });
    }
    let sigmas = model.sigmas();
    let weights = DVector::from_iterator(sigmas.len(), sigmas.iter().map(|s| 1.0 / (s * s)));
    let z = model.values();

    let mut state = initial.clone();
    let mut j_current = objective(model, &weights, &state)?;
    let mut trace = vec![j_current];
    let mut condition = 0.0f64;
    let mut converged = false;
    let mut iterations = 0;

    for iter in 1..=options.max_iters {
        iterations = iter;
        let h = model.measurement_function(&state)?;
        let jac = model.jacobian(&state)?;
        let residual = &z - &h;
        // gradient of 1/2 J: H^T W r
        let mut wr = residual.clone();
        for i in 0..wr.len() {
            wr[i] *= weights[i];
        }
        let gradient = jac.transpose() * &wr;
        if gradient.norm() < options.gradient_tol {
            converged = true;
            break;
        }

        let mut wjac = jac.clone();
        for i in 0..wjac.nrows() {
            let w = weights[i];
            for j in 0..wjac.ncols() {
                wjac[(i, j)] *= w;
            }
        }
        let gain = jac.transpose() * wjac;

        // A state component no measurement is sensitive to cannot be fixed
        // by damping: structural unobservability.
        let max_diag = (0..gain.nrows())
            .map(|i| gain[(i, i)].abs())
            .fold(0.0f64, f64::max);
        if (0..gain.nrows()).any(|i| gain[(i, i)].abs() <= 1e-16 * max_diag.max(1e-300)) {
            return Err(BcseError::Unobservable(weak_components(model, &gain)));
        }

        // Damping ladder: lambda = 0, then lambda_init escalating by 10x.
        let mut lambda = 0.0;
        let mut accepted = false;
        loop {
            let mut damped = gain.clone();
            if lambda > 0.0 {
                for i in 0..damped.nrows() {
                    damped[(i, i)] += lambda * gain[(i, i)].abs();
                }
            }
            let factor = Cholesky::new(damped).filter(|chol| {
                let l = chol.l_dirty();
                let mut dmax = f64::NEG_INFINITY;
                let mut dmin = f64::INFINITY;
                for i in 0..l.nrows() {
                    dmax = dmax.max(l[(i, i)].abs());
                    dmin = dmin.min(l[(i, i)].abs());
                }
                let cond = (dmax / dmin.max(1e-300)).powi(2);
                condition = condition.max(cond);
                cond < 1e14
            });
            if let Some(chol) = factor {
                let delta = chol.solve(&gradient);
                let candidate = &state + &delta;
                let j_new = objective(model, &weights, &candidate)?;
                if j_new <= j_current * (1.0 + 1e-12) + 1e-15 {
                    let step_inf = delta.amax();
                    state = candidate;
                    j_current = j_new;
                    trace.push(j_current);
                    accepted = true;
                    if step_inf < options.step_tol {
                        converged = true;
                    }
                    break;
                }
            }
            lambda = if lambda == 0.0 {
                options.lambda_init
            } else {
                lambda * 10.0
            };
            if lambda > options.lambda_max {
                break;
            }
        }

        if !accepted {
            // No productive step even at maximum damping: either we sit at a
            // (local) optimum or the gain matrix is structurally singular.
            if Cholesky::new(gain.clone()).is_none() {
                return Err(BcseError::Unobservable(weak_components(model, &gain)));
            }
            converged = true;
            break;
        }
        if converged {
            break;
        }
    }

    Ok(WlsSolution {
        state,
        iterations,
        converged,
        objective: j_current,
        objective_trace: trace,
        condition_estimate: condition,
    })
}

/// Names the state components spanning the numerical null space of the gain
/// matrix (eigenvectors whose eigenvalue is tiny relative to the largest).
fn weak_components(model: &MeasurementModel<'_>, gain: &DMatrix<f64>) -> String {
    let eig = nalgebra::SymmetricEigen::new(gain.clone());
    let max_ev = eig.eigenvalues.iter().cloned().fold(0.0f64, f64::max);
    let mut names = std::collections::BTreeSet::new();
    for (i, &ev) in eig.eigenvalues.iter().enumerate() {
        if ev <= 1e-10 * max_ev.max(1e-300) {
            let v = eig.eigenvectors.column(i);
            for (j, &x) in v.iter().enumerate() {
                if x.abs() > 0.3 {
                    names.insert(model.state_index().describe(model.feeder(), j / 2));
                }
            }
        }
    }
    if names.is_empty() {
        "unidentified".to_string()
    } else {
        names.into_iter().collect::<Vec<_>>().join(", ")
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bcse::measurement::{
        Measurement, MeasurementKind, MeasurementLocation, MeasurementSource,
    };
    use crate::grid::{
        balanced_injections, forward_power_flow, nominal_slack_voltage, thirteen_bus_feeder,
        Feeder, Phase, PowerFlowOptions,
    };
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, Normal};

    fn full_metering(feeder: &Feeder) -> Vec<Measurement> {
        let mut ms = Vec::new();
        for bus in &feeder.topology().buses {
            if bus.id == feeder.topology().slack_bus {
                continue;
            }
            for p in bus.phases.iter() {
                for kind in [MeasurementKind::CustomerP, MeasurementKind::CustomerQ] {
                    ms.push(Measurement {
                        kind,
                        location: MeasurementLocation::Bus(bus.id),
                        phase: Some(p),
                        z: 0.0,
                        sigma: 1e-3,
                        source: MeasurementSource::Meter,
                    });
                }
            }
        }
        for (a, b) in [(1, 2), (2, 11), (3, 6)] {
            for kind in [MeasurementKind::FlowP, MeasurementKind::FlowQ] {
                ms.push(Measurement {
                    kind,
                    location: MeasurementLocation::Branch(a, b),
                    phase: None,
                    z: 0.0,
                    sigma: 1e-3,
                    source: MeasurementSource::Meter,
                });
            }
        }
        ms.push(Measurement {
            kind: MeasurementKind::SubstationVPmu,
            location: MeasurementLocation::Bus(1),
            phase: Some(Phase::A),
            z: 1.0,
            sigma: 1e-4,
            source: MeasurementSource::Pmu,
        });
        ms
    }

    fn truth_and_measurements(
        feeder: &Feeder,
        noise_divisor: Option<f64>,
        seed: u64,
    ) -> (DVector<f64>, Vec<Measurement>) {
        let topo = feeder.topology();
        let inj = balanced_injections(topo, &|id| id.len() as f64 * 12.0 + 20.0, 0.95);
        let slack = nominal_slack_voltage();
        let sol = forward_power_flow(feeder, &inj, &slack, &PowerFlowOptions::default()).unwrap();
        let mut ms = full_metering(feeder);
        let model = crate::bcse::MeasurementModel::new(feeder, ms.clone(), slack).unwrap();
        let s_true = model.state_index().encode(&sol.branch_currents);
        let h = model.measurement_function(&s_true).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let unit = Normal::new(0.0, 1.0).unwrap();
        for (i, m) in ms.iter_mut().enumerate() {
            m.z = h[i];
            if let Some(div) = noise_divisor {
                if m.kind != MeasurementKind::SubstationVPmu {
                    let sd = h[i].abs() / div;
                    m.z += sd * unit.sample(&mut rng);
                    m.sigma = sd.max(1e-6);
                }
            }
        }
        (s_true, ms)
    }

    #[test]
    fn exact_measurements_recover_exact_state_from_flat_start() {
        let feeder = Feeder::new(thirteen_bus_feeder()).unwrap();
        let (s_true, ms) = truth_and_measurements(&feeder, None, 0);
        let model =
            crate::bcse::MeasurementModel::new(&feeder, ms, nominal_slack_voltage()).unwrap();
        let sol = solve_wls(&model, &DVector::zeros(model.n_state()), &WlsOptions::default())
            .unwrap();
        assert!(sol.converged);
        assert!(sol.objective < 1e-10, "J = {}", sol.objective);
        let err = (&sol.state - &s_true).amax();
        assert!(err < 1e-8, "state error {err}");
        // Objective never increases along accepted steps.
        for w in sol.objective_trace.windows(2) {
            assert!(w[1] <= w[0] * (1.0 + 1e-12) + 1e-15);
        }
    }

    #[test]
    fn duplicated_measurements_leave_estimate_unchanged() {
        let feeder = Feeder::new(thirteen_bus_feeder()).unwrap();
        let (_, ms) = truth_and_measurements(&feeder, None, 0);
        let mut doubled = ms.clone();
        doubled.extend(ms.iter().cloned());
        let slack = nominal_slack_voltage();
        let m1 = crate::bcse::MeasurementModel::new(&feeder, ms, slack).unwrap();
        let m2 = crate::bcse::MeasurementModel::new(&feeder, doubled, slack).unwrap();
        let s1 = solve_wls(&m1, &DVector::zeros(m1.n_state()), &WlsOptions::default()).unwrap();
        let s2 = solve_wls(&m2, &DVector::zeros(m2.n_state()), &WlsOptions::default()).unwrap();
        assert!((&s1.state - &s2.state).amax() < 1e-10);
    }

    #[test]
    fn uniform_sigma_scaling_leaves_estimate_unchanged() {
        let feeder = Feeder::new(thirteen_bus_feeder()).unwrap();
        let (_, ms) = truth_and_measurements(&feeder, Some(300.0), 4);
        let mut scaled = ms.clone();
        for m in &mut scaled {
            m.sigma *= 3.0;
        }
        let slack = nominal_slack_voltage();
        let m1 = crate::bcse::MeasurementModel::new(&feeder, ms, slack).unwrap();
        let m2 = crate::bcse::MeasurementModel::new(&feeder, scaled, slack).unwrap();
        let s1 = solve_wls(&m1, &DVector::zeros(m1.n_state()), &WlsOptions::default()).unwrap();
        let s2 = solve_wls(&m2, &DVector::zeros(m2.n_state()), &WlsOptions::default()).unwrap();
        assert!((&s1.state - &s2.state).amax() < 1e-10);
    }

    #[test]
    fn one_percent_noise_keeps_current_magnitude_mape_under_two_percent() {
        let feeder = Feeder::new(thirteen_bus_feeder()).unwrap();
        let slack = nominal_slack_voltage();
        let mut ratios = Vec::new();
        for seed in 0..20 {
            let (s_true, ms) = truth_and_measurements(&feeder, Some(300.0), seed);
            let model = crate::bcse::MeasurementModel::new(&feeder, ms, slack).unwrap();
            let sol =
                solve_wls(&model, &DVector::zeros(model.n_state()), &WlsOptions::default())
                    .unwrap();
            assert!(sol.converged);
            let idx = model.state_index();
            for k in 0..idx.pairs().len() {
                let mag_true =
                    (s_true[2 * k] * s_true[2 * k] + s_true[2 * k + 1] * s_true[2 * k + 1]).sqrt();
                let mag_est = (sol.state[2 * k] * sol.state[2 * k]
                    + sol.state[2 * k + 1] * sol.state[2 * k + 1])
                    .sqrt();
                if mag_true > 1e-6 {
                    ratios.push((mag_est - mag_true).abs() / mag_true);
                }
            }
        }
        let mape = 100.0 * ratios.iter().sum::<f64>() / ratios.len() as f64;
        assert!(mape < 2.0, "branch current MAPE {mape}%");
    }

    #[test]
    fn unobservable_set_names_weak_branches() {
        // Only one flow measurement: everything off that branch's subtree is
        // unconstrained.
        let feeder = Feeder::new(thirteen_bus_feeder()).unwrap();
        let ms = vec![Measurement {
            kind: MeasurementKind::FlowP,
            location: MeasurementLocation::Branch(1, 2),
            phase: None,
            z: 0.5,
            sigma: 1e-3,
            source: MeasurementSource::Meter,
        }];
        let model =
            crate::bcse::MeasurementModel::new(&feeder, ms, nominal_slack_voltage()).unwrap();
        let err = solve_wls(&model, &DVector::zeros(model.n_state()), &WlsOptions::default());
        match err {
            Err(BcseError::Unobservable(names)) => {
                assert!(names.contains("branch"), "named: {names}");
            }
            other => panic!("expected unobservable error, got {other:?}"),
        }
    }

    #[test]
    fn rejects_wrong_initial_length() {
        let feeder = Feeder::new(thirteen_bus_feeder()).unwrap();
        let (_, ms) = truth_and_measurements(&feeder, None, 0);
        let model =
            crate::bcse::MeasurementModel::new(&feeder, ms, nominal_slack_voltage()).unwrap();
        assert!(matches!(
            solve_wls(&model, &DVector::zeros(3), &WlsOptions::default()),
            Err(BcseError::StateLength { .. })
        ));
    }

    #[test]
    fn linear_flow_case_converges_in_one_step() {
        // A sending-end flow at the slack sees the fixed slack voltage, so
        // h is exactly linear in the branch current: flow_P = I_re,
        // flow_Q = -I_im at 1 per-unit slack. One Gauss-Newton step lands on
        // the optimum.
        use crate::grid::{Branch, Bus, FeederTopology, PhaseSet, Phasor};
        let mut z = [[Phasor::new(0.0, 0.0); 3]; 3];
        z[0][0] = Phasor::new(0.01, 0.02);
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
        let slack = [Phasor::new(1.0, 0.0); 3];
        let ms = vec![
            Measurement {
                kind: MeasurementKind::FlowP,
                location: MeasurementLocation::Branch(1, 2),
                phase: None,
                z: 5.0,
                sigma: 1.0,
                source: MeasurementSource::Meter,
            },
            Measurement {
                kind: MeasurementKind::FlowQ,
                location: MeasurementLocation::Branch(1, 2),
                phase: None,
                z: 0.0,
                sigma: 1.0,
                source: MeasurementSource::Meter,
            },
        ];
        let model = crate::bcse::MeasurementModel::new(&feeder, ms, slack).unwrap();
        assert_eq!(model.n_state(), 2);
        let sol =
            solve_wls(&model, &DVector::zeros(2), &WlsOptions::default()).unwrap();
        assert!(sol.converged);
        assert!((sol.state[0] - 5.0).abs() < 1e-12, "I_re = {}", sol.state[0]);
        assert!(sol.state[1].abs() < 1e-12);
        assert!(sol.iterations <= 2, "took {} iterations", sol.iterations);
    }
}
