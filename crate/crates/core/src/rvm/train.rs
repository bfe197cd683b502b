use nalgebra::{Cholesky, DMatrix, DVector};

use super::kernel::design_matrix;
use super::model::{RvmModel, TrainSummary};
use super::RvmError;

#[derive(Debug, Clone)]
pub struct KernelConfig {
    /// Kernel bandwidth in normalized-feature distance units.
    pub bandwidth: f64,
    /// Pruning threshold on the precision hyperparameters.
    pub alpha_max: f64,
    pub alpha_init: f64,
    /// Initial noise variance; when absent, 0.1 times the target variance.
    pub sigma2_init: Option<f64>,
    pub max_iters: usize,
    /// Convergence threshold on the largest |delta log alpha|.
    pub tol: f64,
    /// Lower bound keeping the noise variance away from zero on perfect fits.
    pub sigma2_floor: f64,
}

impl Default for KernelConfig {
    fn default() -> Self {
        KernelConfig {
            bandwidth: 1.0,
            alpha_max: 1e9,
            alpha_init: 1e-2,
            sigma2_init: None,
            max_iters: 500,
            tol: 1e-3,
            sigma2_floor: 1e-8,
        }
    }
}

impl KernelConfig {
    pub fn with_bandwidth(bandwidth: f64) -> KernelConfig {
        KernelConfig {
            bandwidth,
            ..Default::default()
        }
    }

    pub fn validate(&self) -> Result<(), RvmError> {
        if !(self.bandwidth > 0.0) {
            return Err(RvmError::BadConfig("bandwidth must be positive".into()));
        }
        if !(self.alpha_max > self.alpha_init && self.alpha_init > 0.0) {
            return Err(RvmError::BadConfig(
                "need alpha_max > alpha_init > 0".into(),
            ));
        }
        if !(self.tol > 0.0) {
            return Err(RvmError::BadConfig("tol must be positive".into()));
        }
        Ok(())
    }
}

/// One fixed-point update over the current design matrix.
#[derive(Debug, Clone)]
pub struct EmStep {
    pub sigma: DMatrix<f64>,
    pub mu: DVector<f64>,
    pub alphas_new: DVector<f64>,
    pub sigma2_new: f64,
    /// Noise update denominator was non-positive; sigma2_new repeats the
    /// previous value.
    pub sigma2_held: bool,
    pub prune_mask: Vec<bool>,
}

/// Posterior weight distribution for fixed hyperparameters:
/// Sigma = (sigma^-2 Phi^T Phi + A)^-1, mu = sigma^-2 Sigma Phi^T p.
/// Solved through a Cholesky factorization with jitter escalation.
pub fn posterior(
    phi: &DMatrix<f64>,
    alphas: &DVector<f64>,
    sigma2: f64,
    targets: &DVector<f64>,
) -> Result<(DMatrix<f64>, DVector<f64>), RvmError> {
    let b = phi.ncols();
    assert_eq!(alphas.len(), b, "one alpha per basis column");
    let mut m = phi.transpose() * phi / sigma2;
    for i in 0..b {
        m[(i, i)] += alphas[i];
    }
    let mean_diag = m.diagonal().sum() / b as f64;
    let chol = cholesky_with_jitter(m, mean_diag)?;
    let sigma = chol.inverse();
    let mu = (&sigma * (phi.transpose() * targets)) / sigma2;
    Ok((sigma, mu))
}

fn cholesky_with_jitter(m: DMatrix<f64>, scale: f64) -> Result<Cholesky<f64, nalgebra::Dyn>, RvmError> {
    if let Some(c) = Cholesky::new(m.clone()) {
        return Ok(c);
    }
    for jitter in [1e-10, 1e-8, 1e-6] {
        let mut jittered = m.clone();
        let bump = jitter * scale.max(1.0);
        for i in 0..jittered.nrows() {
            jittered[(i, i)] += bump;
        }
        if let Some(c) = Cholesky::new(jittered) {
            return Ok(c);
        }
    }
    Err(RvmError::Numerical(
        "posterior precision matrix is not positive definite even with jitter".into(),
    ))
}

/// Fixed-point hyperparameter update: posterior, then
/// alpha_i <- (1 - alpha_i Sigma_ii) / mu_i^2 and
/// sigma2 <- ||p - Phi mu||^2 / (N - sum_i (1 - alpha_i Sigma_ii)).
/// Entries with alpha_i >= alpha_max are marked for pruning; the caller
/// removes the matching columns of Phi and entries of A.
pub fn em_iteration(
    phi: &DMatrix<f64>,
    alphas: &DVector<f64>,
    sigma2: f64,
    targets: &DVector<f64>,
    alpha_max: f64,
    sigma2_floor: f64,
) -> Result<EmStep, RvmError> {
    let n = phi.nrows() as f64;
    let (sigma, mu) = posterior(phi, alphas, sigma2, targets)?;

    let b = phi.ncols();
    let mut alphas_new = DVector::zeros(b);
    let mut gamma_sum = 0.0;
    for i in 0..b {
        let gamma = 1.0 - alphas[i] * sigma[(i, i)];
        gamma_sum += gamma;
        alphas_new[i] = if mu[i] == 0.0 {
            alpha_max // forced prune: an exactly-zero weight carries nothing
        } else {
            let a_new = gamma / (mu[i] * mu[i]);
            if !a_new.is_finite() {
                alpha_max
            } else if a_new <= 0.0 {
                // gamma dips below zero only through rounding, at the
                // alpha*Sigma_ii ~ 1 stationary point; hold the hyperparameter.
                alphas[i]
            } else {
                a_new
            }
        };
    }

    let residual = targets - phi * &mu;
    let denom = n - gamma_sum;
    let (sigma2_new, sigma2_held) = if denom > 0.0 {
        ((residual.norm_squared() / denom).max(sigma2_floor), false)
    } else {
        (sigma2, true)
    };

    let prune_mask = (0..b).map(|i| alphas_new[i] >= alpha_max).collect();
    Ok(EmStep {
        sigma,
        mu,
        alphas_new,
        sigma2_new,
        sigma2_held,
        prune_mask,
    })
}

/// Marginal log-likelihood of the current hyperparameters, computed from the
/// factorization byproducts:
/// ln|C| = N ln sigma2 - sum ln alpha + ln|Sigma^-1|,
/// y^T C^-1 y = (y^T y - y^T Phi mu) / sigma2.
fn marginal_log_likelihood(
    phi: &DMatrix<f64>,
    alphas: &DVector<f64>,
    sigma2: f64,
    targets: &DVector<f64>,
    sigma: &DMatrix<f64>,
    mu: &DVector<f64>,
) -> f64 {
    let n = phi.nrows() as f64;
    // |Sigma^-1| = 1/|Sigma|; reuse the posterior covariance determinant.
    let det_sigma = Cholesky::new(sigma.clone())
        .map(|c| {
            2.0 * c
                .l_dirty()
                .diagonal()
                .iter()
                .map(|d| d.abs().max(1e-300).ln())
                .sum::<f64>()
        })
        .unwrap_or(f64::NEG_INFINITY);
    let ln_det_c =
        n * sigma2.ln() - alphas.iter().map(|a| a.ln()).sum::<f64>() - det_sigma;
    let quad = (targets.dot(targets) - targets.dot(&(phi * mu))) / sigma2;
    -0.5 * (n * (2.0 * std::f64::consts::PI).ln() + ln_det_c + quad)
}

/// Trains a sparse model: iterate [`em_iteration`] with pruning until the
/// largest |delta log alpha| falls below `tol` or `max_iters` is reached.
pub fn train(
    xs: &[Vec<f64>],
    targets: &[f64],
    config: &KernelConfig,
) -> Result<RvmModel, RvmError> {
    config.validate()?;
    let n = xs.len();
    if n < 2 {
        return Err(RvmError::TooFewSamples { need: 2, got: n });
    }
    if targets.len() != n {
        return Err(RvmError::DimensionMismatch(n, targets.len()));
    }
    let dim = xs[0].len();
    if xs.iter().any(|x| x.len() != dim) {
        return Err(RvmError::DimensionMismatch(dim, 0));
    }

    let y = DVector::from_column_slice(targets);
    let mean_y = y.sum() / n as f64;
    let var_y = y.iter().map(|v| (v - mean_y) * (v - mean_y)).sum::<f64>() / n as f64;
    let mut sigma2 = config
        .sigma2_init
        .unwrap_or(0.1 * var_y)
        .max(config.sigma2_floor);

    let phi_full = design_matrix(xs, config.bandwidth);
    // active[i] = column index into phi_full; 0 is the bias, j+1 sample j.
    let mut active: Vec<usize> = (0..=n).collect();
    let mut phi = phi_full.clone();
    let mut alphas = DVector::from_element(n + 1, config.alpha_init);

    let mut summary = TrainSummary {
        n_train: n,
        ..Default::default()
    };
    let mut last_likelihood: Option<f64> = None;

    for iter in 1..=config.max_iters {
        summary.iterations = iter;
        let step = em_iteration(&phi, &alphas, sigma2, &y, config.alpha_max, config.sigma2_floor)?;
        summary.sigma2_held |= step.sigma2_held;

        let ll = marginal_log_likelihood(&phi, &alphas, sigma2, &y, &step.sigma, &step.mu);
        if let Some(prev) = last_likelihood {
            if ll < prev - 1e-8 * prev.abs().max(1.0) {
                summary.monotone_violations += 1;
            }
        }
        summary.likelihood_trace.push(ll);

        let keep: Vec<usize> = (0..phi.ncols()).filter(|&i| !step.prune_mask[i]).collect();
        if keep.is_empty() {
            return Err(RvmError::AllPruned);
        }
        let pruned_any = keep.len() != phi.ncols();

        // Convergence on the surviving hyperparameters.
        let mut delta = 0.0f64;
        for &i in &keep {
            let d = (step.alphas_new[i].ln() - alphas[i].ln()).abs();
            delta = delta.max(d);
        }

        if pruned_any {
            active = keep.iter().map(|&i| active[i]).collect();
            phi = phi_full.select_columns(active.iter());
            alphas = DVector::from_iterator(keep.len(), keep.iter().map(|&i| step.alphas_new[i]));
            // The likelihood is not comparable across a dimension change.
            last_likelihood = None;
        } else {
            alphas = step.alphas_new;
            last_likelihood = Some(ll);
        }
        sigma2 = step.sigma2_new;

        if delta < config.tol {
            break;
        }
    }

    // Final posterior over the surviving basis.
    let (sigma, mu) = posterior(&phi, &alphas, sigma2, &y)?;
    let has_bias = active.first() == Some(&0);
    let relevance_vectors: Vec<Vec<f64>> = active
        .iter()
        .filter(|&&c| c > 0)
        .map(|&c| xs[c - 1].clone())
        .collect();

    Ok(RvmModel {
        bandwidth: config.bandwidth,
        has_bias,
        relevance_vectors,
        mu,
        sigma,
        sigma2,
        alphas,
        summary,
    })
}

#[derive(Debug, Clone)]
pub struct CvConfig {
    pub grid: Vec<f64>,
    pub folds: usize,
    /// Upper bound on the number of samples used for selection.
    pub subsample: usize,
    /// Iteration cap for the cheap inner fits.
    pub max_iters: usize,
}

impl Default for CvConfig {
    fn default() -> Self {
        CvConfig {
            grid: vec![0.1, 0.3, 1.0, 3.0, 10.0],
            folds: 5,
            subsample: 120,
            max_iters: 60,
        }
    }
}

/// K-fold cross-validation over a bandwidth grid. Samples are thinned with a
/// deterministic stride, folds are contiguous in the (time-ordered) index.
/// Returns the grid value with the lowest mean squared validation error;
/// ties break toward the earlier grid entry.
pub fn select_bandwidth(
    xs: &[Vec<f64>],
    targets: &[f64],
    cv: &CvConfig,
    base: &KernelConfig,
) -> Result<f64, RvmError> {
    let n = xs.len();
    if n < cv.folds * 2 {
        return Ok(base.bandwidth);
    }
    let stride = n.div_ceil(cv.subsample);
    let idx: Vec<usize> = (0..n).step_by(stride.max(1)).collect();
    let m = idx.len();
    let fold_of = |slot: usize| (slot * cv.folds) / m;

    let mut best = (f64::INFINITY, base.bandwidth);
    for &r in &cv.grid {
        let mut sse = 0.0;
        let mut count = 0usize;
        for fold in 0..cv.folds {
            let train_idx: Vec<usize> = idx
                .iter()
                .enumerate()
                .filter(|(slot, _)| fold_of(*slot) != fold)
                .map(|(_, &i)| i)
                .collect();
            let test_idx: Vec<usize> = idx
                .iter()
                .enumerate()
                .filter(|(slot, _)| fold_of(*slot) == fold)
                .map(|(_, &i)| i)
                .collect();
            if train_idx.len() < 2 || test_idx.is_empty() {
                continue;
            }
            let tx: Vec<Vec<f64>> = train_idx.iter().map(|&i| xs[i].clone()).collect();
            let ty: Vec<f64> = train_idx.iter().map(|&i| targets[i]).collect();
            let cfg = KernelConfig {
                bandwidth: r,
                max_iters: cv.max_iters,
                ..base.clone()
            };
            let model = match train(&tx, &ty, &cfg) {
                Ok(m) => m,
                Err(RvmError::AllPruned) => continue,
                Err(e) => return Err(e),
            };
            for &i in &test_idx {
                let p = model.predict(&xs[i])?;
                let e = p.mean - targets[i];
                sse += e * e;
                count += 1;
            }
        }
        if count > 0 {
            let mse = sse / count as f64;
            if mse < best.0 {
                best = (mse, r);
            }
        }
    }
    Ok(best.1)
}
