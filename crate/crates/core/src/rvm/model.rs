use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::kernel::rbf_unchecked;
use super::RvmError;

/// Gaussian predictive distribution in normalized target units.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PredictiveDistribution {
    pub mean: f64,
    pub variance: f64,
}

#[derive(Debug, Clone, Default)]
pub struct TrainSummary {
    pub iterations: usize,
    pub n_train: usize,
    /// Marginal log-likelihood trace; comparable only between consecutive
    /// iterations with the same active basis set.
    pub likelihood_trace: Vec<f64>,
    /// Iterations where the likelihood decreased by more than the slack
    /// while the basis set was unchanged.
    pub monotone_violations: usize,
    pub sigma2_held: bool,
}

/// Trained sparse kernel regressor.
#[derive(Debug, Clone)]
pub struct RvmModel {
    pub bandwidth: f64,
    pub has_bias: bool,
    /// Inputs of the surviving kernel basis functions.
    pub relevance_vectors: Vec<Vec<f64>>,
    /// Posterior weight mean; entry 0 is the bias when `has_bias`.
    pub mu: DVector<f64>,
    /// Posterior weight covariance, symmetric positive definite.
    pub sigma: DMatrix<f64>,
    /// Noise variance.
    pub sigma2: f64,
    /// Surviving precision hyperparameters, aligned with `mu`.
    pub alphas: DVector<f64>,
    pub summary: TrainSummary,
}

impl RvmModel {
    pub fn n_basis(&self) -> usize {
        self.mu.len()
    }

    pub fn n_relevance_vectors(&self) -> usize {
        self.relevance_vectors.len()
    }

    pub fn input_dim(&self) -> Option<usize> {
        self.relevance_vectors.first().map(|v| v.len())
    }

    /// Basis response [1?, K(x, rv_1), ..., K(x, rv_R)].
    pub fn basis(&self, x: &[f64]) -> Result<DVector<f64>, RvmError> {
        if let Some(dim) = self.input_dim() {
            if dim != x.len() {
                return Err(RvmError::DimensionMismatch(dim, x.len()));
            }
        }
        let mut phi = Vec::with_capacity(self.n_basis());
        if self.has_bias {
            phi.push(1.0);
        }
        for rv in &self.relevance_vectors {
            phi.push(rbf_unchecked(x, rv, self.bandwidth));
        }
        Ok(DVector::from_vec(phi))
    }

    /// Predictive mean and variance. The variance is sigma2 plus a
    /// positive-semidefinite quadratic form, hence never below sigma2.
    pub fn predict(&self, x: &[f64]) -> Result<PredictiveDistribution, RvmError> {
        let phi = self.basis(x)?;
        let mean = self.mu.dot(&phi);
        let quad = (&self.sigma * &phi).dot(&phi);
        Ok(PredictiveDistribution {
            mean,
            variance: self.sigma2 + quad.max(0.0),
        })
    }

    pub fn to_json(&self) -> Result<String, RvmError> {
        let b = self.n_basis();
        let mut sigma_lower = Vec::with_capacity(b * (b + 1) / 2);
        for i in 0..b {
            for j in 0..=i {
                sigma_lower.push(self.sigma[(i, j)]);
            }
        }
        let doc = ModelDocument {
            version: 1,
            bandwidth: self.bandwidth,
            has_bias: self.has_bias,
            relevance_vectors: self.relevance_vectors.clone(),
            mu: self.mu.iter().copied().collect(),
            sigma_lower,
            sigma2: self.sigma2,
            alphas: self.alphas.iter().copied().collect(),
        };
        serde_json::to_string(&doc).map_err(|e| RvmError::Serialization(e.to_string()))
    }

    pub fn from_json(text: &str) -> Result<RvmModel, RvmError> {
        let doc: ModelDocument =
            serde_json::from_str(text).map_err(|e| RvmError::Serialization(e.to_string()))?;
        if doc.version != 1 {
            return Err(RvmError::Serialization(format!(
                "unsupported model version {}",
                doc.version
            )));
        }
        let b = doc.mu.len();
        if doc.alphas.len() != b || doc.sigma_lower.len() != b * (b + 1) / 2 {
            return Err(RvmError::Serialization("inconsistent dimensions".into()));
        }
        let mut sigma = DMatrix::zeros(b, b);
        let mut it = doc.sigma_lower.iter();
        for i in 0..b {
            for j in 0..=i {
                let v = *it.next().unwrap();
                sigma[(i, j)] = v;
                sigma[(j, i)] = v;
            }
        }
        Ok(RvmModel {
            bandwidth: doc.bandwidth,
            has_bias: doc.has_bias,
            relevance_vectors: doc.relevance_vectors,
            mu: DVector::from_vec(doc.mu),
            sigma,
            sigma2: doc.sigma2,
            alphas: DVector::from_vec(doc.alphas),
            summary: TrainSummary::default(),
        })
    }
}

#[derive(Serialize, Deserialize)]
struct ModelDocument {
    version: u32,
    bandwidth: f64,
    has_bias: bool,
    relevance_vectors: Vec<Vec<f64>>,
    mu: Vec<f64>,
    /// Row-major lower triangle of the posterior covariance.
    sigma_lower: Vec<f64>,
    sigma2: f64,
    alphas: Vec<f64>,
}
