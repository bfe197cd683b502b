use nalgebra::DMatrix;

use super::RvmError;

/// Radial basis function similarity: exp(-||a-b||^2 / r^2). Equals 1 iff the
/// inputs coincide, symmetric, strictly positive.
pub fn rbf_kernel(a: &[f64], b: &[f64], r: f64) -> Result<f64, RvmError> {
    if a.len() != b.len() {
        return Err(RvmError::DimensionMismatch(a.len(), b.len()));
    }
    Ok(rbf_unchecked(a, b, r))
}

pub(crate) fn rbf_unchecked(a: &[f64], b: &[f64], r: f64) -> f64 {
    let mut d2 = 0.0;
    for (x, y) in a.iter().zip(b.iter()) {
        let d = x - y;
        d2 += d * d;
    }
    (-d2 / (r * r)).exp()
}

/// Design matrix over the training inputs: N rows, N+1 columns, a leading
/// all-ones bias column followed by one kernel column per training sample.
pub fn design_matrix(xs: &[Vec<f64>], r: f64) -> DMatrix<f64> {
    let n = xs.len();
    let mut phi = DMatrix::zeros(n, n + 1);
    for i in 0..n {
        phi[(i, 0)] = 1.0;
    }
    for i in 0..n {
        for j in i..n {
            let k = rbf_unchecked(&xs[i], &xs[j], r);
            phi[(i, j + 1)] = k;
            phi[(j, i + 1)] = k;
        }
    }
    phi
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn identical_inputs_give_one() {
        let x = vec![0.3, 0.7, 0.1];
        assert_eq!(rbf_kernel(&x, &x, 0.5).unwrap(), 1.0);
    }

    #[test]
    fn distance_equal_to_bandwidth_gives_inverse_e() {
        let a = vec![0.0];
        let b = vec![0.25];
        let k = rbf_kernel(&a, &b, 0.25).unwrap();
        assert!((k - (-1.0f64).exp()).abs() < 1e-12);
        assert!((k - 0.367879441).abs() < 1e-8);
    }

    #[test]
    fn symmetric_over_random_pairs() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..1000 {
            let a: Vec<f64> = (0..5).map(|_| rng.gen_range(-2.0..2.0)).collect();
            let b: Vec<f64> = (0..5).map(|_| rng.gen_range(-2.0..2.0)).collect();
            let r = rng.gen_range(0.05..5.0);
            assert_eq!(rbf_kernel(&a, &b, r).unwrap(), rbf_kernel(&b, &a, r).unwrap());
        }
    }

    #[test]
    fn dimension_mismatch_rejected() {
        assert!(matches!(
            rbf_kernel(&[0.0], &[0.0, 1.0], 1.0),
            Err(RvmError::DimensionMismatch(1, 2))
        ));
    }

    #[test]
    fn single_sample_design_matrix() {
        let phi = design_matrix(&[vec![0.4]], 1.0);
        assert_eq!(phi.nrows(), 1);
        assert_eq!(phi.ncols(), 2);
        assert_eq!(phi[(0, 0)], 1.0);
        assert_eq!(phi[(0, 1)], 1.0);
    }

    #[test]
    fn duplicate_samples_give_all_ones() {
        let phi = design_matrix(&[vec![0.2, 0.9], vec![0.2, 0.9]], 0.7);
        for i in 0..2 {
            for j in 0..3 {
                assert_eq!(phi[(i, j)], 1.0);
            }
        }
    }

    #[test]
    fn kernel_block_symmetric_with_unit_diagonal() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let xs: Vec<Vec<f64>> = (0..10)
            .map(|_| (0..4).map(|_| rng.gen_range(0.0..1.0)).collect())
            .collect();
        let phi = design_matrix(&xs, 0.8);
        for i in 0..10 {
            assert_eq!(phi[(i, i + 1)], 1.0);
            for j in 0..10 {
                assert_eq!(phi[(i, j + 1)], phi[(j, i + 1)]);
            }
        }
    }
}
