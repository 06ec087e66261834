//! Gaussian draws with covariance `M^{-1}`.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use rand::Rng;
use rand_distr::StandardNormal;

use super::sparse::CsrMatrix;
use crate::error::{Error, Result};

/// Samples `z = L^{-T} x` with `M = L L^T` and `x ~ N(0, I)`, so that
/// `Cov(z) = M^{-1}`.
#[derive(Debug, Clone)]
pub struct MassInverseSampler {
    chol: Cholesky<f64, Dyn>,
}

impl MassInverseSampler {
    pub fn new(m: &CsrMatrix) -> Result<Self> {
        Self::from_dense(m.to_dense())
    }

    pub fn from_dense(m: DMatrix<f64>) -> Result<Self> {
        let chol = Cholesky::new(m).ok_or(Error::NotPositiveDefinite)?;
        Ok(Self { chol })
    }

    pub fn dim(&self) -> usize {
        self.chol.l_dirty().nrows()
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> DVector<f64> {
        let n = self.dim();
        let x = DVector::from_iterator(n, (0..n).map(|_| rng.sample::<f64, _>(StandardNormal)));
        self.chol
            .l()
            .transpose()
            .solve_upper_triangular(&x)
            .expect("Cholesky factor has a positive diagonal")
    }
}

/// One draw from `N(0, M^{-1})`.
pub fn sample_mass_inverse_gaussian<R: Rng + ?Sized>(m: &CsrMatrix, rng: &mut R) -> Result<DVector<f64>> {
    Ok(MassInverseSampler::new(m)?.sample(rng))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn identity_gives_unit_variance() {
        let s = MassInverseSampler::from_dense(DMatrix::identity(3, 3)).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let n = 10_000;
        let mut var = DVector::<f64>::zeros(3);
        for _ in 0..n {
            let z = s.sample(&mut rng);
            var += z.component_mul(&z);
        }
        var /= n as f64;
        for v in var.iter() {
            assert!((v - 1.0).abs() < 0.05, "variance {v}");
        }
    }

    #[test]
    fn covariance_matches_inverse() {
        let m = DMatrix::from_row_slice(3, 3, &[2.0, 0.5, 0.0, 0.5, 1.5, 0.3, 0.0, 0.3, 1.0]);
        let cov = m.clone().try_inverse().unwrap();
        let s = MassInverseSampler::from_dense(m).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let n = 100_000;
        let mut acc = DMatrix::<f64>::zeros(3, 3);
        for _ in 0..n {
            let z = s.sample(&mut rng);
            acc += &z * z.transpose();
        }
        acc /= n as f64;
        for i in 0..3 {
            for j in 0..3 {
                // Var(z_i z_j) = C_ii C_jj + C_ij^2 for a Gaussian
                let se = ((cov[(i, i)] * cov[(j, j)] + cov[(i, j)].powi(2)) / n as f64).sqrt();
                assert!((acc[(i, j)] - cov[(i, j)]).abs() <= 3.0 * se, "({i},{j})");
            }
        }
    }

    #[test]
    fn deterministic_per_seed() {
        let s = MassInverseSampler::from_dense(DMatrix::identity(4, 4) * 2.0).unwrap();
        let a: Vec<_> = {
            let mut r = ChaCha8Rng::seed_from_u64(3);
            (0..5).map(|_| s.sample(&mut r)).collect()
        };
        let b: Vec<_> = {
            let mut r = ChaCha8Rng::seed_from_u64(3);
            (0..5).map(|_| s.sample(&mut r)).collect()
        };
        assert_eq!(a, b);
    }

    #[test]
    fn rejects_indefinite() {
        let m = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 2.0, 1.0]);
        assert!(MassInverseSampler::from_dense(m).is_err());
    }
}
