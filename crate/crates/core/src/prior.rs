//! Gaussian prior `N(m0, C0)` with `C0^{-1} = Y + eta Y^2`, `Y = -gamma Lap + beta I`.
//!
//! In coefficient space the Cameron-Martin matrix is
//! `R = A_Y + eta A_Y M^{-1} A_Y` with `A_Y = gamma K + beta M`, formed
//! densely and Cholesky-factorized once.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use rand::Rng;

use crate::error::{Error, Result};
use crate::fem::{Discretization, MassInverseSampler};

#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PriorSpec {
    pub gamma: f64,
    pub beta: f64,
    pub eta: f64,
    /// Constant prior mean.
    pub mean: f64,
}

impl Default for PriorSpec {
    fn default() -> Self {
        Self {
            gamma: 1e-3,
            beta: 1e-4,
            eta: 1e-2,
            mean: 1.0,
        }
    }
}

impl PriorSpec {
    /// `beta` must be positive; `gamma` and `eta` may vanish (degenerate
    /// limits used in checks) but not be negative.
    pub fn validate(&self) -> Result<()> {
        let ok = self.beta > 0.0 && self.gamma >= 0.0 && self.eta >= 0.0;
        if !ok || !self.mean.is_finite() || !self.gamma.is_finite() || !self.eta.is_finite() {
            return Err(Error::InvalidArgument(format!(
                "prior needs beta > 0 and gamma, eta >= 0 (got gamma={}, beta={}, eta={})",
                self.gamma, self.beta, self.eta
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct Prior {
    pub spec: PriorSpec,
    pub m0: DVector<f64>,
    /// Parameter-space mass matrix.
    pub mass: DMatrix<f64>,
    pub a_y: DMatrix<f64>,
    pub r: DMatrix<f64>,
    r_chol: Cholesky<f64, Dyn>,
    sampler: MassInverseSampler,
}

impl Prior {
    pub fn new(spec: PriorSpec, disc: &Discretization) -> Result<Self> {
        spec.validate()?;
        let mass = disc.param_mass.to_dense();
        let stiff = disc.param_stiffness.to_dense();
        let a_y = &stiff * spec.gamma + &mass * spec.beta;
        let mass_chol = Cholesky::new(mass.clone()).ok_or(Error::NotPositiveDefinite)?;
        let minv_ay = mass_chol.solve(&a_y);
        let mut r = &a_y + (&a_y * minv_ay) * spec.eta;
        // exact symmetry so that x^T R y = y^T R x bitwise up to summation order
        r = (&r + r.transpose()) * 0.5;
        let r_chol = Cholesky::new(r.clone()).ok_or(Error::NotPositiveDefinite)?;
        let sampler = MassInverseSampler::from_dense(mass.clone())?;
        Ok(Self {
            spec,
            m0: DVector::from_element(disc.n_param(), spec.mean),
            mass,
            a_y,
            r,
            r_chol,
            sampler,
        })
    }

    pub fn dim(&self) -> usize {
        self.m0.len()
    }

    /// `<x, y>_E = x^T R y`.
    pub fn cm_inner(&self, x: &DVector<f64>, y: &DVector<f64>) -> f64 {
        x.dot(&(&self.r * y))
    }

    pub fn apply_r(&self, x: &DVector<f64>) -> DVector<f64> {
        &self.r * x
    }

    /// Prior covariance action: solves `R x = b`.
    pub fn apply_c0(&self, b: &DVector<f64>) -> DVector<f64> {
        self.r_chol.solve(b)
    }

    pub fn apply_mass(&self, x: &DVector<f64>) -> DVector<f64> {
        &self.mass * x
    }

    /// `(1/2 |m - m0|_E^2, R (m - m0))`. The Hessian action is [`Prior::apply_r`].
    pub fn reg_cost_grad(&self, m: &DVector<f64>) -> (f64, DVector<f64>) {
        let d = m - &self.m0;
        let g = &self.r * &d;
        (0.5 * d.dot(&g), g)
    }

    /// Dense `R^{-1} M` trace, the posterior trace with no data.
    pub fn prior_trace(&self) -> f64 {
        self.r_chol.solve(&self.mass).trace()
    }

    /// `n_tr` independent draws `z_k ~ N(0, M^{-1})`.
    pub fn sample_trace_vectors<R: Rng + ?Sized>(&self, n_tr: usize, rng: &mut R) -> Result<Vec<DVector<f64>>> {
        if n_tr == 0 {
            return Err(Error::InvalidArgument("need at least one trace vector".into()));
        }
        Ok((0..n_tr).map(|_| self.sampler.sample(rng)).collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn disc() -> Discretization {
        Discretization::new(4).unwrap()
    }

    fn rand_vec(n: usize, seed: u64) -> DVector<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        DVector::from_fn(n, |_, _| rng.random_range(-1.0..1.0))
    }

    #[test]
    fn collapses_to_scaled_mass() {
        let d = disc();
        let spec = PriorSpec { gamma: 0.0, eta: 0.0, beta: 0.3, mean: 0.0 };
        let p = Prior::new(spec, &d).unwrap();
        let x = rand_vec(p.dim(), 1);
        let expect = 0.3 * x.dot(&(&p.mass * &x));
        assert!((p.cm_inner(&x, &x) - expect).abs() <= 1e-12 * expect);
    }

    #[test]
    fn constants_see_only_the_mass_terms() {
        let p = Prior::new(PriorSpec::default(), &disc()).unwrap();
        let c = 1.7;
        let x = DVector::from_element(p.dim(), c);
        let (b, e) = (p.spec.beta, p.spec.eta);
        let expect = c * c * (b + e * b * b);
        assert!((p.cm_inner(&x, &x) - expect).abs() <= 1e-10 * expect);
    }

    #[test]
    fn rejects_bad_parameters() {
        let d = disc();
        for spec in [
            PriorSpec { beta: 0.0, ..Default::default() },
            PriorSpec { gamma: -1.0, ..Default::default() },
            PriorSpec { eta: f64::NAN, ..Default::default() },
        ] {
            assert!(Prior::new(spec, &d).is_err());
        }
    }

    #[test]
    fn inverse_pair_and_positivity() {
        let p = Prior::new(PriorSpec::default(), &disc()).unwrap();
        for s in 0..20 {
            let x = rand_vec(p.dim(), 100 + s);
            let y = rand_vec(p.dim(), 200 + s);
            assert!(p.cm_inner(&x, &x) > 0.0);
            let sym = (p.cm_inner(&x, &y) - p.cm_inner(&y, &x)).abs();
            assert!(sym <= 1e-12 * p.cm_inner(&x, &x).max(p.cm_inner(&y, &y)));
            let back = p.apply_c0(&p.apply_r(&x));
            assert!((back - &x).norm() <= 1e-8 * x.norm());
            assert!(x.dot(&p.apply_c0(&x)) > 0.0);
        }
    }

    #[test]
    fn regularization_gradient_matches_differences() {
        let p = Prior::new(PriorSpec::default(), &disc()).unwrap();
        let m = &p.m0 + rand_vec(p.dim(), 5);
        let dir = rand_vec(p.dim(), 6);
        let (c0, g) = p.reg_cost_grad(&p.m0);
        assert_eq!((c0, g.norm()), (0.0, 0.0));
        let h = 1e-4;
        let fd = (p.reg_cost_grad(&(&m + &dir * h)).0 - p.reg_cost_grad(&(&m - &dir * h)).0) / (2.0 * h);
        let an = p.reg_cost_grad(&m).1.dot(&dir);
        assert!((fd - an).abs() <= 1e-7 * an.abs());
        let t = 2.5;
        let c1 = p.reg_cost_grad(&(&p.m0 + &dir)).0;
        let ct = p.reg_cost_grad(&(&p.m0 + &dir * t)).0;
        assert!((ct - t * t * c1).abs() <= 1e-12 * ct);
    }

    #[test]
    fn trace_vectors_are_reproducible() {
        let p = Prior::new(PriorSpec::default(), &disc()).unwrap();
        let mut a = ChaCha8Rng::seed_from_u64(9);
        let mut b = ChaCha8Rng::seed_from_u64(9);
        assert_eq!(p.sample_trace_vectors(3, &mut a).unwrap(), p.sample_trace_vectors(3, &mut b).unwrap());
        assert!(p.sample_trace_vectors(0, &mut a).is_err());
    }

    #[test]
    fn mass_norm_of_trace_vectors_estimates_dimension() {
        let p = Prior::new(PriorSpec::default(), &disc()).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let n = 2000;
        let z = p.sample_trace_vectors(n, &mut rng).unwrap();
        let mean = z.iter().map(|z| z.dot(&p.apply_mass(z))).sum::<f64>() / n as f64;
        let dim = p.dim() as f64;
        assert!((mean - dim).abs() <= 0.05 * dim, "{mean} vs {dim}");
    }

    #[test]
    fn prior_only_estimator_converges_to_exact_trace() {
        let p = Prior::new(PriorSpec::default(), &disc()).unwrap();
        let exact = p.prior_trace();
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let z = p.sample_trace_vectors(500, &mut rng).unwrap();
        let est = z.iter().map(|z| p.apply_c0(&p.apply_mass(z)).dot(&p.apply_mass(z))).sum::<f64>() / 500.0;
        assert!((est - exact).abs() <= 0.1 * exact, "{est} vs {exact}");
    }
}
