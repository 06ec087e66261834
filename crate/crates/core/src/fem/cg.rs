//! Preconditioned conjugate gradient for symmetric positive definite operators.

use nalgebra::DVector;

use crate::error::{Error, Result};

/// Operator driven by [`pcg`].
///
/// `accept_step` is called after every iterate update `x += alpha * p` with
/// the `p` most recently passed to `apply`; operators that produce auxiliary
/// fields linear in their input can accumulate them there.
pub trait CgOperator {
    fn apply(&mut self, p: &DVector<f64>) -> Result<DVector<f64>>;

    fn accept_step(&mut self, _alpha: f64) {}
}

/// Adapter turning a closure into a [`CgOperator`].
pub struct FnOperator<F>(pub F);

impl<F> CgOperator for FnOperator<F>
where
    F: FnMut(&DVector<f64>) -> Result<DVector<f64>>,
{
    fn apply(&mut self, p: &DVector<f64>) -> Result<DVector<f64>> {
        (self.0)(p)
    }
}

#[derive(Debug, Clone)]
pub struct CgOutcome {
    pub x: DVector<f64>,
    pub iterations: usize,
    pub converged: bool,
    /// Final preconditioned residual norm `sqrt(r^T P r)`.
    pub residual_norm: f64,
}

/// Solve `A x = b` from `x0 = 0`. Stops when the preconditioned residual
/// norm drops below `rel_tol` times its initial value. Hitting `max_iter`
/// returns `converged = false`; a non-positive curvature `p^T A p <= 0` is
/// an error.
pub fn pcg<O, P>(
    op: &mut O,
    prec: P,
    b: &DVector<f64>,
    rel_tol: f64,
    max_iter: usize,
) -> Result<CgOutcome>
where
    O: CgOperator + ?Sized,
    P: Fn(&DVector<f64>) -> DVector<f64>,
{
    let n = b.len();
    let mut x = DVector::zeros(n);
    let mut r = b.clone();
    let mut z = prec(&r);
    let mut rz = r.dot(&z);
    if rz < 0.0 {
        return Err(Error::NotPositiveDefinite);
    }
    let r0 = rz.sqrt();
    if r0 == 0.0 {
        return Ok(CgOutcome {
            x,
            iterations: 0,
            converged: true,
            residual_norm: 0.0,
        });
    }
    let target = rel_tol * r0;
    let mut p = z.clone();
    let mut it = 0;
    while it < max_iter {
        let ap = op.apply(&p)?;
        it += 1;
        let pap = p.dot(&ap);
        if pap <= 0.0 || !pap.is_finite() {
            return Err(Error::NegativeCurvature {
                iteration: it,
                curvature: pap,
            });
        }
        let alpha = rz / pap;
        x.axpy(alpha, &p, 1.0);
        op.accept_step(alpha);
        r.axpy(-alpha, &ap, 1.0);
        z = prec(&r);
        let rz_new = r.dot(&z);
        let res = rz_new.max(0.0).sqrt();
        if res <= target {
            return Ok(CgOutcome {
                x,
                iterations: it,
                converged: true,
                residual_norm: res,
            });
        }
        let beta = rz_new / rz;
        rz = rz_new;
        p = &z + beta * &p;
    }
    Ok(CgOutcome {
        x,
        iterations: it,
        converged: false,
        residual_norm: rz.max(0.0).sqrt(),
    })
}
