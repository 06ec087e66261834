//! Banded LU factorization with partial pivoting.
//!
//! The structured-mesh numbering keeps every operator inside a band of
//! half-width `O(n)`, so a band solver is much cheaper than a dense one and
//! still handles the indefinite Helmholtz operator (row pivoting is confined
//! to the lower band; the upper band grows to `kl + ku`).

use nalgebra::DVector;

use super::sparse::CsrMatrix;
use crate::error::{Error, Result};

#[derive(Debug, Clone)]
pub struct BandedLu {
    n: usize,
    kl: usize,
    /// Row width: columns `i - kl ..= i + kl + ku` of row `i`.
    width: usize,
    data: Vec<f64>,
    /// Multipliers of column `k` at `k * kl ..`, contiguous for the solve.
    lower: Vec<f64>,
    pivots: Vec<usize>,
}

impl BandedLu {
    pub fn factorize(a: &CsrMatrix) -> Result<Self> {
        let n = a.dim();
        let bw = a.bandwidth();
        let (kl, ku) = (bw, bw);
        let width = 2 * kl + ku + 1;
        let mut data = vec![0.0; n * width];
        let mut amax = 0.0f64;
        for r in 0..n {
            for (c, v) in a.row(r) {
                data[r * width + (c + kl - r)] = v;
                amax = amax.max(v.abs());
            }
        }
        let idx = |r: usize, c: usize| r * width + (c + kl - r);
        // pivots at roundoff level relative to the matrix scale count as zero
        let tiny = 8.0 * f64::EPSILON * amax * n as f64;
        let mut pivots = vec![0; n];
        for k in 0..n {
            let last = (k + kl).min(n - 1);
            let mut p = k;
            let mut best = data[idx(k, k)].abs();
            for r in k + 1..=last {
                let v = data[idx(r, k)].abs();
                if v > best {
                    best = v;
                    p = r;
                }
            }
            if best <= tiny || !best.is_finite() {
                return Err(Error::SingularMatrix { index: k });
            }
            pivots[k] = p;
            let cend = (k + kl + ku).min(n - 1);
            if p != k {
                for c in k..=cend {
                    data.swap(idx(k, c), idx(p, c));
                }
            }
            let piv = data[idx(k, k)];
            for r in k + 1..=last {
                let l = data[idx(r, k)] / piv;
                if l == 0.0 {
                    continue;
                }
                data[idx(r, k)] = l;
                for c in k + 1..=cend {
                    data[idx(r, c)] -= l * data[idx(k, c)];
                }
            }
        }
        let mut lower = vec![0.0; n * kl];
        for k in 0..n {
            for r in k + 1..=(k + kl).min(n - 1) {
                lower[k * kl + (r - k - 1)] = data[idx(r, k)];
            }
        }
        Ok(Self {
            n,
            kl,
            width,
            data,
            lower,
            pivots,
        })
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn solve(&self, b: &DVector<f64>) -> DVector<f64> {
        assert_eq!(b.len(), self.n);
        let (n, kl, w) = (self.n, self.kl, self.width);
        let mut x = b.as_slice().to_vec();
        for k in 0..n {
            let p = self.pivots[k];
            if p != k {
                x.swap(k, p);
            }
            let xk = x[k];
            if xk != 0.0 {
                let end = (k + kl).min(n - 1);
                let l = &self.lower[k * kl..k * kl + (end - k)];
                for (xr, lr) in x[k + 1..=end].iter_mut().zip(l) {
                    *xr -= lr * xk;
                }
            }
        }
        let ku_total = w - kl - 1;
        for k in (0..n).rev() {
            let end = (k + ku_total).min(n - 1);
            let row = &self.data[k * w + kl..k * w + kl + (end - k) + 1];
            let s: f64 = row[1..].iter().zip(&x[k + 1..=end]).map(|(a, b)| a * b).sum();
            x[k] = (x[k] - s) / row[0];
        }
        DVector::from_vec(x)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fem::assembly::{assemble_mass, assemble_stiffness};
    use crate::fem::mesh::Mesh;
    use crate::fem::space::FemSpace;
    use std::sync::Arc;

    fn space(n: usize, degree: usize) -> FemSpace {
        FemSpace::new(Arc::new(Mesh::new(n).unwrap()), degree).unwrap()
    }

    #[test]
    fn identity_returns_rhs() {
        let s = space(3, 1);
        let mut a = CsrMatrix::from_space_pattern(&s);
        for r in 0..a.dim() {
            let k = a.slot(r, r).unwrap();
            a.values_mut()[k] = 1.0;
        }
        let lu = BandedLu::factorize(&a).unwrap();
        let b = DVector::from_fn(a.dim(), |i, _| (i as f64).sin());
        assert_eq!(lu.solve(&b), b);
    }

    #[test]
    fn indefinite_matches_dense_lu() {
        let s = space(4, 2);
        let a = assemble_stiffness(&s).add_scaled(-30.0, &assemble_mass(&s));
        let b = DVector::from_fn(a.dim(), |i, _| ((i * 7 % 11) as f64) - 5.0);
        let x = BandedLu::factorize(&a).unwrap().solve(&b);
        let dense = a.to_dense().lu().solve(&b).unwrap();
        assert!((&x - &dense).norm() <= 1e-10 * dense.norm());
        assert!((a.mul_vec(&x) - &b).norm() <= 1e-10 * b.norm());
    }

    #[test]
    fn neumann_laplacian_is_singular() {
        let s = space(2, 1);
        let err = BandedLu::factorize(&assemble_stiffness(&s)).unwrap_err();
        assert!(matches!(err, Error::SingularMatrix { .. }));
    }
}
