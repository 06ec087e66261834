//! Encoding weights: `N_w` blocks of `N_s` reals, stored row-major.

use nalgebra::DVector;

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct EncodingWeights {
    n_w: usize,
    n_s: usize,
    data: Vec<f64>,
}

impl EncodingWeights {
    pub fn new(n_w: usize, n_s: usize, data: Vec<f64>) -> Result<Self> {
        if n_w == 0 || n_s == 0 {
            return Err(Error::InvalidArgument("weights need N_w >= 1 and N_s >= 1".into()));
        }
        if data.len() != n_w * n_s {
            return Err(Error::DimensionMismatch {
                what: "encoding weights",
                expected: n_w * n_s,
                got: data.len(),
            });
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument("weights must be finite".into()));
        }
        Ok(Self { n_w, n_s, data })
    }

    pub fn from_blocks(blocks: &[Vec<f64>]) -> Result<Self> {
        let n_s = blocks.first().map_or(0, Vec::len);
        if blocks.iter().any(|b| b.len() != n_s) {
            return Err(Error::InvalidArgument("weight blocks differ in length".into()));
        }
        Self::new(blocks.len(), n_s, blocks.concat())
    }

    /// `N_s` blocks `e_1, ..., e_{N_s}`: every source on its own.
    pub fn identity(n_s: usize) -> Self {
        let mut data = vec![0.0; n_s * n_s];
        for i in 0..n_s {
            data[i * n_s + i] = 1.0;
        }
        Self { n_w: n_s, n_s, data }
    }

    pub fn n_w(&self) -> usize {
        self.n_w
    }

    pub fn n_s(&self) -> usize {
        self.n_s
    }

    pub fn block(&self, i: usize) -> &[f64] {
        &self.data[i * self.n_s..(i + 1) * self.n_s]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn to_vector(&self) -> DVector<f64> {
        DVector::from_column_slice(&self.data)
    }

    pub fn with_data(&self, x: &DVector<f64>) -> Result<Self> {
        Self::new(self.n_w, self.n_s, x.as_slice().to_vec())
    }

    pub fn block_norms(&self) -> Vec<f64> {
        (0..self.n_w)
            .map(|i| self.block(i).iter().map(|v| v * v).sum::<f64>().sqrt())
            .collect()
    }

    /// `max_i | |w^i| - 1 |`.
    pub fn sphere_violation(&self) -> f64 {
        self.block_norms().into_iter().map(|n| (n - 1.0).abs()).fold(0.0, f64::max)
    }

    /// Copy with block `i` negated.
    pub fn negate_block(&self, i: usize) -> Self {
        let mut out = self.clone();
        out.data[i * self.n_s..(i + 1) * self.n_s].iter_mut().for_each(|v| *v = -*v);
        out
    }

    /// Copy with every nonzero block scaled to unit norm.
    pub fn renormalized(&self) -> Self {
        let mut out = self.clone();
        for (i, n) in self.block_norms().into_iter().enumerate() {
            if n > 0.0 {
                out.data[i * self.n_s..(i + 1) * self.n_s].iter_mut().for_each(|v| *v /= n);
            }
        }
        out
    }

    /// Penalty `lambda / (2 N_w) sum_i (|w^i|^2 - 1)^2`.
    pub fn penalty(&self, lambda: f64) -> f64 {
        let s: f64 = self.block_norms().iter().map(|n| (n * n - 1.0).powi(2)).sum();
        lambda / (2.0 * self.n_w as f64) * s
    }

    /// Gradient of [`EncodingWeights::penalty`], flattened like the weights.
    pub fn penalty_gradient(&self, lambda: f64) -> DVector<f64> {
        let mut g = DVector::zeros(self.data.len());
        let c = 2.0 * lambda / self.n_w as f64;
        for (i, n) in self.block_norms().into_iter().enumerate() {
            for j in 0..self.n_s {
                let k = i * self.n_s + j;
                g[k] = c * (n * n - 1.0) * self.data[k];
            }
        }
        g
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn penalty_vanishes_on_sphere() {
        let w = EncodingWeights::from_blocks(&[vec![0.6, 0.8], vec![0.0, -1.0]]).unwrap();
        assert_eq!(w.penalty(1e3), 0.0);
        assert!(w.penalty_gradient(1e3).iter().all(|&g| g == 0.0));
        assert!(w.sphere_violation() < 1e-15);
    }

    #[test]
    fn penalty_gradient_matches_differences() {
        let w = EncodingWeights::new(2, 3, vec![0.3, -0.4, 1.1, 0.2, 0.5, -0.7]).unwrap();
        let g = w.penalty_gradient(1e3);
        let h = 1e-6;
        for k in 0..6 {
            let mut xp = w.to_vector();
            let mut xm = w.to_vector();
            xp[k] += h;
            xm[k] -= h;
            let fd = (w.with_data(&xp).unwrap().penalty(1e3) - w.with_data(&xm).unwrap().penalty(1e3)) / (2.0 * h);
            assert!((fd - g[k]).abs() <= 1e-7 * g.amax(), "{k}: {fd} vs {}", g[k]);
        }
    }

    #[test]
    fn shape_checks() {
        assert!(EncodingWeights::new(2, 2, vec![1.0; 3]).is_err());
        assert!(EncodingWeights::new(0, 2, vec![]).is_err());
        assert!(EncodingWeights::from_blocks(&[vec![1.0], vec![1.0, 2.0]]).is_err());
        let id = EncodingWeights::identity(3);
        assert_eq!(id.block(1), &[0.0, 1.0, 0.0]);
        let r = EncodingWeights::from_blocks(&[vec![3.0, 4.0]]).unwrap().renormalized();
        assert_eq!(r.block(0), &[0.6, 0.8]);
        assert_eq!(r.negate_block(0).block(0), &[-0.6, -0.8]);
    }
}
