//! Compressed sparse row storage with a pattern fixed by element connectivity.

use nalgebra::{DMatrix, DVector};

use super::space::FemSpace;

#[derive(Debug, Clone, PartialEq)]
pub struct CsrMatrix {
    n: usize,
    row_ptr: Vec<usize>,
    col_idx: Vec<usize>,
    values: Vec<f64>,
}

impl CsrMatrix {
    /// Zero matrix whose pattern couples every pair of dofs sharing an element.
    pub fn from_space_pattern(space: &FemSpace) -> Self {
        let n = space.n_dofs();
        let mut rows: Vec<Vec<usize>> = vec![Vec::new(); n];
        for t in 0..space.n_elements() {
            let dofs = space.element_dofs(t);
            for &a in dofs {
                rows[a].extend_from_slice(dofs);
            }
        }
        let mut row_ptr = Vec::with_capacity(n + 1);
        let mut col_idx = Vec::new();
        row_ptr.push(0);
        for r in rows.iter_mut() {
            r.sort_unstable();
            r.dedup();
            col_idx.extend_from_slice(r);
            row_ptr.push(col_idx.len());
        }
        let nnz = col_idx.len();
        Self {
            n,
            row_ptr,
            col_idx,
            values: vec![0.0; nnz],
        }
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    /// Position of `(row, col)` in the value array, if it is in the pattern.
    pub fn slot(&self, row: usize, col: usize) -> Option<usize> {
        let cols = &self.col_idx[self.row_ptr[row]..self.row_ptr[row + 1]];
        cols.binary_search(&col).ok().map(|k| self.row_ptr[row] + k)
    }

    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.slot(row, col).map_or(0.0, |k| self.values[k])
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn row(&self, r: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let range = self.row_ptr[r]..self.row_ptr[r + 1];
        self.col_idx[range.clone()]
            .iter()
            .copied()
            .zip(self.values[range].iter().copied())
    }

    /// Largest `|i - j|` over the pattern.
    pub fn bandwidth(&self) -> usize {
        (0..self.n)
            .flat_map(|r| self.row(r).map(move |(c, _)| r.abs_diff(c)))
            .max()
            .unwrap_or(0)
    }

    pub fn mul_vec(&self, x: &DVector<f64>) -> DVector<f64> {
        assert_eq!(x.len(), self.n);
        DVector::from_iterator(
            self.n,
            (0..self.n).map(|r| self.row(r).map(|(c, v)| v * x[c]).sum::<f64>()),
        )
    }

    /// `self + alpha * other`; both must share the same pattern.
    pub fn add_scaled(&self, alpha: f64, other: &CsrMatrix) -> CsrMatrix {
        assert!(self.row_ptr == other.row_ptr && self.col_idx == other.col_idx);
        let mut out = self.clone();
        for (a, b) in out.values.iter_mut().zip(&other.values) {
            *a += alpha * b;
        }
        out
    }

    pub fn scaled(&self, alpha: f64) -> CsrMatrix {
        let mut out = self.clone();
        out.values.iter_mut().for_each(|v| *v *= alpha);
        out
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        let mut d = DMatrix::zeros(self.n, self.n);
        for r in 0..self.n {
            for (c, v) in self.row(r) {
                d[(r, c)] = v;
            }
        }
        d
    }

    /// Largest `|A_ij - A_ji|`.
    pub fn asymmetry(&self) -> f64 {
        (0..self.n)
            .flat_map(|r| self.row(r).map(move |(c, v)| (r, c, v)))
            .map(|(r, c, v)| (v - self.get(c, r)).abs())
            .fold(0.0, f64::max)
    }
}

/// Local-to-CSR slot map for fast repeated assembly on a fixed pattern.
#[derive(Debug, Clone)]
pub struct SlotMap {
    n_local: usize,
    slots: Vec<usize>,
}

impl SlotMap {
    pub fn new(space: &FemSpace, pattern: &CsrMatrix) -> Self {
        let nl = space.n_local();
        let mut slots = Vec::with_capacity(space.n_elements() * nl * nl);
        for t in 0..space.n_elements() {
            let dofs = space.element_dofs(t);
            for &a in dofs {
                for &b in dofs {
                    slots.push(pattern.slot(a, b).expect("dof pair in pattern"));
                }
            }
        }
        Self { n_local: nl, slots }
    }

    pub fn element(&self, t: usize) -> &[usize] {
        let k = self.n_local * self.n_local;
        &self.slots[t * k..(t + 1) * k]
    }
}
