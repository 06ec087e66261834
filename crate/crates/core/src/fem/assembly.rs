//! Finite-element assembly: mass, stiffness, coefficient-weighted mass,
//! product projection, point loads and point observation.

use nalgebra::DVector;

use super::sparse::{CsrMatrix, SlotMap};
use super::space::{check_len, reference_basis, FemSpace};
use crate::error::{Error, Result};

/// `M_ij = (phi_i, phi_j)_{L2}`.
pub fn assemble_mass(space: &FemSpace) -> CsrMatrix {
    let mut m = CsrMatrix::from_space_pattern(space);
    let slots = SlotMap::new(space, &m);
    let nl = space.n_local();
    let vals = m.values_mut();
    for t in 0..space.n_elements() {
        let area = space.geometry[t].area;
        let s = slots.element(t);
        for (q, phi) in space.quad.iter().zip(&space.basis_at_quad) {
            let w = q.weight * area;
            for a in 0..nl {
                for b in 0..nl {
                    vals[s[a * nl + b]] += w * (phi[a] * phi[b]);
                }
            }
        }
    }
    m
}

/// `K_ij = (grad phi_i, grad phi_j)_{L2}`; natural (Neumann) boundary.
pub fn assemble_stiffness(space: &FemSpace) -> CsrMatrix {
    let mut k = CsrMatrix::from_space_pattern(space);
    let slots = SlotMap::new(space, &k);
    let nl = space.n_local();
    let vals = k.values_mut();
    for t in 0..space.n_elements() {
        let area = space.geometry[t].area;
        let s = slots.element(t);
        for q in &space.quad {
            let g = space.basis_gradients(t, q.bary);
            let w = q.weight * area;
            for a in 0..nl {
                for b in 0..nl {
                    vals[s[a * nl + b]] += w * (g[a][0] * g[b][0] + g[a][1] * g[b][1]);
                }
            }
        }
    }
    k
}

/// Precomputed machinery for forms that couple a P1 coefficient with the
/// P2 state space on the same mesh.
#[derive(Debug, Clone)]
pub struct MixedForms {
    pattern: CsrMatrix,
    slots: SlotMap,
    n_param: usize,
    n_state: usize,
    /// P1 basis at the state space quadrature points.
    param_basis: Vec<Vec<f64>>,
}

impl MixedForms {
    pub fn new(param: &FemSpace, state: &FemSpace) -> Result<Self> {
        if !param.same_mesh(state) || param.degree != 1 || state.degree != 2 {
            return Err(Error::InvalidArgument(
                "mixed forms need P1 parameters and a P2 state on one mesh".into(),
            ));
        }
        let pattern = CsrMatrix::from_space_pattern(state);
        let slots = SlotMap::new(state, &pattern);
        let param_basis = state.quad.iter().map(|q| reference_basis(1, q.bary)).collect();
        Ok(Self {
            pattern,
            slots,
            n_param: param.n_dofs(),
            n_state: state.n_dofs(),
            param_basis,
        })
    }

    /// `W(m)_ij = (m psi_i, psi_j)` for a P1 coefficient `m`.
    pub fn weighted_mass(
        &self,
        param: &FemSpace,
        state: &FemSpace,
        m: &DVector<f64>,
    ) -> Result<CsrMatrix> {
        check_len("parameter field", self.n_param, m.len())?;
        let mut w = self.pattern.clone();
        let nl = state.n_local();
        let vals = w.values_mut();
        for t in 0..state.n_elements() {
            let area = state.geometry[t].area;
            let pd = param.element_dofs(t);
            let s = self.slots.element(t);
            for ((q, psi), phi) in state.quad.iter().zip(&state.basis_at_quad).zip(&self.param_basis) {
                let mq: f64 = (0..3).map(|k| m[pd[k]] * phi[k]).sum();
                let c = q.weight * area * mq;
                for a in 0..nl {
                    for b in 0..nl {
                        vals[s[a * nl + b]] += c * (psi[a] * psi[b]);
                    }
                }
            }
        }
        Ok(w)
    }

    /// `W(m) u` without forming `W(m)`.
    pub fn weighted_mass_apply(
        &self,
        param: &FemSpace,
        state: &FemSpace,
        m: &DVector<f64>,
        u: &DVector<f64>,
    ) -> DVector<f64> {
        debug_assert_eq!(m.len(), self.n_param);
        debug_assert_eq!(u.len(), self.n_state);
        let mut out = DVector::zeros(self.n_state);
        for t in 0..state.n_elements() {
            let area = state.geometry[t].area;
            let pd = param.element_dofs(t);
            let sd = state.element_dofs(t);
            let (m_loc, u_loc) = ([m[pd[0]], m[pd[1]], m[pd[2]]], local(u, sd));
            for ((q, psi), phi) in state.quad.iter().zip(&state.basis_at_quad).zip(&self.param_basis) {
                let mq = m_loc[0] * phi[0] + m_loc[1] * phi[1] + m_loc[2] * phi[2];
                let uq: f64 = (0..6).map(|k| u_loc[k] * psi[k]).sum();
                let c = q.weight * area * mq * uq;
                for a in 0..6 {
                    out[sd[a]] += c * psi[a];
                }
            }
        }
        out
    }

    /// `g_j = (u v, phi_j)` for state fields `u`, `v` and P1 test functions.
    pub fn product_project(
        &self,
        param: &FemSpace,
        state: &FemSpace,
        u: &DVector<f64>,
        v: &DVector<f64>,
    ) -> DVector<f64> {
        debug_assert_eq!(u.len(), self.n_state);
        debug_assert_eq!(v.len(), self.n_state);
        let mut out = DVector::zeros(self.n_param);
        for t in 0..state.n_elements() {
            let area = state.geometry[t].area;
            let pd = param.element_dofs(t);
            let sd = state.element_dofs(t);
            let (u_loc, v_loc) = (local(u, sd), local(v, sd));
            for ((q, psi), phi) in state.quad.iter().zip(&state.basis_at_quad).zip(&self.param_basis) {
                let mut uq = 0.0;
                let mut vq = 0.0;
                for k in 0..6 {
                    uq += u_loc[k] * psi[k];
                    vq += v_loc[k] * psi[k];
                }
                let c = q.weight * area * uq * vq;
                for a in 0..3 {
                    out[pd[a]] += c * phi[a];
                }
            }
        }
        out
    }
}

fn local(u: &DVector<f64>, dofs: &[usize]) -> [f64; 6] {
    let mut out = [0.0; 6];
    for (o, &d) in out.iter_mut().zip(dofs) {
        *o = u[d];
    }
    out
}

/// Discrete Dirac load: `f_i = phi_i(location)`.
pub fn point_source_vector(space: &FemSpace, location: [f64; 2]) -> Result<DVector<f64>> {
    let loc = space.mesh.locate(location)?;
    let vals = reference_basis(space.degree, loc.barycentric);
    let mut f = DVector::zeros(space.n_dofs());
    for (&d, v) in space.element_dofs(loc.triangle).iter().zip(vals) {
        f[d] += v;
    }
    Ok(f)
}

/// Point-evaluation observation operator `B`, stored row-sparse.
#[derive(Debug, Clone)]
pub struct Observation {
    n_dofs: usize,
    rows: Vec<Vec<(usize, f64)>>,
}

impl Observation {
    pub fn new(space: &FemSpace, receivers: &[[f64; 2]]) -> Result<Self> {
        let rows = receivers
            .iter()
            .map(|&p| {
                let loc = space.mesh.locate(p)?;
                let vals = reference_basis(space.degree, loc.barycentric);
                Ok(space
                    .element_dofs(loc.triangle)
                    .iter()
                    .copied()
                    .zip(vals)
                    .filter(|(_, v)| *v != 0.0)
                    .collect())
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            n_dofs: space.n_dofs(),
            rows,
        })
    }

    pub fn n_receivers(&self) -> usize {
        self.rows.len()
    }

    /// `B u`.
    pub fn apply(&self, u: &DVector<f64>) -> DVector<f64> {
        debug_assert_eq!(u.len(), self.n_dofs);
        DVector::from_iterator(
            self.rows.len(),
            self.rows.iter().map(|r| r.iter().map(|&(d, v)| v * u[d]).sum::<f64>()),
        )
    }

    /// `B^T d`.
    pub fn apply_transpose(&self, d: &DVector<f64>) -> DVector<f64> {
        debug_assert_eq!(d.len(), self.rows.len());
        let mut out = DVector::zeros(self.n_dofs);
        for (r, &dj) in self.rows.iter().zip(d.iter()) {
            for &(k, v) in r {
                out[k] += v * dj;
            }
        }
        out
    }
}

/// `(B u)_j = u(x_j)` for each receiver.
pub fn observe(space: &FemSpace, u: &DVector<f64>, receivers: &[[f64; 2]]) -> Result<DVector<f64>> {
    check_len("state field", space.n_dofs(), u.len())?;
    Ok(Observation::new(space, receivers)?.apply(u))
}
