//! The P1 parameter / P2 state pair used by the inverse problem.

use std::sync::Arc;

use nalgebra::DVector;

use super::assembly::{assemble_mass, assemble_stiffness, MixedForms};
use super::mesh::Mesh;
use super::space::{check_len, FemSpace};
use super::sparse::CsrMatrix;
use crate::error::Result;

#[derive(Debug, Clone)]
pub struct Discretization {
    pub mesh: Arc<Mesh>,
    pub param: FemSpace,
    pub state: FemSpace,
    pub param_mass: CsrMatrix,
    pub param_stiffness: CsrMatrix,
    pub state_mass: CsrMatrix,
    pub state_stiffness: CsrMatrix,
    mixed: MixedForms,
}

impl Discretization {
    /// Unit square.
    pub fn new(n: usize) -> Result<Self> {
        Self::square(n, 1.0)
    }

    /// `[0, side]^2` with `n` cells per side.
    pub fn square(n: usize, side: f64) -> Result<Self> {
        let mesh = Arc::new(Mesh::square(n, side)?);
        let param = FemSpace::new(mesh.clone(), 1)?;
        let state = FemSpace::new(mesh.clone(), 2)?;
        let mixed = MixedForms::new(&param, &state)?;
        Ok(Self {
            param_mass: assemble_mass(&param),
            param_stiffness: assemble_stiffness(&param),
            state_mass: assemble_mass(&state),
            state_stiffness: assemble_stiffness(&state),
            mesh,
            param,
            state,
            mixed,
        })
    }

    pub fn side(&self) -> f64 {
        self.mesh.side
    }

    pub fn n_param(&self) -> usize {
        self.param.n_dofs()
    }

    pub fn n_state(&self) -> usize {
        self.state.n_dofs()
    }

    /// `W(m)` on the state space.
    pub fn weighted_mass(&self, m: &DVector<f64>) -> Result<CsrMatrix> {
        self.mixed.weighted_mass(&self.param, &self.state, m)
    }

    /// `W(m) u`.
    pub fn weighted_mass_apply(&self, m: &DVector<f64>, u: &DVector<f64>) -> DVector<f64> {
        self.mixed.weighted_mass_apply(&self.param, &self.state, m, u)
    }

    /// `g_j = (u v, phi_j)`; satisfies `m^T g = v^T W(m) u`.
    pub fn product_project(&self, u: &DVector<f64>, v: &DVector<f64>) -> DVector<f64> {
        self.mixed.product_project(&self.param, &self.state, u, v)
    }

    pub fn check_param(&self, m: &DVector<f64>) -> Result<()> {
        check_len("parameter field", self.n_param(), m.len())
    }

    pub fn check_state(&self, u: &DVector<f64>) -> Result<()> {
        check_len("state field", self.n_state(), u.len())
    }

    /// L2 norm of a parameter field.
    pub fn param_l2_norm(&self, m: &DVector<f64>) -> f64 {
        m.dot(&self.param_mass.mul_vec(m)).max(0.0).sqrt()
    }
}
