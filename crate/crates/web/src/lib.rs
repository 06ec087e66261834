//! Browser demo: forward wavefields, an exact criterion sweep and MAP
//! reconstructions for the two-source geometry.

use encopt::counters::Counters;
use encopt::fem::FemSpace;
use encopt::harness::studies::{sweep_weights, w1_grid};
use encopt::harness::{Experiment, ExperimentConfig, Medium};
use encopt::map_solver::{posterior_trace_exact, solve_map, HessianKind, InverseProblem};
use encopt::weights::EncodingWeights;
use nalgebra::DVector;
use wasm_bindgen::prelude::wasm_bindgen;

/// Largest mesh the page offers; bigger ones stall the tab.
pub const MAX_MESH: usize = 12;

#[wasm_bindgen]
pub struct Demo {
    exp: Experiment,
    problem: InverseProblem,
}

fn err(e: impl ToString) -> String {
    e.to_string()
}

fn sample_grid(space: &FemSpace, coeffs: &[f64], side: f64, res: usize) -> Result<Vec<f64>, String> {
    let mut out = Vec::with_capacity(res * res);
    let h = side / (res - 1) as f64;
    for i in 0..res {
        for j in 0..res {
            // row 0 is the top edge
            let p = [j as f64 * h, side - i as f64 * h];
            out.push(space.evaluate(coeffs, p).map_err(err)?);
        }
    }
    Ok(out)
}

#[wasm_bindgen]
impl Demo {
    /// Two-source problem on an `n x n` mesh with `medium` 1 or 2.
    #[wasm_bindgen(constructor)]
    pub fn new(n: usize, medium: u32, seed: u64) -> Result<Demo, String> {
        if n == 0 || n > MAX_MESH {
            return Err(format!("mesh size must be in 1..={MAX_MESH}"));
        }
        let medium = match medium {
            1 => Medium::Medium1,
            2 => Medium::Medium2,
            m => return Err(format!("unknown medium {m}")),
        };
        let mut config = ExperimentConfig::parse(&format!("mesh.n = {n}")).map_err(err)?;
        config.override_seed(seed);
        config.target.medium = medium;
        let exp = Experiment::new(config).map_err(err)?;
        let problem = exp.problem(medium).map_err(err)?;
        Ok(Demo { exp, problem })
    }

    /// Wavefield of the encoded source `(w1, sqrt(1 - w1^2))` in the true
    /// medium, sampled row-major on a `res x res` grid.
    pub fn forward(&self, w1: f64, res: usize) -> Result<Vec<f64>, String> {
        check_w1(w1)?;
        let model = &self.problem.model;
        let m = self.exp.m_true(self.exp.config.target.medium);
        let rhs = model.encode_rhs(sweep_weights(w1).block(0)).map_err(err)?;
        let u = model.forward_solve(&m, &rhs, &mut Counters::new()).map_err(err)?;
        sample_grid(&model.disc.state, u.as_slice(), self.exp.side(), res.max(2))
    }

    /// Exact Laplace and Gauss-Newton traces at the MAP point along the
    /// sweep, flattened as `[w1, phi_full, phi_gn]` triples.
    pub fn sweep(&self, points: usize) -> Result<Vec<f64>, String> {
        let mut out = Vec::with_capacity(3 * points);
        let mut c = Counters::new();
        for w1 in w1_grid(points.max(2)) {
            let r = solve_map(&self.problem, &sweep_weights(w1), &self.problem.prior.m0, &self.exp.map_options(), &mut c)
                .map_err(err)?;
            let full = posterior_trace_exact(&self.problem, &r.state, HessianKind::Full, &mut c).unwrap_or(f64::NAN);
            let gn = posterior_trace_exact(&self.problem, &r.state, HessianKind::GaussNewton, &mut c).unwrap_or(f64::NAN);
            out.extend([w1, full, gn]);
        }
        Ok(out)
    }

    /// MAP medium for the encoded source, or for both sources separately when
    /// `w1` is NaN, sampled like [`Demo::forward`].
    pub fn reconstruct(&self, w1: f64, res: usize) -> Result<Vec<f64>, String> {
        let w = if w1.is_nan() {
            EncodingWeights::identity(2)
        } else {
            check_w1(w1)?;
            sweep_weights(w1)
        };
        let r = solve_map(&self.problem, &w, &self.problem.prior.m0, &self.exp.map_options(), &mut Counters::new())
            .map_err(err)?;
        if !r.converged {
            return Err("MAP did not converge".into());
        }
        sample_grid(&self.problem.model.disc.param, r.state.m.as_slice(), self.exp.side(), res.max(2))
    }

    /// The true medium on the same grid.
    pub fn truth(&self, res: usize) -> Result<Vec<f64>, String> {
        let m: DVector<f64> = self.exp.m_true(self.exp.config.target.medium);
        sample_grid(&self.problem.model.disc.param, m.as_slice(), self.exp.side(), res.max(2))
    }
}

fn check_w1(w1: f64) -> Result<(), String> {
    if (-1.0..=1.0).contains(&w1) {
        Ok(())
    } else {
        Err(format!("w1 must lie in [-1, 1], got {w1}"))
    }
}
