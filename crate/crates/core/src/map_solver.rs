//! Inner inverse problem: MAP objective, adjoint gradient, Hessian actions,
//! inexact Newton-CG, and posterior covariance traces.

use nalgebra::{Cholesky, DMatrix, DVector};

use crate::counters::{Counters, Phase};
use crate::error::{Error, Result};
use crate::fem::{pcg, CgOperator};
use crate::helmholtz::{ForwardOperator, HelmholtzModel, ObservationData};
use crate::prior::Prior;
use crate::weights::EncodingWeights;

/// Largest parameter dimension for which dense Hessians are formed.
pub const EXACT_TRACE_DIM_LIMIT: usize = 2000;

/// Forward model, prior and data of one experiment.
#[derive(Debug, Clone)]
pub struct InverseProblem {
    pub model: HelmholtzModel,
    pub prior: Prior,
    pub data: ObservationData,
}

impl InverseProblem {
    pub fn new(model: HelmholtzModel, prior: Prior, data: ObservationData) -> Result<Self> {
        if data.n_sources() != model.n_sources() || data.n_receivers() != model.n_receivers() {
            return Err(Error::InvalidArgument(format!(
                "data is {}x{} but the geometry has {} sources and {} receivers",
                data.n_sources(),
                data.n_receivers(),
                model.n_sources(),
                model.n_receivers()
            )));
        }
        if prior.dim() != model.disc.n_param() {
            return Err(Error::DimensionMismatch {
                what: "prior dimension",
                expected: model.disc.n_param(),
                got: prior.dim(),
            });
        }
        Ok(Self { model, prior, data })
    }

    pub fn inv_sigma2(&self) -> f64 {
        1.0 / (self.data.noise_sigma * self.data.noise_sigma)
    }

    fn check_weights(&self, w: &EncodingWeights) -> Result<()> {
        if w.n_s() != self.model.n_sources() {
            return Err(Error::DimensionMismatch {
                what: "weights per block",
                expected: self.model.n_sources(),
                got: w.n_s(),
            });
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum HessianKind {
    Full,
    GaussNewton,
}

/// States, adjoints and residuals at one `(w, m)`.
#[derive(Debug, Clone)]
pub struct InnerState {
    pub w: EncodingWeights,
    pub m: DVector<f64>,
    pub fwd: ForwardOperator,
    pub u: Vec<DVector<f64>>,
    /// Adjoints; all zero until [`InnerState::compute_adjoints`] runs.
    pub p: Vec<DVector<f64>>,
    pub encoded_data: Vec<DVector<f64>>,
    pub residuals: Vec<DVector<f64>>,
    pub misfit: f64,
    pub regularization: f64,
    has_adjoints: bool,
}

impl InnerState {
    /// Factorize `A(m)` and solve the `N_w` encoded forward problems.
    pub fn new(problem: &InverseProblem, w: &EncodingWeights, m: &DVector<f64>, counters: &mut Counters) -> Result<Self> {
        problem.check_weights(w)?;
        problem.model.disc.check_param(m)?;
        let fwd = problem.model.factorize(m, counters)?;
        let n_w = w.n_w();
        let mut u = Vec::with_capacity(n_w);
        let mut encoded_data = Vec::with_capacity(n_w);
        let mut residuals = Vec::with_capacity(n_w);
        let mut misfit = 0.0;
        for i in 0..n_w {
            let ui = fwd.solve(&problem.model.encode_rhs(w.block(i))?, counters)?;
            let di = problem.data.encode(w.block(i))?;
            let ri = problem.model.observe(&ui) - &di;
            misfit += ri.norm_squared();
            u.push(ui);
            encoded_data.push(di);
            residuals.push(ri);
        }
        misfit *= 0.5 * problem.inv_sigma2() / n_w as f64;
        let (regularization, _) = problem.prior.reg_cost_grad(m);
        let zero = DVector::zeros(problem.model.disc.n_state());
        Ok(Self {
            w: w.clone(),
            m: m.clone(),
            fwd,
            p: vec![zero; n_w],
            u,
            encoded_data,
            residuals,
            misfit,
            regularization,
            has_adjoints: false,
        })
    }

    pub fn n_w(&self) -> usize {
        self.u.len()
    }

    pub fn cost(&self) -> f64 {
        self.misfit + self.regularization
    }

    pub fn has_adjoints(&self) -> bool {
        self.has_adjoints
    }

    /// Solve `A p_i = -B^T (B u_i - d_i) / sigma^2` for every block.
    pub fn compute_adjoints(&mut self, problem: &InverseProblem, counters: &mut Counters) -> Result<()> {
        let s = problem.inv_sigma2();
        for i in 0..self.n_w() {
            let rhs = problem.model.observation.apply_transpose(&self.residuals[i]) * (-s);
            self.p[i] = self.fwd.solve(&rhs, counters)?;
        }
        self.has_adjoints = true;
        Ok(())
    }

    /// `max_i |B u_i - d_i|`.
    pub fn max_residual(&self) -> f64 {
        self.residuals.iter().map(|r| r.amax()).fold(0.0, f64::max)
    }
}

/// `J(w; m)`, at the cost of `N_w` forward solves.
pub fn eval_j(problem: &InverseProblem, w: &EncodingWeights, m: &DVector<f64>, counters: &mut Counters) -> Result<f64> {
    Ok(InnerState::new(problem, w, m, counters)?.cost())
}

/// `R (m - m0) - (kappa^2 / N_w) sum_i G(u_i, p_i)`; needs adjoints.
pub fn grad_j(problem: &InverseProblem, state: &InnerState) -> Result<DVector<f64>> {
    if !state.has_adjoints {
        return Err(Error::InvalidArgument("gradient needs adjoint states".into()));
    }
    let (_, mut g) = problem.prior.reg_cost_grad(&state.m);
    let c = problem.model.kappa2() / state.n_w() as f64;
    for (u, p) in state.u.iter().zip(&state.p) {
        g.axpy(-c, &problem.model.disc.product_project(u, p), 1.0);
    }
    Ok(g)
}

/// Incremental fields of one Hessian application.
#[derive(Debug, Clone)]
pub struct Incremental {
    pub v: Vec<DVector<f64>>,
    pub q: Vec<DVector<f64>>,
}

/// `H y_hat` with its incremental states `v_i` and adjoints `q_i`.
/// Costs `2 N_w` solves.
pub fn apply_hessian_fields(
    problem: &InverseProblem,
    state: &InnerState,
    kind: HessianKind,
    y_hat: &DVector<f64>,
    counters: &mut Counters,
) -> Result<(DVector<f64>, Incremental)> {
    let disc = &problem.model.disc;
    disc.check_param(y_hat)?;
    let k2 = problem.model.kappa2();
    let s = problem.inv_sigma2();
    let obs = &problem.model.observation;
    let n_w = state.n_w();
    let c = k2 / n_w as f64;
    let mut out = problem.prior.apply_r(y_hat);
    let mut v = Vec::with_capacity(n_w);
    let mut q = Vec::with_capacity(n_w);
    for i in 0..n_w {
        let vi = state.fwd.solve(&(disc.weighted_mass_apply(y_hat, &state.u[i]) * k2), counters)?;
        let mut rhs = obs.apply_transpose(&obs.apply(&vi)) * (-s);
        if kind == HessianKind::Full {
            rhs.axpy(k2, &disc.weighted_mass_apply(y_hat, &state.p[i]), 1.0);
            out.axpy(-c, &disc.product_project(&vi, &state.p[i]), 1.0);
        }
        let qi = state.fwd.solve(&rhs, counters)?;
        out.axpy(-c, &disc.product_project(&state.u[i], &qi), 1.0);
        v.push(vi);
        q.push(qi);
    }
    counters.current_mut().hessian_applies += 1;
    Ok((out, Incremental { v, q }))
}

pub fn apply_hessian(
    problem: &InverseProblem,
    state: &InnerState,
    kind: HessianKind,
    y_hat: &DVector<f64>,
    counters: &mut Counters,
) -> Result<DVector<f64>> {
    Ok(apply_hessian_fields(problem, state, kind, y_hat, counters)?.0)
}

/// Hessian as a CG operator. With `track` set, the incremental fields of the
/// CG iterate are accumulated alongside it.
struct HessianOperator<'a> {
    problem: &'a InverseProblem,
    state: &'a InnerState,
    kind: HessianKind,
    counters: &'a mut Counters,
    track: bool,
    last: Option<Incremental>,
    acc: Option<Incremental>,
}

impl<'a> HessianOperator<'a> {
    fn new(
        problem: &'a InverseProblem,
        state: &'a InnerState,
        kind: HessianKind,
        counters: &'a mut Counters,
        track: bool,
    ) -> Self {
        Self {
            problem,
            state,
            kind,
            counters,
            track,
            last: None,
            acc: None,
        }
    }

    fn into_accumulated(self) -> Incremental {
        let n = self.problem.model.disc.n_state();
        let zeros = vec![DVector::zeros(n); self.state.n_w()];
        self.acc.unwrap_or(Incremental {
            v: zeros.clone(),
            q: zeros,
        })
    }
}

impl CgOperator for HessianOperator<'_> {
    fn apply(&mut self, p: &DVector<f64>) -> Result<DVector<f64>> {
        let (hp, inc) = apply_hessian_fields(self.problem, self.state, self.kind, p, self.counters)?;
        self.counters.current_mut().cg_iterations += 1;
        if self.track {
            self.last = Some(inc);
        }
        Ok(hp)
    }

    fn accept_step(&mut self, alpha: f64) {
        let Some(last) = self.last.take() else { return };
        match &mut self.acc {
            None => {
                self.acc = Some(Incremental {
                    v: last.v.into_iter().map(|x| x * alpha).collect(),
                    q: last.q.into_iter().map(|x| x * alpha).collect(),
                })
            }
            Some(acc) => {
                for (a, x) in acc.v.iter_mut().zip(&last.v) {
                    a.axpy(alpha, x, 1.0);
                }
                for (a, x) in acc.q.iter_mut().zip(&last.q) {
                    a.axpy(alpha, x, 1.0);
                }
            }
        }
    }
}

/// Outcome of a prior-preconditioned Hessian solve.
#[derive(Debug, Clone)]
pub struct HessianSolve {
    pub x: DVector<f64>,
    pub fields: Incremental,
    pub iterations: usize,
    pub converged: bool,
}

/// Solve `H x = b` by CG preconditioned with `C0`, accumulating the
/// incremental fields of `x`.
pub fn solve_hessian(
    problem: &InverseProblem,
    state: &InnerState,
    kind: HessianKind,
    b: &DVector<f64>,
    rel_tol: f64,
    max_iter: usize,
    counters: &mut Counters,
) -> Result<HessianSolve> {
    let mut op = HessianOperator::new(problem, state, kind, counters, true);
    let out = pcg(&mut op, |r: &DVector<f64>| problem.prior.apply_c0(r), b, rel_tol, max_iter)?;
    Ok(HessianSolve {
        x: out.x,
        fields: op.into_accumulated(),
        iterations: out.iterations,
        converged: out.converged,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MapOptions {
    /// Stop when `|g|_{C0} <= rel_tol * |g_0|_{C0}`.
    pub rel_tol: f64,
    /// Absolute floor on the same norm.
    pub abs_tol: f64,
    /// Replaces `|g_0|` in the relative test (for warm starts).
    pub reference_grad_norm: Option<f64>,
    pub max_iters: usize,
    pub cg_max_iters: usize,
    /// Switch from Gauss-Newton to full Newton below this fraction of `|g_0|`.
    pub newton_switch: f64,
    pub armijo_c: f64,
    pub backtrack: f64,
    pub max_backtracks: usize,
}

impl Default for MapOptions {
    fn default() -> Self {
        Self {
            rel_tol: 1e-8,
            abs_tol: 0.0,
            reference_grad_norm: None,
            max_iters: 100,
            cg_max_iters: 500,
            newton_switch: 1e-2,
            armijo_c: 1e-4,
            backtrack: 0.5,
            max_backtracks: 30,
        }
    }
}

#[derive(Debug, Clone)]
pub struct MapSolveResult {
    pub state: InnerState,
    pub newton_iters: usize,
    pub cg_iters: Vec<usize>,
    /// Objective after each accepted step, starting with the initial point.
    pub costs: Vec<f64>,
    pub grad_norm: f64,
    pub initial_grad_norm: f64,
    pub converged: bool,
    /// Converged because J stopped changing while the Newton decrement was
    /// at machine precision, with the gradient still above the target.
    pub roundoff_limited: bool,
    /// Reason for stopping early, if any.
    pub failure: Option<Error>,
}

impl MapSolveResult {
    /// Achieved `|g| / |g_0|`.
    pub fn relative_grad_norm(&self) -> f64 {
        if self.initial_grad_norm > 0.0 {
            self.grad_norm / self.initial_grad_norm
        } else {
            0.0
        }
    }
}

fn c0_norm(problem: &InverseProblem, g: &DVector<f64>) -> f64 {
    g.dot(&problem.prior.apply_c0(g)).max(0.0).sqrt()
}

/// Inexact Newton-CG with Armijo backtracking. Solver counts land in
/// [`Phase::Map`].
pub fn solve_map(
    problem: &InverseProblem,
    w: &EncodingWeights,
    m_init: &DVector<f64>,
    opts: &MapOptions,
    counters: &mut Counters,
) -> Result<MapSolveResult> {
    let prev = counters.set_phase(Phase::Map);
    let out = newton_cg(problem, w, m_init, opts, counters);
    counters.set_phase(prev);
    out
}

fn new_state(problem: &InverseProblem, w: &EncodingWeights, m: &DVector<f64>, counters: &mut Counters) -> Result<InnerState> {
    let s = InnerState::new(problem, w, m, counters)?;
    counters.current_mut().objective_evals += 1;
    Ok(s)
}

/// Multiple of `eps |J|` below which a Newton decrement is roundoff.
const DECREMENT_ROUNDOFF: f64 = 16.0;

fn newton_cg(
    problem: &InverseProblem,
    w: &EncodingWeights,
    m_init: &DVector<f64>,
    opts: &MapOptions,
    counters: &mut Counters,
) -> Result<MapSolveResult> {
    let mut state = new_state(problem, w, m_init, counters)?;
    state.compute_adjoints(problem, counters)?;
    counters.current_mut().gradient_evals += 1;
    let mut g = grad_j(problem, &state)?;
    let g0 = c0_norm(problem, &g);
    let reference = opts.reference_grad_norm.unwrap_or(g0);
    let target = (opts.rel_tol * reference).max(opts.abs_tol);
    let mut gnorm = g0;
    let mut costs = vec![state.cost()];
    let mut cg_iters = Vec::new();
    let mut failure = None;
    let mut converged = gnorm <= target || gnorm == 0.0;
    let mut roundoff_limited = false;
    let mut it = 0;
    while !converged && it < opts.max_iters {
        it += 1;
        counters.newton_steps += 1;
        let rel = if reference > 0.0 { gnorm / reference } else { 0.0 };
        let forcing = rel.sqrt().min(0.5);
        let mut kind = if rel < opts.newton_switch {
            HessianKind::Full
        } else {
            HessianKind::GaussNewton
        };
        let neg_g = -&g;
        let step = loop {
            match solve_hessian(problem, &state, kind, &neg_g, forcing, opts.cg_max_iters, counters) {
                Ok(s) => break s,
                Err(Error::NegativeCurvature { .. }) if kind == HessianKind::Full => kind = HessianKind::GaussNewton,
                Err(e) => return Err(e),
            }
        };
        cg_iters.push(step.iterations);
        let d = step.x;
        let slope = g.dot(&d);
        if slope >= 0.0 {
            failure = Some(Error::LineSearchFailed { trials: 0 });
            break;
        }
        let j0 = state.cost();
        let mut alpha = 1.0;
        let mut accepted = None;
        for _ in 0..=opts.max_backtracks {
            let m_new = &state.m + &d * alpha;
            match new_state(problem, w, &m_new, counters) {
                Ok(s) if s.cost() <= j0 + opts.armijo_c * alpha * slope => {
                    accepted = Some(s);
                    break;
                }
                Ok(_) | Err(Error::SingularMatrix { .. }) => alpha *= opts.backtrack,
                Err(e) => return Err(e),
            }
        }
        let Some(mut next) = accepted else {
            failure = Some(Error::LineSearchFailed {
                trials: opts.max_backtracks,
            });
            break;
        };
        next.compute_adjoints(problem, counters)?;
        counters.current_mut().gradient_evals += 1;
        g = grad_j(problem, &next)?;
        gnorm = c0_norm(problem, &g);
        let stalled = next.cost() >= j0;
        costs.push(next.cost());
        state = next;
        converged = gnorm <= target;
        if stalled && !converged {
            // the gradient's roundoff floor lies above the target; accept the
            // point if the predicted decrease is below the precision of J
            if -slope <= DECREMENT_ROUNDOFF * f64::EPSILON * j0.abs() {
                converged = true;
                roundoff_limited = true;
            } else {
                failure = Some(Error::Stagnated { iteration: it });
            }
            break;
        }
    }
    if !converged && failure.is_none() {
        failure = Some(Error::IterationLimit { limit: opts.max_iters });
    }
    Ok(MapSolveResult {
        state,
        newton_iters: it,
        cg_iters,
        costs,
        grad_norm: gnorm,
        initial_grad_norm: g0,
        converged,
        roundoff_limited,
        failure,
    })
}

/// Dense `H`, column by column from `l` Hessian applications.
pub fn hessian_dense(
    problem: &InverseProblem,
    state: &InnerState,
    kind: HessianKind,
    counters: &mut Counters,
) -> Result<DMatrix<f64>> {
    let l = problem.model.disc.n_param();
    if l > EXACT_TRACE_DIM_LIMIT {
        return Err(Error::TooLarge {
            dim: l,
            limit: EXACT_TRACE_DIM_LIMIT,
        });
    }
    let mut h = DMatrix::zeros(l, l);
    let mut e = DVector::zeros(l);
    for j in 0..l {
        e[j] = 1.0;
        h.set_column(j, &apply_hessian(problem, state, kind, &e, counters)?);
        e[j] = 0.0;
    }
    Ok((&h + h.transpose()) * 0.5)
}

/// `tr(H^{-1} M)` from the dense Hessian; a non-positive-definite `H` is an error.
pub fn posterior_trace_exact(
    problem: &InverseProblem,
    state: &InnerState,
    kind: HessianKind,
    counters: &mut Counters,
) -> Result<f64> {
    let h = hessian_dense(problem, state, kind, counters)?;
    let chol = Cholesky::new(h).ok_or(Error::NotPositiveDefinite)?;
    Ok(chol.solve(&problem.prior.mass).trace())
}

/// Trace estimate with retained solves for gradient reuse.
#[derive(Debug, Clone)]
pub struct TraceEstimate {
    pub value: f64,
    /// `y_k` solving `H y_k = M z_k`.
    pub y: Vec<DVector<f64>>,
    /// `fields[k]` holds `v_{i,k}` and `q_{i,k}` for `y_k`.
    pub fields: Vec<Incremental>,
    pub cg_iterations: Vec<usize>,
    pub converged: bool,
}

/// `(1/n_tr) sum_k y_k^T M z_k` with `H y_k = M z_k`. Counts land in the
/// active phase.
pub fn posterior_trace_estimated(
    problem: &InverseProblem,
    state: &InnerState,
    kind: HessianKind,
    z_set: &[DVector<f64>],
    cg_tol: f64,
    cg_max_iters: usize,
    counters: &mut Counters,
) -> Result<TraceEstimate> {
    if z_set.is_empty() {
        return Err(Error::InvalidArgument("empty trace vector set".into()));
    }
    let mut est = TraceEstimate {
        value: 0.0,
        y: Vec::with_capacity(z_set.len()),
        fields: Vec::with_capacity(z_set.len()),
        cg_iterations: Vec::with_capacity(z_set.len()),
        converged: true,
    };
    for z in z_set {
        let mz = problem.prior.apply_mass(z);
        let s = solve_hessian(problem, state, kind, &mz, cg_tol, cg_max_iters, counters)?;
        est.value += s.x.dot(&mz);
        est.converged &= s.converged;
        est.cg_iterations.push(s.iterations);
        est.y.push(s.x);
        est.fields.push(s.fields);
    }
    est.value /= z_set.len() as f64;
    Ok(est)
}
