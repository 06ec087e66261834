//! Outer problem: trace-estimated A-optimal criteria for the encoding
//! weights, their adjoint gradients, random weight baselines and an L-BFGS
//! optimizer over the weights.

use std::collections::VecDeque;
use std::fmt;
use std::str::FromStr;

use nalgebra::DVector;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::counters::{Counters, Phase};
use crate::error::{Error, Result};
use crate::map_solver::{
    posterior_trace_estimated, solve_hessian, solve_map, HessianKind, InnerState, InverseProblem, MapOptions,
    TraceEstimate,
};
use crate::weights::EncodingWeights;

/// Which posterior covariance the criterion traces.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, serde::Serialize, serde::Deserialize)]
pub enum PhiKind {
    /// Gauss-Newton Hessian at the MAP point.
    #[serde(rename = "gn")]
    GaussNewtonAtMap,
    /// Full (Laplace) Hessian at the MAP point.
    #[serde(rename = "laplace")]
    LaplaceAtMap,
    /// Gauss-Newton Hessian at the prior mean.
    #[serde(rename = "gn_ref")]
    GaussNewtonAtRef,
}

impl PhiKind {
    pub const ALL: [PhiKind; 3] = [PhiKind::GaussNewtonAtMap, PhiKind::LaplaceAtMap, PhiKind::GaussNewtonAtRef];

    pub fn name(self) -> &'static str {
        match self {
            PhiKind::GaussNewtonAtMap => "gn",
            PhiKind::LaplaceAtMap => "laplace",
            PhiKind::GaussNewtonAtRef => "gn_ref",
        }
    }

    pub fn hessian_kind(self) -> HessianKind {
        match self {
            PhiKind::LaplaceAtMap => HessianKind::Full,
            _ => HessianKind::GaussNewton,
        }
    }

    pub fn at_map(self) -> bool {
        self != PhiKind::GaussNewtonAtRef
    }
}

impl fmt::Display for PhiKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for PhiKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        PhiKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| Error::InvalidArgument(format!("unknown criterion {s:?} (gn, laplace, gn_ref)")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PhiOptions {
    /// Penalty weight on `|w^i|^2 - 1`.
    pub lambda: f64,
    /// Relative tolerance of the trace and `m*` Hessian solves.
    pub cg_rel_tol: f64,
    pub cg_max_iters: usize,
    pub map: MapOptions,
}

impl Default for PhiOptions {
    fn default() -> Self {
        Self {
            lambda: 1e3,
            cg_rel_tol: 1e-10,
            cg_max_iters: 1000,
            map: MapOptions::default(),
        }
    }
}

/// Loosest inner MAP reduction for which the outer gradient is trusted.
pub const GRADIENT_MAP_TOL: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq)]
pub struct MapSummary {
    pub converged: bool,
    pub newton_iters: usize,
    pub initial_grad_norm: f64,
    pub relative_grad_norm: f64,
    pub failure: Option<String>,
}

/// Objective value with every intermediate the gradient reuses.
#[derive(Debug, Clone)]
pub struct PhiEvaluation {
    pub kind: PhiKind,
    pub w: EncodingWeights,
    pub value: f64,
    pub trace_part: f64,
    pub penalty_part: f64,
    pub lambda: f64,
    /// MAP state for the `..AtMap` kinds, reference state otherwise.
    pub state: InnerState,
    pub trace: TraceEstimate,
    pub map: Option<MapSummary>,
    pub counters: Counters,
}

impl PhiEvaluation {
    /// MAP converged (or not needed) and every trace solve converged.
    pub fn is_reliable(&self) -> bool {
        self.trace.converged && self.map.as_ref().is_none_or(|m| m.converged)
    }
}

/// `(1/n_tr) sum_k y_k^T M z_k + lambda/(2 N_w) sum_i (|w^i|^2 - 1)^2`.
///
/// For the `..AtMap` kinds the MAP point is computed first, starting from
/// `m_init` (the prior mean when `None`).
pub fn eval_phi(
    problem: &InverseProblem,
    kind: PhiKind,
    w: &EncodingWeights,
    z_set: &[DVector<f64>],
    opts: &PhiOptions,
    m_init: Option<&DVector<f64>>,
) -> Result<PhiEvaluation> {
    if z_set.is_empty() {
        return Err(Error::InvalidArgument("empty trace vector set".into()));
    }
    let mut counters = Counters::new();
    let (state, map) = if kind.at_map() {
        let start = m_init.unwrap_or(&problem.prior.m0);
        let r = solve_map(problem, w, start, &opts.map, &mut counters)?;
        let summary = MapSummary {
            converged: r.converged,
            newton_iters: r.newton_iters,
            initial_grad_norm: r.initial_grad_norm,
            relative_grad_norm: match opts.map.reference_grad_norm {
                Some(g) if g > 0.0 => r.grad_norm / g,
                _ => r.relative_grad_norm(),
            },
            failure: r.failure.map(|e| e.to_string()),
        };
        (r.state, Some(summary))
    } else {
        counters.set_phase(Phase::State);
        (InnerState::new(problem, w, &problem.prior.m0, &mut counters)?, None)
    };
    counters.set_phase(Phase::Trace);
    let trace = posterior_trace_estimated(
        problem,
        &state,
        kind.hessian_kind(),
        z_set,
        opts.cg_rel_tol,
        opts.cg_max_iters,
        &mut counters,
    )?;
    let penalty_part = w.penalty(opts.lambda);
    Ok(PhiEvaluation {
        kind,
        w: w.clone(),
        value: trace.value + penalty_part,
        trace_part: trace.value,
        penalty_part,
        lambda: opts.lambda,
        state,
        trace,
        map,
        counters,
    })
}

#[derive(Debug, Clone)]
pub struct PhiGradient {
    /// Full gradient, flattened like the weights.
    pub grad: DVector<f64>,
    pub trace_grad: DVector<f64>,
    pub penalty_grad: DVector<f64>,
    /// `m*`; `None` for the reference-point kind.
    pub m_star: Option<DVector<f64>>,
    /// False when the inner MAP or a Hessian solve was not accurate enough
    /// for the adjoint identities to hold.
    pub valid: bool,
    pub counters: Counters,
}

/// Adjoint gradient of [`eval_phi`] with respect to the weights.
///
/// Reuses `y_k`, `v_ik`, `q_ik` from the evaluation. The `..AtMap` kinds
/// solve one full-Hessian system for `m*` followed by `2 N_w` forward-type
/// solves for `p_i*`, `u_i*`; the reference kind needs only `N_w` solves.
pub fn phi_gradient(problem: &InverseProblem, eval: &PhiEvaluation, opts: &PhiOptions) -> Result<PhiGradient> {
    let mut counters = Counters::new();
    let kind = eval.kind;
    let model = &problem.model;
    let disc = &model.disc;
    let st = &eval.state;
    let obs = &model.observation;
    let n_w = st.n_w();
    let n_tr = eval.trace.y.len();
    let k2 = model.kappa2();
    let s = problem.inv_sigma2();
    let laplace = kind == PhiKind::LaplaceAtMap;
    let c = 2.0 * k2 / (n_tr * n_w) as f64;

    let zeros = DVector::zeros(disc.n_state());
    let mut g_u = vec![zeros.clone(); n_w];
    let mut g_p = vec![zeros.clone(); n_w];
    let mut g_m = DVector::zeros(disc.n_param());
    for (y, f) in eval.trace.y.iter().zip(&eval.trace.fields) {
        for i in 0..n_w {
            g_u[i].axpy(c, &disc.weighted_mass_apply(y, &f.q[i]), 1.0);
            if laplace {
                g_p[i].axpy(c, &disc.weighted_mass_apply(y, &f.v[i]), 1.0);
            }
            if kind.at_map() {
                g_m.axpy(c, &disc.product_project(&f.v[i], &f.q[i]), 1.0);
            }
        }
    }

    let mut valid = eval.trace.converged;
    let (u_star, p_star, m_star) = if kind.at_map() {
        let map = eval.map.as_ref().expect("MAP kinds carry a MAP summary");
        valid &= map.converged && map.relative_grad_norm <= GRADIENT_MAP_TOL;
        counters.set_phase(Phase::MStar);
        let mut a = vec![zeros.clone(); n_w];
        let mut b = Vec::with_capacity(n_w);
        let mut h = -&g_m;
        for i in 0..n_w {
            if laplace {
                a[i] = -st.fwd.solve(&g_p[i], &mut counters)?;
            }
            let mut rhs = g_u[i].clone();
            if laplace {
                rhs.axpy(s, &obs.apply_transpose(&obs.apply(&a[i])), 1.0);
            }
            let bi = -st.fwd.solve(&rhs, &mut counters)?;
            h.axpy(k2, &disc.product_project(&st.u[i], &bi), 1.0);
            if laplace {
                h.axpy(k2, &disc.product_project(&st.p[i], &a[i]), 1.0);
            }
            b.push(bi);
        }
        let sol = solve_hessian(
            problem,
            st,
            HessianKind::Full,
            &h,
            opts.cg_rel_tol,
            opts.cg_max_iters,
            &mut counters,
        )?;
        valid &= sol.converged;
        let m_star = sol.x;
        counters.set_phase(Phase::Adjoint);
        let cw = k2 / n_w as f64;
        let mut u_star = Vec::with_capacity(n_w);
        let mut p_star = Vec::with_capacity(n_w);
        for i in 0..n_w {
            let mut rhs = disc.weighted_mass_apply(&m_star, &st.u[i]) * cw;
            rhs -= &g_p[i];
            let pi = st.fwd.solve(&rhs, &mut counters)?;
            let mut rhs = disc.weighted_mass_apply(&m_star, &st.p[i]) * cw;
            rhs -= &g_u[i];
            rhs.axpy(-s, &obs.apply_transpose(&obs.apply(&pi)), 1.0);
            u_star.push(st.fwd.solve(&rhs, &mut counters)?);
            p_star.push(pi);
        }
        (u_star, Some(p_star), Some(m_star))
    } else {
        counters.set_phase(Phase::Adjoint);
        let u_star = g_u
            .iter()
            .map(|g| Ok(-st.fwd.solve(g, &mut counters)?))
            .collect::<Result<Vec<_>>>()?;
        (u_star, None, None)
    };

    let n_s = model.n_sources();
    let mut trace_grad = DVector::zeros(n_w * n_s);
    for i in 0..n_w {
        let dp = p_star.as_ref().map(|p| problem.data.encode_transpose(&obs.apply(&p[i])));
        for j in 0..n_s {
            let mut gij = -model.loads[j].dot(&u_star[i]);
            if let Some(dp) = &dp {
                gij -= s * dp[j];
            }
            trace_grad[i * n_s + j] = gij;
        }
    }
    let penalty_grad = eval.w.penalty_gradient(eval.lambda);
    Ok(PhiGradient {
        grad: &trace_grad + &penalty_grad,
        trace_grad,
        penalty_grad,
        m_star,
        valid,
        counters,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub enum WeightDistribution {
    /// Normalized standard-normal blocks.
    #[serde(rename = "sphere")]
    UniformSphere,
    /// Entries `+-1 / sqrt(N_s)`.
    #[serde(rename = "rademacher")]
    RademacherNormalized,
}

/// Random unit-norm weight blocks from a seeded stream.
#[derive(Debug, Clone)]
pub struct WeightSampler {
    pub distribution: WeightDistribution,
    pub n_w: usize,
    pub n_s: usize,
    rng: ChaCha8Rng,
}

impl WeightSampler {
    /// Draws come from ChaCha8 stream `stream` of `seed`.
    pub fn new(distribution: WeightDistribution, n_w: usize, n_s: usize, seed: u64, stream: u64) -> Result<Self> {
        if n_w == 0 || n_s == 0 {
            return Err(Error::InvalidArgument("sampler needs N_w >= 1 and N_s >= 1".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(stream);
        Ok(Self {
            distribution,
            n_w,
            n_s,
            rng,
        })
    }

    pub fn sample(&mut self) -> EncodingWeights {
        let mut data = Vec::with_capacity(self.n_w * self.n_s);
        for _ in 0..self.n_w {
            match self.distribution {
                WeightDistribution::UniformSphere => loop {
                    let b: Vec<f64> = (0..self.n_s).map(|_| StandardNormal.sample(&mut self.rng)).collect();
                    let n = b.iter().map(|x| x * x).sum::<f64>().sqrt();
                    if n > 0.0 {
                        data.extend(b.into_iter().map(|x| x / n));
                        break;
                    }
                },
                WeightDistribution::RademacherNormalized => {
                    let a = 1.0 / (self.n_s as f64).sqrt();
                    data.extend((0..self.n_s).map(|_| if rand::Rng::random::<bool>(&mut self.rng) { a } else { -a }));
                }
            }
        }
        EncodingWeights::new(self.n_w, self.n_s, data).expect("sampler shape is valid")
    }
}

pub fn sample_weights(sampler: &mut WeightSampler) -> EncodingWeights {
    sampler.sample()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OptimizeOptions {
    pub max_iters: usize,
    /// Stop when `|grad| <= tol * max(|Phi(w_init)|, 1)`.
    pub tol: f64,
    pub memory: usize,
    pub armijo_c: f64,
    pub backtrack: f64,
    pub max_backtracks: usize,
    /// Length of the first steepest-descent trial step.
    pub initial_step: f64,
    /// Start each MAP solve from the last accepted MAP point.
    pub warm_start: bool,
}

impl Default for OptimizeOptions {
    fn default() -> Self {
        Self {
            max_iters: 200,
            tol: 1e-6,
            memory: 10,
            armijo_c: 1e-4,
            backtrack: 0.5,
            max_backtracks: 20,
            initial_step: 0.1,
            warm_start: true,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StepKind {
    Initial,
    QuasiNewton,
    SteepestDescent,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrajectoryPoint {
    pub iteration: usize,
    /// Objective evaluations so far, including rejected trials.
    pub evaluations: usize,
    pub value: f64,
    pub trace_part: f64,
    pub penalty_part: f64,
    pub grad_norm: f64,
    pub sphere_violation: f64,
    pub step_length: f64,
    pub step: StepKind,
}

#[derive(Debug, Clone)]
pub struct OptimizeResult {
    pub w_star: EncodingWeights,
    pub evaluation: PhiEvaluation,
    pub gradient: PhiGradient,
    pub trajectory: Vec<TrajectoryPoint>,
    pub converged: bool,
    /// Set when the run stopped on a failed line search or the iteration cap.
    pub failure: Option<String>,
    pub evaluations: usize,
    pub counters: Counters,
}

impl OptimizeResult {
    /// `w_star` with each block scaled onto the unit sphere.
    pub fn w_star_renormalized(&self) -> EncodingWeights {
        self.w_star.renormalized()
    }
}

struct Optimizer<'a> {
    problem: &'a InverseProblem,
    kind: PhiKind,
    z_set: &'a [DVector<f64>],
    phi: PhiOptions,
    opts: OptimizeOptions,
    evaluations: usize,
    counters: Counters,
}

impl Optimizer<'_> {
    fn evaluate(&mut self, w: &EncodingWeights, m_init: Option<&DVector<f64>>) -> Result<PhiEvaluation> {
        self.evaluations += 1;
        let e = eval_phi(self.problem, self.kind, w, self.z_set, &self.phi, m_init)?;
        self.counters.merge(&e.counters);
        if !e.is_reliable() {
            return Err(Error::InvalidArgument("inner solve did not converge".into()));
        }
        Ok(e)
    }

    fn gradient(&mut self, e: &PhiEvaluation) -> Result<PhiGradient> {
        let g = phi_gradient(self.problem, e, &self.phi)?;
        self.counters.merge(&g.counters);
        Ok(g)
    }

    /// Armijo backtracking along `d`; `None` when no trial is accepted.
    fn line_search(&mut self, cur: &PhiEvaluation, g: &DVector<f64>, d: &DVector<f64>, alpha0: f64) -> Option<(PhiEvaluation, f64)> {
        let slope = g.dot(d);
        if !(slope < 0.0) {
            return None;
        }
        let x = cur.w.to_vector();
        let m_init = self.opts.warm_start.then(|| cur.state.m.clone());
        let mut alpha = alpha0;
        for _ in 0..=self.opts.max_backtracks {
            let trial = cur.w.with_data(&(&x + d * alpha)).ok()?;
            if let Ok(e) = self.evaluate(&trial, m_init.as_ref()) {
                if e.value <= cur.value + self.opts.armijo_c * alpha * slope {
                    return Some((e, alpha));
                }
            }
            alpha *= self.opts.backtrack;
        }
        None
    }
}

/// Two-loop recursion for `-H_k g`.
fn lbfgs_direction(g: &DVector<f64>, mem: &VecDeque<(DVector<f64>, DVector<f64>)>) -> DVector<f64> {
    let mut q = g.clone();
    let mut alphas = Vec::with_capacity(mem.len());
    for (s, y) in mem.iter().rev() {
        let a = s.dot(&q) / y.dot(s);
        q.axpy(-a, y, 1.0);
        alphas.push(a);
    }
    if let Some((s, y)) = mem.back() {
        q *= s.dot(y) / y.dot(y);
    }
    for ((s, y), a) in mem.iter().zip(alphas.into_iter().rev()) {
        let b = y.dot(&q) / y.dot(s);
        q.axpy(a - b, s, 1.0);
    }
    -q
}

/// L-BFGS with Armijo backtracking over `R^{N_w N_s}` on a fixed trace
/// vector set. A failed quasi-Newton line search is retried once along the
/// steepest-descent direction; if that fails too, the best iterate is
/// returned with `failure` set.
pub fn optimize_weights(
    problem: &InverseProblem,
    kind: PhiKind,
    w_init: &EncodingWeights,
    z_set: &[DVector<f64>],
    phi_opts: &PhiOptions,
    opts: &OptimizeOptions,
) -> Result<OptimizeResult> {
    let mut opt = Optimizer {
        problem,
        kind,
        z_set,
        phi: *phi_opts,
        opts: *opts,
        evaluations: 0,
        counters: Counters::new(),
    };
    let mut cur = opt.evaluate(w_init, None)?;
    if kind.at_map() && opt.phi.map.reference_grad_norm.is_none() {
        // later warm-started solves are measured against the cold start
        opt.phi.map.reference_grad_norm = cur.map.as_ref().map(|m| m.initial_grad_norm);
    }
    let mut grad = opt.gradient(&cur)?;
    let target = opts.tol * cur.value.abs().max(1.0);
    let point = |it: usize, evals: usize, e: &PhiEvaluation, g: &PhiGradient, step: f64, kind: StepKind| TrajectoryPoint {
        iteration: it,
        evaluations: evals,
        value: e.value,
        trace_part: e.trace_part,
        penalty_part: e.penalty_part,
        grad_norm: g.grad.norm(),
        sphere_violation: e.w.sphere_violation(),
        step_length: step,
        step: kind,
    };
    let mut trajectory = vec![point(0, opt.evaluations, &cur, &grad, 0.0, StepKind::Initial)];
    let mut mem: VecDeque<(DVector<f64>, DVector<f64>)> = VecDeque::new();
    let mut converged = grad.grad.norm() <= target;
    let mut failure = None;
    let mut it = 0;
    while !converged && it < opts.max_iters {
        it += 1;
        let g = grad.grad.clone();
        let steepest_alpha = opts.initial_step / g.norm();
        let mut attempt = if mem.is_empty() {
            None
        } else {
            let d = lbfgs_direction(&g, &mem);
            opt.line_search(&cur, &g, &d, 1.0).map(|r| (r, d, StepKind::QuasiNewton))
        };
        if attempt.is_none() {
            mem.clear();
            let d = -&g;
            attempt = opt.line_search(&cur, &g, &d, steepest_alpha).map(|r| (r, d, StepKind::SteepestDescent));
        }
        let Some(((next, alpha), d, step_kind)) = attempt else {
            failure = Some(format!("line search failed at iteration {it}"));
            break;
        };
        let next_grad = opt.gradient(&next)?;
        let s = &d * alpha;
        let y = &next_grad.grad - &g;
        if s.dot(&y) > 1e-12 * s.norm() * y.norm() {
            if mem.len() == opts.memory {
                mem.pop_front();
            }
            mem.push_back((s, y));
        }
        trajectory.push(point(it, opt.evaluations, &next, &next_grad, alpha * d.norm(), step_kind));
        cur = next;
        grad = next_grad;
        converged = grad.grad.norm() <= target;
    }
    if !converged && failure.is_none() {
        failure = Some(format!("iteration limit {} reached", opts.max_iters));
    }
    Ok(OptimizeResult {
        w_star: cur.w.clone(),
        evaluation: cur,
        gradient: grad,
        trajectory,
        converged,
        failure,
        evaluations: opt.evaluations,
        counters: opt.counters,
    })
}

/// One row of the solve-count audit.
#[derive(Debug, Clone, PartialEq)]
pub struct AuditRow {
    pub phase: Phase,
    /// Closed form, with `C` the recorded CG iteration total of the phase.
    pub formula: String,
    pub expected: u64,
    pub measured: u64,
}

impl AuditRow {
    pub fn pass(&self) -> bool {
        self.expected == self.measured
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AuditReport {
    pub kind: PhiKind,
    pub n_w: usize,
    pub n_tr: usize,
    pub rows: Vec<AuditRow>,
    /// Leading-order total `2 N_w (C_map + C_trace)` next to the measured total.
    pub leading_total: u64,
    pub measured_total: u64,
}

impl AuditReport {
    pub fn pass(&self) -> bool {
        self.rows.iter().all(AuditRow::pass)
    }
}

/// Measured solve counts of one objective and gradient evaluation against
/// the per-phase cost model. One Hessian application is `2 N_w` solves and
/// `C` is the CG iteration total recorded in the phase. The lower-order
/// terms (state solves of MAP line-search trials, adjoint solves of MAP
/// gradients, `m*` right-hand sides) are counted exactly.
pub fn audit_counters(eval: &PhiEvaluation, grad: &PhiGradient) -> AuditReport {
    let kind = eval.kind;
    let n_w = eval.state.n_w() as u64;
    let mut all = eval.counters.clone();
    all.merge(&grad.counters);
    let mut rows = Vec::new();
    let mut row = |phase: Phase, formula: String, expected: u64| {
        rows.push(AuditRow {
            phase,
            formula,
            expected,
            measured: all.get(phase).solves,
        })
    };
    let c = |p: Phase| all.get(p).cg_iterations;
    if kind.at_map() {
        let m = all.get(Phase::Map);
        row(
            Phase::Map,
            format!("2N_w C + N_w (n_obj + n_grad) = 2*{n_w}*{} + {n_w}*({} + {})", m.cg_iterations, m.objective_evals, m.gradient_evals),
            2 * n_w * m.cg_iterations + n_w * (m.objective_evals + m.gradient_evals),
        );
    } else {
        row(Phase::State, format!("N_w = {n_w}"), n_w);
    }
    row(Phase::Trace, format!("2N_w C = 2*{n_w}*{}", c(Phase::Trace)), 2 * n_w * c(Phase::Trace));
    if kind.at_map() {
        let rhs = if kind == PhiKind::LaplaceAtMap { 2 * n_w } else { n_w };
        row(
            Phase::MStar,
            format!("2N_w C + rhs = 2*{n_w}*{} + {rhs}", c(Phase::MStar)),
            2 * n_w * c(Phase::MStar) + rhs,
        );
        row(Phase::Adjoint, format!("2N_w = {}", 2 * n_w), 2 * n_w);
    } else {
        row(Phase::Adjoint, format!("N_w = {n_w}"), n_w);
    }
    AuditReport {
        kind,
        n_w: n_w as usize,
        n_tr: eval.trace.y.len(),
        rows,
        leading_total: 2 * n_w * (c(Phase::Map) + c(Phase::Trace)),
        measured_total: all.total_solves(),
    }
}
