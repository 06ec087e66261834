//! Finite-difference gradient checks, Hessian properties and the solve-count audit.

use std::time::Instant;

use nalgebra::DVector;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::output::{fmt_f64, Metadata, StudyOutput, Table};
use super::{derive_seed, tags, Experiment, HarnessResult};
use crate::aopt::{audit_counters, eval_phi, phi_gradient, PhiKind, PhiOptions, WeightDistribution, WeightSampler};
use crate::counters::Counters;
use crate::map_solver::{apply_hessian, eval_j, grad_j, HessianKind, InnerState, InverseProblem, MapOptions};
use crate::weights::EncodingWeights;

/// Smallest relative error over the step scan, with its step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FdResult {
    pub best_h: f64,
    pub fd: f64,
    pub analytic: f64,
    pub rel_err: f64,
}

/// Central differences of `f` along a direction, scanned over `steps`.
/// `analytic` is the directional derivative being checked.
pub fn fd_scan(steps: &[f64], analytic: f64, mut f: impl FnMut(f64) -> crate::Result<f64>) -> crate::Result<(FdResult, Vec<FdResult>)> {
    let mut all = Vec::with_capacity(steps.len());
    for &h in steps {
        let fd = (f(h)? - f(-h)?) / (2.0 * h);
        let rel_err = (fd - analytic).abs() / analytic.abs().max(f64::MIN_POSITIVE);
        all.push(FdResult {
            best_h: h,
            fd,
            analytic,
            rel_err,
        });
    }
    let best = *all
        .iter()
        .min_by(|a, b| a.rel_err.total_cmp(&b.rel_err))
        .expect("at least one step");
    Ok((best, all))
}

/// Smooth random medium `1 + sum_k a_k cos(...)` with amplitude about `amp`.
pub fn random_medium(problem: &InverseProblem, amp: f64, rng: &mut ChaCha8Rng) -> DVector<f64> {
    let side = problem.model.disc.side();
    let modes: Vec<(f64, f64, f64)> = (0..4)
        .map(|_| (rng.random_range(-1.0..1.0), rng.random_range(0..3) as f64, rng.random_range(0..3) as f64))
        .collect();
    DVector::from_vec(problem.model.disc.param.interpolate(|x| {
        let pi = std::f64::consts::PI;
        1.0 + 0.5 * amp * modes.iter().map(|(a, i, j)| a * (i * pi * x[0] / side).cos() * (j * pi * x[1] / side).cos()).sum::<f64>()
    }))
}

pub fn random_direction(n: usize, rng: &mut ChaCha8Rng) -> DVector<f64> {
    let d = DVector::from_fn(n, |_, _| rng.random_range(-1.0..1.0));
    let norm = d.norm();
    d / norm
}

/// Random unit direction tangent to every block sphere at `w`.
pub fn random_tangent(w: &EncodingWeights, rng: &mut ChaCha8Rng) -> DVector<f64> {
    let n_s = w.n_s();
    let mut d = DVector::from_fn(w.as_slice().len(), |_, _| rng.random_range(-1.0..1.0));
    for i in 0..w.n_w() {
        let b = DVector::from_column_slice(w.block(i));
        let mut di = d.rows_mut(i * n_s, n_s);
        let c = di.dot(&b) / b.norm_squared();
        di.axpy(-c, &b, 1.0);
    }
    let norm = d.norm();
    d / norm
}

/// `|x^T H y - y^T H x| / max(|Hx| |y|, |Hy| |x|)`.
pub fn symmetry_defect(problem: &InverseProblem, st: &InnerState, kind: HessianKind, x: &DVector<f64>, y: &DVector<f64>, c: &mut Counters) -> crate::Result<(f64, f64, f64)> {
    let hx = apply_hessian(problem, st, kind, x, c)?;
    let hy = apply_hessian(problem, st, kind, y, c)?;
    let (a, b) = (y.dot(&hx), x.dot(&hy));
    let scale = (hx.norm() * y.norm()).max(hy.norm() * x.norm());
    Ok(((a - b).abs() / scale, a, b))
}

fn tight_phi_options(exp: &Experiment) -> PhiOptions {
    PhiOptions {
        lambda: exp.config.aopt.lambda,
        cg_rel_tol: 1e-12,
        cg_max_iters: 2000,
        map: MapOptions {
            rel_tol: 1e-10,
            abs_tol: 1e-9,
            max_iters: 200,
            ..Default::default()
        },
    }
}

struct Recorder {
    table: Table,
    failures: Vec<String>,
    report: Vec<String>,
    meta: Vec<(String, String)>,
}

impl Recorder {
    fn row(&mut self, check: &str, kind: &str, sample: usize, direction: usize, r: &FdResult) {
        self.table.push(vec![
            check.into(),
            kind.into(),
            sample.to_string(),
            direction.to_string(),
            fmt_f64(r.best_h),
            fmt_f64(r.fd),
            fmt_f64(r.analytic),
            fmt_f64(r.rel_err),
        ]);
    }

    fn summary(&mut self, check: &str, kind: &str, worst: f64, tol: f64) {
        let pass = worst <= tol;
        let line = format!("{check:<22} {kind:<8} worst {worst:.3e} (tol {tol:.0e}) {}", if pass { "PASS" } else { "FAIL" });
        self.report.push(line.clone());
        self.meta.push((format!("worst_{check}_{kind}"), fmt_f64(worst)));
        if !pass {
            self.failures.push(line);
        }
    }
}

/// Inner gradient, Hessian properties and outer gradient against finite
/// differences, on the configured problem with tight inner tolerances.
pub fn run_gradcheck(exp: &Experiment, meta: Metadata) -> HarnessResult<StudyOutput> {
    let start = Instant::now();
    let cfg = &exp.config.gradcheck;
    let problem = exp.problem(exp.config.target.medium)?;
    let n_s = problem.model.n_sources();
    let l = problem.model.disc.n_param();
    let corrupt = if cfg.corrupt { 1.01 } else { 1.0 };
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(exp.seeds.weights, tags::GRADCHECK, 0));
    let mut counters = Counters::new();
    let mut rec = Recorder {
        table: Table::new("gradcheck", &["check", "kind", "sample", "direction", "h", "fd", "analytic", "rel_err"]),
        failures: Vec::new(),
        report: Vec::new(),
        meta: Vec::new(),
    };
    let sampler_seed = derive_seed(exp.seeds.weights, tags::GRADCHECK, 1);
    let mut sampler = WeightSampler::new(WeightDistribution::UniformSphere, cfg.n_w, n_s, sampler_seed, 0)?;

    // inner gradient
    let mut worst = 0.0f64;
    for sample in 0..3 {
        let w = sampler.sample();
        let m = random_medium(&problem, 0.2, &mut rng);
        let mut st = InnerState::new(&problem, &w, &m, &mut counters)?;
        st.compute_adjoints(&problem, &mut counters)?;
        let g = grad_j(&problem, &st)? * corrupt;
        for dir in 0..cfg.directions {
            let d = random_direction(l, &mut rng);
            let (best, _) = fd_scan(&cfg.steps, g.dot(&d), |h| eval_j(&problem, &w, &(&m + &d * h), &mut counters))?;
            worst = worst.max(best.rel_err);
            rec.row("inner_gradient", "-", sample, dir, &best);
        }
    }
    rec.summary("inner_gradient", "-", worst, cfg.inner_tol);

    // Hessian symmetry, zero-adjoint agreement, GN dominates the prior
    let mut worst_sym = [0.0f64; 2];
    let mut worst_zero = 0.0f64;
    let mut gn_deficit = 0.0f64;
    for sample in 0..10 {
        let w = sampler.sample();
        let m = random_medium(&problem, 0.2, &mut rng);
        let mut st = InnerState::new(&problem, &w, &m, &mut counters)?;
        let (x, y) = (random_direction(l, &mut rng), random_direction(l, &mut rng));
        let full0 = apply_hessian(&problem, &st, HessianKind::Full, &x, &mut counters)?;
        let gn0 = apply_hessian(&problem, &st, HessianKind::GaussNewton, &x, &mut counters)?;
        worst_zero = worst_zero.max((&full0 - &gn0).amax() / gn0.amax());
        let prior_q = x.dot(&problem.prior.apply_r(&x));
        gn_deficit = gn_deficit.max((prior_q - x.dot(&gn0)) / prior_q);
        st.compute_adjoints(&problem, &mut counters)?;
        for (k, kind) in [HessianKind::Full, HessianKind::GaussNewton].into_iter().enumerate() {
            let (defect, a, b) = symmetry_defect(&problem, &st, kind, &x, &y, &mut counters)?;
            let defect = if cfg.corrupt { defect + 1.0 } else { defect };
            worst_sym[k] = worst_sym[k].max(defect);
            let name = if kind == HessianKind::Full { "full" } else { "gn" };
            rec.row("hessian_symmetry", name, sample, 0, &FdResult { best_h: f64::NAN, fd: a, analytic: b, rel_err: defect });
        }
    }
    rec.summary("hessian_symmetry", "full", worst_sym[0], cfg.symmetry_tol);
    rec.summary("hessian_symmetry", "gn", worst_sym[1], cfg.symmetry_tol);
    rec.summary("full_equals_gn_p0", "-", worst_zero, 1e-12);
    rec.summary("gn_minus_prior_form", "-", gn_deficit.max(0.0), 0.0);

    // outer gradient: trace part along tangents on the sphere, penalty part off it
    let opts = tight_phi_options(exp);
    let z = exp.z_set(cfg.n_tr, derive_seed(exp.seeds.trace, tags::GRADCHECK, 0))?;
    let w = sampler.sample();
    let w_off = w.with_data(&(w.to_vector() * 1.1))?;
    for kind in PhiKind::ALL {
        let mut worst = [0.0f64; 2];
        for (part, w) in [&w, &w_off].into_iter().enumerate() {
            let e = eval_phi(&problem, kind, w, &z, &opts, None)?;
            let g = phi_gradient(&problem, &e, &opts)?;
            counters.merge(&e.counters);
            counters.merge(&g.counters);
            if !g.valid {
                let why = e.map.as_ref().and_then(|m| m.failure.clone()).unwrap_or_else(|| "trace CG did not converge".into());
                rec.failures.push(format!("outer gradient for {kind} flagged invalid: {why}"));
            }
            let grad = if part == 0 { &g.trace_grad } else { &g.penalty_grad } * corrupt;
            let m_warm = e.state.m.clone();
            let mut fd_opts = opts;
            fd_opts.map.reference_grad_norm = e.map.as_ref().map(|m| m.initial_grad_norm);
            for dir in 0..cfg.directions {
                let d = if part == 0 { random_tangent(w, &mut rng) } else { random_direction(w.as_slice().len(), &mut rng) };
                let (best, _) = fd_scan(&cfg.steps, grad.dot(&d), |h| {
                    let wh = w.with_data(&(w.to_vector() + &d * h))?;
                    let eh = eval_phi(&problem, kind, &wh, &z, &fd_opts, Some(&m_warm))?;
                    counters.merge(&eh.counters);
                    Ok(if part == 0 { eh.trace_part } else { eh.penalty_part })
                })?;
                worst[part] = worst[part].max(best.rel_err);
                rec.row(if part == 0 { "outer_trace_gradient" } else { "outer_penalty_gradient" }, kind.name(), 0, dir, &best);
            }
        }
        rec.summary("outer_trace_gradient", kind.name(), worst[0], cfg.outer_tol);
        rec.summary("outer_penalty_gradient", kind.name(), worst[1], cfg.outer_tol);
    }

    let mut out = StudyOutput::new("gradcheck");
    out.meta = meta;
    for (k, v) in rec.meta {
        out.meta.set(k, v);
    }
    out.meta.set("steps", cfg.steps.iter().map(|h| fmt_f64(*h)).collect::<Vec<_>>().join(","));
    out.meta.set("corrupt", cfg.corrupt);
    out.meta.set("failures", rec.failures.len());
    out.meta.set("total_forward_solves", counters.total_solves());
    out.meta.set("wall_time_s", format!("{:.3}", start.elapsed().as_secs_f64()));
    out.tables.push(rec.table);
    out.report = rec.report;
    out.failures = rec.failures;
    Ok(out)
}

/// One objective and gradient evaluation per criterion, with measured
/// solve counts against the cost model.
pub fn run_counter_audit(exp: &Experiment, meta: Metadata) -> HarnessResult<StudyOutput> {
    let start = Instant::now();
    let cfg = &exp.config.gradcheck;
    let problem = exp.problem(exp.config.target.medium)?;
    let n_s = problem.model.n_sources();
    let seed = derive_seed(exp.seeds.weights, tags::GRADCHECK, 2);
    let w: EncodingWeights = WeightSampler::new(exp.config.aopt.distribution, cfg.n_w, n_s, seed, 0)?.sample();
    let z = exp.z_set(cfg.n_tr, derive_seed(exp.seeds.trace, tags::GRADCHECK, 1))?;
    let opts = exp.phi_options();
    let mut out = StudyOutput::new("counter_audit");
    out.meta = meta;
    let mut t = Table::new("counter_audit", &["kind", "phase", "formula", "expected", "measured", "pass"]);
    let mut total = 0;
    for kind in PhiKind::ALL {
        let e = eval_phi(&problem, kind, &w, &z, &opts, None)?;
        let g = phi_gradient(&problem, &e, &opts)?;
        let report = audit_counters(&e, &g);
        for r in &report.rows {
            t.push(vec![
                kind.name().into(),
                r.phase.name().into(),
                r.formula.clone(),
                r.expected.to_string(),
                r.measured.to_string(),
                r.pass().to_string(),
            ]);
            let line = format!("{:<8} {:<8} expected {:>6} measured {:>6} {}", kind.name(), r.phase.name(), r.expected, r.measured, if r.pass() { "PASS" } else { "FAIL" });
            if !r.pass() {
                out.failures.push(line.clone());
            }
            out.report.push(line);
        }
        out.meta.set(format!("leading_total_{}", kind.name()), report.leading_total);
        out.meta.set(format!("measured_total_{}", kind.name()), report.measured_total);
        total += report.measured_total;
    }
    out.meta.set("n_w", cfg.n_w);
    out.meta.set("n_tr", cfg.n_tr);
    out.meta.set("total_forward_solves", total);
    out.meta.set("wall_time_s", format!("{:.3}", start.elapsed().as_secs_f64()));
    out.tables.push(t);
    Ok(out)
}
