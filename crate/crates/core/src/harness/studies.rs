//! The reproduction studies, plus the `forward` and `map` utilities.

use std::time::Instant;

use nalgebra::DVector;

use super::output::{fmt_f64, Metadata, StudyOutput, Table};
use super::{derive_seed, tags, Experiment, HarnessError, HarnessResult};
use crate::aopt::{optimize_weights, OptimizeOptions, WeightSampler};
use crate::counters::Counters;
use crate::map_solver::{
    posterior_trace_estimated, posterior_trace_exact, solve_map, HessianKind, InnerState, InverseProblem, MapOptions,
    EXACT_TRACE_DIM_LIMIT,
};
use crate::weights::EncodingWeights;

/// `points` values from -1 to 1, symmetric about 0 bit for bit.
pub fn w1_grid(points: usize) -> Vec<f64> {
    let d = (points - 1) as f64;
    (0..points).map(|k| (2 * k) as f64 / d - 1.0).map(|v| if v.abs() < 1e-15 { 0.0 } else { v }).collect()
}

/// The single block `(w1, sqrt(1 - w1^2))`.
pub fn sweep_weights(w1: f64) -> EncodingWeights {
    EncodingWeights::new(1, 2, vec![w1, (1.0 - w1 * w1).max(0.0).sqrt()]).expect("finite weights")
}

/// `|m - m_ref|_{L2} / |m_ref|_{L2}`.
pub fn relative_misfit(problem: &InverseProblem, m: &DVector<f64>, m_ref: &DVector<f64>) -> f64 {
    let disc = &problem.model.disc;
    disc.param_l2_norm(&(m - m_ref)) / disc.param_l2_norm(m_ref)
}

fn require_sources(problem: &InverseProblem, n_s: usize, study: &str) -> HarnessResult<()> {
    if problem.model.n_sources() != n_s {
        return Err(HarnessError::Config(format!(
            "{study} needs {n_s} sources, the geometry has {}",
            problem.model.n_sources()
        )));
    }
    Ok(())
}

/// Exact criteria at one weight vector.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SweepValues {
    pub phi_full: f64,
    pub phi_gn: f64,
    pub phi_gnlin: f64,
    /// MAP converged and every trace was computed.
    pub ok: bool,
    pub max_residual: f64,
}

/// Exact Laplace and GN traces at the MAP point, and the GN trace at `m0`.
pub fn sweep_point(problem: &InverseProblem, w: &EncodingWeights, map: &MapOptions, counters: &mut Counters) -> HarnessResult<SweepValues> {
    let mut ok = true;
    let trace = |st: &InnerState, kind: HessianKind, counters: &mut Counters, ok: &mut bool| match posterior_trace_exact(problem, st, kind, counters) {
        Ok(v) => Ok(v),
        Err(crate::Error::NotPositiveDefinite) => {
            *ok = false;
            Ok(f64::NAN)
        }
        Err(e) => Err(HarnessError::Solver(e)),
    };
    let (phi_full, phi_gn, max_residual) = match solve_map(problem, w, &problem.prior.m0, map, counters) {
        Ok(r) => {
            ok &= r.converged;
            let full = trace(&r.state, HessianKind::Full, counters, &mut ok)?;
            let gn = trace(&r.state, HessianKind::GaussNewton, counters, &mut ok)?;
            (full, gn, r.state.max_residual())
        }
        Err(crate::Error::SingularMatrix { .. }) => {
            ok = false;
            (f64::NAN, f64::NAN, f64::NAN)
        }
        Err(e) => return Err(e.into()),
    };
    let st0 = InnerState::new(problem, w, &problem.prior.m0, counters)?;
    let phi_gnlin = trace(&st0, HessianKind::GaussNewton, counters, &mut ok)?;
    Ok(SweepValues {
        phi_full,
        phi_gn,
        phi_gnlin,
        ok,
        max_residual,
    })
}

fn finish(out: &mut StudyOutput, counters: &Counters, start: Instant) {
    out.meta.set("total_forward_solves", counters.total_solves());
    out.meta.set("wall_time_s", format!("{:.3}", start.elapsed().as_secs_f64()));
}

fn list<T: ToString>(v: &[T]) -> String {
    v.iter().map(T::to_string).collect::<Vec<_>>().join(",")
}

/// Exact criteria along the one-parameter family `(w1, sqrt(1 - w1^2))`,
/// one table per configured medium.
pub fn run_sweep1d(exp: &Experiment, meta: Metadata) -> HarnessResult<StudyOutput> {
    let start = Instant::now();
    let mut out = StudyOutput::new("sweep1d");
    out.meta = meta;
    let mut counters = Counters::new();
    let grid = w1_grid(exp.config.sweep.points);
    for &medium in &exp.config.sweep.media {
        let problem = exp.problem(medium)?;
        require_sources(&problem, 2, "sweep1d")?;
        let mut t = Table::new(format!("sweep1d_{}", medium.name()), &["w1", "phi_full", "phi_gn", "phi_gnlin"]);
        let mut flagged = Vec::new();
        for (k, &w1) in grid.iter().enumerate() {
            let v = sweep_point(&problem, &sweep_weights(w1), &exp.map_options(), &mut counters)?;
            if !v.ok {
                flagged.push(k);
            }
            t.push(vec![fmt_f64(w1), fmt_f64(v.phi_full), fmt_f64(v.phi_gn), fmt_f64(v.phi_gnlin)]);
        }
        out.meta.set(format!("flagged_rows_{}", medium.name()), list(&flagged));
        out.report.push(format!("{}: {} points, {} flagged", medium.name(), grid.len(), flagged.len()));
        out.tables.push(t);
    }
    finish(&mut out, &counters, start);
    Ok(out)
}

/// GN traces at the fixed media `(1 - s) m0 + s m_all`, where `m_all` is
/// the MAP point from all sources independently.
pub fn run_gn_robustness(exp: &Experiment, meta: Metadata) -> HarnessResult<StudyOutput> {
    let start = Instant::now();
    let mut out = StudyOutput::new("gn_robustness");
    out.meta = meta;
    let mut counters = Counters::new();
    let problem = exp.problem(exp.config.target.medium)?;
    require_sources(&problem, 2, "gn-robustness")?;
    let all = EncodingWeights::identity(2);
    let r = solve_map(&problem, &all, &problem.prior.m0, &exp.map_options(), &mut counters)?;
    if !r.converged {
        return Err(HarnessError::Solver(r.failure.unwrap_or(crate::Error::InvalidArgument("reference MAP did not converge".into()))));
    }
    let m_all = r.state.m;
    let m0 = &problem.prior.m0;
    let mut t = Table::new("gn_robustness", &["s", "w1", "phi_gn_fixed"]);
    let mut flagged = 0;
    for &s in &exp.config.gn_robustness.s_values {
        let m_s = m0 * (1.0 - s) + &m_all * s;
        for &w1 in &w1_grid(exp.config.sweep.points) {
            let w = sweep_weights(w1);
            let v = InnerState::new(&problem, &w, &m_s, &mut counters)
                .and_then(|st| posterior_trace_exact(&problem, &st, HessianKind::GaussNewton, &mut counters));
            let v = match v {
                Ok(v) => v,
                Err(crate::Error::NotPositiveDefinite | crate::Error::SingularMatrix { .. }) => {
                    flagged += 1;
                    f64::NAN
                }
                Err(e) => return Err(e.into()),
            };
            t.push(vec![fmt_f64(s), fmt_f64(w1), fmt_f64(v)]);
        }
    }
    out.meta.set("flagged_rows", flagged);
    out.tables.push(t);
    finish(&mut out, &counters, start);
    Ok(out)
}

/// Exact Laplace trace against estimates with one fixed vector set per `n_tr`.
pub fn run_trace_effect(exp: &Experiment, meta: Metadata) -> HarnessResult<StudyOutput> {
    let start = Instant::now();
    let mut out = StudyOutput::new("trace_effect");
    out.meta = meta;
    let mut counters = Counters::new();
    let problem = exp.problem(exp.config.target.medium)?;
    require_sources(&problem, 2, "trace-effect")?;
    let list_n = &exp.config.trace_effect.n_tr_list;
    let z_sets = list_n
        .iter()
        .map(|&n| exp.z_set(n, derive_seed(exp.seeds.trace, tags::TRACE, n as u64)))
        .collect::<HarnessResult<Vec<_>>>()?;
    let mut header = vec!["w1".to_string(), "exact".to_string()];
    header.extend(list_n.iter().map(|n| format!("est_{n}")));
    let mut t = Table {
        name: "trace_effect".into(),
        header,
        rows: Vec::new(),
    };
    let mut flagged = Vec::new();
    for (k, &w1) in w1_grid(exp.config.sweep.points).iter().enumerate() {
        let w = sweep_weights(w1);
        let mut row = vec![fmt_f64(w1)];
        let r = solve_map(&problem, &w, &problem.prior.m0, &exp.map_options(), &mut counters)?;
        let mut ok = r.converged;
        let exact = match posterior_trace_exact(&problem, &r.state, HessianKind::Full, &mut counters) {
            Ok(v) => v,
            Err(crate::Error::NotPositiveDefinite) => {
                ok = false;
                f64::NAN
            }
            Err(e) => return Err(e.into()),
        };
        row.push(fmt_f64(exact));
        for z in &z_sets {
            let cg = exp.config.aopt.cg_tol;
            let v = match posterior_trace_estimated(&problem, &r.state, HessianKind::Full, z, cg, 1000, &mut counters) {
                Ok(e) => {
                    ok &= e.converged;
                    e.value
                }
                Err(crate::Error::NegativeCurvature { .. }) => {
                    ok = false;
                    f64::NAN
                }
                Err(e) => return Err(e.into()),
            };
            row.push(fmt_f64(v));
        }
        if !ok {
            flagged.push(k);
        }
        t.push(row);
    }
    out.meta.set("flagged_rows", list(&flagged));
    for (n, z) in list_n.iter().zip(&z_sets) {
        out.meta.set(format!("trace_seed_{n}"), derive_seed(exp.seeds.trace, tags::TRACE, *n as u64));
        out.meta.set(format!("n_vectors_{n}"), z.len());
    }
    out.tables.push(t);
    finish(&mut out, &counters, start);
    Ok(out)
}

/// Reported quality of a weight vector: the Laplace trace at its MAP point
/// from a cold start (exact when the parameter dimension allows) and the relative misfit to
/// a reference reconstruction.
#[derive(Debug, Clone)]
pub struct Reported {
    pub phi_l: f64,
    pub rel_misfit: f64,
    pub m_map: DVector<f64>,
}

pub fn report_weights(
    problem: &InverseProblem,
    w: &EncodingWeights,
    m_ref: &DVector<f64>,
    map: &MapOptions,
    z_eval: &[DVector<f64>],
    cg_tol: f64,
    counters: &mut Counters,
) -> crate::Result<Reported> {
    let r = solve_map(problem, w, &problem.prior.m0, map, counters)?;
    if !r.converged {
        return Err(r.failure.unwrap_or(crate::Error::InvalidArgument("MAP did not converge".into())));
    }
    let phi_l = if problem.model.disc.n_param() <= EXACT_TRACE_DIM_LIMIT {
        posterior_trace_exact(problem, &r.state, HessianKind::Full, counters)?
    } else {
        posterior_trace_estimated(problem, &r.state, HessianKind::Full, z_eval, cg_tol, 1000, counters)?.value
    };
    Ok(Reported {
        phi_l,
        rel_misfit: relative_misfit(problem, &r.state.m, m_ref),
        m_map: r.state.m,
    })
}

/// MAP point from every source on its own.
pub fn reference_reconstruction(problem: &InverseProblem, map: &MapOptions, counters: &mut Counters) -> HarnessResult<DVector<f64>> {
    let all = EncodingWeights::identity(problem.model.n_sources());
    let r = solve_map(problem, &all, &problem.prior.m0, map, counters)?;
    if !r.converged {
        return Err(HarnessError::Solver(
            r.failure.unwrap_or(crate::Error::InvalidArgument("reference MAP did not converge".into())),
        ));
    }
    Ok(r.state.m)
}

fn optimize_options(exp: &Experiment) -> OptimizeOptions {
    OptimizeOptions {
        max_iters: exp.config.aopt.max_iters,
        tol: exp.config.aopt.tol,
        ..Default::default()
    }
}

/// Random unit-sphere weights against A-optimal weights from several
/// restarts, for each configured `N_w`.
pub fn run_random_vs_optimal(exp: &Experiment, meta: Metadata) -> HarnessResult<StudyOutput> {
    let start = Instant::now();
    let mut out = StudyOutput::new("random_vs_optimal");
    out.meta = meta;
    let mut counters = Counters::new();
    let cfg = &exp.config.random_vs_optimal;
    let problem = exp.problem(exp.config.target.medium)?;
    let n_s = problem.model.n_sources();
    let map = exp.map_options();
    let m_ref = reference_reconstruction(&problem, &map, &mut counters)?;
    let cg = exp.config.aopt.cg_tol;
    let z_eval = exp.z_set(30, derive_seed(exp.seeds.trace, tags::TRACE, u64::MAX))?;
    let mut t = Table::new("random_vs_optimal", &["method", "N_w", "phi_L", "rel_misfit", "seed"]);
    let mut excluded = 0usize;
    let mut not_converged = 0usize;
    for &n_w in &cfg.n_w_list {
        for k in 0..cfg.sample_count {
            let seed = derive_seed(exp.seeds.weights, tags::RANDOM_WEIGHTS + 16 * n_w as u64, k as u64);
            let w = WeightSampler::new(exp.config.aopt.distribution, n_w, n_s, seed, 0)?.sample();
            match report_weights(&problem, &w, &m_ref, &map, &z_eval, cg, &mut counters) {
                Ok(r) => t.push(vec!["random".into(), n_w.to_string(), fmt_f64(r.phi_l), fmt_f64(r.rel_misfit), seed.to_string()]),
                Err(e) => {
                    excluded += 1;
                    out.report.push(format!("random N_w={n_w} sample {k}: {e}"));
                }
            }
        }
        let z = exp.z_set(exp.config.aopt.n_tr, derive_seed(exp.seeds.trace, tags::TRACE, 1000 + n_w as u64))?;
        for &kind in &cfg.kinds {
            for r in 0..cfg.n_restarts {
                let seed = derive_seed(exp.seeds.weights, tags::RESTART_WEIGHTS + 16 * n_w as u64, r as u64);
                let w0 = WeightSampler::new(exp.config.aopt.distribution, n_w, n_s, seed, 0)?.sample();
                let res = match optimize_weights(&problem, kind, &w0, &z, &exp.phi_options(), &optimize_options(exp)) {
                    Ok(res) => res,
                    Err(e) => {
                        excluded += 1;
                        out.report.push(format!("aopt_{kind} N_w={n_w} restart {r}: {e}"));
                        continue;
                    }
                };
                counters.merge(&res.counters);
                not_converged += usize::from(!res.converged);
                let w = if exp.config.aopt.renormalize { res.w_star_renormalized() } else { res.w_star.clone() };
                match report_weights(&problem, &w, &m_ref, &map, &z_eval, cg, &mut counters) {
                    Ok(rep) => t.push(vec![
                        format!("aopt_{kind}"),
                        n_w.to_string(),
                        fmt_f64(rep.phi_l),
                        fmt_f64(rep.rel_misfit),
                        seed.to_string(),
                    ]),
                    Err(e) => {
                        excluded += 1;
                        out.report.push(format!("aopt_{kind} N_w={n_w} restart {r}: {e}"));
                    }
                }
            }
        }
    }
    out.meta.set("excluded_rows", excluded);
    out.meta.set("optimizations_not_converged", not_converged);
    out.tables.push(t);
    finish(&mut out, &counters, start);
    Ok(out)
}

/// A-optimal weights from independent trace vector sets and initial
/// guesses, for each `n_tr`. Initial guesses depend on the repeat index
/// only, so every `n_tr` starts from the same points.
pub fn run_variability(exp: &Experiment, meta: Metadata) -> HarnessResult<StudyOutput> {
    let start = Instant::now();
    let mut out = StudyOutput::new("variability");
    out.meta = meta;
    let mut counters = Counters::new();
    let cfg = &exp.config.variability;
    let problem = exp.problem(exp.config.target.medium)?;
    let n_s = problem.model.n_sources();
    let map = exp.map_options();
    let m_ref = reference_reconstruction(&problem, &map, &mut counters)?;
    let cg = exp.config.aopt.cg_tol;
    let z_eval = exp.z_set(30, derive_seed(exp.seeds.trace, tags::TRACE, u64::MAX))?;
    let mut t = Table::new(
        "variability",
        &["n_tr", "repeat_index", "phi_L_final", "rel_misfit", "trace_seed", "init_seed"],
    );
    let mut excluded = 0usize;
    for &n_tr in &cfg.n_tr_list {
        for r in 0..cfg.repeats {
            let trace_seed = derive_seed(exp.seeds.trace, tags::VARIABILITY_TRACE + 16 * n_tr as u64, r as u64);
            let init_seed = derive_seed(exp.seeds.weights, tags::VARIABILITY_INIT, r as u64);
            let z = exp.z_set(n_tr, trace_seed)?;
            let w0 = WeightSampler::new(exp.config.aopt.distribution, cfg.n_w, n_s, init_seed, 0)?.sample();
            let rep = optimize_weights(&problem, exp.config.aopt.kind, &w0, &z, &exp.phi_options(), &optimize_options(exp)).and_then(|res| {
                counters.merge(&res.counters);
                let w = if exp.config.aopt.renormalize { res.w_star_renormalized() } else { res.w_star.clone() };
                report_weights(&problem, &w, &m_ref, &map, &z_eval, cg, &mut counters)
            });
            match rep {
                Ok(rep) => t.push(vec![
                    n_tr.to_string(),
                    r.to_string(),
                    fmt_f64(rep.phi_l),
                    fmt_f64(rep.rel_misfit),
                    trace_seed.to_string(),
                    init_seed.to_string(),
                ]),
                Err(e) => {
                    excluded += 1;
                    out.report.push(format!("n_tr={n_tr} repeat {r}: {e}"));
                }
            }
        }
    }
    out.meta.set("excluded_rows", excluded);
    out.tables.push(t);
    finish(&mut out, &counters, start);
    Ok(out)
}

/// Clean and noisy receiver data for every source of the target medium.
pub fn run_forward(exp: &Experiment, meta: Metadata) -> HarnessResult<StudyOutput> {
    let start = Instant::now();
    let mut out = StudyOutput::new("forward");
    out.meta = meta;
    let counters = Counters::new();
    let model = exp.model()?;
    let m = exp.m_true(exp.config.target.medium);
    let clean = model.generate_synthetic_data(&m, 0.0, exp.config.noise.sigma, exp.seeds.noise)?;
    let noisy = model.generate_synthetic_data(&m, exp.config.noise.pct, exp.config.noise.sigma, exp.seeds.noise)?;
    let mut t = Table::new("forward", &["source", "receiver", "x", "y", "clean", "noisy"]);
    for j in 0..model.n_sources() {
        for (k, r) in model.geometry.receivers.iter().enumerate() {
            t.push(vec![
                j.to_string(),
                k.to_string(),
                fmt_f64(r[0]),
                fmt_f64(r[1]),
                fmt_f64(clean.per_source[(j, k)]),
                fmt_f64(noisy.per_source[(j, k)]),
            ]);
        }
    }
    out.meta.set("medium", exp.config.target.medium.name());
    out.meta.set("n_sources", model.n_sources());
    out.meta.set("n_receivers", model.n_receivers());
    out.tables.push(t);
    finish(&mut out, &counters, start);
    // data generation keeps its own counters: one solve per source and data set
    out.meta.set("total_forward_solves", 2 * model.n_sources());
    Ok(out)
}

/// MAP reconstruction with identity or random weights.
pub fn run_map(exp: &Experiment, meta: Metadata) -> HarnessResult<StudyOutput> {
    let start = Instant::now();
    let mut out = StudyOutput::new("map");
    out.meta = meta;
    let mut counters = Counters::new();
    let medium = exp.config.target.medium;
    let problem = exp.problem(medium)?;
    let n_s = problem.model.n_sources();
    let w = match exp.config.map_run.weights {
        super::config::MapWeights::Identity => EncodingWeights::identity(n_s),
        super::config::MapWeights::Random => {
            let seed = derive_seed(exp.seeds.weights, tags::MAP_WEIGHTS, 0);
            WeightSampler::new(exp.config.aopt.distribution, exp.config.map_run.n_w, n_s, seed, 0)?.sample()
        }
    };
    let r = solve_map(&problem, &w, &problem.prior.m0, &exp.map_options(), &mut counters)?;
    let m_true = exp.m_true(medium);
    let mut t = Table::new("map", &["x", "y", "m_true", "m_map"]);
    for (i, x) in exp.disc.param.dof_coords.iter().enumerate() {
        t.push(vec![fmt_f64(x[0]), fmt_f64(x[1]), fmt_f64(m_true[i]), fmt_f64(r.state.m[i])]);
    }
    out.meta.set("medium", medium.name());
    out.meta.set("n_w", w.n_w());
    out.meta.set("converged", r.converged);
    out.meta.set("newton_iters", r.newton_iters);
    out.meta.set("roundoff_limited", r.roundoff_limited);
    out.meta.set("relative_grad_norm", fmt_f64(r.relative_grad_norm()));
    out.meta.set("rel_error_vs_true", fmt_f64(relative_misfit(&problem, &r.state.m, &m_true)));
    out.report.push(format!(
        "MAP {} after {} Newton steps, relative error {:.4}",
        if r.converged { "converged" } else { "did not converge" },
        r.newton_iters,
        relative_misfit(&problem, &r.state.m, &m_true)
    ));
    out.tables.push(t);
    finish(&mut out, &counters, start);
    if !r.converged {
        return Err(HarnessError::Solver(r.failure.unwrap_or(crate::Error::InvalidArgument("MAP did not converge".into()))));
    }
    Ok(out)
}

