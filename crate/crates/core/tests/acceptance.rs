//! Acceptance criteria 1 to 11, one PASS/FAIL/WARN line each.
//!
//! `cargo test --release --test acceptance` prints the report.
//! Criterion 8 runs at `n = 10` and criterion 9 at `n = 6` unless
//! `ENCOPT_ACCEPTANCE_N` is set;
//! `ENCOPT_ACCEPTANCE_ONLY=1,4,7` runs a subset.

use std::io::Write;
use std::time::{Duration, Instant};

use nalgebra::DVector;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use encopt::aopt::{eval_phi, phi_gradient, PhiKind, WeightDistribution, WeightSampler};
use encopt::counters::Counters;
use encopt::harness::checks::{fd_scan, random_direction, random_medium, symmetry_defect};
use encopt::harness::{derive_seed, run_study, tags, Experiment, ExperimentConfig, Medium, StudyOutput};
use encopt::map_solver::{
    apply_hessian, eval_j, grad_j, posterior_trace_estimated, posterior_trace_exact, solve_map, HessianKind, InnerState,
    InverseProblem,
};
use encopt::weights::EncodingWeights;

const SEED: u64 = 20_240_611;

const GRADCHECK_CONFIG: &str = include_str!("../../../configs/gradcheck.toml");
const COUNTER_CONFIG: &str = include_str!("../../../configs/counter_audit.toml");

#[derive(Debug, Clone, Copy, PartialEq)]
enum Status {
    Pass,
    Fail,
    Warn,
}

struct Outcome {
    id: usize,
    title: &'static str,
    status: Status,
    detail: String,
}

fn outcome(id: usize, title: &'static str, pass: bool, detail: String) -> Outcome {
    Outcome {
        id,
        title,
        status: if pass { Status::Pass } else { Status::Fail },
        detail,
    }
}

fn experiment(text: &str) -> Experiment {
    let mut c = ExperimentConfig::parse(text).expect("acceptance config parses");
    c.override_seed(SEED);
    Experiment::new(c).expect("acceptance experiment builds")
}

fn mesh_n_large(default: usize) -> usize {
    std::env::var("ENCOPT_ACCEPTANCE_N").ok().and_then(|v| v.parse().ok()).unwrap_or(default)
}

/// Linear-interpolation quantile of unsorted data.
fn quantile(v: &[f64], p: f64) -> f64 {
    let mut s = v.to_vec();
    s.sort_by(f64::total_cmp);
    let x = p * (s.len() - 1) as f64;
    let (lo, hi) = (x.floor() as usize, x.ceil() as usize);
    s[lo] + (s[hi] - s[lo]) * (x - lo as f64)
}

fn column(out: &StudyOutput, table: &str, col: &str) -> Vec<String> {
    let t = out.table(table).expect("table present");
    let c = t.column(col).expect("column present");
    t.rows.iter().map(|r| r[c].clone()).collect()
}

fn num_column(out: &StudyOutput, table: &str, col: &str) -> Vec<f64> {
    out.table(table).expect("table present").column_f64(col).expect("column present")
}

fn random_weights(n_w: usize, n_s: usize, seed: u64) -> EncodingWeights {
    WeightSampler::new(WeightDistribution::UniformSphere, n_w, n_s, seed, 0).unwrap().sample()
}

fn criterion_1() -> Outcome {
    let start = Instant::now();
    let exp = experiment(&GRADCHECK_CONFIG.replace("mesh.n = 6", "mesh.n = 8"));
    let p = exp.problem(exp.config.target.medium).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(SEED + 1);
    let mut c = Counters::new();
    let steps = [1e-2, 1e-3, 1e-4, 1e-5, 1e-6];
    let mut worst = 0.0f64;
    for pair in 0..3 {
        let w = random_weights(2, p.model.n_sources(), SEED + pair);
        let m = random_medium(&p, 0.2, &mut rng);
        let mut st = InnerState::new(&p, &w, &m, &mut c).unwrap();
        st.compute_adjoints(&p, &mut c).unwrap();
        let g = grad_j(&p, &st).unwrap();
        for _ in 0..5 {
            let d = random_direction(m.len(), &mut rng);
            let (best, _) = fd_scan(&steps, g.dot(&d), |h| eval_j(&p, &w, &(&m + &d * h), &mut c)).unwrap();
            worst = worst.max(best.rel_err);
        }
    }
    let t = start.elapsed();
    outcome(
        1,
        "inner gradient vs FD",
        worst <= 1e-5 && t < Duration::from_secs(60),
        format!("worst rel err {worst:.2e} (tol 1e-5), {:.1}s at n=8 (budget 60s)", t.as_secs_f64()),
    )
}

fn criterion_2() -> Outcome {
    let exp = experiment(GRADCHECK_CONFIG);
    let p = exp.problem(exp.config.target.medium).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(SEED + 2);
    let mut c = Counters::new();
    let (mut sym, mut zero, mut deficit) = (0.0f64, 0.0f64, f64::NEG_INFINITY);
    for pair in 0..10 {
        let w = random_weights(2, p.model.n_sources(), SEED + 100 + pair);
        let m = random_medium(&p, 0.2, &mut rng);
        let mut st = InnerState::new(&p, &w, &m, &mut c).unwrap();
        let (x, y) = (random_direction(m.len(), &mut rng), random_direction(m.len(), &mut rng));
        for v in [&x, &y] {
            let full = apply_hessian(&p, &st, HessianKind::Full, v, &mut c).unwrap();
            let gn = apply_hessian(&p, &st, HessianKind::GaussNewton, v, &mut c).unwrap();
            zero = zero.max((&full - &gn).amax() / gn.amax());
            let prior_q = v.dot(&p.prior.apply_r(v));
            deficit = deficit.max((prior_q - v.dot(&gn)) / prior_q);
        }
        st.compute_adjoints(&p, &mut c).unwrap();
        for kind in [HessianKind::Full, HessianKind::GaussNewton] {
            sym = sym.max(symmetry_defect(&p, &st, kind, &x, &y, &mut c).unwrap().0);
        }
    }
    // roundoff allowance on the GN-minus-prior form
    outcome(
        2,
        "Hessian symmetry, Full=GN at p=0, GN >= prior",
        sym <= 1e-9 && zero <= 1e-12 && deficit <= 1e-12,
        format!("symmetry {sym:.2e} (tol 1e-9), |Full-GN| {zero:.2e} (tol 1e-12), max (prior-GN)/prior {deficit:.2e} (tol 1e-12)"),
    )
}

fn criterion_3() -> Outcome {
    let start = Instant::now();
    let out = run_study("gradcheck", GRADCHECK_CONFIG, Some(SEED)).unwrap();
    let t = start.elapsed();
    let mut worst = 0.0f64;
    for kind in PhiKind::ALL {
        for part in ["outer_trace_gradient", "outer_penalty_gradient"] {
            let v: f64 = out.meta.get(&format!("worst_{part}_{}", kind.name())).unwrap().parse().unwrap();
            worst = worst.max(v);
        }
    }
    outcome(
        3,
        "outer gradient vs FD, all kinds",
        worst <= 1e-4 && out.failures.is_empty() && t < Duration::from_secs(600),
        format!(
            "worst rel err {worst:.2e} (tol 1e-4), {} check failures, {:.1}s at n=6 N_s=4 N_w=2 n_tr=3 (budget 600s)",
            out.failures.len(),
            t.as_secs_f64()
        ),
    )
}

fn criterion_4() -> Outcome {
    let exp = experiment("mesh.n = 10");
    let p = exp.problem(Medium::Medium1).unwrap();
    let mut c = Counters::new();
    let r = solve_map(&p, &EncodingWeights::identity(2), &p.prior.m0, &exp.map_options(), &mut c).unwrap();
    assert!(r.converged);
    let exact = posterior_trace_exact(&p, &r.state, HessianKind::Full, &mut c).unwrap();
    let estimate = |n_tr: usize, k: u64, c: &mut Counters| {
        let z = exp.z_set(n_tr, derive_seed(SEED, tags::TRACE, k)).unwrap();
        posterior_trace_estimated(&p, &r.state, HessianKind::Full, &z, 1e-10, 1000, c).unwrap().value
    };
    let values: Vec<f64> = (0..50).map(|k| estimate(10, k, &mut c)).collect();
    let mean = values.iter().sum::<f64>() / 50.0;
    let sd = (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / 49.0).sqrt();
    let se = sd / 50f64.sqrt();
    let single = estimate(30, 1000, &mut c);
    let single_err = (single - exact).abs() / exact;
    outcome(
        4,
        "trace estimator consistency",
        (mean - exact).abs() <= 3.0 * se && single_err <= 0.15,
        format!(
            "exact {exact:.4}, mean of 50 {mean:.4}, |diff| {:.3} vs 3 SE {:.3}; n_tr=30 error {:.1}% (tol 15%)",
            (mean - exact).abs(),
            3.0 * se,
            100.0 * single_err
        ),
    )
}

fn criterion_5() -> Outcome {
    let exp = experiment("mesh.n = 10");
    let model = exp.model().unwrap();
    let m_true = exp.m_true(Medium::Medium2);
    let data = model.generate_synthetic_data(&m_true, 0.0, 1.0, SEED).unwrap();
    let mut prior = exp.prior.clone();
    prior.m0 = m_true.clone();
    let p = InverseProblem::new(model, prior, data).unwrap();
    let mut c = Counters::new();
    let (mut worst, mut grad) = (0.0f64, 0.0f64);
    for w in [EncodingWeights::identity(2), random_weights(1, 2, SEED + 5)] {
        // the prior mean and the noiseless data make m_true stationary
        let mut st = InnerState::new(&p, &w, &m_true, &mut c).unwrap();
        st.compute_adjoints(&p, &mut c).unwrap();
        grad = grad.max(grad_j(&p, &st).unwrap().amax());
        let full = posterior_trace_exact(&p, &st, HessianKind::Full, &mut c).unwrap();
        let gn = posterior_trace_exact(&p, &st, HessianKind::GaussNewton, &mut c).unwrap();
        worst = worst.max((full - gn).abs() / gn);
    }
    outcome(
        5,
        "zero-residual equality of GN and Laplace",
        worst <= 1e-9 && grad <= 1e-10,
        format!("max |Phi_L - Phi_GN| / Phi_GN {worst:.2e} (tol 1e-9), |grad J(m_true)| {grad:.1e}"),
    )
}

fn criterion_6() -> Outcome {
    let exp = experiment("mesh.n = 6\ngeometry.preset = \"ten\"\ntarget.medium = \"medium10src\"");
    let p = exp.problem(Medium::Medium10src).unwrap();
    let opts = exp.phi_options();
    let z = exp.z_set(5, SEED).unwrap();
    let w = random_weights(2, 10, SEED + 6);
    let base = eval_phi(&p, PhiKind::LaplaceAtMap, &w, &z, &opts, None).unwrap();
    let g = phi_gradient(&p, &base, &opts).unwrap().grad;
    let (mut dm, mut dphi, mut dg) = (0.0f64, 0.0f64, 0.0f64);
    for flip in [vec![0], vec![1], vec![0, 1]] {
        let wf = flip.iter().fold(w.clone(), |acc, &i| acc.negate_block(i));
        let e = eval_phi(&p, PhiKind::LaplaceAtMap, &wf, &z, &opts, None).unwrap();
        let gf = phi_gradient(&p, &e, &opts).unwrap().grad;
        dm = dm.max((&e.state.m - &base.state.m).amax() / base.state.m.amax());
        dphi = dphi.max((e.value - base.value).abs() / base.value.abs());
        let expected = DVector::from_fn(g.len(), |k, _| if flip.contains(&(k / 10)) { -g[k] } else { g[k] });
        dg = dg.max((&gf - &expected).amax() / g.amax());
    }
    let cg_tol = opts.cg_rel_tol;
    outcome(
        6,
        "block-sign symmetry of MAP and Phi",
        dm <= 1e-8 && dphi <= 10.0 * cg_tol && dg <= 1e-6,
        format!("MAP {dm:.2e} (tol 1e-8), Phi {dphi:.2e} (tol {:.0e}), gradient equivariance {dg:.2e} (tol 1e-6)", 10.0 * cg_tol),
    )
}

fn criterion_7() -> Outcome {
    let out = run_study("counter-audit", COUNTER_CONFIG, Some(SEED)).unwrap();
    let rows = out.table("counter_audit").unwrap().rows.len();
    outcome(
        7,
        "solve counts match the cost model",
        out.failures.is_empty() && rows >= 11,
        format!("{rows} phase rows, {} mismatches", out.failures.len()),
    )
}

fn criterion_8() -> Outcome {
    let n = mesh_n_large(10);
    let text = format!(
        "mesh.n = {n}\ngeometry.preset = \"ten\"\ntarget.medium = \"medium10src\"\naopt.n_tr = 10\n\
         random_vs_optimal.n_w_list = [3]\nrandom_vs_optimal.sample_count = 100\nrandom_vs_optimal.n_restarts = 5"
    );
    let start = Instant::now();
    let out = run_study("random-vs-optimal", &text, Some(SEED)).unwrap();
    let t = start.elapsed();
    let methods = column(&out, "random_vs_optimal", "method");
    let phi = num_column(&out, "random_vs_optimal", "phi_L");
    let misfit = num_column(&out, "random_vs_optimal", "rel_misfit");
    let pick = |random: bool| -> Vec<usize> { (0..methods.len()).filter(|&k| (methods[k] == "random") == random).collect() };
    let (rand_idx, opt_idx) = (pick(true), pick(false));
    let rand_phi: Vec<f64> = rand_idx.iter().map(|&k| phi[k]).collect();
    let rand_mis: Vec<f64> = rand_idx.iter().map(|&k| misfit[k]).collect();
    let best = *opt_idx.iter().min_by(|&&a, &&b| phi[a].total_cmp(&phi[b])).unwrap();
    let (p5, med) = (quantile(&rand_phi, 0.05), quantile(&rand_mis, 0.5));
    outcome(
        8,
        "A-optimal weights beat random ones",
        rand_idx.len() == 100 && opt_idx.len() == 10 && phi[best] <= p5 && misfit[best] <= med && t < Duration::from_secs(7200),
        format!(
            "best {} Phi_L {:.3} vs random 5th pct {p5:.3}; its misfit {:.4} vs random median {med:.4}; {}/{} rows; {:.0}s at n={n}",
            methods[best],
            phi[best],
            misfit[best],
            rand_idx.len() + opt_idx.len(),
            110,
            t.as_secs_f64()
        ),
    )
}

fn criterion_9() -> Outcome {
    let n = mesh_n_large(6);
    let text = format!(
        "mesh.n = {n}\ngeometry.preset = \"ten\"\ntarget.medium = \"medium10src\"\naopt.max_iters = 60\n\
         variability.n_w = 3\nvariability.n_tr_list = [30, 4]\nvariability.repeats = 20"
    );
    let start = Instant::now();
    let out = run_study("variability", &text, Some(SEED)).unwrap();
    let n_tr = num_column(&out, "variability", "n_tr");
    let phi = num_column(&out, "variability", "phi_L_final");
    let iqr = |want: f64| {
        let v: Vec<f64> = n_tr.iter().zip(&phi).filter(|(k, _)| **k == want).map(|(_, p)| *p).collect();
        (quantile(&v, 0.75) - quantile(&v, 0.25), v.len())
    };
    let ((iqr30, c30), (iqr4, c4)) = (iqr(30.0), iqr(4.0));
    outcome(
        9,
        "variability shrinks with more trace vectors",
        c30 == 20 && c4 == 20 && iqr30 <= iqr4,
        format!(
            "IQR of final Phi_L: {iqr30:.3} at n_tr=30 vs {iqr4:.3} at n_tr=4 ({c30}+{c4} rows, {:.0}s at n={n})",
            start.elapsed().as_secs_f64()
        ),
    )
}

fn interior_minima(v: &[f64]) -> usize {
    (1..v.len() - 1).filter(|&k| v[k] < v[k - 1] && v[k] < v[k + 1]).count()
}

fn criterion_10() -> Outcome {
    let out = run_study("sweep1d", "mesh.n = 10\nsweep.points = 101", Some(SEED)).unwrap();
    let mut finite = true;
    let mut max_diff = 0.0f64;
    let mut details = Vec::new();
    let mut minima_ok = false;
    for medium in ["medium1", "medium2"] {
        let table = format!("sweep1d_{medium}");
        let full = num_column(&out, &table, "phi_full");
        let gn = num_column(&out, &table, "phi_gn");
        finite &= full.iter().chain(&gn).all(|v| v.is_finite());
        max_diff = max_diff.max(full.iter().zip(&gn).map(|(a, b)| (a - b).abs() / b.abs()).fold(0.0, f64::max));
        let (mf, mg) = (interior_minima(&full), interior_minima(&gn));
        minima_ok |= mf >= 2 && mg >= 2;
        details.push(format!("{medium} minima L={mf} GN={mg}"));
    }
    let ok = finite && max_diff > 0.01 && minima_ok;
    Outcome {
        id: 10,
        title: "1-D sweep structure (qualitative)",
        status: if ok { Status::Pass } else { Status::Warn },
        detail: format!("finite {finite}, max |L-GN|/GN {:.1}%, {}", 100.0 * max_diff, details.join(", ")),
    }
}

fn criterion_11() -> Outcome {
    let text = "mesh.n = 4\nsweep.points = 5\ngn_robustness.s_values = [0.0, 1.0]\ntrace_effect.n_tr_list = [1, 3]\n\
                random_vs_optimal.n_w_list = [1]\nrandom_vs_optimal.sample_count = 2\nrandom_vs_optimal.n_restarts = 1\n\
                aopt.max_iters = 3\nvariability.n_w = 1\nvariability.n_tr_list = [2]\nvariability.repeats = 2\n\
                gradcheck.directions = 1\ngradcheck.steps = [1e-4]\nmap_run.weights = \"random\"";
    let mut differing = Vec::new();
    for study in encopt::harness::STUDIES {
        let a = run_study(study, text, Some(SEED)).unwrap();
        let b = run_study(study, text, Some(SEED)).unwrap();
        let same = a.tables.len() == b.tables.len() && a.tables.iter().zip(&b.tables).all(|(x, y)| x.to_csv() == y.to_csv());
        if !same || a.tables.is_empty() {
            differing.push(study);
        }
    }
    outcome(
        11,
        "byte-identical CSVs on re-run",
        differing.is_empty(),
        format!("{} studies, differing: {:?}", encopt::harness::STUDIES.len(), differing),
    )
}

#[test]
fn acceptance_criteria() {
    let criteria: [fn() -> Outcome; 11] = [
        criterion_1,
        criterion_2,
        criterion_3,
        criterion_4,
        criterion_5,
        criterion_6,
        criterion_7,
        criterion_8,
        criterion_9,
        criterion_10,
        criterion_11,
    ];
    let only: Option<Vec<usize>> = std::env::var("ENCOPT_ACCEPTANCE_ONLY")
        .ok()
        .map(|v| v.split(',').filter_map(|s| s.trim().parse().ok()).collect());
    // written through the handle so the report shows without --nocapture
    let mut out = std::io::stdout();
    writeln!(out).unwrap();
    let mut failed = Vec::new();
    for (k, f) in criteria.into_iter().enumerate() {
        if only.as_ref().is_some_and(|o| !o.contains(&(k + 1))) {
            continue;
        }
        let o = f();
        let tag = match o.status {
            Status::Pass => "PASS",
            Status::Fail => "FAIL",
            Status::Warn => "WARN",
        };
        writeln!(out, "[{tag}] criterion {:>2}: {} -- {}", o.id, o.title, o.detail).unwrap();
        if o.status == Status::Fail {
            failed.push(o.id);
        }
    }
    assert!(failed.is_empty(), "failed criteria: {failed:?}");
}
