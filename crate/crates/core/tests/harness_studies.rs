use encopt::harness::studies::{relative_misfit, sweep_weights, w1_grid};
use encopt::harness::{run_study, Experiment, ExperimentConfig, HarnessError, Medium, StudyOutput, STUDIES};

const SEED: u64 = 77;

const TINY: &str = "mesh.n = 4\nsweep.points = 7\nsweep.media = [\"medium1\"]\ngn_robustness.s_values = [0.0, 1.0]\n\
                    trace_effect.n_tr_list = [1, 30]\nrandom_vs_optimal.n_w_list = [1, 2]\nrandom_vs_optimal.sample_count = 3\n\
                    random_vs_optimal.n_restarts = 1\naopt.max_iters = 3\nvariability.n_w = 1\nvariability.n_tr_list = [2, 3]\n\
                    variability.repeats = 2\ngradcheck.directions = 1\ngradcheck.steps = [1e-4]\nmap_run.weights = \"random\"";

fn run(study: &str, extra: &str) -> StudyOutput {
    run_study(study, &format!("{TINY}\n{extra}"), Some(SEED)).unwrap()
}

fn col(out: &StudyOutput, table: &str, name: &str) -> Vec<f64> {
    out.table(table).unwrap().column_f64(name).unwrap()
}

fn close(a: f64, b: f64, rel: f64) -> bool {
    (a - b).abs() <= rel * a.abs().max(b.abs())
}

#[test]
fn grid_is_symmetric_with_unit_endpoints() {
    for points in [2, 5, 101] {
        let g = w1_grid(points);
        assert_eq!(g.len(), points);
        assert_eq!((g[0], g[points - 1]), (-1.0, 1.0));
        for k in 0..points {
            assert!((g[k] + g[points - 1 - k]).abs() < 1e-15);
            assert!((sweep_weights(g[k]).block_norms()[0] - 1.0).abs() < 1e-15);
        }
    }
}

#[test]
fn sweep_endpoints_are_the_same_source() {
    // w1 = -1 and w1 = 1 differ by a block sign flip
    let out = run("sweep1d", "");
    for c in ["phi_full", "phi_gn", "phi_gnlin"] {
        let v = col(&out, "sweep1d_medium1", c);
        assert!(close(v[0], v[v.len() - 1], 1e-8), "{c}: {} vs {}", v[0], v[v.len() - 1]);
        assert!(v.iter().all(|x| *x > 0.0));
    }
}

#[test]
fn criteria_coincide_without_residual() {
    // noiseless data from the prior mean: the MAP point is m0 and the residual vanishes
    let out = run("sweep1d", "noise.pct = 0.0\ntarget.bumps = []");
    let full = col(&out, "sweep1d_medium1", "phi_full");
    let gn = col(&out, "sweep1d_medium1", "phi_gn");
    let lin = col(&out, "sweep1d_medium1", "phi_gnlin");
    for k in 0..full.len() {
        assert!(close(full[k], gn[k], 1e-10), "row {k}: {} vs {}", full[k], gn[k]);
        assert!(close(gn[k], lin[k], 1e-10), "row {k}");
    }
}

#[test]
fn robustness_at_the_prior_mean_is_the_linearized_sweep() {
    let sweep = run("sweep1d", "");
    let rob = run("gn-robustness", "");
    let lin = col(&sweep, "sweep1d_medium1", "phi_gnlin");
    let s = col(&rob, "gn_robustness", "s");
    let v = col(&rob, "gn_robustness", "phi_gn_fixed");
    assert_eq!(s.len(), 2 * lin.len());
    assert!(v.iter().all(|x| *x > 0.0));
    for k in 0..lin.len() {
        assert_eq!(s[k], 0.0);
        assert!(close(v[k], lin[k], 1e-10), "row {k}: {} vs {}", v[k], lin[k]);
    }
}

#[test]
fn trace_effect_exact_column_is_the_sweep() {
    let sweep = run("sweep1d", "");
    let te = run("trace-effect", "");
    let full = col(&sweep, "sweep1d_medium1", "phi_full");
    let exact = col(&te, "trace_effect", "exact");
    let est = col(&te, "trace_effect", "est_30");
    assert_eq!(te.table("trace_effect").unwrap().header, ["w1", "exact", "est_1", "est_30"]);
    for k in 0..full.len() {
        assert!(close(full[k], exact[k], 1e-10));
    }
    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    assert!(close(mean(&est), mean(&exact), 0.15), "{} vs {}", mean(&est), mean(&exact));
}

#[test]
fn random_vs_optimal_rows_and_reference() {
    let out = run("random-vs-optimal", "");
    let t = out.table("random_vs_optimal").unwrap();
    // 3 random + 1 restart for each of 2 kinds, per N_w in [1, 2]
    assert_eq!(t.rows.len() + out.meta.get("excluded_rows").unwrap().parse::<usize>().unwrap(), 2 * (3 + 2));
    let methods: Vec<&str> = t.rows.iter().map(|r| r[0].as_str()).collect();
    assert!(methods.iter().all(|m| ["random", "aopt_gn", "aopt_laplace"].contains(m)));
    assert!(col(&out, "random_vs_optimal", "rel_misfit").iter().all(|x| *x >= 0.0));
    assert!(col(&out, "random_vs_optimal", "phi_L").iter().all(|x| *x > 0.0));

    let exp = Experiment::new({
        let mut c = ExperimentConfig::parse(TINY).unwrap();
        c.override_seed(SEED);
        c
    })
    .unwrap();
    let p = exp.problem(Medium::Medium10src).unwrap();
    assert_eq!(relative_misfit(&p, &p.prior.m0, &p.prior.m0), 0.0);
}

#[test]
fn variability_has_one_row_per_repeat() {
    let out = run("variability", "");
    let t = out.table("variability").unwrap();
    assert_eq!(t.rows.len(), 2 * 2);
    // initial guesses depend on the repeat index only
    let init = col(&out, "variability", "init_seed");
    assert_eq!(init[0], init[2]);
    assert_ne!(init[0], init[1]);
}

#[test]
fn every_study_writes_complete_metadata() {
    for study in STUDIES {
        let out = run(study, "");
        assert!(!out.tables.is_empty(), "{study}");
        for key in ["study", "version", "config_sha256", "seed_noise", "seed_weights", "seed_trace", "mesh_n", "wall_time_s", "total_forward_solves"] {
            assert!(out.meta.get(key).is_some(), "{study} lacks {key}");
        }
        assert_eq!(out.meta.get("study"), Some(study));
        for t in &out.tables {
            assert!(t.rows.iter().all(|r| r.len() == t.header.len()), "{study}/{}", t.name);
            assert_eq!(t.to_csv().lines().next().unwrap(), t.header.join(","));
        }
    }
}

#[test]
fn configuration_errors_are_reported_as_such() {
    let bad = [
        ("mesh.n = 4\nmesh.bogus = 1", Some(SEED)),
        ("mesh.n = 4", None),
        ("mesh.n = 0", Some(SEED)),
        ("geometry.sources = [[1.5, 0.5], [0.1, 0.1]]", Some(SEED)),
    ];
    for (text, seed) in bad {
        match run_study("forward", text, seed) {
            Err(e @ HarnessError::Config(_)) => assert_eq!(e.exit_code(), 2),
            other => panic!("{text:?}: {other:?}"),
        }
    }
    assert!(matches!(run_study("nope", "mesh.n = 2", Some(1)), Err(HarnessError::Config(_))));
}

#[test]
fn map_accepts_a_roundoff_limited_minimizer() {
    // this draw's gradient floor sits just above the default 1e-8 target
    use encopt::aopt::WeightSampler;
    use encopt::counters::Counters;
    use encopt::harness::{derive_seed, tags};
    use encopt::map_solver::solve_map;
    let text = "mesh.n = 6\ngeometry.preset = \"ten\"\ntarget.medium = \"medium10src\"";
    let mut c = ExperimentConfig::parse(text).unwrap();
    c.override_seed(20_240_611);
    let exp = Experiment::new(c).unwrap();
    let p = exp.problem(Medium::Medium10src).unwrap();
    let seed = derive_seed(exp.seeds.weights, tags::RANDOM_WEIGHTS + 16 * 3, 3);
    let w = WeightSampler::new(exp.config.aopt.distribution, 3, 10, seed, 0).unwrap().sample();
    let r = solve_map(&p, &w, &p.prior.m0, &exp.map_options(), &mut Counters::new()).unwrap();
    assert!(r.converged && r.roundoff_limited && r.failure.is_none());
    let rel = r.relative_grad_norm();
    assert!(rel > 1e-8 && rel < 1e-7, "{rel}");
    let last = &r.costs[r.costs.len() - 2..];
    assert_eq!(last[0], last[1]);
}
