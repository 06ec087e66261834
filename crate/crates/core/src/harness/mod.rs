//! Experiment harness: configuration, synthetic media, the reproduction
//! studies, gradient and cost checks, and CSV output.

pub mod checks;
pub mod config;
pub mod media;
pub mod output;
pub mod studies;

use std::sync::Arc;

use nalgebra::DVector;
use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

pub use config::{ExperimentConfig, Seeds};
pub use media::Medium;
pub use output::{Metadata, StudyOutput, Table};

use crate::aopt::PhiOptions;
use crate::fem::Discretization;
use crate::helmholtz::{Geometry, HelmholtzModel, SourceModel};
use crate::map_solver::{InverseProblem, MapOptions};
use crate::prior::Prior;
use config::{GeometryPreset, SourceModelConfig};

#[derive(Debug, thiserror::Error)]
pub enum HarnessError {
    #[error("config error: {0}")]
    Config(String),
    #[error("solver failure: {0}")]
    Solver(#[from] crate::Error),
    #[error("check failed: {0}")]
    Check(String),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

impl HarnessError {
    /// 2 config (and I/O), 3 solver, 4 check.
    pub fn exit_code(&self) -> i32 {
        match self {
            HarnessError::Config(_) | HarnessError::Io(_) => 2,
            HarnessError::Solver(_) => 3,
            HarnessError::Check(_) => 4,
        }
    }
}

pub type HarnessResult<T> = std::result::Result<T, HarnessError>;

/// Per-task seed: word `index` of ChaCha8 stream `tag` keyed by `master`.
pub fn derive_seed(master: u64, tag: u64, index: u64) -> u64 {
    let mut rng = ChaCha8Rng::seed_from_u64(master);
    rng.set_stream(tag);
    rng.set_word_pos(2 * index as u128);
    rng.next_u64()
}

/// Stream tags of [`derive_seed`].
pub mod tags {
    pub const TRACE: u64 = 1;
    pub const RANDOM_WEIGHTS: u64 = 2;
    pub const RESTART_WEIGHTS: u64 = 3;
    pub const VARIABILITY_TRACE: u64 = 4;
    pub const VARIABILITY_INIT: u64 = 5;
    pub const GRADCHECK: u64 = 6;
    pub const MAP_WEIGHTS: u64 = 7;
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

/// Discretization, prior and geometry shared by the studies of one run.
#[derive(Debug, Clone)]
pub struct Experiment {
    pub config: ExperimentConfig,
    pub seeds: Seeds,
    pub disc: Arc<Discretization>,
    pub prior: Prior,
}

impl Experiment {
    pub fn new(config: ExperimentConfig) -> HarnessResult<Self> {
        config.validate().map_err(HarnessError::Config)?;
        let seeds = config.seeds().map_err(HarnessError::Config)?;
        let disc = Arc::new(Discretization::square(config.mesh.n, config.mesh.side)?);
        let prior = Prior::new(config.prior, &disc)?;
        Ok(Self {
            config,
            seeds,
            disc,
            prior,
        })
    }

    pub fn side(&self) -> f64 {
        self.config.mesh.side
    }

    /// Configured geometry in physical coordinates.
    pub fn geometry(&self) -> Geometry {
        let g = &self.config.geometry;
        let mut base = match g.preset {
            GeometryPreset::Two => Geometry::two_source(),
            GeometryPreset::Ten => Geometry::ten_source(),
        };
        if let Some(s) = &g.sources {
            base.sources = s.clone();
        }
        if let Some(r) = &g.receivers {
            base.receivers = r.clone();
        }
        base.eps_source = g.eps_source;
        base.source_model = match g.source_model {
            SourceModelConfig::Point => SourceModel::Point,
            SourceModelConfig::Mollifier => SourceModel::Mollifier,
        };
        let mut scaled = base.scaled(self.side());
        scaled.eps_source = g.eps_source * self.side();
        scaled
    }

    pub fn model(&self) -> HarnessResult<HelmholtzModel> {
        HelmholtzModel::new(self.disc.clone(), self.config.helmholtz.kappa, self.geometry()).map_err(|e| match e {
            crate::Error::OutsideDomain { .. } | crate::Error::InvalidArgument(_) => HarnessError::Config(e.to_string()),
            e => HarnessError::Solver(e),
        })
    }

    pub fn bumps(&self, medium: Medium) -> Vec<[f64; 4]> {
        match &self.config.target.bumps {
            Some(b) => b.clone(),
            None => medium.bumps(),
        }
    }

    pub fn m_true(&self, medium: Medium) -> DVector<f64> {
        media::medium_field(&self.disc.param, &self.bumps(medium), self.side())
    }

    /// Model, prior and noisy synthetic data for `medium`.
    pub fn problem(&self, medium: Medium) -> HarnessResult<InverseProblem> {
        let model = self.model()?;
        let data = model.generate_synthetic_data(
            &self.m_true(medium),
            self.config.noise.pct,
            self.config.noise.sigma,
            self.seeds.noise,
        )?;
        Ok(InverseProblem::new(model, self.prior.clone(), data)?)
    }

    pub fn map_options(&self) -> MapOptions {
        MapOptions {
            rel_tol: self.config.map.rel_tol,
            max_iters: self.config.map.max_iters,
            cg_max_iters: self.config.map.cg_max_iters,
            ..Default::default()
        }
    }

    pub fn phi_options(&self) -> PhiOptions {
        PhiOptions {
            lambda: self.config.aopt.lambda,
            cg_rel_tol: self.config.aopt.cg_tol,
            map: self.map_options(),
            ..Default::default()
        }
    }

    /// `n_tr` trace vectors from ChaCha8 seeded with `seed`.
    pub fn z_set(&self, n_tr: usize, seed: u64) -> HarnessResult<Vec<DVector<f64>>> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Ok(self.prior.sample_trace_vectors(n_tr, &mut rng)?)
    }

    /// Metadata common to every study.
    pub fn base_metadata(&self, study: &str, config_text: &str) -> Metadata {
        let mut m = Metadata::default();
        m.set("study", study);
        m.set("version", env!("CARGO_PKG_VERSION"));
        m.set("config_sha256", sha256_hex(config_text.as_bytes()));
        m.set("seed_noise", self.seeds.noise);
        m.set("seed_weights", self.seeds.weights);
        m.set("seed_trace", self.seeds.trace);
        m.set("mesh_n", self.config.mesh.n);
        m.set("mesh_side", output::fmt_f64(self.side()));
        m.set("n_param", self.disc.n_param());
        m.set("n_state", self.disc.n_state());
        m
    }
}

/// Study names accepted by [`run_study`].
pub const STUDIES: [&str; 9] = [
    "sweep1d",
    "gn-robustness",
    "trace-effect",
    "random-vs-optimal",
    "variability",
    "gradcheck",
    "counter-audit",
    "forward",
    "map",
];

/// Parses `config_text`, applies the seed override and runs `study`.
pub fn run_study(study: &str, config_text: &str, seed: Option<u64>) -> HarnessResult<StudyOutput> {
    let mut config = ExperimentConfig::parse(config_text).map_err(HarnessError::Config)?;
    if let Some(s) = seed {
        config.override_seed(s);
    }
    let exp = Experiment::new(config)?;
    let meta = exp.base_metadata(study, config_text);
    match study {
        "sweep1d" => studies::run_sweep1d(&exp, meta),
        "gn-robustness" => studies::run_gn_robustness(&exp, meta),
        "trace-effect" => studies::run_trace_effect(&exp, meta),
        "random-vs-optimal" => studies::run_random_vs_optimal(&exp, meta),
        "variability" => studies::run_variability(&exp, meta),
        "gradcheck" => checks::run_gradcheck(&exp, meta),
        "counter-audit" => checks::run_counter_audit(&exp, meta),
        "forward" => studies::run_forward(&exp, meta),
        "map" => studies::run_map(&exp, meta),
        other => Err(HarnessError::Config(format!("unknown study {other:?}"))),
    }
}
