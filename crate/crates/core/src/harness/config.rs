//! Strict experiment configuration.
//!
//! The file is TOML restricted in practice to flat dotted keys:
//!
//! ```text
//! mesh.n = 10
//! prior.gamma = 1e-3
//! target.medium = "medium2"
//! aopt.seed_trace = 7
//! ```
//!
//! `[section]` headers are equivalent. Unknown keys are rejected. Every key
//! has a default except the seeds, which must be given in the file or on the
//! command line. Positions are fractions of the domain side.

use std::f64::consts::PI;

use serde::Deserialize;

use super::media::Medium;
use crate::aopt::{PhiKind, WeightDistribution};
use crate::helmholtz::DEFAULT_SIDE;
use crate::prior::PriorSpec;

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MeshConfig {
    /// Cells per side.
    pub n: usize,
    pub side: f64,
}

impl Default for MeshConfig {
    fn default() -> Self {
        Self { n: 10, side: DEFAULT_SIDE }
    }
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct HelmholtzConfig {
    pub kappa: f64,
}

impl Default for HelmholtzConfig {
    fn default() -> Self {
        Self { kappa: 2.0 * PI }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GeometryPreset {
    Two,
    Ten,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SourceModelConfig {
    Point,
    Mollifier,
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GeometryConfig {
    pub preset: GeometryPreset,
    /// Replaces the preset sources.
    pub sources: Option<Vec<[f64; 2]>>,
    /// Replaces the preset receivers.
    pub receivers: Option<Vec<[f64; 2]>>,
    pub eps_source: f64,
    pub source_model: SourceModelConfig,
}

impl Default for GeometryConfig {
    fn default() -> Self {
        Self {
            preset: GeometryPreset::Two,
            sources: None,
            receivers: None,
            eps_source: 1e-6,
            source_model: SourceModelConfig::Point,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NoiseConfig {
    /// Noise std as a fraction of each source's peak observation.
    pub pct: f64,
    /// Likelihood standard deviation.
    pub sigma: f64,
    pub seed: Option<u64>,
}

impl Default for NoiseConfig {
    fn default() -> Self {
        Self {
            pct: 0.02,
            sigma: 1.0,
            seed: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TargetConfig {
    pub medium: Medium,
    /// `[cx, cy, amplitude, radius]` rows replacing the preset bumps.
    pub bumps: Option<Vec<[f64; 4]>>,
}

impl Default for TargetConfig {
    fn default() -> Self {
        Self {
            medium: Medium::Medium1,
            bumps: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MapConfig {
    pub rel_tol: f64,
    pub max_iters: usize,
    pub cg_max_iters: usize,
}

impl Default for MapConfig {
    fn default() -> Self {
        Self {
            rel_tol: 1e-8,
            max_iters: 100,
            cg_max_iters: 500,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AoptConfig {
    pub kind: PhiKind,
    pub lambda: f64,
    pub n_tr: usize,
    pub max_iters: usize,
    pub tol: f64,
    pub seed_weights: Option<u64>,
    pub seed_trace: Option<u64>,
    pub cg_tol: f64,
    pub distribution: WeightDistribution,
    /// Scale optimized blocks onto the unit sphere before reporting.
    pub renormalize: bool,
}

impl Default for AoptConfig {
    fn default() -> Self {
        Self {
            kind: PhiKind::LaplaceAtMap,
            lambda: 1e3,
            n_tr: 10,
            max_iters: 200,
            tol: 1e-6,
            seed_weights: None,
            seed_trace: None,
            cg_tol: 1e-10,
            distribution: WeightDistribution::UniformSphere,
            renormalize: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SweepConfig {
    pub points: usize,
    /// Media swept by `sweep1d`, one CSV each.
    pub media: Vec<Medium>,
}

impl Default for SweepConfig {
    fn default() -> Self {
        Self {
            points: 101,
            media: vec![Medium::Medium1, Medium::Medium2],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GnRobustnessConfig {
    pub s_values: Vec<f64>,
}

impl Default for GnRobustnessConfig {
    fn default() -> Self {
        Self {
            s_values: vec![0.0, 0.5, 1.0],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TraceEffectConfig {
    pub n_tr_list: Vec<usize>,
}

impl Default for TraceEffectConfig {
    fn default() -> Self {
        Self {
            n_tr_list: vec![1, 10, 30],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RandomVsOptimalConfig {
    pub n_w_list: Vec<usize>,
    pub sample_count: usize,
    pub n_restarts: usize,
    pub kinds: Vec<PhiKind>,
}

impl Default for RandomVsOptimalConfig {
    fn default() -> Self {
        Self {
            n_w_list: vec![1, 2, 3, 6],
            sample_count: 100,
            n_restarts: 5,
            kinds: vec![PhiKind::GaussNewtonAtMap, PhiKind::LaplaceAtMap],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct VariabilityConfig {
    pub n_w: usize,
    pub n_tr_list: Vec<usize>,
    pub repeats: usize,
}

impl Default for VariabilityConfig {
    fn default() -> Self {
        Self {
            n_w: 3,
            n_tr_list: vec![30, 10, 4],
            repeats: 20,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GradcheckConfig {
    pub directions: usize,
    pub n_w: usize,
    pub n_tr: usize,
    /// Finite-difference steps scanned; the smallest error is reported.
    pub steps: Vec<f64>,
    pub inner_tol: f64,
    pub symmetry_tol: f64,
    pub outer_tol: f64,
    /// Test hook: perturb the analytic gradients so the checks must fail.
    pub corrupt: bool,
}

impl Default for GradcheckConfig {
    fn default() -> Self {
        Self {
            directions: 5,
            n_w: 2,
            n_tr: 3,
            steps: vec![1e-2, 1e-3, 1e-4, 1e-5, 1e-6],
            inner_tol: 1e-5,
            symmetry_tol: 1e-9,
            outer_tol: 1e-4,
            corrupt: false,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MapWeights {
    /// Every source on its own.
    Identity,
    /// `map.n_w` random blocks.
    Random,
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MapRunConfig {
    pub weights: MapWeights,
    pub n_w: usize,
}

impl Default for MapRunConfig {
    fn default() -> Self {
        Self {
            weights: MapWeights::Identity,
            n_w: 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    pub mesh: MeshConfig,
    pub helmholtz: HelmholtzConfig,
    pub geometry: GeometryConfig,
    pub prior: PriorSpec,
    pub noise: NoiseConfig,
    pub target: TargetConfig,
    pub map: MapConfig,
    pub aopt: AoptConfig,
    pub sweep: SweepConfig,
    pub gn_robustness: GnRobustnessConfig,
    pub trace_effect: TraceEffectConfig,
    pub random_vs_optimal: RandomVsOptimalConfig,
    pub variability: VariabilityConfig,
    pub gradcheck: GradcheckConfig,
    pub map_run: MapRunConfig,
}

/// Seeds after command-line overrides.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Seeds {
    pub noise: u64,
    pub weights: u64,
    pub trace: u64,
}

impl ExperimentConfig {
    pub fn parse(text: &str) -> Result<Self, String> {
        let cfg: Self = toml::from_str(text).map_err(|e| e.to_string())?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// `--seed` replaces all three seeds.
    pub fn override_seed(&mut self, seed: u64) {
        self.noise.seed = Some(seed);
        self.aopt.seed_weights = Some(seed);
        self.aopt.seed_trace = Some(seed);
    }

    pub fn seeds(&self) -> Result<Seeds, String> {
        let need = |v: Option<u64>, key: &str| v.ok_or_else(|| format!("missing seed {key} (set it in the config or pass --seed)"));
        Ok(Seeds {
            noise: need(self.noise.seed, "noise.seed")?,
            weights: need(self.aopt.seed_weights, "aopt.seed_weights")?,
            trace: need(self.aopt.seed_trace, "aopt.seed_trace")?,
        })
    }

    pub fn validate(&self) -> Result<(), String> {
        let pos = |v: f64, key: &str| {
            if v.is_finite() && v > 0.0 {
                Ok(())
            } else {
                Err(format!("{key} must be positive, got {v}"))
            }
        };
        let nonzero = |v: usize, key: &str| if v > 0 { Ok(()) } else { Err(format!("{key} must be at least 1")) };
        nonzero(self.mesh.n, "mesh.n")?;
        pos(self.mesh.side, "mesh.side")?;
        pos(self.helmholtz.kappa, "helmholtz.kappa")?;
        pos(self.geometry.eps_source, "geometry.eps_source")?;
        self.prior.validate().map_err(|e| e.to_string())?;
        if !(self.noise.pct >= 0.0 && self.noise.pct.is_finite()) {
            return Err(format!("noise.pct must be non-negative, got {}", self.noise.pct));
        }
        pos(self.noise.sigma, "noise.sigma")?;
        pos(self.map.rel_tol, "map.rel_tol")?;
        nonzero(self.map.max_iters, "map.max_iters")?;
        nonzero(self.map.cg_max_iters, "map.cg_max_iters")?;
        if !(self.aopt.lambda >= 0.0 && self.aopt.lambda.is_finite()) {
            return Err(format!("aopt.lambda must be non-negative, got {}", self.aopt.lambda));
        }
        nonzero(self.aopt.n_tr, "aopt.n_tr")?;
        pos(self.aopt.tol, "aopt.tol")?;
        pos(self.aopt.cg_tol, "aopt.cg_tol")?;
        if self.sweep.points < 2 {
            return Err("sweep.points must be at least 2".into());
        }
        if self.sweep.media.is_empty() {
            return Err("sweep.media must not be empty".into());
        }
        if let Some(s) = self.gn_robustness.s_values.iter().find(|s| !s.is_finite()) {
            return Err(format!("gn_robustness.s_values has non-finite entry {s}"));
        }
        if self.trace_effect.n_tr_list.contains(&0) || self.variability.n_tr_list.contains(&0) {
            return Err("n_tr lists must not contain 0".into());
        }
        if self.random_vs_optimal.n_w_list.contains(&0) {
            return Err("random_vs_optimal.n_w_list must not contain 0".into());
        }
        nonzero(self.variability.n_w, "variability.n_w")?;
        nonzero(self.gradcheck.n_w, "gradcheck.n_w")?;
        nonzero(self.gradcheck.n_tr, "gradcheck.n_tr")?;
        if self.gradcheck.steps.is_empty() || self.gradcheck.steps.iter().any(|h| !(*h > 0.0)) {
            return Err("gradcheck.steps must be a non-empty list of positive steps".into());
        }
        nonzero(self.map_run.n_w, "map_run.n_w")?;
        if let Some(b) = &self.target.bumps {
            if b.iter().flatten().any(|v| !v.is_finite()) || b.iter().any(|r| !(r[3] > 0.0)) {
                return Err("target.bumps rows need finite values and a positive radius".into());
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn flat_keys_and_defaults() {
        let c = ExperimentConfig::parse("mesh.n = 6\nprior.gamma = 2e-3\naopt.kind = \"gn_ref\"\ntarget.medium = \"medium2\"\n").unwrap();
        assert_eq!(c.mesh.n, 6);
        assert_eq!(c.prior.gamma, 2e-3);
        assert_eq!(c.prior.beta, 1e-4);
        assert_eq!(c.aopt.kind, PhiKind::GaussNewtonAtRef);
        assert_eq!(c.target.medium, Medium::Medium2);
        assert_eq!(c.mesh.side, DEFAULT_SIDE);
    }

    #[test]
    fn sections_are_equivalent() {
        let a = ExperimentConfig::parse("noise.pct = 0.05\n").unwrap();
        let b = ExperimentConfig::parse("[noise]\npct = 0.05\n").unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn rejects_unknown_and_invalid() {
        assert!(ExperimentConfig::parse("mesh.nn = 3").is_err());
        assert!(ExperimentConfig::parse("foo = 1").is_err());
        assert!(ExperimentConfig::parse("mesh.n = 0").is_err());
        assert!(ExperimentConfig::parse("prior.beta = -1.0").is_err());
        assert!(ExperimentConfig::parse("aopt.kind = \"newton\"").is_err());
        assert!(ExperimentConfig::parse("mesh.n = \"ten\"").is_err());
    }

    #[test]
    fn seeds_must_be_present() {
        let mut c = ExperimentConfig::parse("noise.seed = 1\naopt.seed_weights = 2").unwrap();
        assert!(c.seeds().is_err());
        c.aopt.seed_trace = Some(3);
        assert_eq!(c.seeds().unwrap(), Seeds { noise: 1, weights: 2, trace: 3 });
        c.override_seed(9);
        assert_eq!(c.seeds().unwrap(), Seeds { noise: 9, weights: 9, trace: 9 });
    }
}
