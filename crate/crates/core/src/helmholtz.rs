//! Encoded Helmholtz forward model `-Lap u - kappa^2 m u = f` with
//! homogeneous Neumann conditions on a square.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::counters::Counters;
use crate::error::{Error, Result};
use crate::fem::{mollifier_load_vector, point_source_vector, BandedLu, CsrMatrix, Discretization, Observation};

/// Default side length of the square domain. With `kappa = 2 pi` this puts
/// `kappa^2 L^2 = 3 pi^2` between the Neumann eigenvalues `2 pi^2` and `4 pi^2`
/// of the Laplacian, away from resonance of the background medium.
pub const DEFAULT_SIDE: f64 = 0.866_025_403_784_438_6;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SourceModel {
    /// Discrete Dirac `f_i = psi_i(x_s)`.
    Point,
    /// Load projection of the smooth bump of radius `eps_source`.
    Mollifier,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Geometry {
    pub sources: Vec<[f64; 2]>,
    pub receivers: Vec<[f64; 2]>,
    pub eps_source: f64,
    pub source_model: SourceModel,
}

impl Geometry {
    /// 20 receivers along `y = 0.95`, `x = 0.15 + 0.03895 k`.
    pub fn default_receivers() -> Vec<[f64; 2]> {
        (0..20).map(|k| [0.15 + 0.03895 * k as f64, 0.95]).collect()
    }

    /// One source near the left edge and one near the bottom edge.
    pub fn two_source() -> Self {
        Self {
            sources: vec![[0.08, 0.20], [0.37, 0.06]],
            receivers: Self::default_receivers(),
            eps_source: 1e-6,
            source_model: SourceModel::Point,
        }
    }

    /// Six sources on the left edge and four on the bottom edge.
    pub fn ten_source() -> Self {
        let left = (0..6).map(|k| [0.08, 0.50 - 0.072 * k as f64]);
        let bottom = (0..4).map(|k| [0.15 + 0.077 * k as f64, 0.06]);
        Self {
            sources: left.chain(bottom).collect(),
            receivers: Self::default_receivers(),
            eps_source: 1e-6,
            source_model: SourceModel::Point,
        }
    }

    /// Copy with every position multiplied by `side`, mapping the unit-square
    /// presets onto `[0, side]^2`.
    pub fn scaled(&self, side: f64) -> Self {
        let s = |v: &Vec<[f64; 2]>| v.iter().map(|p| [p[0] * side, p[1] * side]).collect();
        Self {
            sources: s(&self.sources),
            receivers: s(&self.receivers),
            ..self.clone()
        }
    }

    pub fn n_sources(&self) -> usize {
        self.sources.len()
    }

    pub fn n_receivers(&self) -> usize {
        self.receivers.len()
    }

    /// Checks counts, the source radius and that every point lies in `[0, side]^2`.
    pub fn validate(&self, side: f64) -> Result<()> {
        if self.sources.is_empty() || self.receivers.is_empty() {
            return Err(Error::InvalidArgument("geometry needs at least one source and one receiver".into()));
        }
        for p in self.sources.iter().chain(&self.receivers) {
            let inside = (0.0..=side).contains(&p[0]) && (0.0..=side).contains(&p[1]);
            if !inside {
                return Err(Error::OutsideDomain { x: p[0], y: p[1] });
            }
        }
        if !(self.eps_source > 0.0) {
            return Err(Error::InvalidArgument("source radius must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct HelmholtzModel {
    pub disc: Arc<Discretization>,
    pub kappa: f64,
    pub geometry: Geometry,
    pub observation: Observation,
    /// Per-source load vectors `f_j` on the state space.
    pub loads: Vec<DVector<f64>>,
}

impl HelmholtzModel {
    pub fn new(disc: Arc<Discretization>, kappa: f64, geometry: Geometry) -> Result<Self> {
        if !(kappa > 0.0) || !kappa.is_finite() {
            return Err(Error::InvalidArgument(format!("kappa must be positive, got {kappa}")));
        }
        geometry.validate(disc.side())?;
        let observation = Observation::new(&disc.state, &geometry.receivers)?;
        let loads = geometry
            .sources
            .iter()
            .map(|&s| match geometry.source_model {
                SourceModel::Point => point_source_vector(&disc.state, s),
                SourceModel::Mollifier => mollifier_load_vector(&disc.state, s, geometry.eps_source),
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            disc,
            kappa,
            geometry,
            observation,
            loads,
        })
    }

    pub fn n_sources(&self) -> usize {
        self.loads.len()
    }

    pub fn n_receivers(&self) -> usize {
        self.observation.n_receivers()
    }

    pub fn kappa2(&self) -> f64 {
        self.kappa * self.kappa
    }

    /// `A(m) = K - kappa^2 W(m)`.
    pub fn assemble(&self, m: &DVector<f64>) -> Result<CsrMatrix> {
        let w = self.disc.weighted_mass(m)?;
        Ok(self.disc.state_stiffness.add_scaled(-self.kappa2(), &w))
    }

    /// Factorize `A(m)`; counted in the active phase.
    pub fn factorize(&self, m: &DVector<f64>, counters: &mut Counters) -> Result<ForwardOperator> {
        let a = self.assemble(m)?;
        let lu = BandedLu::factorize(&a)?;
        counters.current_mut().factorizations += 1;
        Ok(ForwardOperator { lu, m: m.clone() })
    }

    /// `f(w) = sum_j w_j f_j`.
    pub fn encode_rhs(&self, w: &[f64]) -> Result<DVector<f64>> {
        if w.len() != self.n_sources() {
            return Err(Error::DimensionMismatch {
                what: "weight block",
                expected: self.n_sources(),
                got: w.len(),
            });
        }
        let mut f = DVector::zeros(self.disc.n_state());
        for (wj, fj) in w.iter().zip(&self.loads) {
            if *wj != 0.0 {
                f.axpy(*wj, fj, 1.0);
            }
        }
        Ok(f)
    }

    /// Solve `A(m) u = rhs` with a fresh factorization.
    pub fn forward_solve(&self, m: &DVector<f64>, rhs: &DVector<f64>, counters: &mut Counters) -> Result<DVector<f64>> {
        self.disc.check_state(rhs)?;
        self.factorize(m, counters)?.solve(rhs, counters)
    }

    /// `B u`.
    pub fn observe(&self, u: &DVector<f64>) -> DVector<f64> {
        self.observation.apply(u)
    }

    /// Per-source data with additive Gaussian noise of standard deviation
    /// `noise_pct * max_j |(B u_i)_j|` on row `i`.
    pub fn generate_synthetic_data(
        &self,
        m_true: &DVector<f64>,
        noise_pct: f64,
        noise_sigma: f64,
        seed: u64,
    ) -> Result<ObservationData> {
        if !(noise_pct >= 0.0) {
            return Err(Error::InvalidArgument(format!("noise level must be nonnegative, got {noise_pct}")));
        }
        if !(noise_sigma > 0.0) {
            return Err(Error::InvalidArgument(format!("noise sigma must be positive, got {noise_sigma}")));
        }
        let mut counters = Counters::new();
        let fwd = self.factorize(m_true, &mut counters)?;
        let (ns, q) = (self.n_sources(), self.n_receivers());
        let mut d = DMatrix::zeros(ns, q);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for i in 0..ns {
            let obs = self.observe(&fwd.solve(&self.loads[i], &mut counters)?);
            let scale = noise_pct * obs.amax();
            for j in 0..q {
                let xi: f64 = StandardNormal.sample(&mut rng);
                d[(i, j)] = obs[j] + scale * xi;
            }
        }
        Ok(ObservationData {
            per_source: d,
            noise_sigma,
            noise_pct,
            seed,
        })
    }
}

/// Factorized `A(m)`, reused across right-hand sides.
#[derive(Debug, Clone)]
pub struct ForwardOperator {
    lu: BandedLu,
    m: DVector<f64>,
}

impl ForwardOperator {
    pub fn parameter(&self) -> &DVector<f64> {
        &self.m
    }

    /// One counted solve. `A(m)` is symmetric, so this also serves adjoint solves.
    pub fn solve(&self, b: &DVector<f64>, counters: &mut Counters) -> Result<DVector<f64>> {
        if b.len() != self.lu.dim() {
            return Err(Error::DimensionMismatch {
                what: "right-hand side",
                expected: self.lu.dim(),
                got: b.len(),
            });
        }
        counters.current_mut().solves += 1;
        Ok(self.lu.solve(b))
    }
}

/// Observations `D^e` (one row per source) with the likelihood scale.
#[derive(Debug, Clone, PartialEq)]
pub struct ObservationData {
    pub per_source: DMatrix<f64>,
    pub noise_sigma: f64,
    pub noise_pct: f64,
    pub seed: u64,
}

impl ObservationData {
    pub fn n_sources(&self) -> usize {
        self.per_source.nrows()
    }

    pub fn n_receivers(&self) -> usize {
        self.per_source.ncols()
    }

    /// `d(w) = sum_j w_j d_j`.
    pub fn encode(&self, w: &[f64]) -> Result<DVector<f64>> {
        if w.len() != self.n_sources() {
            return Err(Error::DimensionMismatch {
                what: "weight block",
                expected: self.n_sources(),
                got: w.len(),
            });
        }
        Ok(self.per_source.tr_mul(&DVector::from_column_slice(w)))
    }

    /// `D^T r`: the adjoint of [`ObservationData::encode`] applied to a receiver vector.
    pub fn encode_transpose(&self, r: &DVector<f64>) -> DVector<f64> {
        &self.per_source * r
    }

    /// CSV with one header cell `"x y"` per receiver and one row per source.
    pub fn to_csv(&self, receivers: &[[f64; 2]]) -> String {
        let mut s = String::new();
        let header: Vec<String> = receivers.iter().map(|r| format!("{:.16e} {:.16e}", r[0], r[1])).collect();
        s.push_str(&header.join(","));
        s.push('\n');
        for i in 0..self.n_sources() {
            let row: Vec<String> = self.per_source.row(i).iter().map(|v| format!("{v:.16e}")).collect();
            s.push_str(&row.join(","));
            s.push('\n');
        }
        s
    }

    /// Parse [`ObservationData::to_csv`] output; returns the receivers too.
    pub fn from_csv(text: &str, noise_sigma: f64, noise_pct: f64, seed: u64) -> Result<(Self, Vec<[f64; 2]>)> {
        let mut lines = text.lines().filter(|l| !l.trim().is_empty());
        let header = lines.next().ok_or_else(|| Error::Io("empty data file".into()))?;
        let receivers = header
            .split(',')
            .map(|cell| {
                let xy: Vec<f64> = cell
                    .split_whitespace()
                    .map(|t| t.parse::<f64>().map_err(|e| Error::Io(format!("bad receiver '{cell}': {e}"))))
                    .collect::<Result<_>>()?;
                match xy[..] {
                    [x, y] => Ok([x, y]),
                    _ => Err(Error::Io(format!("bad receiver '{cell}'"))),
                }
            })
            .collect::<Result<Vec<_>>>()?;
        let rows = lines
            .map(|l| {
                l.split(',')
                    .map(|t| t.trim().parse::<f64>().map_err(|e| Error::Io(format!("bad value '{t}': {e}"))))
                    .collect::<Result<Vec<_>>>()
            })
            .collect::<Result<Vec<_>>>()?;
        let q = receivers.len();
        if rows.is_empty() || rows.iter().any(|r| r.len() != q) {
            return Err(Error::Io("data rows do not match the receiver header".into()));
        }
        let d = DMatrix::from_fn(rows.len(), q, |i, j| rows[i][j]);
        Ok((
            Self {
                per_source: d,
                noise_sigma,
                noise_pct,
                seed,
            },
            receivers,
        ))
    }
}
