//! Synthetic target media: constant background plus smooth compact bumps.

use nalgebra::DVector;
use serde::Deserialize;

use crate::fem::FemSpace;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Medium {
    /// One positive bump.
    Medium1,
    /// A positive and a negative bump.
    Medium2,
    /// The two-bump medium used with the ten-source geometry.
    Medium10src,
}

impl Medium {
    pub fn name(self) -> &'static str {
        match self {
            Medium::Medium1 => "medium1",
            Medium::Medium2 => "medium2",
            Medium::Medium10src => "medium10src",
        }
    }

    /// `[cx, cy, amplitude, radius]`, positions and radius as fractions of the side.
    pub fn bumps(self) -> Vec<[f64; 4]> {
        match self {
            Medium::Medium1 => vec![[0.55, 0.55, 0.3, 0.2]],
            Medium::Medium2 | Medium::Medium10src => vec![[0.35, 0.65, 0.3, 0.2], [0.65, 0.35, -0.3, 0.2]],
        }
    }
}

/// `amp * exp(1 - 1 / (1 - |x - c|^2 / r^2))` inside the ball, zero outside; peak `amp`.
pub fn bump(x: [f64; 2], center: [f64; 2], amp: f64, radius: f64) -> f64 {
    let s = ((x[0] - center[0]).powi(2) + (x[1] - center[1]).powi(2)) / (radius * radius);
    if s >= 1.0 {
        0.0
    } else {
        amp * (1.0 - 1.0 / (1.0 - s)).exp()
    }
}

/// Nodal interpolant of `1 + sum of bumps` on `space`, with bump rows given
/// in fractions of `side`.
pub fn medium_field(space: &FemSpace, bumps: &[[f64; 4]], side: f64) -> DVector<f64> {
    DVector::from_vec(space.interpolate(|x| {
        1.0 + bumps
            .iter()
            .map(|b| bump(x, [b[0] * side, b[1] * side], b[2], b[3] * side))
            .sum::<f64>()
    }))
}
