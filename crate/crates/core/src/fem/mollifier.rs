//! Compactly supported smooth bump used to model point-like sources.

use std::f64::consts::PI;
use std::sync::OnceLock;

use nalgebra::DVector;

use super::quadrature::gauss_legendre;
use super::space::{reference_basis, FemSpace};
use crate::error::{Error, Result};

/// `K = int_0^1 r exp(-1/(1-r^2)) dr`, by adaptive Simpson quadrature.
pub fn normalization_constant() -> f64 {
    static K: OnceLock<f64> = OnceLock::new();
    *K.get_or_init(|| {
        let f = |r: f64| {
            if r >= 1.0 {
                0.0
            } else {
                r * (-1.0 / (1.0 - r * r)).exp()
            }
        };
        adaptive_simpson(&f, 0.0, 1.0, 1e-15, 50)
    })
}

fn adaptive_simpson(f: &impl Fn(f64) -> f64, a: f64, b: f64, tol: f64, depth: u32) -> f64 {
    let c = 0.5 * (a + b);
    let (fa, fb, fc) = (f(a), f(b), f(c));
    let whole = (b - a) / 6.0 * (fa + 4.0 * fc + fb);
    simpson_step(f, a, b, fa, fb, fc, whole, tol, depth)
}

#[allow(clippy::too_many_arguments)]
fn simpson_step(
    f: &impl Fn(f64) -> f64,
    a: f64,
    b: f64,
    fa: f64,
    fb: f64,
    fc: f64,
    whole: f64,
    tol: f64,
    depth: u32,
) -> f64 {
    let c = 0.5 * (a + b);
    let (d, e) = (0.5 * (a + c), 0.5 * (c + b));
    let (fd, fe) = (f(d), f(e));
    let left = (c - a) / 6.0 * (fa + 4.0 * fd + fc);
    let right = (b - c) / 6.0 * (fc + 4.0 * fe + fb);
    let delta = left + right - whole;
    if depth == 0 || delta.abs() <= 15.0 * tol {
        return left + right + delta / 15.0;
    }
    simpson_step(f, a, c, fa, fc, fd, left, 0.5 * tol, depth - 1)
        + simpson_step(f, c, b, fc, fb, fe, right, 0.5 * tol, depth - 1)
}

/// `phi_eps(x; y) = exp(-1 / (1 - |x-y|^2 / eps^2)) / (2 pi K eps^2)` on the
/// open ball of radius `eps`, zero elsewhere. Integrates to one for every
/// `eps`. Evaluated in log space.
pub fn mollifier_value(x: [f64; 2], center: [f64; 2], eps: f64) -> Result<f64> {
    if !(eps > 0.0) {
        return Err(Error::InvalidArgument(format!("mollifier radius must be positive, got {eps}")));
    }
    let r2 = (x[0] - center[0]).powi(2) + (x[1] - center[1]).powi(2);
    let e2 = eps * eps;
    if r2 >= e2 {
        return Ok(0.0);
    }
    let log_alpha = (2.0 * PI * normalization_constant() * e2).ln();
    let expo = -e2 / (e2 - r2);
    Ok((expo - log_alpha).exp())
}

/// Load vector `f_i = (phi_eps(.; center), psi_i)` by polar Gauss quadrature
/// over the support ball. Quadrature points falling outside the domain are
/// dropped.
pub fn mollifier_load_vector(space: &FemSpace, center: [f64; 2], eps: f64) -> Result<DVector<f64>> {
    space.mesh.locate(center)?;
    let (xg, wg) = gauss_legendre(12);
    let (panels, n_theta) = (8, 64);
    let h = eps / panels as f64;
    let radial = (0..panels).flat_map(|k| {
        xg.iter()
            .zip(&wg)
            .map(move |(x, w)| (h * (k as f64 + 0.5 * (x + 1.0)), 0.5 * h * w))
    });
    let mut f = DVector::zeros(space.n_dofs());
    for (r, wr) in radial {
        let val = mollifier_value([center[0] + r, center[1]], center, eps)?;
        for k in 0..n_theta {
            let th = 2.0 * PI * (k as f64 + 0.5) / n_theta as f64;
            let p = [center[0] + r * th.cos(), center[1] + r * th.sin()];
            let Ok(loc) = space.mesh.locate(p) else { continue };
            let weight = wr * r * (2.0 * PI / n_theta as f64) * val;
            let basis = reference_basis(space.degree, loc.barycentric);
            for (&d, b) in space.element_dofs(loc.triangle).iter().zip(basis) {
                f[d] += weight * b;
            }
        }
    }
    Ok(f)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fem::mesh::Mesh;
    use crate::fem::quadrature::gauss_legendre;
    use std::sync::Arc;

    #[test]
    fn constant_is_stable_under_refinement() {
        let k = normalization_constant();
        let coarse = adaptive_simpson(
            &|r: f64| if r >= 1.0 { 0.0 } else { r * (-1.0 / (1.0 - r * r)).exp() },
            0.0,
            1.0,
            1e-10,
            30,
        );
        assert!((k - coarse).abs() <= 1e-9 * k);
        assert!(k > 0.0 && k < 0.5);
    }

    #[test]
    fn vanishes_on_boundary_and_outside() {
        assert_eq!(mollifier_value([0.5, 0.0], [0.0, 0.0], 0.5).unwrap(), 0.0);
        assert_eq!(mollifier_value([0.6, 0.0], [0.0, 0.0], 0.5).unwrap(), 0.0);
        assert!(mollifier_value([0.0, 0.0], [0.0, 0.0], 0.0).is_err());
    }

    #[test]
    fn peak_value() {
        let eps = 0.1;
        let v = mollifier_value([0.3, 0.3], [0.3, 0.3], eps).unwrap();
        let expected = (-1.0f64).exp() / (2.0 * PI * normalization_constant() * eps * eps);
        assert!((v - expected).abs() <= 1e-12 * expected);
        // no underflow for the tiny radius used for sources
        let tiny = mollifier_value([0.3, 0.3], [0.3, 0.3], 1e-6).unwrap();
        assert!(tiny.is_finite() && tiny > 0.0);
    }

    #[test]
    fn integrates_to_one_tensor_oracle() {
        // tensor Gauss-Legendre on panels of [-eps, eps]^2
        let eps = 0.05;
        let c = [0.5, 0.5];
        let (x, w) = gauss_legendre(20);
        let panels = 8;
        let h = 2.0 * eps / panels as f64;
        let mut total = 0.0;
        for pi in 0..panels {
            for pj in 0..panels {
                let (ax, ay) = (-eps + pi as f64 * h, -eps + pj as f64 * h);
                for (xi, wi) in x.iter().zip(&w) {
                    for (yj, wj) in x.iter().zip(&w) {
                        let px = c[0] + ax + 0.5 * h * (xi + 1.0);
                        let py = c[1] + ay + 0.5 * h * (yj + 1.0);
                        total += 0.25 * h * h * wi * wj * mollifier_value([px, py], c, eps).unwrap();
                    }
                }
            }
        }
        assert!((total - 1.0).abs() < 1e-6, "integral {total}");
    }

    #[test]
    fn load_vector_approaches_point_source() {
        let mesh = Arc::new(Mesh::new(4).unwrap());
        let p2 = FemSpace::new(mesh, 2).unwrap();
        let c = [0.31, 0.42];
        let f = mollifier_load_vector(&p2, c, 1e-6).unwrap();
        let g = crate::fem::assembly::point_source_vector(&p2, c).unwrap();
        assert!((&f - &g).amax() < 1e-5);
        assert!((f.sum() - 1.0).abs() < 1e-9, "mass {}", f.sum());
    }
}
