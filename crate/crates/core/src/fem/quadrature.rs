//! Symmetric quadrature on the reference triangle.

/// A quadrature point in barycentric coordinates with weight normalized so
/// that the weights sum to one (multiply by the triangle area).
#[derive(Debug, Clone, Copy)]
pub struct QuadPoint {
    pub bary: [f64; 3],
    pub weight: f64,
}

/// 12-point symmetric rule, exact for polynomials of total degree 6.
pub fn degree6() -> Vec<QuadPoint> {
    let mut pts = Vec::with_capacity(12);
    let mut orbit3 = |a: f64, b: f64, w: f64| {
        for bary in [[a, b, b], [b, a, b], [b, b, a]] {
            pts.push(QuadPoint { bary, weight: w });
        }
    };
    orbit3(0.501426509658179, 0.249286745170910, 0.116786275726379);
    orbit3(0.873821971016996, 0.063089014491502, 0.050844906370207);
    let (a, b, c, w) = (
        0.053145049844817,
        0.310352451033784,
        0.636502499121399,
        0.082851075618374,
    );
    for bary in [[a, b, c], [a, c, b], [b, a, c], [b, c, a], [c, a, b], [c, b, a]] {
        pts.push(QuadPoint { bary, weight: w });
    }
    pts
}

/// Gauss-Legendre nodes and weights on `[-1, 1]` via Newton iteration on the
/// Legendre recurrence.
pub fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    let mut x = vec![0.0; n];
    let mut w = vec![0.0; n];
    for i in 0..n.div_ceil(2) {
        let mut z = (std::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut dp = 1.0;
        for _ in 0..100 {
            let (mut p1, mut p2) = (1.0, 0.0);
            for j in 1..=n {
                let p3 = p2;
                p2 = p1;
                p1 = ((2 * j - 1) as f64 * z * p2 - (j - 1) as f64 * p3) / j as f64;
            }
            dp = n as f64 * (z * p1 - p2) / (z * z - 1.0);
            let dz = p1 / dp;
            z -= dz;
            if dz.abs() < 1e-16 {
                break;
            }
        }
        x[i] = -z;
        x[n - 1 - i] = z;
        let wi = 2.0 / ((1.0 - z * z) * dp * dp);
        w[i] = wi;
        w[n - 1 - i] = wi;
    }
    (x, w)
}
