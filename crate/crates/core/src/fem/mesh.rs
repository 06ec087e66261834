//! Structured triangulation of a square `[0, L]^2`.

use crate::error::{Error, Result};

/// Uniform triangulation of `[0, L]^2` with `n` cells per side.
///
/// Vertices are numbered row-major (`j * (n + 1) + i` for the vertex at
/// `(i L/n, j L/n)`). Each square cell is split along its anti-diagonal into a
/// lower-left and an upper-right triangle, both counter-clockwise.
#[derive(Debug, Clone, PartialEq)]
pub struct Mesh {
    pub n_cells_per_side: usize,
    pub side: f64,
    pub vertices: Vec<[f64; 2]>,
    pub triangles: Vec<[usize; 3]>,
}

/// Triangle containing a point, with the point's barycentric coordinates.
#[derive(Debug, Clone, Copy)]
pub struct PointLocation {
    pub triangle: usize,
    pub barycentric: [f64; 3],
}

impl Mesh {
    /// Unit square.
    pub fn new(n: usize) -> Result<Self> {
        Self::square(n, 1.0)
    }

    pub fn square(n: usize, side: f64) -> Result<Self> {
        if n == 0 {
            return Err(Error::InvalidArgument("mesh needs at least one cell per side".into()));
        }
        if !(side.is_finite() && side > 0.0) {
            return Err(Error::InvalidArgument(format!("square side must be positive, got {side}")));
        }
        let h = side / n as f64;
        let mut vertices = Vec::with_capacity((n + 1) * (n + 1));
        for j in 0..=n {
            for i in 0..=n {
                vertices.push([i as f64 * h, j as f64 * h]);
            }
        }
        let vid = |i: usize, j: usize| j * (n + 1) + i;
        let mut triangles = Vec::with_capacity(2 * n * n);
        for j in 0..n {
            for i in 0..n {
                let v00 = vid(i, j);
                let v10 = vid(i + 1, j);
                let v01 = vid(i, j + 1);
                let v11 = vid(i + 1, j + 1);
                triangles.push([v00, v10, v01]);
                triangles.push([v10, v11, v01]);
            }
        }
        Ok(Self {
            n_cells_per_side: n,
            side,
            vertices,
            triangles,
        })
    }

    pub fn n_vertices(&self) -> usize {
        self.vertices.len()
    }

    pub fn n_triangles(&self) -> usize {
        self.triangles.len()
    }

    /// Signed area of triangle `t` (positive for counter-clockwise ordering).
    pub fn signed_area(&self, t: usize) -> f64 {
        let [a, b, c] = self.triangles[t].map(|v| self.vertices[v]);
        0.5 * ((b[0] - a[0]) * (c[1] - a[1]) - (c[0] - a[0]) * (b[1] - a[1]))
    }

    /// Locate the triangle containing `p`. Points on shared edges resolve to
    /// the lower-left triangle of the cell.
    pub fn locate(&self, p: [f64; 2]) -> Result<PointLocation> {
        let [x, y] = p;
        let l = self.side;
        let tol = 1e-12 * l;
        if !(x.is_finite() && y.is_finite())
            || x < -tol
            || y < -tol
            || x > l + tol
            || y > l + tol
        {
            return Err(Error::OutsideDomain { x, y });
        }
        let n = self.n_cells_per_side;
        let nf = n as f64 / l;
        let i = ((x * nf).floor().max(0.0) as usize).min(n - 1);
        let j = ((y * nf).floor().max(0.0) as usize).min(n - 1);
        let s = x * nf - i as f64;
        let t = y * nf - j as f64;
        let cell = 2 * (j * n + i);
        if s + t <= 1.0 {
            // (v00, v10, v01)
            Ok(PointLocation {
                triangle: cell,
                barycentric: [1.0 - s - t, s, t],
            })
        } else {
            // (v10, v11, v01)
            Ok(PointLocation {
                triangle: cell + 1,
                barycentric: [1.0 - t, s + t - 1.0, 1.0 - s],
            })
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn counts() {
        let m = Mesh::new(1).unwrap();
        assert_eq!((m.n_vertices(), m.n_triangles()), (4, 2));
        let m = Mesh::new(4).unwrap();
        assert_eq!((m.n_vertices(), m.n_triangles()), (25, 32));
    }

    #[test]
    fn rejects_zero_cells() {
        assert!(Mesh::new(0).is_err());
    }

    #[test]
    fn tiles_unit_square() {
        let m = Mesh::new(2).unwrap();
        let total: f64 = (0..m.n_triangles()).map(|t| m.signed_area(t)).sum();
        assert!((total - 1.0).abs() < 1e-14);
        for t in 0..m.n_triangles() {
            assert!(m.signed_area(t) > 0.0);
        }
    }

    #[test]
    fn locate_reproduces_point() {
        let m = Mesh::new(5).unwrap();
        for &p in &[[0.0, 0.0], [1.0, 1.0], [0.33, 0.71], [0.999, 0.001], [0.5, 0.5]] {
            let loc = m.locate(p).unwrap();
            let tri = m.triangles[loc.triangle];
            let mut q = [0.0; 2];
            for (l, v) in loc.barycentric.iter().zip(tri) {
                assert!(*l >= -1e-12);
                q[0] += l * m.vertices[v][0];
                q[1] += l * m.vertices[v][1];
            }
            assert!((q[0] - p[0]).abs() < 1e-12 && (q[1] - p[1]).abs() < 1e-12);
        }
        assert!(m.locate([1.2, 0.5]).is_err());
    }

    #[test]
    fn scaled_square() {
        let l = 0.75_f64;
        let m = Mesh::square(4, l).unwrap();
        let total: f64 = (0..m.n_triangles()).map(|t| m.signed_area(t)).sum();
        assert!((total - l * l).abs() < 1e-14);
        assert_eq!(m.vertices.last().unwrap(), &[l, l]);
        let loc = m.locate([0.7, 0.1]).unwrap();
        let tri = m.triangles[loc.triangle];
        let x: f64 = (0..3).map(|k| loc.barycentric[k] * m.vertices[tri[k]][0]).sum();
        assert!((x - 0.7).abs() < 1e-12);
        assert!(m.locate([0.8, 0.1]).is_err());
        assert!(Mesh::square(2, 0.0).is_err());
    }
}
