//! Lagrange P1/P2 nodal spaces on a [`Mesh`].

use std::sync::Arc;

use super::mesh::Mesh;
use super::quadrature::{degree6, QuadPoint};
use crate::error::{Error, Result};

/// Affine element data shared by every space on the same mesh.
#[derive(Debug, Clone)]
pub struct ElementGeometry {
    pub area: f64,
    /// Constant gradients of the three barycentric coordinates.
    pub grad_bary: [[f64; 2]; 3],
}

/// Lagrange finite-element space of degree 1 or 2.
///
/// P2 dofs live on the refined `(2n+1) x (2n+1)` grid, numbered row-major,
/// so vertex `(i, j)` of the mesh is dof `(2j) * (2n+1) + 2i`. The local
/// ordering is the three vertices followed by the midpoints of edges
/// (0,1), (1,2), (2,0).
#[derive(Debug, Clone)]
pub struct FemSpace {
    pub mesh: Arc<Mesh>,
    pub degree: usize,
    pub dof_coords: Vec<[f64; 2]>,
    element_dofs: Vec<usize>,
    n_local: usize,
    pub geometry: Vec<ElementGeometry>,
    pub quad: Vec<QuadPoint>,
    /// Basis values at each quadrature point: `basis_at_quad[q][a]`.
    pub basis_at_quad: Vec<Vec<f64>>,
}

impl FemSpace {
    pub fn new(mesh: Arc<Mesh>, degree: usize) -> Result<Self> {
        if degree != 1 && degree != 2 {
            return Err(Error::InvalidArgument(format!("unsupported degree {degree}")));
        }
        let n = mesh.n_cells_per_side;
        let geometry = mesh
            .triangles
            .iter()
            .enumerate()
            .map(|(t, tri)| {
                let [a, b, c] = tri.map(|v| mesh.vertices[v]);
                let area = mesh.signed_area(t);
                let inv = 1.0 / (2.0 * area);
                ElementGeometry {
                    area,
                    grad_bary: [
                        [(b[1] - c[1]) * inv, (c[0] - b[0]) * inv],
                        [(c[1] - a[1]) * inv, (a[0] - c[0]) * inv],
                        [(a[1] - b[1]) * inv, (b[0] - a[0]) * inv],
                    ],
                }
            })
            .collect();

        let (dof_coords, element_dofs, n_local) = if degree == 1 {
            let dofs = mesh.triangles.iter().flatten().copied().collect();
            (mesh.vertices.clone(), dofs, 3)
        } else {
            let m = 2 * n + 1;
            let h = mesh.side / (2 * n) as f64;
            let mut coords = Vec::with_capacity(m * m);
            for j in 0..m {
                for i in 0..m {
                    coords.push([i as f64 * h, j as f64 * h]);
                }
            }
            let grid = |v: usize| {
                let (i, j) = (v % (n + 1), v / (n + 1));
                (2 * i, 2 * j)
            };
            let mut dofs = Vec::with_capacity(6 * mesh.triangles.len());
            for tri in &mesh.triangles {
                let g = tri.map(grid);
                let id = |(i, j): (usize, usize)| j * m + i;
                let mid = |a: (usize, usize), b: (usize, usize)| ((a.0 + b.0) / 2, (a.1 + b.1) / 2);
                dofs.extend_from_slice(&[
                    id(g[0]),
                    id(g[1]),
                    id(g[2]),
                    id(mid(g[0], g[1])),
                    id(mid(g[1], g[2])),
                    id(mid(g[2], g[0])),
                ]);
            }
            (coords, dofs, 6)
        };

        let quad = degree6();
        let basis_at_quad = quad
            .iter()
            .map(|q| reference_basis(degree, q.bary))
            .collect();
        Ok(Self {
            mesh,
            degree,
            dof_coords,
            element_dofs,
            n_local,
            geometry,
            quad,
            basis_at_quad,
        })
    }

    pub fn n_dofs(&self) -> usize {
        self.dof_coords.len()
    }

    pub fn n_local(&self) -> usize {
        self.n_local
    }

    pub fn n_elements(&self) -> usize {
        self.mesh.n_triangles()
    }

    pub fn element_dofs(&self, t: usize) -> &[usize] {
        &self.element_dofs[t * self.n_local..(t + 1) * self.n_local]
    }

    /// Physical gradients of the local basis at barycentric point `bary` on element `t`.
    pub fn basis_gradients(&self, t: usize, bary: [f64; 3]) -> Vec<[f64; 2]> {
        let g = &self.geometry[t].grad_bary;
        match self.degree {
            1 => g.to_vec(),
            _ => {
                let l = bary;
                let mut out = Vec::with_capacity(6);
                for a in 0..3 {
                    let s = 4.0 * l[a] - 1.0;
                    out.push([s * g[a][0], s * g[a][1]]);
                }
                for (a, b) in [(0, 1), (1, 2), (2, 0)] {
                    out.push([
                        4.0 * (l[b] * g[a][0] + l[a] * g[b][0]),
                        4.0 * (l[b] * g[a][1] + l[a] * g[b][1]),
                    ]);
                }
                out
            }
        }
    }

    /// Whether two spaces are built on the same mesh instance or an identical one.
    pub fn same_mesh(&self, other: &FemSpace) -> bool {
        Arc::ptr_eq(&self.mesh, &other.mesh) || *self.mesh == *other.mesh
    }

    /// Evaluate a coefficient vector at a point.
    pub fn evaluate(&self, coeffs: &[f64], p: [f64; 2]) -> Result<f64> {
        check_len("field", self.n_dofs(), coeffs.len())?;
        let loc = self.mesh.locate(p)?;
        let vals = reference_basis(self.degree, loc.barycentric);
        Ok(self
            .element_dofs(loc.triangle)
            .iter()
            .zip(&vals)
            .map(|(&d, v)| coeffs[d] * v)
            .sum())
    }

    /// Nodal interpolant of a function.
    pub fn interpolate(&self, f: impl Fn([f64; 2]) -> f64) -> Vec<f64> {
        self.dof_coords.iter().map(|&x| f(x)).collect()
    }
}

/// Local nodal basis values at a barycentric point.
pub fn reference_basis(degree: usize, l: [f64; 3]) -> Vec<f64> {
    match degree {
        1 => l.to_vec(),
        _ => vec![
            l[0] * (2.0 * l[0] - 1.0),
            l[1] * (2.0 * l[1] - 1.0),
            l[2] * (2.0 * l[2] - 1.0),
            4.0 * l[0] * l[1],
            4.0 * l[1] * l[2],
            4.0 * l[2] * l[0],
        ],
    }
}

pub(crate) fn check_len(what: &'static str, expected: usize, got: usize) -> Result<()> {
    if expected != got {
        return Err(Error::DimensionMismatch { what, expected, got });
    }
    Ok(())
}
