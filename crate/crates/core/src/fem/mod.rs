//! Finite-element kernel on a square domain.

pub mod assembly;
pub mod banded;
pub mod cg;
pub mod discretization;
pub mod mesh;
pub mod mollifier;
pub mod quadrature;
pub mod sampling;
pub mod space;
pub mod sparse;

pub use assembly::{
    assemble_mass, assemble_stiffness, observe, point_source_vector, MixedForms, Observation,
};
pub use banded::BandedLu;
pub use cg::{pcg, CgOperator, CgOutcome, FnOperator};
pub use discretization::Discretization;
pub use mesh::{Mesh, PointLocation};
pub use mollifier::{mollifier_load_vector, mollifier_value};
pub use sampling::{sample_mass_inverse_gaussian, MassInverseSampler};
pub use space::FemSpace;
pub use sparse::CsrMatrix;
