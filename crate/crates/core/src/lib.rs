//! Finite-element solver for a coupled biofilm-nutrient
//! diffusion-reaction system in which the biomass density obeys a
//! pointwise bound. Each backward-Euler step solves the resulting
//! complementarity system with a semismooth Newton method; a harness
//! measures convergence rates against nested fine-grid surrogates.

// Index loops in the matrix kernels mirror the row/column math.
#![allow(clippy::needless_range_loop)]

pub mod analysis;
pub mod assembly;
pub mod error;
pub mod experiments;
pub mod io;
pub mod mesh;
pub mod model;
pub mod scalar;
pub mod solver;
pub mod sparse;
pub mod timeloop;

pub use error::{Error, Result};
pub use scalar::Real;

/// Concrete aliases for the common double-precision instantiation.
pub type Mesh64 = mesh::SimplicialMesh<f64>;
pub type Hierarchy64 = mesh::MeshHierarchy<f64>;
pub type Field64 = assembly::NodalField<f64>;
pub type Matrix64 = sparse::SparseMatrix<f64>;
pub type Model64 = model::ModelSpec<f64>;
pub type State64 = solver::SystemState<f64>;
pub type RunConfig64 = timeloop::RunConfig<f64>;
pub type Trajectory64 = timeloop::Trajectory<f64>;
