//! Crate-wide error type.

use thiserror::Error;

/// Errors surfaced by mesh construction, assembly, solves, and runs.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid mesh: {0}")]
    InvalidMesh(String),

    #[error("mesh parse error at line {line}: {msg}")]
    MeshParse { line: usize, msg: String },

    #[error(
        "cell {cell} references vertex index {index} out of range (n_vertices = {n_vertices})"
    )]
    CellIndexOutOfRange {
        cell: usize,
        index: usize,
        n_vertices: usize,
    },

    #[error("cell {cell} has zero or negative volume ({volume})")]
    DegenerateCell { cell: usize, volume: f64 },

    #[error("non-conforming mesh: facet {facet:?} shared by {count} cells")]
    NonConforming { facet: Vec<usize>, count: usize },

    #[error("uniform refinement unsupported for dim {dim} (import pre-refined meshes instead)")]
    RefineUnsupported { dim: usize },

    #[error("field/mesh mismatch: field has {field_len} values, mesh has {n_vertices} vertices")]
    MeshMismatch { field_len: usize, n_vertices: usize },

    #[error("diffusivity is negative ({value}) at a quadrature point of cell {cell}")]
    NegativeDiffusivity { cell: usize, value: f64 },

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("linear system is structurally singular at column {column}")]
    StructurallySingular { column: usize },

    #[error("linear system is numerically singular at column {column} (pivot {pivot})")]
    NumericallySingular { column: usize, pivot: f64 },

    #[error("linear solve residual {residual} exceeds contract tolerance {tolerance}")]
    SolveResidual { residual: f64, tolerance: f64 },

    #[error(
        "Newton did not converge after {iterations} iterations (residual {residual}); \
         consider a smaller time step"
    )]
    NonConvergence { iterations: usize, residual: f64 },

    #[error("singular Newton system at iteration {iteration}: {source}")]
    SingularIteration {
        iteration: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("initial biomass exceeds the upper bound at node {node}: {value} > {bound}")]
    InitialConstraintViolation { node: usize, value: f64, bound: f64 },

    #[error("non-finite value detected at step {step} ({what})")]
    NonFinite { step: usize, what: String },

    #[error("solver failed at step {step} (t = {t}): {source}")]
    StepFailed {
        step: usize,
        t: f64,
        #[source]
        source: Box<Error>,
    },

    #[error("invalid run configuration: {0}")]
    InvalidConfig(String),

    #[error("unknown experiment `{name}`; available: {available}")]
    UnknownExperiment { name: String, available: String },

    #[error("convergence study needs nested trajectories: {0}")]
    StudyMismatch(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
