//! Error types shared across the solver modules.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum GridError {
    #[error("grid spacing must be positive and finite, got {0}")]
    BadSpacing(f64),
    #[error("axis {axis} resolution {resolution} below the minimum of 16")]
    ResolutionTooLow { axis: usize, resolution: usize },
}

#[derive(Debug, Error)]
pub enum GeomError {
    #[error(transparent)]
    Grid(#[from] GridError),
    #[error("set escapes the grid box margin: {0}")]
    SpecOutOfBox(String),
    #[error("operation requires a nonempty set")]
    EmptySet,
    #[error("set spec invalid: {0}")]
    BadSpec(String),
}

#[derive(Debug, Error)]
pub enum CapacityError {
    #[error("Bessel kernel requires a positive radius, got {0}")]
    NonpositiveRadius(f64),
    #[error("capacity solve did not converge: gap {gap:.3e} after {iterations} iterations")]
    NotConverged { gap: f64, iterations: usize },
    #[error("mask grid incompatible with the capacity program: {0}")]
    InconsistentGrid(String),
    #[error("exponent q must satisfy q > 1, got {0}")]
    BadExponent(f64),
    #[error(transparent)]
    Geom(#[from] GeomError),
}

#[derive(Debug, Error)]
pub enum PdeError {
    #[error("Newton iteration diverged; residual trace {0:?}")]
    NewtonDiverged(Vec<f64>),
    #[error("linear solver stalled at residual {residual:.3e} after {iterations} iterations")]
    LinearSolveStalled { residual: f64, iterations: usize },
    #[error("exhaustion produced an empty domain at step {0}")]
    DegenerateDomain(usize),
    #[error("right-hand side atoms must lie inside the domain")]
    RhsOutsideDomain,
    #[error(transparent)]
    Geom(#[from] GeomError),
    #[error(transparent)]
    Capacity(#[from] CapacityError),
}

#[derive(Debug, Error)]
pub enum VerifyError {
    #[error(transparent)]
    Geom(#[from] GeomError),
    #[error(transparent)]
    Capacity(#[from] CapacityError),
    #[error(transparent)]
    Pde(#[from] PdeError),
    #[error("check precondition violated: {0}")]
    Precondition(String),
}
