//! Numerical toolkit for capacitary analysis of boundary blow-up in the
//! semilinear equation -Δu + u^q = 0 outside compact sets.
//!
//! The crate computes discrete Bessel capacities as convex programs, assembles
//! dyadic capacitary potentials from per-annulus capacity solves, runs
//! finite-difference solvers for large, maximal and measure-data solutions,
//! and packages the comparisons between those objects as named, reproducible
//! checks.

pub mod capacity;
pub mod dyadic;
pub mod error;
pub mod fft;
pub mod grid;
pub mod pde;
pub mod report;
pub mod setgeom;
pub mod verify;

pub use capacity::{
    bessel_kernel, capacitary_measure, capacity_scaling_check, CapacityConfig, CapacityEngine,
    CapacityResult, Exponents, Formulation, MeasureOnGrid,
};
pub use dyadic::{
    equivalence_wf_wfstar, potential, potential_truncated, sum_int_profile, thickness,
    truncation_range, PotentialTerm, PotentialValue, ThicknessTerm, ThicknessValue,
};
pub use error::{CapacityError, GeomError, GridError, PdeError, VerifyError};
pub use report::{CheckReport, Verdict};
pub use grid::{GridContext, GridField, GridMask};
pub use pde::{
    ball_domain, default_schedule, green_potential, ko_profile, large_solution,
    maximal_solution, residual_inf_norm, sigma_moderate_limit, solve_measure_wholebox,
    solve_semilinear, BoundarySpec, LargeSolution, MaximalSolution, SigmaModerateLimit,
    SolverConfig,
};
pub use setgeom::{
    distance_field, dyadic_pieces, rasterize, scale_spec, window_grid, DyadicDecomposition,
    DyadicPiece, PieceVariant, Primitive, SetSpec,
};
pub use verify::{
    almost_large_fraction, boundary_samples, capacity_continuity_check, classify_terms,
    exhaustion_limit_check, lower_construction_check, neighborhood_check, removability_check,
    shell_samples, sigma_moderate_equality_check, similarity_check, slab_profile_check,
    solver_certification, subadditivity_check, two_sided_report, wiener_classify, VerifyCtx,
    WienerClass, WienerVerdict,
};
