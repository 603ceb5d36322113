//! Tracking of local optima of time-varying non-convex constrained
//! optimization problems.
//!
//! The problem class is `min f(x,t) s.t. h(x,t) = 0, g(x,t) ≤ 0` with
//! smooth data; inequalities are removed with squared slack variables. The
//! tracked object is the flow of
//! `ẋ = −(1/α) P ∇ₓf − Jᵀ(JJᵀ)⁻¹ h'`, where `P` projects onto the tangent
//! space of the constraint manifold and `α` is a momentum penalty: small
//! `α` keeps the trajectory close to a moving local minimum.
//!
//! Two things make the artifact more than an ODE solver:
//!
//! * an inversion-free reformulation over `(x, u, v)` in which the
//!   multiplier-like variables relax toward `(JJᵀ)⁻¹J∇ₓf` and
//!   `(JJᵀ)⁻¹h'` through matrix-vector products only, dropping the
//!   per-iteration cost from O(n³) to O(n²) — see [`dynamics::lifted_field`]
//!   and the alternating loop in [`tracker`];
//! * oracle machinery ([`oracle`]) that recomputes ground truth by static
//!   solves, grid scans and sampled-time penalized programs, so tracking
//!   quality is measured, not assumed.

pub mod dynamics;
pub mod error;
pub mod integrate;
pub mod linalg;
pub mod oracle;
pub mod problem;
pub mod tracker;

pub use dynamics::{
    frozen_field, gradient_newton_field, lifted_field, lyapunov_rate, newton_field,
    newton_lift_field, pinv_and_projected_gradient, reference_field, rescaled_field, NewtonSystem,
    OdeField,
};
pub use error::{Error, Result};
pub use integrate::{integrate_to, rk4_step, split_at_discontinuities, Observation, StepperConfig};
pub use linalg::{
    gram_apply, matvec, matvec_transpose, project_tangent, solve_spd, DenseMatrix, OpCounter,
    OpCounts,
};
pub use oracle::{
    discrete_solution, f_star, grid_scan, static_local_solve, CriticalClass, CriticalPoint,
    CriticalPointSet, TimePartition,
};
pub use problem::{
    catalog_entry, catalog_get, check_derivatives, slack_augment, slack_lift_point, CatalogEntry,
    DerivativeReport, ScanRegion, TimeVaryingProblem, CATALOG_NAMES,
};
pub use tracker::{
    initialize, inner_relax, kkt_residual, outer_step, track, OracleOptions, TrackOutcome,
    TrackerConfig, TrackerState, TrajectoryRecord,
};
