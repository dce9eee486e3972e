//! Box-constrained sparse regression with an exact cardinality penalty,
//!
//! ```text
//! min f(x) + λ‖x‖₀   subject to  0 ≤ x ≤ υ,
//! ```
//!
//! solved by a smoothed projection flow, a correction phase that certifies
//! local minimizers, and a variable-splitting reduction for boxes `[−l, u]`.

pub mod bench;
pub mod correction;
pub mod dynamics;
pub mod error;
pub mod model;
pub mod problem;
pub mod smoothing;
pub mod splitting;

pub use correction::{
    certify_local_min, correct, correction_flow, correction_solve, mu_update_point, partition, solve_and_correct,
    Correction, FrozenSet, SupportPartition,
};
pub use dynamics::{
    merit_rho, mu_at, rhs, rk4_stable_step, solve, solve_with, stationarity_residual, step, support_of, write_trajectory_csv,
    Certificate, MuSchedule, SolveOptions, SolveReport, SolverState, TrajectorySample,
};
pub use error::{Error, Result};
pub use model::{
    check_mu_star, default_mu_star, estimate_grad_bound, grad_bound_with, mu_star_terms, project_box,
    quadratic_gradient, select_mu_star, BoxSet, DynamicsParams, GradBoundBranch, LossModel, MuStarTerm,
    ProblemSpec, QuadraticLoss, ScheduleKind, DEFAULT_RESIDUAL_TOL,
};
pub use smoothing::{
    grad_mu_sup, smooth_eval, theta, theta_grad_mu, theta_grad_s, theta_sum, theta_sum_grad_mu, theta_sum_grad_x,
    Mu, SmoothEval,
};
pub use problem::{LoadedProblem, ProblemFile};
pub use splitting::{
    halves, recombine, recombine_clean, solve_and_correct_split, split, Recombined, SplitLoss, TwoSidedSpec,
};

use nalgebra::DVector;

/// Number of exactly nonzero entries.
pub fn l0_norm(x: &DVector<f64>) -> usize {
    x.iter().filter(|&&v| v != 0.0).count()
}
