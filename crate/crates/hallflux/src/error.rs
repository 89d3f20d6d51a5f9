//! Library error type. Variants distinguish bad inputs from genuine
//! numerical breakdowns so callers can map them to different exit paths.

use thiserror::Error;

#[derive(Error, Debug, Clone, PartialEq)]
pub enum HallError {
    /// A parameter fails validation (non-positive mass, charge, field, ...).
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    /// Field or observable evaluation requested closer to the flux line
    /// than the guard radius allows.
    #[error("position within {radius:.3e} of the flux line (|q| = {q_norm:.3e})")]
    SingularityProximity { q_norm: f64, radius: f64 },

    /// Angle-action extraction attempted on a state where one of the two
    /// defining directions degenerates (zero kinetic radius or zero center).
    #[error("angle undefined: {0}")]
    UndefinedAngle(&'static str),

    /// Right-hand side evaluation too close to a coordinate singularity.
    #[error("near-collision: |q|^2 = {q_sq:.3e}, switch to cartesian coordinates")]
    NearCollision { q_sq: f64 },

    /// An action variable is non-positive where a positive one is required.
    #[error("degenerate action: {0}")]
    DegenerateAction(&'static str),

    /// Adaptive step size fell below the representable floor.
    #[error("step size underflow at s = {s}")]
    StepUnderflow { s: f64 },

    /// The integrator exceeded its step budget.
    #[error("step budget exhausted at s = {s} after {steps} steps")]
    StepBudget { s: f64, steps: usize },

    /// No sign change of the action gap inside the integrated span.
    #[error("no hitting time inside the trajectory span")]
    NoHittingTime,

    /// The averaged vector field was evaluated on its switching surface,
    /// where the guiding-center equations are not defined pointwise.
    #[error("averaged field evaluated at its kink, |J1 - J2| = {gap:.3e}")]
    AtKink { gap: f64 },

    /// Fixed-point iteration failed to contract.
    #[error("iteration failed to contract: {0}")]
    NonContraction(String),

    /// A fit was requested on a window too short to be meaningful.
    #[error("fit window too short: {0}")]
    FitWindow(String),

    /// Catch-all for invalid arguments to numerical routines.
    #[error("domain error: {0}")]
    Domain(String),
}

pub type Result<T> = std::result::Result<T, HallError>;
