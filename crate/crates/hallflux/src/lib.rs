//! Simulation library for the planar dynamics of a charged particle in a
//! homogeneous magnetic field threaded by a flux line whose flux grows
//! linearly in time.
//!
//! The crate provides the model fields and observables, the closed-form
//! frozen-time flow, action-angle coordinates adapted to the cyclotron
//! motion, an adaptive integrator for the full equations of motion, the
//! fast-angle averaged dynamics, and the large-time asymptotic machinery
//! (Bessel representation, fixed-point integral equation, series
//! evaluation, constant fitting and transport coefficients).

pub mod actionangle;
pub mod asymptotics;
pub mod averaging;
pub mod dynamics;
pub mod error;
pub mod frozen;
pub mod model;
pub mod numdiff;
pub mod rk;
pub mod vec2;
pub mod verify;

pub use error::{HallError, Result};
pub use vec2::Vec2;
