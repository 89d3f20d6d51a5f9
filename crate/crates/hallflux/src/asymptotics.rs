//! Late-time analysis of the flux-ramped orbit.
//!
//! Once the action gap opens, the orbit is an outward drift decorated with
//! a shrinking oscillation, and everything about its far future and past is
//! captured by a handful of constants. This module family covers the whole
//! pipeline:
//!
//! * [`reduced`]: the two-variable system for the symmetric angle and total
//!   action, and the Cartesian-like transform that linearizes its drift.
//! * [`bessel`]: the cylinder functions the transformed system is built
//!   from, with a series oracle for testing the backend.
//! * [`picard`]: a fixed-point solver for the transformed system on a
//!   uniform grid, an independent check on direct integration.
//! * [`series`]: evaluation of the two-sided expansions in inverse powers
//!   of time.
//! * [`fit`]: least-squares extraction of the drift constants from an
//!   integrated trajectory.
//! * [`transport`]: conversion of the fitted constants into physical
//!   transport coefficients.

pub mod bessel;
pub mod fit;
pub mod picard;
pub mod reduced;
pub mod series;
pub mod transport;

pub use fit::{fit_constants, fit_series, merge_fits, AngleActionSeries, AsymptoticFit, DirectionFit};
pub use series::{eval_asymptotic_series, AsymptoticConstants, Direction};
pub use transport::{transport_coefficients, TransportRecord};
