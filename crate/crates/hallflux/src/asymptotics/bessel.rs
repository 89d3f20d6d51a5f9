//! Bessel functions J0, J1, Y0, Y1 on the half line, backed by `libm`.
//!
//! The oscillator hidden in the large-time dynamics is Bessel's equation
//! of order zero; everything downstream (homogeneous solutions, the
//! integral-equation kernel) is assembled from these four functions. The
//! `libm` port of the msun routines is accurate to a few ulp across the
//! range used here; the test module carries an independent power-series
//! oracle and the Wronskian identity so the backend is never trusted
//! blindly.

use crate::error::{HallError, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BesselKind {
    J,
    Y,
}

/// Checked evaluation of J or Y of order 0 or 1.
///
/// J accepts s >= 0; Y needs s > 0 (logarithmic singularity at the
/// origin). Orders other than 0 and 1 are rejected: nothing in this
/// crate needs them.
pub fn bessel(kind: BesselKind, order: u8, s: f64) -> Result<f64> {
    if order > 1 {
        return Err(HallError::Domain(format!(
            "Bessel order {order} not supported (only 0 and 1)"
        )));
    }
    match kind {
        BesselKind::J => {
            if s.is_nan() || s < 0.0 {
                return Err(HallError::Domain(format!("J{order} needs s >= 0, got {s}")));
            }
            Ok(if order == 0 { libm::j0(s) } else { libm::j1(s) })
        }
        BesselKind::Y => {
            if s.is_nan() || s <= 0.0 {
                return Err(HallError::Domain(format!("Y{order} needs s > 0, got {s}")));
            }
            Ok(if order == 0 { libm::y0(s) } else { libm::y1(s) })
        }
    }
}

/// Unchecked fast paths for internal hot loops (grids are validated once).
#[inline]
pub fn j0(s: f64) -> f64 {
    libm::j0(s)
}
#[inline]
pub fn j1(s: f64) -> f64 {
    libm::j1(s)
}
#[inline]
pub fn y0(s: f64) -> f64 {
    debug_assert!(s > 0.0);
    libm::y0(s)
}
#[inline]
pub fn y1(s: f64) -> f64 {
    debug_assert!(s > 0.0);
    libm::y1(s)
}
