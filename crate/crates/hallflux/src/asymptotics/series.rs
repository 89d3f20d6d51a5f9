//! Large-time expansions of the actions and angles for the ramped,
//! potential-free flow, through order 1/s.
//!
//! One pair of amplitude/phase constants describes each time direction;
//! the shared constant `K` ties the bounded action to the slow angle in
//! both limits. The remainder after the terms evaluated here is of order
//! `s^(-3/2)`.

use serde::{Deserialize, Serialize};

use crate::error::{HallError, Result};

/// The fitted constants of the two large-time regimes. `a0`, `b0` shape
/// the future expansion, `a0_tilde`, `b0_tilde` the past one; `k` is the
/// shared adiabatic constant and `s0` the gap-crossing time.
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct AsymptoticConstants {
    pub a0: f64,
    pub b0: f64,
    #[serde(rename = "K")]
    pub k: f64,
    pub a0_tilde: f64,
    pub b0_tilde: f64,
    pub s0: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Direction {
    Future,
    Past,
}

/// Action/angle values predicted by the expansion.
#[derive(Clone, Copy, Debug)]
pub struct SeriesPoint {
    pub i1: f64,
    pub i2: f64,
    pub phi1: f64,
    pub phi2: f64,
}

/// Evaluate the expansion at (unshifted) time `s`. Future needs `s > 0`,
/// past `s < 0`; the caller keeps `|s|` large enough for the remainder
/// to be negligible (|s| >= 10 is a reasonable floor).
pub fn eval_asymptotic_series(
    consts: &AsymptoticConstants,
    f: f64,
    s: f64,
    direction: Direction,
) -> Result<SeriesPoint> {
    if !f.is_finite() || f == 0.0 {
        return Err(HallError::InvalidParameter(
            "series need a nonzero ramp".into(),
        ));
    }
    match direction {
        Direction::Future => {
            if s.is_nan() || s <= 0.0 {
                return Err(HallError::Domain(format!(
                    "future expansion evaluated at s = {s} <= 0"
                )));
            }
            let (a0, b0, k) = (consts.a0, consts.b0, consts.k);
            let th = s + b0;
            let rt = s.sqrt();
            let i2 = a0 * a0 / (4.0 * f) - 0.5 * a0 * th.sin() / rt
                + 0.25 * (f + a0 * a0 / (2.0 * f) * (2.0 * th).sin()) / s;
            let i1 = i2 + f * (s - consts.s0);
            let phi1 = a0 * a0 / (4.0 * f * f) - k / f - 0.25 / s;
            let phi2 = s + b0 - a0 * a0 / (4.0 * f * f) + k / f - (f / a0) * th.cos() / rt
                + 0.125
                    * (-1.0 + 2.0 * (2.0 * th).cos()
                        - 4.0 * f * f / (a0 * a0) * (2.0 * th).sin())
                    / s;
            Ok(SeriesPoint { i1, i2, phi1, phi2 })
        }
        Direction::Past => {
            if s.is_nan() || s >= 0.0 {
                return Err(HallError::Domain(format!(
                    "past expansion evaluated at s = {s} >= 0"
                )));
            }
            let (a0t, b0t, k) = (consts.a0_tilde, consts.b0_tilde, consts.k);
            let th = s + b0t;
            let rt = s.abs().sqrt();
            let i1 = a0t * a0t / (4.0 * f) + 0.5 * a0t * th.sin() / rt
                - 0.25 * (f - a0t * a0t / (2.0 * f) * (2.0 * th).sin()) / s;
            let i2 = i1 - f * (s - consts.s0);
            let phi1 = consts.s0 + b0t + a0t * a0t / (4.0 * f * f) - k / f
                + (f / a0t) * th.cos() / rt
                - 0.125
                    * (1.0 - 2.0 * (2.0 * th).cos()
                        - 4.0 * f * f / (a0t * a0t) * (2.0 * th).sin())
                    / s;
            let phi2 = s - consts.s0 - a0t * a0t / (4.0 * f * f) + k / f - 0.25 / s;
            Ok(SeriesPoint { i1, i2, phi1, phi2 })
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn consts() -> AsymptoticConstants {
        AsymptoticConstants {
            a0: 1.3,
            b0: 0.4,
            k: -0.7,
            a0_tilde: 0.9,
            b0_tilde: -1.1,
            s0: 2.0,
        }
    }

    #[test]
    fn future_energy_settles_on_its_limit() {
        let c = consts();
        let f = 1.0;
        let limit = c.a0 * c.a0 / (4.0 * f);
        // The distance to the limit is bounded by the envelope of the two
        // correction terms regardless of their phases.
        for s in [1.0e4, 1.0e5, 1.0e6] {
            let p = eval_asymptotic_series(&c, f, s, Direction::Future).unwrap();
            let envelope = 0.5 * c.a0 / s.sqrt() + (0.25 * f + c.a0 * c.a0 / (8.0 * f)) / s;
            assert!((p.i2 - limit).abs() <= envelope * (1.0 + 1e-12), "at s = {s}");
            // Gap law is built in exactly.
            assert!((p.i1 - p.i2 - f * (s - c.s0)).abs() < 1e-9);
        }
    }

    #[test]
    fn adiabatic_constant_in_both_limits() {
        let c = consts();
        let f = 0.8;
        let fut = eval_asymptotic_series(&c, f, 1.0e6, Direction::Future).unwrap();
        assert!((fut.i2 - f * fut.phi1 - c.k).abs() < 1e-3);
        let past = eval_asymptotic_series(&c, f, -1.0e6, Direction::Past).unwrap();
        assert!((past.i2 + f * past.phi2 - c.k).abs() < 1e-3);
    }

    #[test]
    fn remainder_shrinks_with_time() {
        // The 1/sqrt(s) oscillation dominates the distance to the limit;
        // quadrupling the time should roughly halve it at a phase-matched
        // pair of points (2 pi spacing keeps the phase equal).
        let c = consts();
        let f = 1.0;
        let s1 = 1000.0;
        let n = ((3.0 * s1) / std::f64::consts::TAU).round();
        let s2 = s1 + n * std::f64::consts::TAU;
        let limit = c.a0 * c.a0 / (4.0 * f);
        let d1 = (eval_asymptotic_series(&c, f, s1, Direction::Future).unwrap().i2 - limit).abs();
        let d2 = (eval_asymptotic_series(&c, f, s2, Direction::Future).unwrap().i2 - limit).abs();
        let ratio = d1 / d2;
        assert!((1.5..=2.5).contains(&ratio), "decay ratio {ratio}");
    }

    #[test]
    fn direction_domains() {
        let c = consts();
        assert!(eval_asymptotic_series(&c, 1.0, -5.0, Direction::Future).is_err());
        assert!(eval_asymptotic_series(&c, 1.0, 5.0, Direction::Past).is_err());
        assert!(eval_asymptotic_series(&c, 0.0, 5.0, Direction::Future).is_err());
    }
}
