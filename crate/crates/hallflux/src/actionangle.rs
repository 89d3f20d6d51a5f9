//! Action-angle coordinates adapted to the frozen cyclotron motion.
//!
//! The first pair `(phi1, I1)` describes the guiding center,
//! `c = sqrt(2 I1) e(phi1)`; the second pair `(phi2, I2)` the circular
//! motion around it, with radius `sqrt(2 I2)` and retrograde phase:
//!
//! ```text
//! q = sqrt(2 I1) e(phi1) + sqrt(2 I2) e(-phi2)
//! p = (sqrt(2 I1) e_perp(phi1) - sqrt(2 I2) e_perp(-phi2)) / 2 + a_E(s, q)
//! ```
//!
//! `I2` is the kinetic energy and `phi2` advances at unit rate under the
//! frozen flow. The transform is canonical away from two degenerate sets:
//! collision states (`q = 0`) and states with a vanishing center or
//! radius, where one of the angles loses meaning.

use serde::{Deserialize, Serialize};

use crate::error::{HallError, Result};
use crate::model::{momentum_from_velocity, observables, PhaseState, SystemParams};
use crate::numdiff::{poisson_bracket, wrap_to_pi};
use crate::vec2::Vec2;

/// State in action-angle coordinates at dimensionless time `s`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ActionAngleState {
    pub s: f64,
    pub phi1: f64,
    pub phi2: f64,
    pub i1: f64,
    pub i2: f64,
}

impl ActionAngleState {
    pub fn new(s: f64, phi1: f64, phi2: f64, i1: f64, i2: f64) -> Self {
        ActionAngleState {
            s,
            phi1,
            phi2,
            i1,
            i2,
        }
    }

    /// Squared distance to the flux line,
    /// `2 (I1 + I2 + 2 sqrt(I1 I2) cos(phi1 + phi2))`.
    pub fn q_norm_sq(&self) -> f64 {
        2.0 * (self.i1
            + self.i2
            + 2.0 * (self.i1 * self.i2).sqrt() * (self.phi1 + self.phi2).cos())
    }

    /// Shift both angles onto the branch closest to `reference`, assuming
    /// the true change is below a half turn per angle.
    pub fn unwrapped_toward(mut self, reference: &ActionAngleState) -> Self {
        self.phi1 = reference.phi1 + wrap_to_pi(self.phi1 - reference.phi1);
        self.phi2 = reference.phi2 + wrap_to_pi(self.phi2 - reference.phi2);
        self
    }
}

/// Rebuild the phase-space state from action-angle coordinates. Requires
/// non-negative actions; the winding of the result is the principal angle.
pub fn to_cartesian(aa: &ActionAngleState, params: &SystemParams) -> Result<PhaseState> {
    if aa.i1 < 0.0 {
        return Err(HallError::DegenerateAction("I1 must be non-negative"));
    }
    if aa.i2 < 0.0 {
        return Err(HallError::DegenerateAction("I2 must be non-negative"));
    }
    let r1 = (2.0 * aa.i1).sqrt();
    let r2 = (2.0 * aa.i2).sqrt();
    let e1 = Vec2::unit(aa.phi1);
    let e2 = Vec2::unit(-aa.phi2);
    let q = e1 * r1 + e2 * r2;
    let v = -e2.perp() * r2;
    let p = momentum_from_velocity(aa.s, q, v, params)?;
    Ok(PhaseState::new(aa.s, q, p))
}

/// Extract action-angle coordinates from a phase-space state. Angles come
/// out on the principal branch; use
/// [`ActionAngleState::unwrapped_toward`] to keep them continuous along a
/// trajectory.
///
/// Fails on the degenerate set where the center or the velocity vanishes
/// exactly; points merely close to it stay representable, only with
/// increasingly noisy angles.
pub fn from_cartesian(state: &PhaseState, params: &SystemParams) -> Result<ActionAngleState> {
    let obs = observables(state, params)?;
    let c_sq = obs.c.norm_sq();
    let v_sq = obs.v.norm_sq();
    if c_sq == 0.0 {
        return Err(HallError::UndefinedAngle(
            "guiding center at the flux line: phi1 undefined",
        ));
    }
    if v_sq == 0.0 {
        return Err(HallError::UndefinedAngle(
            "zero velocity: phi2 undefined",
        ));
    }
    Ok(ActionAngleState {
        s: state.s,
        phi1: obs.c.angle(),
        phi2: -obs.v.perp().angle(),
        i1: 0.5 * c_sq,
        i2: 0.5 * v_sq,
    })
}

/// Residuals of the six canonical bracket relations of
/// `(phi1, phi2, I1, I2)` as functions on phase space, measured by central
/// finite differences. All residuals vanish for an exact canonical
/// transform.
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct CanonicalResiduals {
    /// `{phi1, I1} - 1`
    pub phi1_i1: f64,
    /// `{phi2, I2} - 1`
    pub phi2_i2: f64,
    /// `{phi1, I2}`
    pub phi1_i2: f64,
    /// `{phi2, I1}`
    pub phi2_i1: f64,
    /// `{phi1, phi2}`
    pub phi1_phi2: f64,
    /// `{I1, I2}`
    pub i1_i2: f64,
}

impl CanonicalResiduals {
    pub fn max_abs(&self) -> f64 {
        [
            self.phi1_i1,
            self.phi2_i2,
            self.phi1_i2,
            self.phi2_i1,
            self.phi1_phi2,
            self.i1_i2,
        ]
        .into_iter()
        .fold(0.0_f64, |m, r| m.max(r.abs()))
    }
}

/// Check the canonical structure at one point by finite differences.
pub fn check_canonical(
    aa: &ActionAngleState,
    params: &SystemParams,
) -> Result<CanonicalResiduals> {
    let base = to_cartesian(aa, params)?;
    let reference = from_cartesian(&base, params)?;
    let s = aa.s;

    // Angle-valued coordinates are evaluated as smooth deviations from the
    // reference branch so the finite differences never cross a cut.
    let at = |q: Vec2, p: Vec2| -> ActionAngleState {
        from_cartesian(&PhaseState::new(s, q, p), params)
            .expect("bracket evaluation wandered onto the degenerate set")
    };
    let phi1 = |q: Vec2, p: Vec2| reference.phi1 + wrap_to_pi(at(q, p).phi1 - reference.phi1);
    let phi2 = |q: Vec2, p: Vec2| reference.phi2 + wrap_to_pi(at(q, p).phi2 - reference.phi2);
    let i1 = |q: Vec2, p: Vec2| at(q, p).i1;
    let i2 = |q: Vec2, p: Vec2| at(q, p).i2;

    let (q, p) = (base.q, base.p);
    Ok(CanonicalResiduals {
        phi1_i1: poisson_bracket(phi1, i1, q, p) - 1.0,
        phi2_i2: poisson_bracket(phi2, i2, q, p) - 1.0,
        phi1_i2: poisson_bracket(phi1, i2, q, p),
        phi2_i1: poisson_bracket(phi2, i1, q, p),
        phi1_phi2: poisson_bracket(phi1, phi2, q, p),
        i1_i2: poisson_bracket(i1, i2, q, p),
    })
}
