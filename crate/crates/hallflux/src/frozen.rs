//! Flow of the Hamiltonian frozen at a fixed instant. With the fields held
//! fixed the force on the particle is `-v_perp` regardless of the freeze
//! time, so every orbit is a circle traversed clockwise at unit angular
//! speed around the gauge-invariant center. This closed form is both a
//! primitive (orbit classification, fast-angle averages) and an oracle for
//! the adaptive integrator.

use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::model::{momentum_from_velocity, observables, PhaseState, SystemParams};
use crate::vec2::Vec2;

/// Orbits with `| |c|^2 - 2H |` below this are flagged as boundary cases
/// between encircling and non-encircling rather than classified.
pub const BOUNDARY_TOL: f64 = 1e-12;

/// Geometry of one frozen-time orbit.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct FrozenOrbit {
    /// Freeze time defining the gauge in which the orbit was extracted.
    pub sigma: f64,
    pub center: Vec2,
    pub radius: f64,
    /// Initial angle of the radius vector `q - c`.
    pub phase0: f64,
    /// Whether the circle winds around the flux line, equivalent to
    /// `|c| < |v|` and to a negative gauge-shifted angular momentum.
    pub encircles_origin: bool,
    /// Set when the classification is within [`BOUNDARY_TOL`] of the
    /// boundary circle through the origin; `encircles_origin` is then not
    /// trustworthy.
    pub on_boundary: bool,
}

/// Evolve `(q, p)` for a duration `s` under the Hamiltonian frozen at time
/// `sigma`. The returned state lives at the frozen instant: its `s` field
/// is `sigma`, so observables evaluated on it use the frozen gauge.
///
/// The motion is exactly circular,
/// `q(s) = c + cos(s) v_perp + sin(s) v`, with period `2 pi`.
pub fn frozen_flow(
    state: &PhaseState,
    sigma: f64,
    s: f64,
    params: &SystemParams,
) -> Result<PhaseState> {
    let frozen = PhaseState { s: sigma, ..*state };
    let obs = observables(&frozen, params)?;
    let (v, c) = (obs.v, obs.c);

    let q_end = c + v.perp() * s.cos() + v * s.sin();
    let v_end = v * s.cos() - v.perp() * s.sin();
    let p_end = momentum_from_velocity(sigma, q_end, v_end, params)?;

    // Accumulate the continuous polar angle along the arc. Sub-steps are
    // refined until no single increment can alias a half turn.
    let winding;
    let mut n = (s.abs() / 0.3).ceil().max(8.0) as usize;
    loop {
        let mut w = state.winding;
        let mut prev = state.q;
        let mut max_jump: f64 = 0.0;
        for k in 1..=n {
            let u = s * k as f64 / n as f64;
            let q = c + v.perp() * u.cos() + v * u.sin();
            let jump = crate::numdiff::wrap_to_pi(q.angle() - prev.angle());
            max_jump = max_jump.max(jump.abs());
            w += jump;
            prev = q;
        }
        if max_jump < std::f64::consts::FRAC_PI_2 || n > 1 << 22 {
            winding = w;
            break;
        }
        n *= 2;
    }

    Ok(PhaseState {
        s: sigma,
        q: q_end,
        p: p_end,
        winding,
    })
}

/// Extract the circle geometry of the orbit through `state` under the
/// Hamiltonian frozen at `sigma`, and classify whether it surrounds the
/// flux line.
pub fn classify_orbit(
    state: &PhaseState,
    sigma: f64,
    params: &SystemParams,
) -> Result<FrozenOrbit> {
    let frozen = PhaseState { s: sigma, ..*state };
    let obs = observables(&frozen, params)?;
    let (v, c) = (obs.v, obs.c);
    let gap = c.norm_sq() - 2.0 * obs.energy;
    let on_boundary = gap.abs() < BOUNDARY_TOL;
    Ok(FrozenOrbit {
        sigma,
        center: c,
        radius: v.norm(),
        phase0: v.perp().angle(),
        encircles_origin: gap < 0.0,
        on_boundary,
    })
}
