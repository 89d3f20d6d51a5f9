//! Physical model: a unit of charge moving in the punctured plane under a
//! homogeneous magnetic field, a flux line through the origin whose flux
//! grows linearly in time, and an optional background potential.
//!
//! Everything downstream works in dimensionless variables: time is measured
//! in inverse cyclotron frequencies, lengths in magnetic lengths, momenta
//! inversely. The flux ramp then enters through the single parameter
//! returned by [`SystemParams::flux_rate`], and the induced electric field
//! is time independent, which fixes the gauge used for the time-dependent
//! part of the vector potential: `a_E(s, q) = -s * E(q)`, vanishing at
//! `s = 0`.

use serde::{Deserialize, Serialize};
use std::f64::consts::TAU;

use crate::error::{HallError, Result};
use crate::vec2::Vec2;

/// Positions closer to the flux line than this are rejected by field and
/// observable evaluation rather than silently amplified.
pub const EPS_Q: f64 = 1e-8;

/// Background potential, evaluated at physical positions.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum PotentialSpec {
    /// No potential.
    Zero,
    /// `alpha * (sin(k1 x) + sin(k2 y))`.
    Sinusoidal { alpha: f64, k1: f64, k2: f64 },
    /// Values on a uniform periodic grid, interpolated bicubically.
    /// `values[j][i]` is the sample at `(x0 + i dx, y0 + j dy)`; the grid
    /// spans one full period in each direction.
    Tabulated {
        x0: f64,
        y0: f64,
        dx: f64,
        dy: f64,
        values: Vec<Vec<f64>>,
    },
}

impl PotentialSpec {
    pub fn is_zero(&self) -> bool {
        matches!(self, PotentialSpec::Zero)
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            PotentialSpec::Zero => Ok(()),
            PotentialSpec::Sinusoidal { alpha, k1, k2 } => {
                if !(alpha.is_finite() && k1.is_finite() && k2.is_finite()) {
                    return Err(HallError::InvalidParameter(
                        "sinusoidal potential needs finite alpha, k1, k2".into(),
                    ));
                }
                Ok(())
            }
            PotentialSpec::Tabulated {
                dx, dy, values, ..
            } => {
                let ny = values.len();
                if ny < 4 {
                    return Err(HallError::InvalidParameter(
                        "tabulated potential needs at least 4 rows".into(),
                    ));
                }
                let nx = values[0].len();
                if nx < 4 {
                    return Err(HallError::InvalidParameter(
                        "tabulated potential needs at least 4 columns".into(),
                    ));
                }
                if values.iter().any(|row| row.len() != nx) {
                    return Err(HallError::InvalidParameter(
                        "tabulated potential rows have unequal lengths".into(),
                    ));
                }
                if values.iter().flatten().any(|v| !v.is_finite()) {
                    return Err(HallError::InvalidParameter(
                        "tabulated potential contains non-finite values".into(),
                    ));
                }
                if !(dx.is_finite() && dy.is_finite() && *dx > 0.0 && *dy > 0.0) {
                    return Err(HallError::InvalidParameter(
                        "tabulated potential needs positive grid spacings".into(),
                    ));
                }
                Ok(())
            }
        }
    }

    /// Potential value at a physical position.
    pub fn value(&self, x: Vec2) -> f64 {
        match self {
            PotentialSpec::Zero => 0.0,
            PotentialSpec::Sinusoidal { alpha, k1, k2 } => {
                alpha * ((k1 * x.x).sin() + (k2 * x.y).sin())
            }
            PotentialSpec::Tabulated { .. } => self.bicubic(x).0,
        }
    }

    /// Gradient at a physical position.
    pub fn gradient(&self, x: Vec2) -> Vec2 {
        match self {
            PotentialSpec::Zero => Vec2::ZERO,
            PotentialSpec::Sinusoidal { alpha, k1, k2 } => Vec2::new(
                alpha * k1 * (k1 * x.x).cos(),
                alpha * k2 * (k2 * x.y).cos(),
            ),
            PotentialSpec::Tabulated { .. } => self.bicubic(x).1,
        }
    }

    /// Torque about the origin, `x wedge grad V(x)`.
    pub fn torque(&self, x: Vec2) -> f64 {
        x.wedge(self.gradient(x))
    }

    /// Periodic Catmull-Rom interpolation in both directions; returns the
    /// value and the gradient. C1 across cell boundaries.
    fn bicubic(&self, x: Vec2) -> (f64, Vec2) {
        let PotentialSpec::Tabulated {
            x0,
            y0,
            dx,
            dy,
            values,
        } = self
        else {
            unreachable!("bicubic called on non-tabulated potential");
        };
        let ny = values.len() as i64;
        let nx = values[0].len() as i64;

        let u = (x.x - x0) / dx;
        let w = (x.y - y0) / dy;
        let iu = u.floor();
        let iw = w.floor();
        let tu = u - iu;
        let tw = w - iw;
        let iu = iu as i64;
        let iw = iw as i64;

        let wrap = |i: i64, n: i64| -> usize { (i.rem_euclid(n)) as usize };

        // Interpolate four rows in x, then the results in y.
        let mut col = [0.0; 4];
        let mut col_du = [0.0; 4];
        for (k, row_off) in (-1i64..=2).enumerate() {
            let j = wrap(iw + row_off, ny);
            let row = &values[j];
            let g = [
                row[wrap(iu - 1, nx)],
                row[wrap(iu, nx)],
                row[wrap(iu + 1, nx)],
                row[wrap(iu + 2, nx)],
            ];
            let (v, d) = catmull_rom(&g, tu);
            col[k] = v;
            col_du[k] = d;
        }
        let (value, d_dw) = catmull_rom(&col, tw);
        let (d_du, _) = catmull_rom(&col_du, tw);
        (value, Vec2::new(d_du / dx, d_dw / dy))
    }
}

/// Catmull-Rom value and derivative with respect to the local coordinate
/// `t` in `[0, 1]`, through the four samples `g[-1..=2]`.
fn catmull_rom(g: &[f64; 4], t: f64) -> (f64, f64) {
    let a = 2.0 * g[1];
    let b = g[2] - g[0];
    let c = 2.0 * g[0] - 5.0 * g[1] + 4.0 * g[2] - g[3];
    let d = -g[0] + 3.0 * g[1] - 3.0 * g[2] + g[3];
    let value = 0.5 * (a + b * t + c * t * t + d * t * t * t);
    let deriv = 0.5 * (b + 2.0 * c * t + 3.0 * d * t * t);
    (value, deriv)
}

/// Physical parameters. All simulation code receives positions and times in
/// dimensionless units; these parameters fix the scaling and the strength
/// of the flux ramp.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SystemParams {
    /// Charge, > 0.
    pub e: f64,
    /// Mass, > 0.
    pub m: f64,
    /// Magnetic field strength, > 0.
    pub b: f64,
    /// Flux added through the puncture per unit physical time.
    pub phi0: f64,
    #[serde(default = "PotentialSpec::default_zero")]
    pub potential: PotentialSpec,
}

impl PotentialSpec {
    fn default_zero() -> Self {
        PotentialSpec::Zero
    }
}

impl SystemParams {
    /// Landau problem with unit charge, mass and field and a flux ramp of
    /// one flux quantum per cyclotron period, giving `flux_rate() == 1`.
    pub fn unit_with_flux(phi0: f64) -> Self {
        SystemParams {
            e: 1.0,
            m: 1.0,
            b: 1.0,
            phi0,
            potential: PotentialSpec::Zero,
        }
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [("e", self.e), ("m", self.m), ("B", self.b)] {
            if !(v.is_finite() && v > 0.0) {
                return Err(HallError::InvalidParameter(format!(
                    "{name} must be finite and positive, got {v}"
                )));
            }
        }
        if !self.phi0.is_finite() || self.phi0 < 0.0 {
            return Err(HallError::InvalidParameter(format!(
                "Phi0 must be finite and non-negative, got {}",
                self.phi0
            )));
        }
        self.potential.validate()
    }

    /// Cyclotron frequency `e B / m`.
    pub fn omega(&self) -> f64 {
        self.e * self.b / self.m
    }

    /// Magnetic length `1 / sqrt(e B)`.
    pub fn lambda(&self) -> f64 {
        1.0 / (self.e * self.b).sqrt()
    }

    /// Dimensionless ramp strength `e Phi0 / (2 pi omega)`: the action
    /// gained per unit dimensionless time by an orbit around the puncture.
    pub fn flux_rate(&self) -> f64 {
        self.e * self.phi0 / (TAU * self.omega())
    }

    /// Potential coupling in dimensionless units, `e / omega`.
    pub fn coupling(&self) -> f64 {
        self.e / self.omega()
    }
}

/// Dimensionless phase-space state. `winding` is the continuous polar angle
/// accumulated by `q` along the trajectory; it equals `q.angle()` modulo
/// full turns.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PhaseState {
    pub s: f64,
    pub q: Vec2,
    pub p: Vec2,
    pub winding: f64,
}

impl PhaseState {
    /// State with the winding initialised to the principal angle of `q`.
    pub fn new(s: f64, q: Vec2, p: Vec2) -> Self {
        PhaseState {
            s,
            q,
            p,
            winding: q.angle(),
        }
    }
}

/// Derived quantities of a state: gauge-invariant velocity, center of the
/// instantaneous cyclotron circle, canonical angular momentum, kinetic
/// energy, and the motion integral `K`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Observables {
    pub v: Vec2,
    pub c: Vec2,
    pub angular_momentum: f64,
    pub energy: f64,
    pub k: f64,
}

/// Induced electric field at flux ramp rate `phi_dot`, in dimensionless
/// units. The azimuthal part decays like `1/|q|`; the potential contributes
/// its rescaled gradient.
pub fn electric_field_at_rate(phi_dot: f64, q: Vec2, params: &SystemParams) -> Result<Vec2> {
    let q_norm_sq = q.norm_sq();
    if q_norm_sq < EPS_Q * EPS_Q {
        return Err(HallError::SingularityProximity {
            q_norm: q_norm_sq.sqrt(),
            radius: EPS_Q,
        });
    }
    let azimuthal = params.e * phi_dot / (TAU * params.omega());
    let mut field = q.perp() * (azimuthal / q_norm_sq);
    if !params.potential.is_zero() {
        let lambda = params.lambda();
        let grad = params.potential.gradient(q * lambda);
        field -= params.coupling() * lambda * grad;
    }
    Ok(field)
}

/// Induced electric field under the linear flux ramp; time independent, so
/// no time argument.
pub fn electric_field(q: Vec2, params: &SystemParams) -> Result<Vec2> {
    electric_field_at_rate(params.phi0, q, params)
}

/// Time-dependent part of the vector potential in the gauge where it
/// vanishes at `s = 0`.
pub fn vector_potential_ramp(s: f64, q: Vec2, params: &SystemParams) -> Result<Vec2> {
    Ok(electric_field(q, params)? * (-s))
}

/// Full dimensionless vector potential `q_perp / 2 + a_E(s, q)`.
pub fn vector_potential(s: f64, q: Vec2, params: &SystemParams) -> Result<Vec2> {
    Ok(q.perp() * 0.5 + vector_potential_ramp(s, q, params)?)
}

/// Gauge-invariant velocity `v = p - a(s, q)`.
pub fn velocity(state: &PhaseState, params: &SystemParams) -> Result<Vec2> {
    Ok(state.p - vector_potential(state.s, state.q, params)?)
}

/// Canonical momentum recovered from position and velocity.
pub fn momentum_from_velocity(s: f64, q: Vec2, v: Vec2, params: &SystemParams) -> Result<Vec2> {
    Ok(v + vector_potential(s, q, params)?)
}

/// Derived observables of a state.
///
/// `K = H - m(q)` with the multivalued gauge function
/// `m(q) = flux_rate * winding - (e/omega) V(lambda q)`; under the linear
/// ramp it is a constant of the motion.
pub fn observables(state: &PhaseState, params: &SystemParams) -> Result<Observables> {
    let v = velocity(state, params)?;
    let c = state.q - v.perp();
    let energy = 0.5 * v.norm_sq();
    let mut k = energy - params.flux_rate() * state.winding;
    if !params.potential.is_zero() {
        k += params.coupling() * params.potential.value(state.q * params.lambda());
    }
    Ok(Observables {
        v,
        c,
        angular_momentum: state.q.wedge(state.p),
        energy,
        k,
    })
}

/// Map a physical `(t, q, p)` triple into dimensionless variables.
pub fn scale_to_dimensionless(t: f64, q: Vec2, p: Vec2, params: &SystemParams) -> PhaseState {
    let lambda = params.lambda();
    PhaseState::new(params.omega() * t, q / lambda, p * lambda)
}

/// Inverse of [`scale_to_dimensionless`]; returns `(t, q, p)` in physical
/// units. The winding does not survive the round trip, only the principal
/// angle does.
pub fn scale_from_dimensionless(state: &PhaseState, params: &SystemParams) -> (f64, Vec2, Vec2) {
    let lambda = params.lambda();
    (
        state.s / params.omega(),
        state.q * lambda,
        state.p / lambda,
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn unit_params() -> SystemParams {
        SystemParams::unit_with_flux(TAU)
    }

    #[test]
    fn derived_parameters_for_unit_system() {
        let params = unit_params();
        assert_eq!(params.omega(), 1.0);
        assert_eq!(params.lambda(), 1.0);
        assert_relative_eq!(params.flux_rate(), 1.0, max_relative = 1e-15);
    }

    #[test]
    fn derived_parameters_scale_correctly() {
        let params = SystemParams {
            e: 2.0,
            m: 0.5,
            b: 8.0,
            phi0: 3.0,
            potential: PotentialSpec::Zero,
        };
        assert_relative_eq!(params.omega(), 32.0);
        assert_relative_eq!(params.lambda(), 0.25);
        assert_relative_eq!(params.flux_rate(), 2.0 * 3.0 / (TAU * 32.0));
    }

    #[test]
    fn scaling_round_trip() {
        let params = SystemParams {
            e: 1.3,
            m: 0.7,
            b: 2.1,
            phi0: 0.4,
            potential: PotentialSpec::Zero,
        };
        let (t, q, p) = (1.75, Vec2::new(0.3, -1.2), Vec2::new(2.0, 0.25));
        let state = scale_to_dimensionless(t, q, p, &params);
        let (t2, q2, p2) = scale_from_dimensionless(&state, &params);
        assert_relative_eq!(t, t2, max_relative = 1e-14);
        assert_relative_eq!(q.x, q2.x, max_relative = 1e-14);
        assert_relative_eq!(q.y, q2.y, max_relative = 1e-14);
        assert_relative_eq!(p.x, p2.x, max_relative = 1e-14);
        assert_relative_eq!(p.y, p2.y, max_relative = 1e-14);
    }

    #[test]
    fn azimuthal_field_at_unit_position() {
        let params = unit_params();
        let e1 = electric_field(Vec2::new(1.0, 0.0), &params).unwrap();
        assert_relative_eq!(e1.x, 0.0, epsilon = 1e-15);
        assert_relative_eq!(e1.y, 1.0, max_relative = 1e-14);

        let e2 = electric_field(Vec2::new(0.0, 2.0), &params).unwrap();
        assert_relative_eq!(e2.x, -0.5, max_relative = 1e-14);
        assert_relative_eq!(e2.y, 0.0, epsilon = 1e-15);
    }

    #[test]
    fn field_rejects_near_singular_positions() {
        let params = unit_params();
        let err = electric_field(Vec2::new(1e-9, 0.0), &params).unwrap_err();
        assert!(matches!(err, HallError::SingularityProximity { .. }));
    }

    #[test]
    fn field_is_irrotational_away_from_origin() {
        // Central-difference curl of E at scattered points, potential on.
        let params = SystemParams {
            potential: PotentialSpec::Sinusoidal {
                alpha: 0.3,
                k1: 1.0,
                k2: 2.0,
            },
            ..unit_params()
        };
        let h = 1e-5;
        for &(x, y) in &[(1.0, 0.3), (-0.7, 1.9), (0.2, -2.4), (3.0, 4.0)] {
            let q = Vec2::new(x, y);
            let ex = |q: Vec2| electric_field(q, &params).unwrap().x;
            let ey = |q: Vec2| electric_field(q, &params).unwrap().y;
            let curl = (ey(q + Vec2::new(h, 0.0)) - ey(q - Vec2::new(h, 0.0))) / (2.0 * h)
                - (ex(q + Vec2::new(0.0, h)) - ex(q - Vec2::new(0.0, h))) / (2.0 * h);
            assert!(curl.abs() < 1e-6, "curl E = {curl} at ({x}, {y})");
        }
    }

    #[test]
    fn observables_of_reference_state() {
        // Zero ramp so the time-dependent gauge term vanishes.
        let params = SystemParams::unit_with_flux(0.0);
        let state = PhaseState::new(0.7, Vec2::new(1.0, 0.0), Vec2::new(0.0, 1.0));
        let obs = observables(&state, &params).unwrap();
        assert_relative_eq!(obs.v.x, 0.0, epsilon = 1e-15);
        assert_relative_eq!(obs.v.y, 0.5, max_relative = 1e-15);
        assert_relative_eq!(obs.c.x, 1.5, max_relative = 1e-15);
        assert_relative_eq!(obs.c.y, 0.0, epsilon = 1e-15);
        assert_relative_eq!(obs.energy, 0.125, max_relative = 1e-15);
        assert_relative_eq!(obs.angular_momentum, 1.0, max_relative = 1e-15);
    }

    #[test]
    fn center_identity_holds_with_active_ramp() {
        // c^2/2 = H + L - q wedge a_E, checked at a time where a_E != 0.
        let params = unit_params();
        for &(qx, qy, px, py, s) in &[
            (1.0, 0.0, 0.0, 1.0, 0.0),
            (1.0, 0.0, 0.0, 1.0, 2.5),
            (-0.4, 1.7, 0.8, -0.3, -1.3),
            (2.2, -0.6, -1.1, 0.5, 7.0),
        ] {
            let state = PhaseState::new(s, Vec2::new(qx, qy), Vec2::new(px, py));
            let obs = observables(&state, &params).unwrap();
            let a_ramp = vector_potential_ramp(s, state.q, &params).unwrap();
            let lhs = 0.5 * obs.c.norm_sq();
            let rhs = obs.energy + obs.angular_momentum - state.q.wedge(a_ramp);
            assert_relative_eq!(lhs, rhs, epsilon = 1e-12, max_relative = 1e-12);
        }
    }

    #[test]
    fn sinusoidal_gradient_matches_finite_differences() {
        let pot = PotentialSpec::Sinusoidal {
            alpha: 1.0 / 3.0,
            k1: 1.0,
            k2: 1.5,
        };
        let h = 1e-5;
        for &(x, y) in &[(0.2, 0.7), (-1.0, 2.0), (3.1, -0.4)] {
            let p = Vec2::new(x, y);
            let g = pot.gradient(p);
            let fd_x = (pot.value(p + Vec2::new(h, 0.0)) - pot.value(p - Vec2::new(h, 0.0)))
                / (2.0 * h);
            let fd_y = (pot.value(p + Vec2::new(0.0, h)) - pot.value(p - Vec2::new(0.0, h)))
                / (2.0 * h);
            assert_relative_eq!(g.x, fd_x, epsilon = 1e-8);
            assert_relative_eq!(g.y, fd_y, epsilon = 1e-8);
            assert_relative_eq!(pot.torque(p), p.wedge(g), epsilon = 1e-15);
        }
    }

    #[test]
    fn tabulated_potential_tracks_sampled_function() {
        // Sample a smooth periodic function on a 64x64 grid and compare the
        // interpolant and its gradient against the analytic values.
        let n = 64;
        let dx = TAU / n as f64;
        let f = |x: f64, y: f64| (x).sin() + 0.5 * (2.0 * y).cos();
        let values: Vec<Vec<f64>> = (0..n)
            .map(|j| (0..n).map(|i| f(i as f64 * dx, j as f64 * dx)).collect())
            .collect();
        let pot = PotentialSpec::Tabulated {
            x0: 0.0,
            y0: 0.0,
            dx,
            dy: dx,
            values,
        };
        pot.validate().unwrap();
        let h = 1e-5;
        for &(x, y) in &[(0.13, 5.9), (2.0, 2.0), (4.71, 0.02), (-1.3, 9.4)] {
            let p = Vec2::new(x, y);
            let v = pot.value(p);
            assert!((v - f(x, y)).abs() < 2e-4, "value off by {}", v - f(x, y));
            let g = pot.gradient(p);
            let fd_x =
                (pot.value(p + Vec2::new(h, 0.0)) - pot.value(p - Vec2::new(h, 0.0))) / (2.0 * h);
            let fd_y =
                (pot.value(p + Vec2::new(0.0, h)) - pot.value(p - Vec2::new(0.0, h))) / (2.0 * h);
            assert_relative_eq!(g.x, fd_x, epsilon = 1e-7);
            assert_relative_eq!(g.y, fd_y, epsilon = 1e-7);
        }
    }

    #[test]
    fn params_validation_rejects_bad_inputs() {
        let mut params = unit_params();
        params.b = 0.0;
        assert!(params.validate().is_err());
        params.b = 1.0;
        params.phi0 = f64::NAN;
        assert!(params.validate().is_err());
        params.phi0 = TAU;
        assert!(params.validate().is_ok());
    }
}
