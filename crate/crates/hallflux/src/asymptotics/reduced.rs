//! The two-variable reduction of the ramped flow and its transform to a
//! forced Bessel system.
//!
//! Without a background potential the action gap grows exactly linearly,
//! so the four angle-action rates collapse onto the sum variables
//! `J = I1 + I2`, `psi = phi1 + phi2`. A polar-to-Cartesian substitution
//! with radius `sqrt(J^2 - f^2 s^2)` turns that system into a forced
//! oscillator whose homogeneous solutions are `s J(s)` and `s Y(s)`; the
//! forcing decays along solutions, which is what makes the large-time
//! analysis work.
//!
//! All formulas here measure time from the gap's zero crossing: callers
//! pass the crossing time `s0` and the helpers shift internally.

use crate::asymptotics::bessel::{j0, j1, y0, y1};
use crate::error::{HallError, Result};
use crate::model::EPS_Q;

/// Sum-variable state: `j = I1 + I2`, `psi = phi1 + phi2` (unwrapped).
#[derive(Clone, Copy, Debug)]
pub struct ReducedState {
    pub s: f64,
    pub j: f64,
    pub psi: f64,
}

impl ReducedState {
    pub fn new(s: f64, j: f64, psi: f64) -> Self {
        ReducedState { s, j, psi }
    }
}

/// Cartesian form of the reduced state. The time field holds the
/// shifted time (zero at the gap crossing); the radius invariant reads
/// `x1^2 + x2^2 = j^2 - f^2 s^2` at the matching reduced state.
#[derive(Clone, Copy, Debug)]
pub struct XState {
    pub s: f64,
    pub x1: f64,
    pub x2: f64,
}

fn radical(j: f64, f: f64, u: f64) -> Result<f64> {
    let r_sq = j * j - f * f * u * u;
    if r_sq <= 0.0 {
        return Err(HallError::Domain(format!(
            "degenerate radical: J^2 - f^2 (s - s0)^2 = {r_sq:.3e} at shifted time {u}"
        )));
    }
    Ok(r_sq.sqrt())
}

/// Rates `(psi_dot, j_dot)` of the reduced system.
///
/// Requires `J^2 > f^2 (s - s0)^2`; on the constraint manifold
/// `I1 - I2 = f (s - s0)` these equal the summed angle-action rates of
/// the full field.
pub fn reduced_rhs(state: &ReducedState, f: f64, s0: f64) -> Result<(f64, f64)> {
    let u = state.s - s0;
    let r = radical(state.j, f, u)?;
    let d = state.j + r * state.psi.cos();
    if 2.0 * d < EPS_Q * EPS_Q {
        return Err(HallError::NearCollision { q_sq: 2.0 * d });
    }
    let fs = f * f * u;
    Ok((1.0 + fs * state.psi.sin() / (r * d), fs / d))
}

/// Polar-to-Cartesian transform; the returned time is shifted by `s0`.
pub fn x_transform(state: &ReducedState, f: f64, s0: f64) -> Result<XState> {
    let u = state.s - s0;
    let r = radical(state.j, f, u)?;
    Ok(XState {
        s: u,
        x1: r * state.psi.cos(),
        x2: r * state.psi.sin(),
    })
}

/// Inverse of [`x_transform`]; the angle comes back as a principal value.
pub fn x_inverse(x: &XState, f: f64, s0: f64) -> ReducedState {
    let r_sq = x.x1 * x.x1 + x.x2 * x.x2;
    ReducedState {
        s: x.s + s0,
        j: (r_sq + f * f * x.s * x.s).sqrt(),
        psi: x.x2.atan2(x.x1),
    }
}

/// Offset between the raw Cartesian pair and the variable the forced
/// system is written in: the second component is shifted by `+f` so the
/// forcing decays to zero along solutions.
pub fn shift(x: &XState, f: f64) -> XState {
    XState {
        s: x.s,
        x1: x.x1,
        x2: x.x2 + f,
    }
}

pub fn unshift(x: &XState, f: f64) -> XState {
    XState {
        s: x.s,
        x1: x.x1,
        x2: x.x2 - f,
    }
}

/// Forcing term of the transformed system, in the shifted variable:
/// `F(s, x) = f - x1/s - f^2 s / (sqrt(x1^2 + (x2 - f)^2 + f^2 s^2) + x1)`.
pub fn x_forcing(s: f64, x1: f64, x2: f64, f: f64) -> f64 {
    let raw2 = x2 - f;
    let j = (x1 * x1 + raw2 * raw2 + f * f * s * s).sqrt();
    f - x1 / s - f * f * s / (j + x1)
}

/// The transformed system solved for the derivatives (shifted variable):
/// `x1' = x1/s - x2 + F(s, x)`, `x2' = x1`.
pub fn x_ode_rhs(s: f64, x: &[f64; 2], f: f64) -> [f64; 2] {
    [x[0] / s - x[1] + x_forcing(s, x[0], x[1], f), x[0]]
}

/// The two homogeneous solutions `(s J0, s J1)` and `(s Y0, s Y1)` of the
/// transformed system with the forcing switched off.
pub fn homogeneous_pair(s: f64) -> ([f64; 2], [f64; 2]) {
    ([s * j0(s), s * j1(s)], [s * y0(s), s * y1(s)])
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::rhs_action_angle;
    use crate::actionangle::ActionAngleState;
    use crate::model::SystemParams;
    use crate::rk::{integrate_dense, StepControl};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn unperturbed_rates() {
        let (dpsi, dj) = reduced_rhs(&ReducedState::new(3.0, 2.0, 0.7), 0.0, 0.0).unwrap();
        assert_eq!(dpsi, 1.0);
        assert_eq!(dj, 0.0);
    }

    #[test]
    fn large_radius_expansion() {
        // At psi = pi/2 the rate tends to 1 + f^2 u / J^2 + higher order.
        let (j, u, f) = (1.0e4, 3.0, 0.7);
        let (dpsi, _) = reduced_rhs(
            &ReducedState::new(u, j, std::f64::consts::FRAC_PI_2),
            f,
            0.0,
        )
        .unwrap();
        assert!((dpsi - 1.0 - f * f * u / (j * j)).abs() < 1e-14);
    }

    #[test]
    fn degenerate_radical_is_rejected() {
        assert!(reduced_rhs(&ReducedState::new(2.0, 1.0, 0.0), 0.5, 0.0).is_err());
        assert!(x_transform(&ReducedState::new(4.0, 1.0, 0.0), 0.5, 0.0).is_err());
    }

    #[test]
    fn matches_the_summed_full_rates() {
        // On the constraint I1 - I2 = f (s - s0) the reduced rates equal
        // (phi1 + phi2, I1 + I2) rates of the full field, for any split
        // of psi into the two angles.
        let mut rng = ChaCha8Rng::seed_from_u64(0x5eed_0101);
        for _ in 0..100 {
            let f: f64 = rng.gen_range(0.1..2.0);
            let j: f64 = rng.gen_range(0.5..8.0);
            let u: f64 = rng.gen_range(-0.9..0.9) * j / f;
            let psi: f64 = rng.gen_range(-3.0..3.0);
            let phi1: f64 = rng.gen_range(-3.0..3.0);
            let i1 = 0.5 * (j + f * u);
            let i2 = 0.5 * (j - f * u);
            let params = SystemParams::unit_with_flux(std::f64::consts::TAU * f);
            let aa = ActionAngleState::new(0.0, phi1, psi - phi1, i1, i2);
            let (dphi, di) = rhs_action_angle(&aa, &params).unwrap();
            let (dpsi, dj) = reduced_rhs(&ReducedState::new(u, j, psi), f, 0.0).unwrap();
            assert!(
                (dpsi - (dphi[0] + dphi[1])).abs() < 1e-10,
                "psi rate off: f={f} j={j} u={u} psi={psi}"
            );
            assert!(
                (dj - (di[0] + di[1])).abs() < 1e-10,
                "J rate off: f={f} j={j} u={u} psi={psi}"
            );
        }
    }

    #[test]
    fn transform_round_trip_and_axis_case() {
        let f = 0.8;
        let s0 = 2.0;
        let state = ReducedState::new(5.0, 4.0, 0.0);
        let x = x_transform(&state, f, s0).unwrap();
        assert_eq!(x.x2, 0.0);
        let r = (state.j * state.j - f * f * (state.s - s0).powi(2)).sqrt();
        assert!((x.x1 - r).abs() < 1e-15);

        let state = ReducedState::new(5.0, 4.0, 1.9);
        let x = x_transform(&state, f, s0).unwrap();
        assert!(
            (x.x1 * x.x1 + x.x2 * x.x2 - (state.j * state.j - f * f * x.s * x.s)).abs() < 1e-12
        );
        let back = x_inverse(&x, f, s0);
        assert!((back.s - state.s).abs() < 1e-15);
        assert!((back.j - state.j).abs() < 1e-12);
        assert!((back.psi - state.psi).abs() < 1e-12);
    }

    #[test]
    fn mapped_derivatives_satisfy_the_displayed_system() {
        // Push the reduced rates through the transform analytically and
        // check them against the displayed right-hand side.
        let f = 0.5;
        for (s, j, psi) in [(2.0, 8.0, 0.3), (7.0, 9.5, -1.2), (30.0, 17.0, 2.4)] {
            let state = ReducedState::new(s, j, psi);
            let (dpsi, dj) = reduced_rhs(&state, f, 0.0).unwrap();
            let x = x_transform(&state, f, 0.0).unwrap();
            let r = (x.x1 * x.x1 + x.x2 * x.x2).sqrt();
            let dr = (j * dj - f * f * s) / r;
            let dx1 = dr * psi.cos() - r * psi.sin() * dpsi;
            let dx2 = dr * psi.sin() + r * psi.cos() * dpsi;
            let shifted = shift(&x, f);
            let rhs = x_ode_rhs(s, &[shifted.x1, shifted.x2], f);
            assert!((dx1 - rhs[0]).abs() < 1e-12, "x1 rate at s={s}");
            assert!((dx2 - rhs[1]).abs() < 1e-12, "x2 rate at s={s}");
        }
    }

    /// Integrate the reduced system from (s_from, state) to s_to and
    /// return the shifted Cartesian pair there.
    fn shifted_x_at(from: &ReducedState, s_to: f64, f: f64) -> [f64; 2] {
        let ctrl = StepControl {
            rel_tol: 1e-12,
            abs_tol: 1e-14,
            ..Default::default()
        };
        let mut rhs = |s: f64, y: &[f64; 2]| {
            let (dpsi, dj) = reduced_rhs(&ReducedState::new(s, y[0], y[1]), f, 0.0)?;
            Ok([dj, dpsi])
        };
        let (_, y) = integrate_dense(&mut rhs, from.s, [from.j, from.psi], s_to, &ctrl, |_| Ok(()))
            .unwrap();
        let x = x_transform(&ReducedState::new(s_to, y[0], y[1]), f, 0.0).unwrap();
        let sx = shift(&x, f);
        [sx.x1, sx.x2]
    }

    #[test]
    fn x_ode_residual_along_an_integrated_trajectory() {
        // Five-point finite differences of the transformed trajectory
        // against the displayed right-hand side. Probes sit past s = 12:
        // earlier the orbit grazes the puncture (J - R dips below 1) and
        // the fifth derivative bounding the stencil error blows up.
        let f = 0.5;
        let start = ReducedState::new(2.0, 8.0, 0.3);
        let h = 5e-3;
        for probe in [12.0, 25.0, 60.0] {
            let xm2 = shifted_x_at(&start, probe - 2.0 * h, f);
            let xm1 = shifted_x_at(&start, probe - h, f);
            let x0 = shifted_x_at(&start, probe, f);
            let xp1 = shifted_x_at(&start, probe + h, f);
            let xp2 = shifted_x_at(&start, probe + 2.0 * h, f);
            let rhs = x_ode_rhs(probe, &x0, f);
            for k in 0..2 {
                let fd = (-xp2[k] + 8.0 * xp1[k] - 8.0 * xm1[k] + xm2[k]) / (12.0 * h);
                assert!(
                    (fd - rhs[k]).abs() < 1e-8,
                    "component {k} residual {} at s = {probe}",
                    (fd - rhs[k]).abs()
                );
            }
        }
    }

    #[test]
    fn homogeneous_solutions_satisfy_the_forceless_system() {
        // (s J0, s J1) and (s Y0, s Y1) against x1' - x1/s + x2 = 0,
        // x2' = x1, derivatives by central differences.
        let h = 1e-5;
        let mut s = 1.0;
        while s <= 100.0 {
            for pick in [0, 1] {
                let at = |t: f64| {
                    let (a, b) = homogeneous_pair(t);
                    if pick == 0 {
                        a
                    } else {
                        b
                    }
                };
                let x = at(s);
                let xp = at(s + h);
                let xm = at(s - h);
                let d1 = (xp[0] - xm[0]) / (2.0 * h);
                let d2 = (xp[1] - xm[1]) / (2.0 * h);
                let res1 = d1 - x[0] / s + x[1];
                let res2 = d2 - x[0];
                assert!(res1.abs() < 1e-8, "first equation at s = {s}: {res1}");
                assert!(res2.abs() < 1e-8, "second equation at s = {s}: {res2}");
            }
            s += 0.73;
        }
    }
}
