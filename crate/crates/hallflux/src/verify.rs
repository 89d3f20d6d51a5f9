//! Built-in verification suites.
//!
//! Each suite re-measures a family of invariants the library is supposed
//! to uphold and reports one row per invariant: what was checked, the
//! measured residual, the threshold it must stay under, and the verdict.
//! Runs are seeded, so a given build always produces the same numbers.
//!
//! The suites are deliberately cheap (seconds, not minutes); they are a
//! smoke check for a deployed binary, not a replacement for the full test
//! suite.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::actionangle::{check_canonical, from_cartesian, to_cartesian, ActionAngleState};
use crate::asymptotics::bessel::{j0, j1, y0, y1};
use crate::asymptotics::fit::{amplitude_from_x, fit_constants, fit_series, AngleActionSeries};
use crate::asymptotics::picard::{integrate_shifted_x, picard_solve, PicardConfig};
use crate::asymptotics::reduced::{homogeneous_pair, reduced_rhs, x_transform, ReducedState};
use crate::asymptotics::series::{eval_asymptotic_series, AsymptoticConstants, Direction};
use crate::averaging::{
    average_over_fast_angle, averaged_hamiltonian_kav, averaged_rhs, averaging_error_experiment,
    explicit_solution_v0, integrate_averaged, AveragedField, AveragedState,
};
use crate::dynamics::{integrate, rhs_action_angle, IntegratorConfig};
use crate::error::Result;
use crate::frozen::{classify_orbit, frozen_flow};
use crate::model::{observables, Observables, PhaseState, PotentialSpec, SystemParams};
use crate::numdiff::{poisson_bracket, wrap_to_pi};
use crate::rk::StepControl;
use crate::vec2::Vec2;

/// The available verification suites.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Suite {
    Brackets,
    Frozen,
    ActionAngle,
    Averaging,
    Asymptotics,
    All,
}

impl Suite {
    pub const NAMES: [&'static str; 6] = [
        "brackets",
        "frozen",
        "actionangle",
        "averaging",
        "asymptotics",
        "all",
    ];

    pub fn parse(name: &str) -> Option<Suite> {
        match name {
            "brackets" => Some(Suite::Brackets),
            "frozen" => Some(Suite::Frozen),
            "actionangle" => Some(Suite::ActionAngle),
            "averaging" => Some(Suite::Averaging),
            "asymptotics" => Some(Suite::Asymptotics),
            "all" => Some(Suite::All),
            _ => None,
        }
    }
}

/// One verified invariant: measured residual against its threshold.
#[derive(Debug, Clone, Serialize)]
pub struct CheckResult {
    pub suite: &'static str,
    pub invariant: &'static str,
    pub residual: f64,
    pub threshold: f64,
    pub pass: bool,
}

impl CheckResult {
    fn new(suite: &'static str, invariant: &'static str, residual: f64, threshold: f64) -> Self {
        CheckResult {
            suite,
            invariant,
            residual,
            threshold,
            pass: residual.is_finite() && residual <= threshold,
        }
    }
}

/// Turn a fallible residual measurement into a row; errors become
/// infinite residuals so one broken check cannot abort the report.
fn row(
    suite: &'static str,
    invariant: &'static str,
    threshold: f64,
    measured: Result<f64>,
) -> CheckResult {
    CheckResult::new(suite, invariant, measured.unwrap_or(f64::INFINITY), threshold)
}

/// Run one suite (or all of them) and collect the rows.
pub fn run_suite(suite: Suite) -> Vec<CheckResult> {
    match suite {
        Suite::Brackets => brackets_suite(),
        Suite::Frozen => frozen_suite(),
        Suite::ActionAngle => actionangle_suite(),
        Suite::Averaging => averaging_suite(),
        Suite::Asymptotics => asymptotics_suite(),
        Suite::All => {
            let mut rows = brackets_suite();
            rows.extend(frozen_suite());
            rows.extend(actionangle_suite());
            rows.extend(averaging_suite());
            rows.extend(asymptotics_suite());
            rows
        }
    }
}

/// Random angle-action states with well-separated actions, keeping every
/// sampled orbit clear of both the flux line and the degenerate circles.
fn sample_states(rng: &mut ChaCha8Rng, n: usize) -> Vec<ActionAngleState> {
    let pi = std::f64::consts::PI;
    (0..n)
        .map(|_| {
            ActionAngleState::new(
                rng.gen_range(-2.0..2.0),
                rng.gen_range(-pi..pi),
                rng.gen_range(-pi..pi),
                rng.gen_range(1.0..2.0),
                rng.gen_range(0.1..0.4),
            )
        })
        .collect()
}

fn brackets_suite() -> Vec<CheckResult> {
    const SUITE: &str = "brackets";
    let params = SystemParams::unit_with_flux(0.7 * std::f64::consts::TAU);
    let mut rng = ChaCha8Rng::seed_from_u64(0x00b7_ac3e);
    let states = sample_states(&mut rng, 100);

    let mut vel_pair: f64 = 0.0;
    let mut cen_pair: f64 = 0.0;
    let mut cross: f64 = 0.0;
    let mut canonical: f64 = 0.0;
    let measured = (|| -> Result<()> {
        for aa in &states {
            let base = to_cartesian(aa, &params)?;
            let s = base.s;
            let comp = |pick: fn(&Observables) -> f64| {
                let params = &params;
                move |q: Vec2, p: Vec2| {
                    let st = PhaseState::new(s, q, p);
                    pick(&observables(&st, params).expect("observables on the puncture"))
                }
            };
            let v1 = comp(|o| o.v.x);
            let v2 = comp(|o| o.v.y);
            let c1 = comp(|o| o.c.x);
            let c2 = comp(|o| o.c.y);
            let (q, p) = (base.q, base.p);
            vel_pair = vel_pair.max((poisson_bracket(v1, v2, q, p) - 1.0).abs());
            cen_pair = cen_pair.max((poisson_bracket(c1, c2, q, p) + 1.0).abs());
            for b in [
                poisson_bracket(v1, c1, q, p),
                poisson_bracket(v1, c2, q, p),
                poisson_bracket(v2, c1, q, p),
                poisson_bracket(v2, c2, q, p),
            ] {
                cross = cross.max(b.abs());
            }
            canonical = canonical.max(check_canonical(aa, &params)?.max_abs());
        }
        Ok(())
    })();

    let wrap = |v: f64| measured.clone().map(|()| v);
    vec![
        row(SUITE, "velocity_pair_bracket", 1e-6, wrap(vel_pair)),
        row(SUITE, "center_pair_bracket", 1e-6, wrap(cen_pair)),
        row(SUITE, "velocity_center_cross_brackets", 1e-6, wrap(cross)),
        row(SUITE, "angle_action_brackets", 1e-6, wrap(canonical)),
    ]
}

fn frozen_suite() -> Vec<CheckResult> {
    const SUITE: &str = "frozen";
    let params = SystemParams::unit_with_flux(0.0);
    let config = IntegratorConfig::default();
    let mut rng = ChaCha8Rng::seed_from_u64(0x0f20_2e11);
    let states = sample_states(&mut rng, 20);

    let agreement = (|| -> Result<f64> {
        let mut worst: f64 = 0.0;
        for aa in &states {
            let start = to_cartesian(aa, &params)?;
            // Without a ramp the full system is autonomous and coincides
            // with the flow frozen at the start time.
            let closed = frozen_flow(&start, start.s, std::f64::consts::TAU, &params)?;
            let traj = integrate(
                start,
                (start.s, start.s + std::f64::consts::TAU),
                &config,
                &params,
            )?;
            let end = &traj.samples.last().expect("nonempty trajectory").state;
            worst = worst
                .max((end.q - closed.q).norm())
                .max((end.p - closed.p).norm())
                .max((end.winding - closed.winding).abs());
        }
        Ok(worst)
    })();

    let reference = (|| -> Result<f64> {
        let start = PhaseState::new(0.0, Vec2::new(1.0, 0.0), Vec2::new(0.0, 1.0));
        let obs = observables(&start, &params)?;
        let half = frozen_flow(&start, 0.0, std::f64::consts::PI, &params)?;
        let full = frozen_flow(&start, 0.0, std::f64::consts::TAU, &params)?;
        Ok((obs.v - Vec2::new(0.0, 0.5))
            .norm()
            .max((obs.c - Vec2::new(1.5, 0.0)).norm())
            .max((obs.energy - 0.125).abs())
            .max((obs.angular_momentum - 1.0).abs())
            .max((half.q - Vec2::new(2.0, 0.0)).norm())
            .max((full.q - start.q).norm())
            .max((full.p - start.p).norm()))
    })();

    let classification = (|| -> Result<f64> {
        let mut mismatches = 0.0;
        for aa in &states {
            let state = to_cartesian(aa, &params)?;
            let orbit = classify_orbit(&state, state.s, &params)?;
            // The circle winds around the flux line exactly when the
            // rotation action exceeds the center action.
            if orbit.encircles_origin != (aa.i1 < aa.i2) {
                mismatches += 1.0;
            }
        }
        Ok(mismatches)
    })();

    vec![
        row(SUITE, "closed_form_agreement", 1e-9, agreement),
        row(SUITE, "reference_orbit_values", 1e-12, reference),
        row(SUITE, "orbit_classification", 0.5, classification),
    ]
}

fn actionangle_suite() -> Vec<CheckResult> {
    const SUITE: &str = "actionangle";
    let params = SystemParams::unit_with_flux(1.3 * std::f64::consts::TAU);
    let mut rng = ChaCha8Rng::seed_from_u64(0x0aa0_57a7);
    let states = sample_states(&mut rng, 100);

    let mut round_trip: f64 = 0.0;
    let mut radius: f64 = 0.0;
    let mut observable: f64 = 0.0;
    let measured = (|| -> Result<()> {
        for aa in &states {
            let state = to_cartesian(aa, &params)?;
            let back = from_cartesian(&state, &params)?;
            round_trip = round_trip
                .max(wrap_to_pi(back.phi1 - aa.phi1).abs())
                .max(wrap_to_pi(back.phi2 - aa.phi2).abs())
                .max((back.i1 - aa.i1).abs())
                .max((back.i2 - aa.i2).abs());
            let again = to_cartesian(&back, &params)?;
            round_trip = round_trip
                .max((again.q - state.q).norm())
                .max((again.p - state.p).norm());
            radius = radius.max((state.q.norm_sq() - aa.q_norm_sq()).abs());
            let obs = observables(&state, &params)?;
            observable = observable
                .max((obs.energy - aa.i2).abs())
                .max((0.5 * obs.c.norm_sq() - aa.i1).abs());
        }
        Ok(())
    })();

    let wrap = |v: f64| measured.clone().map(|()| v);
    vec![
        row(SUITE, "transform_round_trip", 1e-12, wrap(round_trip)),
        row(SUITE, "radius_identity", 1e-12, wrap(radius)),
        row(SUITE, "action_observable_identity", 1e-12, wrap(observable)),
    ]
}

fn averaging_suite() -> Vec<CheckResult> {
    const SUITE: &str = "averaging";
    let mut rng = ChaCha8Rng::seed_from_u64(0x0a0e_a4e5);

    let inv_q_sq = |p1: f64, p2: f64, i1: f64, i2: f64| {
        1.0 / ActionAngleState::new(0.0, p1, p2, i1, i2).q_norm_sq()
    };

    let mut quadrature: f64 = 0.0;
    let mut oscillating: f64 = 0.0;
    for _ in 0..50 {
        let i_min: f64 = rng.gen_range(0.3..1.0);
        let i_max: f64 = i_min / rng.gen_range(0.05..0.25);
        let phi1 = rng.gen_range(-3.0..3.0);
        for (i1, i2) in [(i_max, i_min), (i_min, i_max)] {
            let expect = 0.5 / (i1 - i2).abs();
            let mean = average_over_fast_angle(inv_q_sq, phi1, i1, i2, 64);
            quadrature = quadrature.max((mean - expect).abs() / expect.max(1.0));
            let osc = |p1: f64, p2: f64, a: f64, b: f64| (p1 + p2).sin() * inv_q_sq(p1, p2, a, b);
            oscillating = oscillating.max(average_over_fast_angle(osc, phi1, i1, i2, 64).abs());
        }
    }

    let closed_form = (|| -> Result<f64> {
        let params = SystemParams::unit_with_flux(std::f64::consts::TAU);
        let field = AveragedField::from_params(&params);
        let config = IntegratorConfig::default();
        let mut worst: f64 = 0.0;
        let mut rng = ChaCha8Rng::seed_from_u64(0x0a0e_c105);
        for _ in 0..20 {
            let j0 = (rng.gen_range(0.2..2.0), rng.gen_range(0.2..2.0));
            let psi0 = (rng.gen_range(-3.0..3.0), rng.gen_range(-3.0..3.0));
            let initial = AveragedState::new(0.0, psi0.0, psi0.1, j0.0, j0.1);
            let traj = integrate_averaged(&initial, &field, (-6.0, 10.0), &config, &params)?;
            for st in &traj.states {
                let exact = explicit_solution_v0(j0, psi0, field.f, st.s)?;
                worst = worst
                    .max((st.j1 - exact.j1).abs())
                    .max((st.j2 - exact.j2).abs())
                    .max((st.psi1 - exact.psi1).abs())
                    .max((st.psi2 - exact.psi2).abs());
            }
        }
        Ok(worst)
    })();

    let hamiltonian = (|| -> Result<f64> {
        let mut params = SystemParams::unit_with_flux(0.8 * std::f64::consts::TAU);
        params.potential = PotentialSpec::Sinusoidal {
            alpha: 0.2,
            k1: 1.0,
            k2: 1.0,
        };
        params.validate()?;
        let field = AveragedField::from_params(&params);
        let h = 1e-6;
        let mut worst: f64 = 0.0;
        for (psi1, psi2, j1, j2) in [
            (0.4, -0.2, 1.5, 0.6),
            (-1.1, 1.7, 0.9, 2.2),
            (2.3, 0.3, 2.4, 0.8),
        ] {
            let at = |p1: f64, p2: f64, a: f64, b: f64| -> Result<f64> {
                averaged_hamiltonian_kav(&AveragedState::new(0.0, p1, p2, a, b), &field, &params)
            };
            let state = AveragedState::new(0.0, psi1, psi2, j1, j2);
            let (dpsi, dj) = averaged_rhs(&state, &field, &params)?;
            // Hamilton's equations for the conserved branch function with
            // canonical pairs (psi1, J1) and (psi2, J2).
            let dk_dj1 = (at(psi1, psi2, j1 + h, j2)? - at(psi1, psi2, j1 - h, j2)?) / (2.0 * h);
            let dk_dj2 = (at(psi1, psi2, j1, j2 + h)? - at(psi1, psi2, j1, j2 - h)?) / (2.0 * h);
            let dk_dpsi1 = (at(psi1 + h, psi2, j1, j2)? - at(psi1 - h, psi2, j1, j2)?) / (2.0 * h);
            let dk_dpsi2 = (at(psi1, psi2 + h, j1, j2)? - at(psi1, psi2 - h, j1, j2)?) / (2.0 * h);
            worst = worst
                .max((dpsi[0] - dk_dj1).abs())
                .max((dpsi[1] - dk_dj2).abs())
                .max((dj[0] + dk_dpsi1).abs())
                .max((dj[1] + dk_dpsi2).abs());
        }
        Ok(worst)
    })();

    let scaling = (|| -> Result<f64> {
        let base = SystemParams::unit_with_flux(std::f64::consts::TAU);
        let initial = ActionAngleState::new(0.0, 0.4, -0.7, 1.6, 0.4);
        let config = IntegratorConfig::default();
        let result =
            averaging_error_experiment(&initial, &[0.2, 0.1, 0.05], 10.0, &base, &config)?;
        Ok((result.exponent - 1.0).abs())
    })();

    vec![
        row(SUITE, "inverse_square_average", 1e-12, Ok(quadrature)),
        row(SUITE, "oscillating_averages_vanish", 1e-12, Ok(oscillating)),
        row(SUITE, "guiding_center_closed_form", 1e-10, closed_form),
        row(SUITE, "hamiltonian_field_consistency", 1e-8, hamiltonian),
        row(SUITE, "error_scaling_exponent", 0.3, scaling),
    ]
}

fn asymptotics_suite() -> Vec<CheckResult> {
    const SUITE: &str = "asymptotics";

    let wronskian = {
        let mut worst: f64 = 0.0;
        let mut s = 0.5;
        while s < 1.0e3 {
            let ideal = 2.0 / (std::f64::consts::PI * s);
            let measured = j1(s) * y0(s) - j0(s) * y1(s);
            worst = worst.max((measured - ideal).abs() / ideal);
            s *= 1.37;
        }
        Ok(worst)
    };

    let homogeneous = {
        // Residuals of x1' = x1/s - x2 and x2' = x1 for both cylinder
        // branches, derivatives by central differences.
        let h = 1e-5;
        let mut worst: f64 = 0.0;
        let mut s = 1.0;
        while s < 100.0 {
            let up = homogeneous_pair(s + h);
            let dn = homogeneous_pair(s - h);
            let here = homogeneous_pair(s);
            for branch in 0..2 {
                let pick = |v: ([f64; 2], [f64; 2])| if branch == 0 { v.0 } else { v.1 };
                let x = pick(here);
                let dx = [
                    (pick(up)[0] - pick(dn)[0]) / (2.0 * h),
                    (pick(up)[1] - pick(dn)[1]) / (2.0 * h),
                ];
                worst = worst
                    .max((dx[0] - x[0] / s + x[1]).abs())
                    .max((dx[1] - x[0]).abs());
            }
            s *= 1.61;
        }
        Ok(worst)
    };

    let reduced = (|| -> Result<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(0x0a57_0d0c);
        let mut worst: f64 = 0.0;
        for _ in 0..100 {
            let f = rng.gen_range(0.2..1.5);
            let j = rng.gen_range(1.0..6.0);
            let u = rng.gen_range(-0.8..0.8) * j / f;
            let psi = rng.gen_range(-3.0..3.0);
            // Split the reduced data into compatible individual actions.
            let i1 = 0.5 * (j + f * u);
            let i2 = 0.5 * (j - f * u);
            if i1 < 0.05 || i2 < 0.05 {
                continue;
            }
            let params = SystemParams::unit_with_flux(std::f64::consts::TAU * f);
            let phi1 = rng.gen_range(-3.0..3.0);
            let aa = ActionAngleState::new(u, phi1, psi - phi1, i1, i2);
            let (dphi, di) = rhs_action_angle(&aa, &params)?;
            let (dpsi_red, dj_red) = reduced_rhs(&ReducedState::new(u, j, psi), f, 0.0)?;
            worst = worst
                .max((dphi[0] + dphi[1] - dpsi_red).abs())
                .max((di[0] + di[1] - dj_red).abs());
        }
        Ok(worst)
    })();

    let picard = (|| -> Result<f64> {
        let f = 1.0;
        let sol = picard_solve(0.8, -0.3, f, 30.0, 90.0, &PicardConfig::default())?;
        let indices: Vec<usize> = (0..sol.s.len()).step_by(100).collect();
        let targets: Vec<f64> = indices.iter().map(|&i| sol.s[i]).collect();
        let ctrl = StepControl {
            rel_tol: 1e-12,
            abs_tol: 1e-14,
            ..Default::default()
        };
        let ode = integrate_shifted_x(sol.s[0], sol.x[0], &targets, f, &ctrl)?;
        let mut worst: f64 = 0.0;
        for (k, &i) in indices.iter().enumerate() {
            worst = worst
                .max((ode[k][0] - sol.x[i][0]).abs())
                .max((ode[k][1] - sol.x[i][1]).abs());
        }
        Ok(worst)
    })();

    let series_round_trip = (|| -> Result<f64> {
        let consts = AsymptoticConstants {
            a0: 1.1,
            b0: -0.3,
            k: 0.45,
            a0_tilde: 0.8,
            b0_tilde: 0.9,
            s0: 1.5,
        };
        let f = 0.9;
        let mut cols = AngleActionSeries::default();
        let mut s = 900.0;
        while s <= 2400.0 {
            let p = eval_asymptotic_series(&consts, f, s, Direction::Future)?;
            cols.push(s, p.i1, p.i2, p.phi1, p.phi2);
            s += 0.5;
        }
        let fit = fit_series(&cols, f, Direction::Future, Some((2000.0, 2400.0)))?;
        Ok((fit.amplitude - consts.a0)
            .abs()
            .max((fit.phase - consts.b0).abs())
            .max((fit.k - consts.k).abs()))
    })();

    // One long ramped run shared by the two constant cross-checks.
    let (fitted_k, fitted_a0) = {
        let shared = (|| -> Result<(f64, f64)> {
            let params = SystemParams::unit_with_flux(std::f64::consts::TAU);
            let initial = ActionAngleState::new(0.0, 0.3, 1.1, 3.0, 0.3);
            let config = IntegratorConfig {
                sample_count: 5000,
                ..IntegratorConfig::default()
            };
            let traj = integrate(initial, (0.0, 2500.0), &config, &params)?;
            let fit = fit_constants(&traj, Direction::Future, None)?;
            let k_err = (fit.k - traj.samples[0].obs.k).abs();

            let f = params.flux_rate();
            let mut points = vec![];
            for sample in &traj.samples {
                if sample.aa.s >= 1875.0 {
                    let state = ReducedState::new(
                        sample.aa.s,
                        sample.aa.i1 + sample.aa.i2,
                        sample.aa.phi1 + sample.aa.phi2,
                    );
                    let x = x_transform(&state, f, fit.s0)?;
                    points.push((x.s, [x.x1, x.x2]));
                }
            }
            let a0_x = amplitude_from_x(&points)?;
            Ok((k_err, (a0_x - fit.amplitude).abs() / fit.amplitude))
        })();
        match shared {
            Ok((k_err, a_err)) => (Ok(k_err), Ok(a_err)),
            Err(e) => (Err(e.clone()), Err(e)),
        }
    };

    vec![
        row(SUITE, "bessel_wronskian", 1e-10, wronskian),
        row(SUITE, "homogeneous_solutions", 1e-8, homogeneous),
        row(SUITE, "reduced_rates_consistency", 1e-10, reduced),
        row(SUITE, "picard_ode_agreement", 1e-6, picard),
        row(SUITE, "series_fit_round_trip", 1e-6, series_round_trip),
        row(SUITE, "fitted_k_matches_conserved", 1e-4, fitted_k),
        row(SUITE, "fitted_a0_matches_x_amplitude", 1e-3, fitted_a0),
    ]
}

#[cfg(test)]
mod tests {
    use super::*;

    fn assert_all_pass(suite: Suite) {
        for check in run_suite(suite) {
            assert!(
                check.pass,
                "{}/{} residual {:e} over {:e}",
                check.suite, check.invariant, check.residual, check.threshold
            );
        }
    }

    #[test]
    fn suite_names_parse() {
        for name in Suite::NAMES {
            assert!(Suite::parse(name).is_some(), "{name}");
        }
        assert!(Suite::parse("nonsense").is_none());
    }

    #[test]
    fn brackets_frozen_actionangle_suites_pass() {
        assert_all_pass(Suite::Brackets);
        assert_all_pass(Suite::Frozen);
        assert_all_pass(Suite::ActionAngle);
    }

    #[test]
    fn averaging_suite_passes() {
        assert_all_pass(Suite::Averaging);
    }

    #[test]
    fn asymptotics_suite_passes() {
        assert_all_pass(Suite::Asymptotics);
    }
}
