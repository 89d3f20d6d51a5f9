//! Integration of the full time-dependent equations of motion.
//!
//! Two charts are available and may be mixed within one run. The Cartesian
//! chart integrates Newton's form `q'' = -q'_perp + E(q)` together with the
//! winding angle; it is regular arbitrarily close to the flux line (short of
//! the guard radius) but oscillates on the fast time scale everywhere. The
//! angle-action chart integrates the exact slow/fast system; its right-hand
//! side degenerates when the orbit approaches the flux line or when an
//! action approaches zero, which is exactly where the integrator switches
//! back to Cartesian coordinates.
//!
//! A trajectory records dual-representation samples on a uniform time grid,
//! plus events: the time where the action gap changes sign, chart switches,
//! and a truncation flag when the motion runs into the guard radius around
//! the flux line (the flow is deliberately not regularized through the
//! puncture).

use serde::{Deserialize, Serialize};

use crate::actionangle::{from_cartesian, to_cartesian, ActionAngleState};
use crate::error::{HallError, Result};
use crate::model::{
    electric_field, momentum_from_velocity, observables, velocity, Observables, PhaseState,
    SystemParams, EPS_Q,
};
use crate::rk::{bisect_on, DenseStep, Dopri5, StepControl};
use crate::vec2::Vec2;

/// Which chart(s) the integrator may use.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CoordinateMode {
    Cartesian,
    ActionAngle,
    AutoSwitch,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct IntegratorConfig {
    pub rel_tol: f64,
    pub abs_tol: f64,
    pub max_step: f64,
    pub coordinate_mode: CoordinateMode,
    /// Below this distance from the flux line the angle-action chart is
    /// abandoned. Must stay above the model guard radius.
    pub r_switch: f64,
    /// Below this value of `min(I1, I2)` the angle-action chart is
    /// abandoned (its vector field divides by `sqrt(I1 I2)`).
    pub action_floor: f64,
    /// Number of uniformly spaced output samples over the requested span.
    pub sample_count: usize,
    pub max_steps: usize,
}

impl Default for IntegratorConfig {
    fn default() -> Self {
        IntegratorConfig {
            rel_tol: 1e-10,
            abs_tol: 1e-12,
            max_step: f64::INFINITY,
            coordinate_mode: CoordinateMode::AutoSwitch,
            r_switch: 0.05,
            action_floor: 1e-4,
            sample_count: 1000,
            max_steps: 20_000_000,
        }
    }
}

/// Strict positivity, false for NaN.
fn positive(v: f64) -> bool {
    v > 0.0
}

impl IntegratorConfig {
    pub fn validate(&self) -> Result<()> {
        if !positive(self.rel_tol) || !positive(self.abs_tol) {
            return Err(HallError::InvalidParameter(
                "integrator tolerances must be positive".into(),
            ));
        }
        if !positive(self.r_switch - EPS_Q) {
            return Err(HallError::InvalidParameter(format!(
                "r_switch = {} must exceed the guard radius {EPS_Q}",
                self.r_switch
            )));
        }
        if !positive(self.max_step) || !positive(self.action_floor) {
            return Err(HallError::InvalidParameter(
                "max_step and action_floor must be positive".into(),
            ));
        }
        Ok(())
    }

    fn step_control(&self) -> StepControl {
        StepControl {
            rel_tol: self.rel_tol,
            abs_tol: self.abs_tol,
            max_step: self.max_step,
            max_steps: self.max_steps,
            ..Default::default()
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EventKind {
    /// The action gap `I1 - I2` crossed zero.
    HittingTime,
    /// The run was truncated because the particle reached the guard radius
    /// around the flux line.
    SingularityFlag,
    /// The integrator changed charts.
    BranchSwitch,
}

#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct Event {
    pub kind: EventKind,
    pub s: f64,
}

/// One output sample in both representations.
#[derive(Clone, Copy, Debug)]
pub struct Sample {
    pub state: PhaseState,
    pub aa: ActionAngleState,
    pub obs: Observables,
}

#[derive(Clone, Debug)]
pub struct Trajectory {
    pub params: SystemParams,
    pub samples: Vec<Sample>,
    pub events: Vec<Event>,
}

pub const TRAJECTORY_CSV_HEADER: &str = "s,q1,q2,p1,p2,I1,I2,phi1,phi2,H,K,c1,c2";

impl Trajectory {
    /// Serialize the samples; floats use the shortest round-trip decimal
    /// form so identical runs produce identical bytes.
    pub fn csv(&self) -> String {
        use std::fmt::Write;
        let mut out = String::with_capacity(self.samples.len() * 120 + 64);
        out.push_str(TRAJECTORY_CSV_HEADER);
        out.push('\n');
        for smp in &self.samples {
            writeln!(
                out,
                "{},{},{},{},{},{},{},{},{},{},{},{},{}",
                smp.state.s,
                smp.state.q.x,
                smp.state.q.y,
                smp.state.p.x,
                smp.state.p.y,
                smp.aa.i1,
                smp.aa.i2,
                smp.aa.phi1,
                smp.aa.phi2,
                smp.obs.energy,
                smp.obs.k,
                smp.obs.c.x,
                smp.obs.c.y,
            )
            .expect("writing to a string cannot fail");
        }
        out
    }

    pub fn events_json(&self) -> String {
        serde_json::to_string(&self.events).expect("events serialize infallibly")
    }

    /// Whether the run ended early at the guard radius.
    pub fn truncated(&self) -> bool {
        self.events
            .iter()
            .any(|e| e.kind == EventKind::SingularityFlag)
    }
}

/// Velocity and acceleration of Newton's form `q'' = -q'_perp + E(q)`.
/// The returned pair is `(dq/ds, dv/ds)`; `dp/ds` follows from the gauge
/// and is not needed by the stepper.
pub fn rhs_cartesian(state: &PhaseState, params: &SystemParams) -> Result<(Vec2, Vec2)> {
    let v = velocity(state, params)?;
    let e = electric_field(state.q, params)?;
    Ok((v, -v.perp() + e))
}

/// Exact rates of the angle-action variables under the full flow,
/// `(dphi1, dphi2)` and `(dI1, dI2)`. The field enters only through inner
/// products with the four coordinate derivatives of `q`, so any potential
/// is supported.
pub fn rhs_action_angle(
    aa: &ActionAngleState,
    params: &SystemParams,
) -> Result<([f64; 2], [f64; 2])> {
    let (dphi, di, _) = aa_rates(aa.phi1, aa.phi2, aa.i1, aa.i2, params)?;
    Ok((dphi, di))
}

/// Core of the angle-action vector field; also returns the winding rate.
fn aa_rates(
    phi1: f64,
    phi2: f64,
    i1: f64,
    i2: f64,
    params: &SystemParams,
) -> Result<([f64; 2], [f64; 2], f64)> {
    if i1 <= 0.0 || i2 <= 0.0 {
        return Err(HallError::DegenerateAction(
            "angle-action vector field needs strictly positive actions",
        ));
    }
    let r1 = (2.0 * i1).sqrt();
    let r2 = (2.0 * i2).sqrt();
    let e1 = Vec2::unit(phi1);
    let e2 = Vec2::unit(-phi2);
    let q = e1 * r1 + e2 * r2;
    let q_sq = q.norm_sq();
    if q_sq < EPS_Q * EPS_Q {
        return Err(HallError::NearCollision { q_sq });
    }
    let e = electric_field(q, params)?;

    let dphi1 = -e.dot(e1) / r1;
    let dphi2 = 1.0 - e.dot(e2) / r2;
    let di1 = r1 * e.dot(e1.perp());
    let di2 = -r2 * e.dot(e2.perp());
    // q ^ v with v = -r2 e2_perp.
    let w_dot = -(2.0 * i2 + r1 * r2 * (phi1 + phi2).cos()) / q_sq;
    Ok(([dphi1, dphi2], [di1, di2], w_dot))
}

/// Initial data for [`integrate`], in either representation.
#[derive(Clone, Copy, Debug)]
pub enum InitialCondition {
    Cartesian(PhaseState),
    ActionAngle(ActionAngleState),
}

impl From<PhaseState> for InitialCondition {
    fn from(s: PhaseState) -> Self {
        InitialCondition::Cartesian(s)
    }
}

impl From<ActionAngleState> for InitialCondition {
    fn from(s: ActionAngleState) -> Self {
        InitialCondition::ActionAngle(s)
    }
}

#[derive(Clone, Copy, PartialEq, Eq)]
enum Chart {
    Cartesian,
    ActionAngle,
}

/// State vector of either chart plus the winding angle: Cartesian packs
/// `(q1, q2, v1, v2, w)`, angle-action packs `(phi1, phi2, I1, I2, w)`.
type Y = [f64; 5];

fn cart_rhs(s: f64, y: &Y, params: &SystemParams) -> Result<Y> {
    let _ = s;
    let q = Vec2::new(y[0], y[1]);
    let v = Vec2::new(y[2], y[3]);
    let e = electric_field(q, params)?;
    let acc = -v.perp() + e;
    Ok([v.x, v.y, acc.x, acc.y, q.wedge(v) / q.norm_sq()])
}

fn aa_rhs(_s: f64, y: &Y, params: &SystemParams) -> Result<Y> {
    let (dphi, di, w_dot) = aa_rates(y[0], y[1], y[2], y[3], params)?;
    Ok([dphi[0], dphi[1], di[0], di[1], w_dot])
}

/// `I1 - I2` as a function of the chart state; its zero is the event of
/// interest.
fn action_gap(chart: Chart, y: &Y) -> f64 {
    match chart {
        Chart::ActionAngle => y[2] - y[3],
        Chart::Cartesian => {
            let q = Vec2::new(y[0], y[1]);
            let v = Vec2::new(y[2], y[3]);
            let c = q - v.perp();
            0.5 * (c.norm_sq() - v.norm_sq())
        }
    }
}

fn q_norm_of(chart: Chart, y: &Y) -> f64 {
    match chart {
        Chart::Cartesian => Vec2::new(y[0], y[1]).norm(),
        Chart::ActionAngle => {
            let aa = ActionAngleState::new(0.0, y[0], y[1], y[2], y[3]);
            aa.q_norm_sq().max(0.0).sqrt()
        }
    }
}

fn min_action_of(chart: Chart, y: &Y) -> f64 {
    match chart {
        Chart::ActionAngle => y[2].min(y[3]),
        Chart::Cartesian => {
            let q = Vec2::new(y[0], y[1]);
            let v = Vec2::new(y[2], y[3]);
            let c = q - v.perp();
            0.5 * c.norm_sq().min(v.norm_sq())
        }
    }
}

struct Leg {
    samples: Vec<Sample>,
    events: Vec<Event>,
}

/// Integrate one directed leg from `start` to `s_end`, sampling at the
/// (direction-ordered) `grid` times. Switches charts as configured, logs
/// events, and truncates with a flag instead of failing when the motion
/// reaches the guard radius.
fn run_leg(
    start: &PhaseState,
    start_aa: &ActionAngleState,
    s_end: f64,
    grid: &[f64],
    config: &IntegratorConfig,
    params: &SystemParams,
) -> Result<Leg> {
    let dir = if s_end >= start.s { 1.0 } else { -1.0 };
    let mut samples = Vec::with_capacity(grid.len());
    let mut events = Vec::new();
    let mut grid_idx = 0;

    // Unwrap anchor: the angle-action image of the latest accepted step
    // start, kept continuous along the whole leg.
    let mut anchor = *start_aa;

    let mut chart = match config.coordinate_mode {
        CoordinateMode::Cartesian => Chart::Cartesian,
        CoordinateMode::ActionAngle => Chart::ActionAngle,
        CoordinateMode::AutoSwitch => {
            let v = velocity(start, params)?;
            let c = start.q - v.perp();
            let i_min = 0.5 * c.norm_sq().min(v.norm_sq());
            if start.q.norm() < config.r_switch || i_min < config.action_floor {
                Chart::Cartesian
            } else {
                Chart::ActionAngle
            }
        }
    };
    let mut y: Y = match chart {
        Chart::Cartesian => {
            let v = velocity(start, params)?;
            [start.q.x, start.q.y, v.x, v.y, start.winding]
        }
        Chart::ActionAngle => [
            start_aa.phi1,
            start_aa.phi2,
            start_aa.i1,
            start_aa.i2,
            start.winding,
        ],
    };
    let mut s = start.s;

    // Grid points at the leg origin are sampled from the initial state.
    while grid_idx < grid.len() && grid[grid_idx] == s {
        samples.push(make_sample(s, chart, &y, &anchor, params)?);
        grid_idx += 1;
    }
    if s == s_end {
        return Ok(Leg { samples, events });
    }

    let base_ctrl = config.step_control();
    // Bound the Cartesian step so polar angles move less than a half turn
    // per step and unwrapping across steps stays sound.
    let cart_ctrl = StepControl {
        max_step: base_ctrl.max_step.min(1.5),
        ..base_ctrl
    };

    'leg: loop {
        let ctrl = match chart {
            Chart::Cartesian => &cart_ctrl,
            Chart::ActionAngle => &base_ctrl,
        };
        let mut rhs = |s: f64, y: &Y| match chart {
            Chart::Cartesian => cart_rhs(s, y, params),
            Chart::ActionAngle => aa_rhs(s, y, params),
        };
        let mut stepper = match Dopri5::new(&mut rhs, s, y, s_end, ctrl) {
            Ok(st) => st,
            Err(err) if is_truncation(&err) => {
                events.push(Event {
                    kind: EventKind::SingularityFlag,
                    s,
                });
                break 'leg;
            }
            Err(err) => return Err(err),
        };

        // Step within the current chart until done, truncated, or switched.
        loop {
            if (s_end - stepper.s) * dir <= 0.0 {
                break 'leg;
            }
            stepper.clip_to(s_end);
            if chart == Chart::Cartesian {
                let q_norm = q_norm_of(chart, &stepper.y);
                if q_norm < 2.0 {
                    // Near the flux line, bound the distance moved per step
                    // by half the current distance so the approach is
                    // resolved rather than stepped across.
                    let v_norm = Vec2::new(stepper.y[2], stepper.y[3]).norm();
                    stepper.limit_step((0.5 * q_norm / v_norm.max(1.0)).max(1e-3 * EPS_Q));
                }
            }
            let guard = |y0: &Y, y1: &Y| match chart {
                Chart::ActionAngle => {
                    (y1[0] - y0[0]).abs() + (y1[1] - y0[1]).abs() < std::f64::consts::PI
                }
                Chart::Cartesian => true,
            };
            let dense = match stepper.step(&mut rhs, ctrl, guard) {
                Ok(d) => d,
                Err(err) if is_truncation(&err) => {
                    events.push(Event {
                        kind: EventKind::SingularityFlag,
                        s: stepper.s,
                    });
                    break 'leg;
                }
                Err(err) => return Err(err),
            };

            // A close approach to the flux line can hide between the
            // endpoints of an angle-action step; if one is found the step
            // is cut short at the entry of the dip.
            let cut = analyze_dip(&dense, chart, config);
            let s_eff = match cut {
                Some(DipCut::Switch(sc)) | Some(DipCut::Truncate(sc)) => sc,
                None => dense.s1(),
            };

            // Action-gap sign change on the surviving part of the step.
            let g0 = action_gap(chart, &dense.y0);
            let g1 = action_gap(chart, &dense.eval(s_eff));
            if g0 * g1 < 0.0 {
                let s_hit = bisect_on(
                    &dense,
                    dense.s0,
                    s_eff,
                    |_, y| action_gap(chart, y),
                    1e-10,
                );
                events.push(Event {
                    kind: EventKind::HittingTime,
                    s: s_hit,
                });
            }

            // Emit samples covered by the surviving part (direction-aware).
            while grid_idx < grid.len() && (grid[grid_idx] - s_eff) * dir <= 0.0 {
                let sg = grid[grid_idx];
                let yg = dense.eval(sg);
                samples.push(make_sample(sg, chart, &yg, &anchor, params)?);
                grid_idx += 1;
            }

            match cut {
                Some(DipCut::Truncate(sc)) => {
                    events.push(Event {
                        kind: EventKind::SingularityFlag,
                        s: sc,
                    });
                    break 'leg;
                }
                Some(DipCut::Switch(sc)) => {
                    let yx = dense.eval(sc);
                    update_anchor(&mut anchor, sc, Chart::ActionAngle, &yx, params);
                    let aa = ActionAngleState::new(sc, yx[0], yx[1], yx[2], yx[3]);
                    let st = to_cartesian(&aa, params)?;
                    let v = velocity(&st, params)?;
                    s = sc;
                    y = [st.q.x, st.q.y, v.x, v.y, yx[4]];
                    chart = Chart::Cartesian;
                    events.push(Event {
                        kind: EventKind::BranchSwitch,
                        s,
                    });
                    continue 'leg;
                }
                None => {}
            }

            s = stepper.s;
            y = stepper.y;
            update_anchor(&mut anchor, s, chart, &y, params);

            // Hard truncation at the guard radius even if no evaluation
            // tripped the field guard.
            if q_norm_of(chart, &y) < EPS_Q {
                events.push(Event {
                    kind: EventKind::SingularityFlag,
                    s,
                });
                break 'leg;
            }

            if config.coordinate_mode == CoordinateMode::AutoSwitch {
                let q_norm = q_norm_of(chart, &y);
                let i_min = min_action_of(chart, &y);
                match chart {
                    Chart::ActionAngle
                        if q_norm < config.r_switch || i_min < config.action_floor =>
                    {
                        let aa =
                            ActionAngleState::new(s, y[0], y[1], y[2], y[3]);
                        let st = to_cartesian(&aa, params)?;
                        let v = velocity(&st, params)?;
                        y = [st.q.x, st.q.y, v.x, v.y, y[4]];
                        chart = Chart::Cartesian;
                        events.push(Event {
                            kind: EventKind::BranchSwitch,
                            s,
                        });
                        continue 'leg;
                    }
                    Chart::Cartesian
                        if q_norm > 2.0 * config.r_switch
                            && i_min > 2.0 * config.action_floor =>
                    {
                        let q = Vec2::new(y[0], y[1]);
                        let v = Vec2::new(y[2], y[3]);
                        let p = momentum_from_velocity(s, q, v, params)?;
                        let st = PhaseState {
                            s,
                            q,
                            p,
                            winding: y[4],
                        };
                        if let Ok(aa) = from_cartesian(&st, params) {
                            let aa = aa.unwrapped_toward(&anchor);
                            y = [aa.phi1, aa.phi2, aa.i1, aa.i2, st.winding];
                            chart = Chart::ActionAngle;
                            events.push(Event {
                                kind: EventKind::BranchSwitch,
                                s,
                            });
                            continue 'leg;
                        }
                    }
                    _ => {}
                }
            }
        }
    }

    // A step may land a hair short of the final grid point; cover leftover
    // points from the final state rather than dropping them, but only when
    // the leg actually reached its end (a truncation legitimately drops the
    // tail of the grid).
    while grid_idx < grid.len()
        && (grid[grid_idx] - s).abs() <= 1e-9 * s.abs().max(1.0)
    {
        samples.push(make_sample(grid[grid_idx], chart, &y, &anchor, params)?);
        grid_idx += 1;
    }

    Ok(Leg { samples, events })
}

enum DipCut {
    /// Leave the angle-action chart at this time.
    Switch(f64),
    /// Stop the run at this time with a singularity flag.
    Truncate(f64),
}

/// Inspect an accepted angle-action step for a close approach to the flux
/// line hidden between its endpoints. The step guard keeps the angle sum
/// `psi = phi1 + phi2` from advancing a half turn per step, so at most one
/// odd multiple of pi is crossed; there `|q|` collapses to
/// `sqrt(2) |sqrt(I1) - sqrt(I2)|`, which can undercut the switch radius
/// even when both endpoints are far from the flux line.
fn analyze_dip(dense: &DenseStep<5>, chart: Chart, config: &IntegratorConfig) -> Option<DipCut> {
    if chart != Chart::ActionAngle {
        return None;
    }
    use std::f64::consts::{PI, TAU};
    let psi0 = dense.y0[0] + dense.y0[1];
    let psi1 = dense.y1[0] + dense.y1[1];
    let k0 = ((psi0 - PI) / TAU).floor();
    let k1 = ((psi1 - PI) / TAU).floor();
    if k0 == k1 {
        return None;
    }
    let target = PI + TAU * k0.max(k1);
    let s_x = bisect_on(
        dense,
        dense.s0,
        dense.s1(),
        |_, y| y[0] + y[1] - target,
        1e-10,
    );
    let q_x = q_norm_of(Chart::ActionAngle, &dense.eval(s_x));
    let auto = config.coordinate_mode == CoordinateMode::AutoSwitch;
    let threshold = if auto { config.r_switch } else { EPS_Q };
    if q_x >= threshold {
        return None;
    }
    // Cut at the entry of the dip: the first time |q| reaches threshold.
    let s_cut = bisect_on(
        dense,
        dense.s0,
        s_x,
        |_, y| q_norm_of(Chart::ActionAngle, y) - threshold,
        1e-10,
    );
    Some(if auto {
        DipCut::Switch(s_cut)
    } else {
        DipCut::Truncate(s_cut)
    })
}

fn is_truncation(err: &HallError) -> bool {
    matches!(
        err,
        HallError::SingularityProximity { .. }
            | HallError::NearCollision { .. }
            | HallError::StepUnderflow { .. }
    )
}

fn update_anchor(anchor: &mut ActionAngleState, s: f64, chart: Chart, y: &Y, params: &SystemParams) {
    match chart {
        Chart::ActionAngle => {
            *anchor = ActionAngleState::new(s, y[0], y[1], y[2], y[3]);
        }
        Chart::Cartesian => {
            let q = Vec2::new(y[0], y[1]);
            let v = Vec2::new(y[2], y[3]);
            if let Ok(p) = momentum_from_velocity(s, q, v, params) {
                let st = PhaseState {
                    s,
                    q,
                    p,
                    winding: y[4],
                };
                if let Ok(aa) = from_cartesian(&st, params) {
                    *anchor = aa.unwrapped_toward(anchor);
                }
            }
        }
    }
}

fn make_sample(
    s: f64,
    chart: Chart,
    y: &Y,
    anchor: &ActionAngleState,
    params: &SystemParams,
) -> Result<Sample> {
    match chart {
        Chart::Cartesian => {
            let q = Vec2::new(y[0], y[1]);
            let v = Vec2::new(y[2], y[3]);
            let p = momentum_from_velocity(s, q, v, params)?;
            let state = PhaseState {
                s,
                q,
                p,
                winding: y[4],
            };
            let obs = observables(&state, params)?;
            let aa = match from_cartesian(&state, params) {
                Ok(aa) => aa.unwrapped_toward(anchor),
                // Exactly degenerate sample (c = 0 or v = 0): keep the
                // anchor's angles, actions from the observables.
                Err(_) => ActionAngleState::new(
                    s,
                    anchor.phi1,
                    anchor.phi2,
                    0.5 * obs.c.norm_sq(),
                    obs.energy,
                ),
            };
            Ok(Sample { state, aa, obs })
        }
        Chart::ActionAngle => {
            let aa = ActionAngleState::new(s, y[0], y[1], y[2], y[3]);
            let mut state = to_cartesian(&aa, params)?;
            state.winding = y[4];
            let obs = observables(&state, params)?;
            Ok(Sample { state, aa, obs })
        }
    }
}

/// Integrate the full equations of motion over `s_span`, starting from
/// `initial` (whose own time need not lie inside the span). Samples are
/// taken on a uniform grid over the span; the trajectory is truncated with
/// a flag if the motion reaches the guard radius around the flux line.
pub fn integrate(
    initial: impl Into<InitialCondition>,
    s_span: (f64, f64),
    config: &IntegratorConfig,
    params: &SystemParams,
) -> Result<Trajectory> {
    config.validate()?;
    params.validate()?;
    let (a, b) = s_span;
    if !a.is_finite() || !b.is_finite() || b < a {
        return Err(HallError::InvalidParameter(format!(
            "invalid time span ({a}, {b})"
        )));
    }

    let (start, start_aa) = match initial.into() {
        InitialCondition::Cartesian(st) => {
            let aa = match from_cartesian(&st, params) {
                Ok(aa) => aa,
                Err(_) => {
                    let obs = observables(&st, params)?;
                    ActionAngleState::new(st.s, 0.0, 0.0, 0.5 * obs.c.norm_sq(), obs.energy)
                }
            };
            (st, aa)
        }
        InitialCondition::ActionAngle(aa) => (to_cartesian(&aa, params)?, aa),
    };

    let grid: Vec<f64> = if a == b {
        vec![a]
    } else {
        let n = config.sample_count.max(2);
        (0..n)
            .map(|i| a + (b - a) * i as f64 / (n - 1) as f64)
            .collect()
    };

    let grid_back: Vec<f64> = grid
        .iter()
        .copied()
        .filter(|&sg| sg < start.s)
        .rev()
        .collect();
    let grid_fwd: Vec<f64> = grid.iter().copied().filter(|&sg| sg >= start.s).collect();

    let mut samples = Vec::with_capacity(grid.len());
    let mut events = Vec::new();

    if !grid_back.is_empty() || a < start.s {
        let leg = run_leg(&start, &start_aa, a.min(start.s), &grid_back, config, params)?;
        samples.extend(leg.samples.into_iter().rev());
        events.extend(leg.events);
    }
    {
        let leg = run_leg(
            &start,
            &start_aa,
            b.max(start.s),
            &grid_fwd,
            config,
            params,
        )?;
        samples.extend(leg.samples);
        events.extend(leg.events);
    }

    events.sort_by(|x, y| x.s.total_cmp(&y.s));
    Ok(Trajectory {
        params: params.clone(),
        samples,
        events,
    })
}

/// Result of [`detect_hitting_time`].
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct HittingTime {
    pub s0: f64,
    /// True when the background potential exerts no torque, in which case
    /// the action gap grows exactly linearly and `s0` is exact. Otherwise
    /// `s0` is the detected crossing of `I1 = I2` and only approximately
    /// marks the flux balance point.
    pub torque_free: bool,
}

/// Recover the time at which the action gap `I1 - I2` vanishes. With zero
/// torque every sample determines it exactly through the linear growth law;
/// the consensus value is returned. Otherwise the detected crossing is used.
pub fn detect_hitting_time(traj: &Trajectory, params: &SystemParams) -> Result<HittingTime> {
    let f = params.flux_rate();
    if f == 0.0 {
        return Err(HallError::NoHittingTime);
    }
    let torque_free = params.potential.is_zero();
    if torque_free {
        if traj.samples.is_empty() {
            return Err(HallError::NoHittingTime);
        }
        let mean = traj
            .samples
            .iter()
            .map(|smp| smp.state.s - (smp.aa.i1 - smp.aa.i2) / f)
            .sum::<f64>()
            / traj.samples.len() as f64;
        return Ok(HittingTime {
            s0: mean,
            torque_free,
        });
    }
    if let Some(ev) = traj
        .events
        .iter()
        .find(|e| e.kind == EventKind::HittingTime)
    {
        return Ok(HittingTime {
            s0: ev.s,
            torque_free,
        });
    }
    // Fall back to a sample-level sign change.
    for pair in traj.samples.windows(2) {
        let g0 = pair[0].aa.i1 - pair[0].aa.i2;
        let g1 = pair[1].aa.i1 - pair[1].aa.i2;
        if g0 * g1 <= 0.0 && g0 != g1 {
            let t = g0 / (g0 - g1);
            return Ok(HittingTime {
                s0: pair[0].state.s + t * (pair[1].state.s - pair[0].state.s),
                torque_free,
            });
        }
    }
    Err(HallError::NoHittingTime)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::frozen::frozen_flow;
    use crate::model::PotentialSpec;
    use approx::assert_relative_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn unit_params(phi0: f64) -> SystemParams {
        SystemParams::unit_with_flux(phi0)
    }

    #[test]
    fn newton_form_reduces_to_landau_rotation_without_field() {
        let params = unit_params(0.0);
        let q = Vec2::new(2.0, 1.0);
        let v = Vec2::new(1.0, 0.0);
        let p = momentum_from_velocity(0.0, q, v, &params).unwrap();
        let (qdot, acc) = rhs_cartesian(&PhaseState::new(0.0, q, p), &params).unwrap();
        assert_relative_eq!(qdot.x, 1.0);
        assert_relative_eq!(qdot.y, 0.0);
        // -v_perp = -(0, 1)
        assert_relative_eq!(acc.x, 0.0);
        assert_relative_eq!(acc.y, -1.0);
    }

    #[test]
    fn newton_form_picks_up_the_azimuthal_field() {
        let params = unit_params(std::f64::consts::TAU);
        let q = Vec2::new(1.0, 0.0);
        let p = momentum_from_velocity(0.0, q, Vec2::ZERO, &params).unwrap();
        let (qdot, acc) = rhs_cartesian(&PhaseState::new(0.0, q, p), &params).unwrap();
        assert_relative_eq!(qdot.norm(), 0.0);
        assert_relative_eq!(acc.x, 0.0, epsilon = 1e-15);
        assert_relative_eq!(acc.y, 1.0, epsilon = 1e-15);
    }

    #[test]
    fn kinetic_energy_is_conserved_without_field() {
        let params = unit_params(0.0);
        let config = IntegratorConfig {
            coordinate_mode: CoordinateMode::Cartesian,
            sample_count: 200,
            ..Default::default()
        };
        let q = Vec2::new(1.4, -0.3);
        let v = Vec2::new(0.4, 0.9);
        let p = momentum_from_velocity(0.0, q, v, &params).unwrap();
        let traj = integrate(
            PhaseState::new(0.0, q, p),
            (0.0, 25.0),
            &config,
            &params,
        )
        .unwrap();
        let h0 = 0.5 * v.norm_sq();
        for smp in &traj.samples {
            assert!((smp.obs.energy - h0).abs() < 1e-9);
        }
    }

    #[test]
    fn angle_action_field_is_trivial_without_perturbation() {
        let params = unit_params(0.0);
        let aa = ActionAngleState::new(0.0, 0.7, -0.2, 1.3, 0.4);
        let (dphi, di) = rhs_action_angle(&aa, &params).unwrap();
        assert_relative_eq!(dphi[0], 0.0);
        assert_relative_eq!(dphi[1], 1.0);
        assert_relative_eq!(di[0], 0.0);
        assert_relative_eq!(di[1], 0.0);
    }

    #[test]
    fn action_gap_rate_equals_flux_rate_minus_scaled_torque() {
        let params = SystemParams {
            e: 1.0,
            m: 1.0,
            b: 1.0,
            phi0: 4.0,
            potential: PotentialSpec::Sinusoidal {
                alpha: 0.15,
                k1: 1.0,
                k2: 1.0,
            },
        };
        let f = params.flux_rate();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..40 {
            let aa = ActionAngleState::new(
                0.0,
                rng.gen_range(-3.0..3.0),
                rng.gen_range(-3.0..3.0),
                rng.gen_range(0.2..2.0),
                rng.gen_range(0.2..2.0),
            );
            let (_, di) = rhs_action_angle(&aa, &params).unwrap();
            let q = to_cartesian(&aa, &params).unwrap().q;
            let torque = params.potential.torque(q * params.lambda());
            let expected = f - params.coupling() * torque;
            assert_relative_eq!(di[0] - di[1], expected, epsilon = 1e-12, max_relative = 1e-12);
        }
    }

    #[test]
    fn angle_action_field_matches_pushforward_of_newton_form() {
        // Central difference of the angle-action image along the Cartesian
        // flow versus the analytic vector field, at scattered points.
        let params = SystemParams {
            e: 1.0,
            m: 1.0,
            b: 1.0,
            phi0: 4.4,
            potential: PotentialSpec::Sinusoidal {
                alpha: 0.2,
                k1: 1.0,
                k2: 2.0,
            },
        };
        let ctrl = StepControl {
            rel_tol: 1e-12,
            abs_tol: 1e-14,
            ..Default::default()
        };
        let delta = 1e-4;
        let mut rng = ChaCha8Rng::seed_from_u64(23);
        let mut worst: f64 = 0.0;
        for _ in 0..100 {
            let aa = ActionAngleState::new(
                rng.gen_range(-2.0..2.0),
                rng.gen_range(-3.0..3.0),
                rng.gen_range(-3.0..3.0),
                rng.gen_range(0.3..2.5),
                rng.gen_range(0.3..2.5),
            );
            if aa.q_norm_sq() < 0.3 {
                continue;
            }
            let st = to_cartesian(&aa, &params).unwrap();
            let v = velocity(&st, &params).unwrap();
            let y0 = [st.q.x, st.q.y, v.x, v.y, st.winding];

            let image = |s_target: f64| {
                let mut rhs = |s: f64, y: &Y| cart_rhs(s, y, &params);
                let (_, y1) =
                    crate::rk::integrate_dense(&mut rhs, st.s, y0, s_target, &ctrl, |_| Ok(()))
                        .unwrap();
                let q = Vec2::new(y1[0], y1[1]);
                let vv = Vec2::new(y1[2], y1[3]);
                let p = momentum_from_velocity(s_target, q, vv, &params).unwrap();
                from_cartesian(
                    &PhaseState {
                        s: s_target,
                        q,
                        p,
                        winding: y1[4],
                    },
                    &params,
                )
                .unwrap()
                .unwrapped_toward(&aa)
            };
            let plus = image(st.s + delta);
            let minus = image(st.s - delta);
            let fd = [
                (plus.phi1 - minus.phi1) / (2.0 * delta),
                (plus.phi2 - minus.phi2) / (2.0 * delta),
                (plus.i1 - minus.i1) / (2.0 * delta),
                (plus.i2 - minus.i2) / (2.0 * delta),
            ];
            let (dphi, di) = rhs_action_angle(&aa, &params).unwrap();
            let analytic = [dphi[0], dphi[1], di[0], di[1]];
            for i in 0..4 {
                worst = worst.max((fd[i] - analytic[i]).abs());
            }
        }
        assert!(worst < 1e-6, "worst pushforward mismatch {worst}");
    }

    #[test]
    fn unperturbed_run_matches_closed_form_over_one_period() {
        let params = unit_params(0.0);
        let config = IntegratorConfig {
            rel_tol: 1e-12,
            abs_tol: 1e-14,
            sample_count: 16,
            ..Default::default()
        };
        let q = Vec2::new(1.0, 0.0);
        let p = Vec2::new(0.0, 1.0);
        let initial = PhaseState::new(0.0, q, p);
        let span = (0.0, std::f64::consts::TAU);
        let traj = integrate(initial, span, &config, &params).unwrap();
        for smp in &traj.samples {
            let expect = frozen_flow(&initial, 0.0, smp.state.s, &params).unwrap();
            assert!((smp.state.q - expect.q).norm() < 1e-9);
            assert!((smp.state.p - expect.p).norm() < 1e-9);
            assert!((smp.state.winding - expect.winding).abs() < 1e-9);
        }
    }

    #[test]
    fn action_gap_grows_linearly_and_dates_the_flux_balance() {
        let params = unit_params(std::f64::consts::TAU);
        assert_relative_eq!(params.flux_rate(), 1.0);
        let config = IntegratorConfig {
            sample_count: 400,
            ..Default::default()
        };
        let initial = ActionAngleState::new(0.0, 0.3, 1.1, 1.0, 2.0);
        let traj = integrate(initial, (0.0, 10.0), &config, &params).unwrap();
        for smp in &traj.samples {
            let gap = smp.aa.i1 - smp.aa.i2;
            assert!(
                (gap + 1.0 - smp.state.s).abs() < 1e-8,
                "gap law violated at s = {}: {}",
                smp.state.s,
                gap
            );
        }
        let hit = detect_hitting_time(&traj, &params).unwrap();
        assert!(hit.torque_free);
        assert!((hit.s0 - 1.0).abs() < 1e-8, "s0 = {}", hit.s0);
        // The located event agrees with the linear law.
        let ev = traj
            .events
            .iter()
            .find(|e| e.kind == EventKind::HittingTime)
            .expect("gap crossing not logged");
        assert!((ev.s - 1.0).abs() < 1e-8);
    }

    #[test]
    fn conserved_combination_survives_a_long_two_sided_run() {
        let params = unit_params(std::f64::consts::TAU);
        let config = IntegratorConfig {
            sample_count: 500,
            ..Default::default()
        };
        let q = Vec2::new(1.7, 0.4);
        let p = momentum_from_velocity(0.0, q, Vec2::new(-0.2, 0.8), &params).unwrap();
        let initial = PhaseState::new(0.0, q, p);
        let k0 = observables(&initial, &params).unwrap().k;
        let traj = integrate(initial, (-50.0, 50.0), &config, &params).unwrap();
        assert!(!traj.truncated());
        for smp in &traj.samples {
            assert!(
                (smp.obs.k - k0).abs() < 1e-8,
                "K drift {} at s = {}",
                smp.obs.k - k0,
                smp.state.s
            );
        }
    }

    #[test]
    fn conserved_combination_includes_the_potential_term() {
        let params = SystemParams {
            e: 1.0,
            m: 1.0,
            b: 1.0,
            phi0: std::f64::consts::TAU,
            potential: PotentialSpec::Sinusoidal {
                alpha: 0.3,
                k1: 1.0,
                k2: 1.0,
            },
        };
        let config = IntegratorConfig {
            sample_count: 200,
            ..Default::default()
        };
        let q = Vec2::new(1.3, -0.6);
        let p = momentum_from_velocity(0.0, q, Vec2::new(0.5, 0.4), &params).unwrap();
        let initial = PhaseState::new(0.0, q, p);
        let k0 = observables(&initial, &params).unwrap().k;
        let traj = integrate(initial, (0.0, 20.0), &config, &params).unwrap();
        for smp in &traj.samples {
            assert!(
                (smp.obs.k - k0).abs() < 1e-8,
                "K drift {} at s = {}",
                smp.obs.k - k0,
                smp.state.s
            );
        }
    }

    #[test]
    fn hitting_time_shortcuts() {
        let params = unit_params(std::f64::consts::TAU);
        let config = IntegratorConfig {
            sample_count: 50,
            ..Default::default()
        };
        // Equal actions: balance at the start.
        let traj = integrate(
            ActionAngleState::new(0.0, 0.0, 0.5, 1.5, 1.5),
            (0.0, 3.0),
            &config,
            &params,
        )
        .unwrap();
        let hit = detect_hitting_time(&traj, &params).unwrap();
        assert!(hit.s0.abs() < 1e-8);

        // Gap of five: balance five units later.
        let traj = integrate(
            ActionAngleState::new(0.0, 0.0, 0.5, 1.0, 6.0),
            (0.0, 8.0),
            &config,
            &params,
        )
        .unwrap();
        let hit = detect_hitting_time(&traj, &params).unwrap();
        assert!((hit.s0 - 5.0).abs() < 1e-8, "s0 = {}", hit.s0);
        let ev = traj
            .events
            .iter()
            .find(|e| e.kind == EventKind::HittingTime)
            .unwrap();
        assert!((ev.s - 5.0).abs() < 1e-8);

        // No ramp, no balance point.
        let params0 = unit_params(0.0);
        let traj = integrate(
            ActionAngleState::new(0.0, 0.0, 0.5, 1.0, 2.0),
            (0.0, 3.0),
            &config,
            &params0,
        )
        .unwrap();
        assert!(matches!(
            detect_hitting_time(&traj, &params0),
            Err(HallError::NoHittingTime)
        ));
    }

    #[test]
    fn samples_carry_consistent_dual_representations() {
        let params = unit_params(std::f64::consts::TAU);
        let config = IntegratorConfig {
            sample_count: 300,
            ..Default::default()
        };
        let traj = integrate(
            ActionAngleState::new(0.0, 1.0, -0.4, 0.9, 1.8),
            (-5.0, 15.0),
            &config,
            &params,
        )
        .unwrap();
        assert!(traj.samples.len() >= 290);
        for pair in traj.samples.windows(2) {
            assert!(pair[0].state.s < pair[1].state.s);
        }
        for smp in &traj.samples {
            let st = to_cartesian(&smp.aa, &params).unwrap();
            assert!((st.q - smp.state.q).norm() < 1e-8);
            assert!((st.p - smp.state.p).norm() < 1e-8);
        }
    }

    #[test]
    fn pure_cartesian_and_auto_switch_agree() {
        let params = unit_params(std::f64::consts::TAU);
        let initial = ActionAngleState::new(0.0, 0.3, 1.1, 1.0, 2.0);
        let run = |mode| {
            let config = IntegratorConfig {
                rel_tol: 1e-11,
                abs_tol: 1e-13,
                coordinate_mode: mode,
                sample_count: 10,
                ..Default::default()
            };
            integrate(initial, (0.0, 5.0), &config, &params).unwrap()
        };
        let cart = run(CoordinateMode::Cartesian);
        let auto = run(CoordinateMode::AutoSwitch);
        let a = cart.samples.last().unwrap();
        let b = auto.samples.last().unwrap();
        assert!((a.state.q - b.state.q).norm() < 1e-8);
        assert!((a.state.p - b.state.p).norm() < 1e-8);
        assert!((a.state.winding - b.state.winding).abs() < 1e-8);
    }

    #[test]
    fn orbit_through_the_flux_line_truncates_with_a_flag() {
        // Zero ramp: exact circle through the origin, reached at s = pi.
        let params = unit_params(0.0);
        let q = Vec2::new(1.0, 0.0);
        let v = Vec2::new(0.0, -0.5);
        let p = momentum_from_velocity(0.0, q, v, &params).unwrap();
        for mode in [CoordinateMode::Cartesian, CoordinateMode::AutoSwitch] {
            let config = IntegratorConfig {
                coordinate_mode: mode,
                sample_count: 100,
                ..Default::default()
            };
            let traj = integrate(
                PhaseState::new(0.0, q, p),
                (0.0, std::f64::consts::TAU),
                &config,
                &params,
            )
            .unwrap();
            assert!(traj.truncated());
            let flag = traj
                .events
                .iter()
                .find(|e| e.kind == EventKind::SingularityFlag)
                .unwrap();
            assert!(
                (flag.s - std::f64::consts::PI).abs() < 1e-3,
                "flagged at {}",
                flag.s
            );
            // No sample beyond the truncation point.
            assert!(traj.samples.iter().all(|smp| smp.state.s <= flag.s));
            if mode == CoordinateMode::AutoSwitch {
                assert!(traj.events.iter().any(|e| e.kind == EventKind::BranchSwitch));
            }
        }
    }

    #[test]
    fn zero_length_span_yields_one_sample() {
        let params = unit_params(std::f64::consts::TAU);
        let config = IntegratorConfig::default();
        let initial = ActionAngleState::new(2.0, 0.1, 0.2, 1.0, 1.5);
        let traj = integrate(initial, (2.0, 2.0), &config, &params).unwrap();
        assert_eq!(traj.samples.len(), 1);
        assert_eq!(traj.samples[0].state.s, 2.0);
    }

    #[test]
    fn csv_and_event_serialization_shapes() {
        let params = unit_params(std::f64::consts::TAU);
        let config = IntegratorConfig {
            sample_count: 5,
            ..Default::default()
        };
        let traj = integrate(
            ActionAngleState::new(0.0, 0.0, 0.5, 1.0, 2.0),
            (0.0, 2.0),
            &config,
            &params,
        )
        .unwrap();
        let csv = traj.csv();
        let mut lines = csv.lines();
        assert_eq!(lines.next().unwrap(), TRAJECTORY_CSV_HEADER);
        assert_eq!(lines.count(), 5);
        for line in csv.lines().skip(1) {
            assert_eq!(line.split(',').count(), 13);
            for field in line.split(',') {
                field.parse::<f64>().unwrap();
            }
        }
        let json = traj.events_json();
        let parsed: Vec<serde_json::Value> = serde_json::from_str(&json).unwrap();
        assert!(parsed.iter().all(|e| e["kind"].is_string() && e["s"].is_number()));
        let traj2 = integrate(
            ActionAngleState::new(0.0, 0.0, 0.5, 1.0, 2.0),
            (0.0, 2.0),
            &config,
            &params,
        )
        .unwrap();
        assert_eq!(csv, traj2.csv(), "identical runs must serialize identically");
    }

    #[test]
    fn initial_time_outside_span_is_supported() {
        let params = unit_params(std::f64::consts::TAU);
        let config = IntegratorConfig {
            sample_count: 20,
            ..Default::default()
        };
        let initial = ActionAngleState::new(0.0, 0.3, 1.1, 1.0, 2.0);
        let traj = integrate(initial, (4.0, 6.0), &config, &params).unwrap();
        assert_eq!(traj.samples.len(), 20);
        assert!(traj.samples.first().unwrap().state.s >= 4.0 - 1e-12);
        // The gap law still dates the balance point even though the span
        // excludes it.
        for smp in &traj.samples {
            assert!((smp.aa.i1 - smp.aa.i2 + 1.0 - smp.state.s).abs() < 1e-8);
        }
    }
}
