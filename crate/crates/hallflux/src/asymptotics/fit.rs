//! Extraction of the late-time constants `(a0, b0, K)` and their past
//! counterparts from an integrated trajectory.
//!
//! The tail of a flux-ramped, potential-free orbit is an outward drift with
//! a `1/sqrt(|s|)` oscillation riding on top. Each constant multiplies a
//! known function of time, so a linear least-squares fit over a window of
//! the tail recovers all of them at once:
//!
//! * growing-action energy `I2` (future) or `I1` (past) on the basis
//!   `{1, sin(s)/sqrt|s|, cos(s)/sqrt|s|, 1/s, sin(2s)/s, cos(2s)/s}`
//!   gives the amplitude `a0 = sqrt(4 f c0)` and a phase estimate,
//! * the slow phase `phi1 + phi2 - s` gives `b0` directly as the fitted
//!   constant,
//! * the combinations `I2 - f phi1` (future) and `I2 + f phi2` (past)
//!   settle on the adiabatic constant `K`.
//!
//! The redundant amplitude and phase estimates are kept as consistency
//! residuals rather than discarded; they are the cheapest honest measure of
//! how far into the asymptotic regime the window actually is.

use std::collections::BTreeMap;

use super::series::{AsymptoticConstants, Direction};
use crate::dynamics::Trajectory;
use crate::error::{HallError, Result};
use crate::numdiff::wrap_to_pi;

/// Minimum number of samples a fit window must contain.
const MIN_POINTS: usize = 24;

/// NaN-rejecting positivity check.
fn positive(v: f64) -> bool {
    v > 0.0
}

/// Window length, in time units, below which the fitted constants are
/// flagged as low-confidence: fifty fast periods.
const TARGET_SPAN: f64 = 100.0 * std::f64::consts::PI;

/// Constants recovered from one end of a trajectory.
#[derive(Debug, Clone)]
pub struct DirectionFit {
    pub direction: Direction,
    /// Drift amplitude: `a0` for the future, `a0_tilde` for the past.
    pub amplitude: f64,
    /// Drift phase: `b0` for the future, `b0_tilde` for the past.
    pub phase: f64,
    /// Adiabatic constant seen from this end.
    pub k: f64,
    /// Crossing time of the two actions.
    pub s0: f64,
    /// Set when the window is shorter than [`TARGET_SPAN`].
    pub low_confidence: bool,
    /// Fit and consistency residuals, keyed by what they measure.
    pub residuals: BTreeMap<String, f64>,
}

/// Constants from both ends of a trajectory, merged for reporting.
#[derive(Debug, Clone)]
pub struct AsymptoticFit {
    pub constants: AsymptoticConstants,
    pub low_confidence: bool,
    pub residuals: BTreeMap<String, f64>,
}

/// Fits the tail constants of `traj` on the chosen end.
///
/// The trajectory must come from a potential-free run with a positive flux
/// ramp; the window defaults to the last (future) or first (past) quarter
/// of the time span, widened toward [`TARGET_SPAN`] when the quarter is
/// shorter than that.
pub fn fit_constants(
    traj: &Trajectory,
    direction: Direction,
    window: Option<(f64, f64)>,
) -> Result<DirectionFit> {
    if !traj.params.potential.is_zero() {
        return Err(HallError::InvalidParameter(
            "tail fits require a potential-free trajectory".into(),
        ));
    }
    let f = traj.params.flux_rate();
    if !positive(f) {
        return Err(HallError::InvalidParameter(
            "tail fits require a positive flux ramp".into(),
        ));
    }
    let mut cols = AngleActionSeries::default();
    for sample in &traj.samples {
        cols.push(sample.aa.s, sample.aa.i1, sample.aa.i2, sample.aa.phi1, sample.aa.phi2);
    }
    fit_series(&cols, f, direction, window)
}

/// Merges the two one-sided fits into a single record.
///
/// `s0` is taken from the future fit. The gap `|K_future - K_past|` is
/// recorded as the `k_agreement` residual and deliberately not asserted
/// anywhere: the two limits may legitimately differ by a whole multiple of
/// `2 pi f` when the past winding does not unwind to zero.
pub fn merge_fits(future: &DirectionFit, past: &DirectionFit) -> AsymptoticFit {
    let mut residuals = BTreeMap::new();
    for (key, value) in &future.residuals {
        residuals.insert(format!("future_{key}"), *value);
    }
    for (key, value) in &past.residuals {
        residuals.insert(format!("past_{key}"), *value);
    }
    residuals.insert("k_agreement".into(), (future.k - past.k).abs());
    AsymptoticFit {
        constants: AsymptoticConstants {
            a0: future.amplitude,
            b0: future.phase,
            k: future.k,
            a0_tilde: past.amplitude,
            b0_tilde: past.phase,
            s0: future.s0,
        },
        low_confidence: future.low_confidence || past.low_confidence,
        residuals,
    }
}

/// Drift amplitude measured directly from the transformed radius.
///
/// Each point pairs a time `s - s0 > 0` with the unshifted transform
/// `x = (R cos psi, R sin psi)`. Since `|x|^2 = J^2 - f^2 (s - s0)^2`
/// equals `4 I1 I2` and the growing action tracks `f (s - s0)`, the ratio
/// `|x|^2 / (s - s0)` tends to `a0^2`; its mean over a late window is an
/// amplitude estimate independent of any least-squares machinery.
pub fn amplitude_from_x(points: &[(f64, [f64; 2])]) -> Result<f64> {
    if points.is_empty() {
        return Err(HallError::FitWindow("no transform samples".into()));
    }
    let mut acc = 0.0;
    for &(u, x) in points {
        if !positive(u) {
            return Err(HallError::Domain(
                "transform amplitude needs times past the crossing".into(),
            ));
        }
        acc += (x[0] * x[0] + x[1] * x[1]) / u;
    }
    Ok((acc / points.len() as f64).sqrt())
}

/// Raw per-sample angle-action data the fits run on. Decoupled from
/// [`Trajectory`] so synthetic series can be fitted directly.
#[derive(Debug, Clone, Default)]
pub struct AngleActionSeries {
    pub s: Vec<f64>,
    pub i1: Vec<f64>,
    pub i2: Vec<f64>,
    pub phi1: Vec<f64>,
    pub phi2: Vec<f64>,
}

impl AngleActionSeries {
    pub fn push(&mut self, s: f64, i1: f64, i2: f64, phi1: f64, phi2: f64) {
        self.s.push(s);
        self.i1.push(i1);
        self.i2.push(i2);
        self.phi1.push(phi1);
        self.phi2.push(phi2);
    }
}

/// [`fit_constants`] on bare angle-action columns with a given ramp.
pub fn fit_series(
    cols: &AngleActionSeries,
    f: f64,
    direction: Direction,
    window: Option<(f64, f64)>,
) -> Result<DirectionFit> {
    let n = cols.s.len();
    if n < MIN_POINTS {
        return Err(HallError::FitWindow(format!(
            "trajectory has {n} samples, need at least {MIN_POINTS}"
        )));
    }
    let s_first = cols.s[0];
    let s_last = cols.s[n - 1];
    if !positive(s_last - s_first) {
        return Err(HallError::FitWindow("trajectory spans no time".into()));
    }

    // Linear gap growth pins the crossing time exactly on torque-free runs.
    let s0 = {
        let mut acc = 0.0;
        for i in 0..n {
            acc += cols.s[i] - (cols.i1[i] - cols.i2[i]) / f;
        }
        acc / n as f64
    };

    let span = s_last - s_first;
    let (lo, hi) = window.unwrap_or_else(|| match direction {
        Direction::Future => (s_last - (0.25 * span).max(TARGET_SPAN.min(span)), s_last),
        Direction::Past => (s_first, s_first + (0.25 * span).max(TARGET_SPAN.min(span))),
    });
    let low_confidence = hi - lo < TARGET_SPAN * (1.0 - 1e-9);
    match direction {
        Direction::Future if !positive(lo) => {
            return Err(HallError::FitWindow(format!(
                "future window starts at {lo}, must be past zero"
            )));
        }
        Direction::Past if !positive(-hi) => {
            return Err(HallError::FitWindow(format!(
                "past window ends at {hi}, must be before zero"
            )));
        }
        _ => {}
    }

    let idx: Vec<usize> = (0..n).filter(|&i| cols.s[i] >= lo && cols.s[i] <= hi).collect();
    if idx.len() < MIN_POINTS {
        return Err(HallError::FitWindow(format!(
            "window [{lo}, {hi}] holds {} samples, need at least {MIN_POINTS}",
            idx.len()
        )));
    }

    let mut residuals = BTreeMap::new();
    residuals.insert("window_periods".into(), (hi - lo) / std::f64::consts::TAU);

    // Basis shared by every fit: constant, one- and two-cycle oscillations
    // with the tail's decay envelopes, and a smooth 1/s term.
    let basis = |s: f64| {
        let root = s.abs().sqrt();
        [
            1.0,
            s.sin() / root,
            s.cos() / root,
            1.0 / s,
            (2.0 * s).sin() / s,
            (2.0 * s).cos() / s,
        ]
    };

    let collect = |value: &dyn Fn(usize) -> f64| -> (Vec<[f64; 6]>, Vec<f64>) {
        let rows = idx.iter().map(|&i| basis(cols.s[i])).collect();
        let y = idx.iter().map(|&i| value(i)).collect();
        (rows, y)
    };

    match direction {
        Direction::Future => {
            // Growing energy: I2 -> a0^2/(4f) with a -(a0/2) sin(s + b0)
            // oscillation, so the envelope pair encodes amplitude and phase.
            let (rows, y) = collect(&|i| cols.i2[i]);
            let (c, rms_i2) = lstsq(&rows, &y)?;
            if !positive(c[0]) {
                return Err(HallError::FitWindow(
                    "tail energy fit produced a nonpositive level".into(),
                ));
            }
            let a0 = (4.0 * f * c[0]).sqrt();
            let amp_osc = 2.0 * f64::hypot(c[1], c[2]);
            let phase_from_i2 = f64::atan2(-c[2], -c[1]);

            let (rows, y) = collect(&|i| cols.phi1[i] + cols.phi2[i] - cols.s[i]);
            let (d, rms_psi) = lstsq(&rows, &y)?;
            let b0 = d[0];

            let (rows, y) = collect(&|i| cols.i2[i] - f * cols.phi1[i]);
            let (e, rms_k) = lstsq(&rows, &y)?;
            let k = e[0];

            residuals.insert("i2_fit".into(), rms_i2);
            residuals.insert("psi_fit".into(), rms_psi);
            residuals.insert("k_fit".into(), rms_k);
            residuals.insert("a0_consistency".into(), (amp_osc - a0).abs() / a0);
            residuals.insert(
                "b0_consistency".into(),
                wrap_to_pi(phase_from_i2 - b0).abs(),
            );
            Ok(DirectionFit {
                direction,
                amplitude: a0,
                phase: b0,
                k,
                s0,
                low_confidence,
                residuals,
            })
        }
        Direction::Past => {
            // Mirror of the future fit with the roles of the actions
            // swapped and the oscillation sign flipped.
            let (rows, y) = collect(&|i| cols.i1[i]);
            let (c, rms_i1) = lstsq(&rows, &y)?;
            if !positive(c[0]) {
                return Err(HallError::FitWindow(
                    "tail energy fit produced a nonpositive level".into(),
                ));
            }
            let a0_tilde = (4.0 * f * c[0]).sqrt();
            let amp_osc = 2.0 * f64::hypot(c[1], c[2]);
            let b0_tilde = f64::atan2(c[2], c[1]);

            let (rows, y) = collect(&|i| cols.i2[i] + f * cols.phi2[i]);
            let (e, rms_k) = lstsq(&rows, &y)?;
            let k = e[0];

            residuals.insert("i1_fit".into(), rms_i1);
            residuals.insert("k_fit".into(), rms_k);
            residuals.insert("a0_consistency".into(), (amp_osc - a0_tilde).abs() / a0_tilde);
            Ok(DirectionFit {
                direction,
                amplitude: a0_tilde,
                phase: b0_tilde,
                k,
                s0,
                low_confidence,
                residuals,
            })
        }
    }
}

/// Least squares via the normal equations, solved by Gaussian elimination
/// with partial pivoting. Returns the coefficients and the rms residual.
///
/// Six well-scaled basis functions over windows spanning many oscillations
/// keep the Gram matrix mildly conditioned, so the squared system loses no
/// precision that matters here.
fn lstsq(rows: &[[f64; 6]], y: &[f64]) -> Result<([f64; 6], f64)> {
    let m = rows.len();
    debug_assert_eq!(m, y.len());
    let mut g = [[0.0; 7]; 6];
    for (row, &yi) in rows.iter().zip(y) {
        for (gr, &rj) in g.iter_mut().zip(row) {
            for (gk, &rk) in gr[..6].iter_mut().zip(row) {
                *gk += rj * rk;
            }
            gr[6] += rj * yi;
        }
    }

    for col in 0..6 {
        let mut pivot = col;
        for r in col + 1..6 {
            if g[r][col].abs() > g[pivot][col].abs() {
                pivot = r;
            }
        }
        if g[pivot][col].abs() < 1e-300 {
            return Err(HallError::FitWindow(
                "degenerate basis in least squares".into(),
            ));
        }
        g.swap(col, pivot);
        let (pivot_rows, rest) = g.split_at_mut(col + 1);
        let pivot_row = &pivot_rows[col];
        for row in rest {
            let factor = row[col] / pivot_row[col];
            for (rk, pk) in row[col..].iter_mut().zip(&pivot_row[col..]) {
                *rk -= factor * pk;
            }
        }
    }
    let mut c = [0.0; 6];
    for col in (0..6).rev() {
        let mut acc = g[col][6];
        for k in col + 1..6 {
            acc -= g[col][k] * c[k];
        }
        c[col] = acc / g[col][col];
    }

    let mut sq = 0.0;
    for (row, &yi) in rows.iter().zip(y) {
        let fit: f64 = row.iter().zip(&c).map(|(rj, cj)| rj * cj).sum();
        sq += (yi - fit) * (yi - fit);
    }
    Ok((c, (sq / m as f64).sqrt()))
}
