//! Embedded Runge-Kutta 5(4) stepper (Dormand-Prince pair) with
//! proportional-integral step-size control, a fourth-order continuous
//! extension, and bisection-based event location on the dense output.
//!
//! The stepper is deliberately low level: callers own the integration loop
//! so they can impose model-specific guards (step caps near a singularity,
//! rejection of steps whose angle increments alias) and switch coordinate
//! charts between steps.

use crate::error::{HallError, Result};

/// Tolerances and limits for one integration.
#[derive(Clone, Copy, Debug)]
pub struct StepControl {
    pub rel_tol: f64,
    pub abs_tol: f64,
    /// Upper bound on |h|. Infinite by default.
    pub max_step: f64,
    /// Steps below `min_step_floor * max(1, |s|)` raise a step underflow.
    pub min_step_floor: f64,
    /// Accepted plus rejected step budget for one integration loop.
    pub max_steps: usize,
}

impl Default for StepControl {
    fn default() -> Self {
        StepControl {
            rel_tol: 1e-10,
            abs_tol: 1e-12,
            max_step: f64::INFINITY,
            min_step_floor: 1e-14,
            max_steps: 50_000_000,
        }
    }
}

// Dormand-Prince coefficients.
const C: [f64; 7] = [0.0, 0.2, 0.3, 0.8, 8.0 / 9.0, 1.0, 1.0];
const A2: [f64; 1] = [0.2];
const A3: [f64; 2] = [3.0 / 40.0, 9.0 / 40.0];
const A4: [f64; 3] = [44.0 / 45.0, -56.0 / 15.0, 32.0 / 9.0];
const A5: [f64; 4] = [
    19372.0 / 6561.0,
    -25360.0 / 2187.0,
    64448.0 / 6561.0,
    -212.0 / 729.0,
];
const A6: [f64; 5] = [
    9017.0 / 3168.0,
    -355.0 / 33.0,
    46732.0 / 5247.0,
    49.0 / 176.0,
    -5103.0 / 18656.0,
];
const A7: [f64; 6] = [
    35.0 / 384.0,
    0.0,
    500.0 / 1113.0,
    125.0 / 192.0,
    -2187.0 / 6784.0,
    11.0 / 84.0,
];
// Difference between the fifth- and fourth-order weights.
const E: [f64; 7] = [
    71.0 / 57600.0,
    0.0,
    -71.0 / 16695.0,
    71.0 / 1920.0,
    -17253.0 / 339200.0,
    22.0 / 525.0,
    -1.0 / 40.0,
];
// Weights of the fourth-order continuous extension.
const D: [f64; 7] = [
    -12715105075.0 / 11282082432.0,
    0.0,
    87487479700.0 / 32700410799.0,
    -10690763975.0 / 1880347072.0,
    701980252875.0 / 199316789632.0,
    -1453857185.0 / 822651844.0,
    69997945.0 / 29380423.0,
];

/// One accepted step together with its dense interpolant.
#[derive(Clone, Debug)]
pub struct DenseStep<const N: usize> {
    pub s0: f64,
    pub h: f64,
    pub y0: [f64; N],
    pub y1: [f64; N],
    cont: [[f64; N]; 5],
}

impl<const N: usize> DenseStep<N> {
    pub fn s1(&self) -> f64 {
        self.s0 + self.h
    }

    /// Whether `s` lies inside the step span (inclusive, either direction).
    pub fn contains(&self, s: f64) -> bool {
        let (lo, hi) = if self.h >= 0.0 {
            (self.s0, self.s1())
        } else {
            (self.s1(), self.s0)
        };
        (lo..=hi).contains(&s)
    }

    /// Evaluate the interpolant at `s`; exact at both endpoints, fourth
    /// order accurate inside.
    pub fn eval(&self, s: f64) -> [f64; N] {
        let theta = (s - self.s0) / self.h;
        let theta1 = 1.0 - theta;
        let mut out = [0.0; N];
        for (i, o) in out.iter_mut().enumerate() {
            *o = self.cont[0][i]
                + theta
                    * (self.cont[1][i]
                        + theta1
                            * (self.cont[2][i]
                                + theta * (self.cont[3][i] + theta1 * self.cont[4][i])));
        }
        out
    }
}

/// Locate a root of `g` along a dense step by bisection. `g` must have
/// opposite signs at the endpoints; the root is bracketed to `tol_s`.
pub fn bisect_event<const N: usize, G>(step: &DenseStep<N>, g: G, tol_s: f64) -> f64
where
    G: Fn(f64, &[f64; N]) -> f64,
{
    bisect_on(step, step.s0, step.s1(), g, tol_s)
}

/// Bisection as in [`bisect_event`] but restricted to the sub-span
/// `[a, b]` of the step (in either time direction).
pub fn bisect_on<const N: usize, G>(
    step: &DenseStep<N>,
    a: f64,
    b: f64,
    g: G,
    tol_s: f64,
) -> f64
where
    G: Fn(f64, &[f64; N]) -> f64,
{
    let mut a = a;
    let mut b = b;
    let mut ga = g(a, &step.eval(a));
    debug_assert!(ga * g(b, &step.eval(b)) <= 0.0);
    while (b - a).abs() > tol_s {
        let mid = 0.5 * (a + b);
        let gm = g(mid, &step.eval(mid));
        if ga * gm <= 0.0 {
            b = mid;
        } else {
            a = mid;
            ga = gm;
        }
    }
    0.5 * (a + b)
}

/// The stepper. Holds the current point, the first-same-as-last derivative
/// and the PI controller memory.
#[derive(Clone, Debug)]
pub struct Dopri5<const N: usize> {
    pub s: f64,
    pub y: [f64; N],
    k1: [f64; N],
    h: f64,
    fac_old: f64,
    just_rejected: bool,
    pub steps_taken: usize,
    pub steps_rejected: usize,
}

impl<const N: usize> Dopri5<N> {
    /// Start a stepper at `(s0, y0)` heading toward `s_dir` (only the sign
    /// of `s_dir - s0` matters). Chooses the initial step size from the
    /// local derivative scale.
    pub fn new<F>(f: &mut F, s0: f64, y0: [f64; N], s_dir: f64, ctrl: &StepControl) -> Result<Self>
    where
        F: FnMut(f64, &[f64; N]) -> Result<[f64; N]>,
    {
        let k1 = f(s0, &y0)?;
        let dir = if s_dir >= s0 { 1.0 } else { -1.0 };
        let h = initial_step(f, s0, &y0, &k1, dir, ctrl)?;
        Ok(Dopri5 {
            s: s0,
            y: y0,
            k1,
            h,
            fac_old: 1e-4,
            just_rejected: false,
            steps_taken: 0,
            steps_rejected: 0,
        })
    }

    pub fn step_size(&self) -> f64 {
        self.h
    }

    /// Clamp the magnitude of the upcoming step, keeping its direction.
    pub fn limit_step(&mut self, h_max: f64) {
        if self.h.abs() > h_max {
            self.h = h_max.copysign(self.h);
        }
    }

    /// Never step past `s_end`.
    pub fn clip_to(&mut self, s_end: f64) {
        let remaining = s_end - self.s;
        if remaining == 0.0 {
            return;
        }
        if self.h.abs() > remaining.abs() {
            self.h = remaining;
        }
    }

    /// Advance one accepted step. `guard` may veto an otherwise accepted
    /// step (returning false halves the step and retries); it receives the
    /// proposed endpoint state.
    pub fn step<F, G>(&mut self, f: &mut F, ctrl: &StepControl, mut guard: G) -> Result<DenseStep<N>>
    where
        F: FnMut(f64, &[f64; N]) -> Result<[f64; N]>,
        G: FnMut(&[f64; N], &[f64; N]) -> bool,
    {
        loop {
            if self.steps_taken + self.steps_rejected >= ctrl.max_steps {
                return Err(HallError::StepBudget {
                    s: self.s,
                    steps: self.steps_taken,
                });
            }
            if self.h.abs() < ctrl.min_step_floor * self.s.abs().max(1.0) {
                return Err(HallError::StepUnderflow { s: self.s });
            }

            match self.try_step(f, ctrl)? {
                StepOutcome::Accepted(dense, k_new, err) => {
                    if !guard(&dense.y0, &dense.y1) {
                        // Model-level veto: treat like a rejection.
                        self.steps_rejected += 1;
                        self.h *= 0.5;
                        self.just_rejected = true;
                        continue;
                    }
                    self.fac_old = err.max(1e-4);
                    self.s = dense.s1();
                    self.y = dense.y1;
                    self.k1 = k_new;
                    self.steps_taken += 1;
                    self.just_rejected = false;
                    return Ok(dense);
                }
                StepOutcome::Rejected => {
                    self.steps_rejected += 1;
                    self.just_rejected = true;
                }
            }
        }
    }

    fn try_step<F>(&mut self, f: &mut F, ctrl: &StepControl) -> Result<StepOutcome<N>>
    where
        F: FnMut(f64, &[f64; N]) -> Result<[f64; N]>,
    {
        let h = self.h;
        let (s, y, k1) = (self.s, &self.y, &self.k1);

        let stage = |ks: &[&[f64; N]], a: &[f64]| {
            let mut out = *y;
            for i in 0..N {
                let mut acc = 0.0;
                for (k, &aj) in ks.iter().zip(a) {
                    acc += aj * k[i];
                }
                out[i] += h * acc;
            }
            out
        };

        let k2 = f(s + C[1] * h, &stage(&[k1], &A2))?;
        let k3 = f(s + C[2] * h, &stage(&[k1, &k2], &A3))?;
        let k4 = f(s + C[3] * h, &stage(&[k1, &k2, &k3], &A4))?;
        let k5 = f(s + C[4] * h, &stage(&[k1, &k2, &k3, &k4], &A5))?;
        let k6 = f(s + C[5] * h, &stage(&[k1, &k2, &k3, &k4, &k5], &A6))?;
        let y1 = stage(&[k1, &k2, &k3, &k4, &k5, &k6], &A7);
        let k7 = f(s + h, &y1)?;

        // Scaled RMS error of the embedded fourth-order solution.
        let ks = [k1, &k2, &k3, &k4, &k5, &k6, &k7];
        let mut err_sq = 0.0;
        for i in 0..N {
            let mut e = 0.0;
            for (k, &ei) in ks.iter().zip(&E) {
                e += ei * k[i];
            }
            e *= h;
            let sc = ctrl.abs_tol + ctrl.rel_tol * self.y[i].abs().max(y1[i].abs());
            err_sq += (e / sc) * (e / sc);
        }
        let err = (err_sq / N as f64).sqrt();

        // PI controller (Hairer's dopri5 constants).
        const BETA: f64 = 0.04;
        const EXPO1: f64 = 0.2 - BETA * 0.75;
        const SAFE: f64 = 0.9;
        let fac11 = err.powf(EXPO1);

        if err <= 1.0 {
            let fac = (fac11 / self.fac_old.powf(BETA) / SAFE).clamp(0.1, 5.0);
            let mut h_new = h / fac;
            if self.just_rejected {
                h_new = if h_new.abs() < h.abs() { h_new } else { h };
            }
            if h_new.abs() > ctrl.max_step {
                h_new = ctrl.max_step.copysign(h_new);
            }

            // Dense output coefficients for this step.
            let mut cont = [[0.0; N]; 5];
            for i in 0..N {
                let ydiff = y1[i] - self.y[i];
                let bspl = h * k1[i] - ydiff;
                cont[0][i] = self.y[i];
                cont[1][i] = ydiff;
                cont[2][i] = bspl;
                cont[3][i] = ydiff - h * k7[i] - bspl;
                let mut d = 0.0;
                for (k, &di) in ks.iter().zip(&D) {
                    d += di * k[i];
                }
                cont[4][i] = h * d;
            }
            let dense = DenseStep {
                s0: s,
                h,
                y0: self.y,
                y1,
                cont,
            };
            self.h = h_new;
            Ok(StepOutcome::Accepted(dense, k7, err))
        } else {
            self.h = h / (fac11 / SAFE).min(10.0);
            Ok(StepOutcome::Rejected)
        }
    }
}

enum StepOutcome<const N: usize> {
    Accepted(DenseStep<N>, [f64; N], f64),
    Rejected,
}

/// Standard starting-step heuristic: balance the size of the state against
/// its first and estimated second derivative.
fn initial_step<F, const N: usize>(
    f: &mut F,
    s0: f64,
    y0: &[f64; N],
    k1: &[f64; N],
    dir: f64,
    ctrl: &StepControl,
) -> Result<f64>
where
    F: FnMut(f64, &[f64; N]) -> Result<[f64; N]>,
{
    let sc = |i: usize| ctrl.abs_tol + ctrl.rel_tol * y0[i].abs();
    let mut d0 = 0.0;
    let mut d1 = 0.0;
    for i in 0..N {
        d0 += (y0[i] / sc(i)).powi(2);
        d1 += (k1[i] / sc(i)).powi(2);
    }
    let d0 = (d0 / N as f64).sqrt();
    let d1 = (d1 / N as f64).sqrt();
    let h0 = if d0 < 1e-5 || d1 < 1e-5 {
        1e-6
    } else {
        0.01 * d0 / d1
    };

    let mut y1 = *y0;
    for i in 0..N {
        y1[i] += dir * h0 * k1[i];
    }
    let k2 = f(s0 + dir * h0, &y1)?;
    let mut d2 = 0.0;
    for i in 0..N {
        d2 += ((k2[i] - k1[i]) / sc(i)).powi(2);
    }
    let d2 = (d2 / N as f64).sqrt() / h0;

    let d_max = d1.max(d2);
    let h1 = if d_max <= 1e-15 {
        (h0 * 1e-3).max(1e-6)
    } else {
        (0.01 / d_max).powf(0.2)
    };
    Ok(dir * h1.min(100.0 * h0).min(ctrl.max_step))
}

/// Drive the stepper from `s0` to `s_end`, feeding each accepted dense
/// step to `on_step`. No guards, no events; the building block for the
/// simpler integrations in this crate.
pub fn integrate_dense<F, C, const N: usize>(
    f: &mut F,
    s0: f64,
    y0: [f64; N],
    s_end: f64,
    ctrl: &StepControl,
    mut on_step: C,
) -> Result<(f64, [f64; N])>
where
    F: FnMut(f64, &[f64; N]) -> Result<[f64; N]>,
    C: FnMut(&DenseStep<N>) -> Result<()>,
{
    if s_end == s0 {
        return Ok((s0, y0));
    }
    let mut stepper = Dopri5::new(f, s0, y0, s_end, ctrl)?;
    while (s_end - stepper.s) * (s_end - s0).signum() > 0.0 {
        stepper.clip_to(s_end);
        let dense = stepper.step(f, ctrl, |_, _| true)?;
        on_step(&dense)?;
    }
    Ok((stepper.s, stepper.y))
}
