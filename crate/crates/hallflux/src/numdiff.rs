//! Central finite differences on phase-space functions, and the Poisson
//! brackets assembled from them. These are deliberately independent of any
//! analytic derivative in the library so they can serve as an oracle for
//! the canonical-structure checks.

use crate::vec2::Vec2;

/// Step for all central differences of phase-space functions.
pub const FD_STEP: f64 = 1e-5;

/// Gradient of `f(q, p)` with respect to `(q1, q2, p1, p2)`.
pub fn phase_gradient<F>(f: F, q: Vec2, p: Vec2, h: f64) -> [f64; 4]
where
    F: Fn(Vec2, Vec2) -> f64,
{
    let ex = Vec2::new(h, 0.0);
    let ey = Vec2::new(0.0, h);
    [
        (f(q + ex, p) - f(q - ex, p)) / (2.0 * h),
        (f(q + ey, p) - f(q - ey, p)) / (2.0 * h),
        (f(q, p + ex) - f(q, p - ex)) / (2.0 * h),
        (f(q, p + ey) - f(q, p - ey)) / (2.0 * h),
    ]
}

/// Poisson bracket `{f, g}` at `(q, p)` from central differences:
/// `sum_i d_{q_i} f d_{p_i} g - d_{p_i} f d_{q_i} g`.
pub fn poisson_bracket<F, G>(f: F, g: G, q: Vec2, p: Vec2) -> f64
where
    F: Fn(Vec2, Vec2) -> f64,
    G: Fn(Vec2, Vec2) -> f64,
{
    let df = phase_gradient(f, q, p, FD_STEP);
    let dg = phase_gradient(g, q, p, FD_STEP);
    df[0] * dg[2] - df[2] * dg[0] + df[1] * dg[3] - df[3] * dg[1]
}

/// Wrap an angle difference into `(-pi, pi]`. Used to keep finite
/// differences of angle-valued functions on a single smooth branch.
pub fn wrap_to_pi(x: f64) -> f64 {
    let tau = std::f64::consts::TAU;
    let mut r = x % tau;
    if r <= -std::f64::consts::PI {
        r += tau;
    } else if r > std::f64::consts::PI {
        r -= tau;
    }
    r
}
