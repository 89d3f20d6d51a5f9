//! Physical transport coefficients assembled from the fitted tail
//! constants and the system parameters.
//!
//! Everything upstream works in scaled units; this is the one place where
//! the scaling is undone to quote laboratory-frame numbers: the guiding
//! center drift per unit flux quantum, the direction it points, the energy
//! the orbit settles on, and the rate at which the backward orbit sheds
//! energy.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::fit::AsymptoticFit;
use crate::model::SystemParams;

/// Late-time transport summary in physical units, plus the scaled fit
/// constants it was computed from.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TransportRecord {
    pub a0: f64,
    pub b0: f64,
    #[serde(rename = "K")]
    pub k: f64,
    pub a0_tilde: f64,
    pub b0_tilde: f64,
    pub s0: f64,
    /// Radial guiding-center displacement per orbit of the ramp,
    /// `sqrt(Phi0 / (2 pi B))`.
    pub drift_magnitude: f64,
    /// Asymptotic polar angle of the guiding center,
    /// `a0^2 / (4 f^2) - K / f`.
    pub drift_angle: f64,
    /// Physical energy the orbit settles on, `omega a0^2 / (4 f)`.
    pub energy_limit: f64,
    /// Physical rate of backward energy growth, `-e^2 B Phi0 / (2 pi m)`.
    pub past_energy_slope: f64,
    pub residuals: BTreeMap<String, f64>,
}

/// Converts a merged tail fit into physical transport coefficients.
pub fn transport_coefficients(fit: &AsymptoticFit, params: &SystemParams) -> TransportRecord {
    let f = params.flux_rate();
    let omega = params.omega();
    let c = &fit.constants;
    TransportRecord {
        a0: c.a0,
        b0: c.b0,
        k: c.k,
        a0_tilde: c.a0_tilde,
        b0_tilde: c.b0_tilde,
        s0: c.s0,
        drift_magnitude: (params.phi0 / (std::f64::consts::TAU * params.b)).sqrt(),
        drift_angle: c.a0 * c.a0 / (4.0 * f * f) - c.k / f,
        energy_limit: omega * c.a0 * c.a0 / (4.0 * f),
        past_energy_slope: -params.e * params.e * params.b * params.phi0
            / (std::f64::consts::TAU * params.m),
        residuals: fit.residuals.clone(),
    }
}
