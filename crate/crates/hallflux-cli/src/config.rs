//! Run configuration: file format, validation, and builtin presets.
//!
//! A run file is TOML with one table per concern ([params], [initial],
//! [span], [integrator], [outputs], and optionally [sweep] or [average]).
//! The same structure is accepted as JSON when the file ends in `.json`.
//! Parsing, serializing, and reparsing a config yields the same value, so
//! files can be rewritten mechanically.

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use hallflux::actionangle::{from_cartesian, ActionAngleState};
use hallflux::dynamics::{InitialCondition, IntegratorConfig};
use hallflux::model::{PhaseState, PotentialSpec, SystemParams};
use hallflux::Vec2;

use crate::commands::CliError;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub params: SystemParams,
    pub initial: InitialSection,
    pub span: SpanSection,
    #[serde(default)]
    pub integrator: IntegratorConfig,
    #[serde(default)]
    pub outputs: OutputsSection,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sweep: Option<SweepSection>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub average: Option<AverageSection>,
}

/// Initial condition, exactly one representation.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InitialSection {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cartesian: Option<CartesianInit>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub action_angle: Option<ActionAngleInit>,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CartesianInit {
    pub s: f64,
    pub q: [f64; 2],
    pub p: [f64; 2],
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ActionAngleInit {
    pub s: f64,
    pub phi1: f64,
    pub phi2: f64,
    pub i1: f64,
    pub i2: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SpanSection {
    pub start: f64,
    pub end: f64,
}

/// Output files, written relative to `--out` unless absolute.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputsSection {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub trajectory_csv: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub events_json: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub constants_json: Option<PathBuf>,
    /// Orbit positions for plotting; a gnuplot script is written next to
    /// it with the extension replaced by `.gp`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub plot_data: Option<PathBuf>,
}

/// Parameter grid for the `sweep` subcommand. Absent axes stay at the
/// base value; the grid is row-major with `b` outermost, then `phi0`,
/// `i1`, `i2`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepSection {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub b: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub phi0: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub i1: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub i2: Option<Vec<f64>>,
    #[serde(default = "default_sweep_csv")]
    pub csv: PathBuf,
}

fn default_sweep_csv() -> PathBuf {
    PathBuf::from("sweep.csv")
}

/// Guiding-center outputs for the `average` subcommand.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AverageSection {
    /// Averaged trajectory over the run span.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub averaged_csv: Option<PathBuf>,
    /// Full-versus-averaged sup error table over `f_values`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub scaling_csv: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub f_values: Vec<f64>,
    /// Error horizon in slow-time units: each run covers `horizon_scale / f`.
    #[serde(default = "default_horizon_scale")]
    pub horizon_scale: f64,
}

fn default_horizon_scale() -> f64 {
    10.0
}

impl InitialSection {
    pub fn condition(&self) -> InitialCondition {
        match (self.cartesian, self.action_angle) {
            (Some(c), _) => InitialCondition::Cartesian(PhaseState::new(
                c.s,
                Vec2::new(c.q[0], c.q[1]),
                Vec2::new(c.p[0], c.p[1]),
            )),
            (None, Some(a)) => InitialCondition::ActionAngle(ActionAngleState::new(
                a.s, a.phi1, a.phi2, a.i1, a.i2,
            )),
            (None, None) => unreachable!("validated: exactly one initial form"),
        }
    }

    /// The angle-action form, converting a cartesian initial state.
    pub fn angle_action(&self, params: &SystemParams) -> Result<ActionAngleState, CliError> {
        match self.condition() {
            InitialCondition::ActionAngle(aa) => Ok(aa),
            InitialCondition::Cartesian(st) => {
                from_cartesian(&st, params).map_err(CliError::numerical)
            }
        }
    }
}

impl RunConfig {
    pub fn validate(&self) -> Result<(), CliError> {
        self.params.validate().map_err(CliError::config)?;
        self.integrator.validate().map_err(CliError::config)?;

        let forms =
            self.initial.cartesian.is_some() as usize + self.initial.action_angle.is_some() as usize;
        if forms != 1 {
            return Err(CliError::Config(
                "initial condition must be given in exactly one form \
                 ([initial.cartesian] or [initial.action_angle])"
                    .into(),
            ));
        }

        if !self.span.start.is_finite() || !self.span.end.is_finite() {
            return Err(CliError::Config("span bounds must be finite".into()));
        }
        if self.span.end < self.span.start {
            return Err(CliError::Config(format!(
                "span end {} precedes start {}",
                self.span.end, self.span.start
            )));
        }

        let mut seen = BTreeSet::new();
        let mut paths: Vec<&PathBuf> = [
            self.outputs.trajectory_csv.as_ref(),
            self.outputs.events_json.as_ref(),
            self.outputs.constants_json.as_ref(),
            self.outputs.plot_data.as_ref(),
        ]
        .into_iter()
        .flatten()
        .collect();
        if let Some(sweep) = &self.sweep {
            paths.push(&sweep.csv);
        }
        if let Some(avg) = &self.average {
            paths.extend([avg.averaged_csv.as_ref(), avg.scaling_csv.as_ref()].into_iter().flatten());
        }
        for path in paths {
            if path.as_os_str().is_empty() {
                return Err(CliError::Config("output path must not be empty".into()));
            }
            if !seen.insert(path) {
                return Err(CliError::Config(format!(
                    "output path {} is used twice",
                    path.display()
                )));
            }
        }

        if let Some(sweep) = &self.sweep {
            let axes = [&sweep.b, &sweep.phi0, &sweep.i1, &sweep.i2];
            if axes.iter().all(|a| a.is_none()) {
                return Err(CliError::Config(
                    "[sweep] must list at least one axis (b, phi0, i1, i2)".into(),
                ));
            }
            for (name, axis) in ["b", "phi0", "i1", "i2"].iter().zip(axes) {
                if let Some(values) = axis {
                    if values.is_empty() {
                        return Err(CliError::Config(format!("sweep axis {name} is empty")));
                    }
                    if values.iter().any(|v| !v.is_finite()) {
                        return Err(CliError::Config(format!(
                            "sweep axis {name} holds a non-finite value"
                        )));
                    }
                }
            }
        }

        if let Some(avg) = &self.average {
            if avg.averaged_csv.is_none() && avg.scaling_csv.is_none() {
                return Err(CliError::Config(
                    "[average] requests no output (averaged_csv or scaling_csv)".into(),
                ));
            }
            if avg.scaling_csv.is_some() && avg.f_values.is_empty() {
                return Err(CliError::Config(
                    "[average] scaling_csv needs a nonempty f_values list".into(),
                ));
            }
            if avg.f_values.iter().any(|&f| f <= 0.0 || !f.is_finite()) {
                return Err(CliError::Config("f_values must be positive".into()));
            }
            if avg.horizon_scale <= 0.0 || !avg.horizon_scale.is_finite() {
                return Err(CliError::Config("horizon_scale must be positive".into()));
            }
        }

        Ok(())
    }
}

/// Load a config from `path`: `.json` is parsed as JSON, anything else as
/// TOML. Parse and validation problems are config errors.
pub fn load_config(path: &Path) -> Result<RunConfig, CliError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::Config(format!("read {}: {e}", path.display())))?;
    let json = path.extension().is_some_and(|ext| ext == "json");
    let config: RunConfig = if json {
        serde_json::from_str(&text)
            .map_err(|e| CliError::Config(format!("parse {}: {e}", path.display())))?
    } else {
        toml::from_str(&text)
            .map_err(|e| CliError::Config(format!("parse {}: {e}", path.display())))?
    };
    config.validate()?;
    Ok(config)
}

/// Builtin configurations selectable with `--preset`.
pub fn preset(name: &str) -> Result<RunConfig, CliError> {
    match name {
        "fig1" => Ok(fig1()),
        other => Err(CliError::Config(format!(
            "unknown preset {other:?} (available: fig1)"
        ))),
    }
}

/// Unit charge, mass, and field with one flux quantum per unit time and a
/// weak egg-crate potential. The orbit starts on a large circle around the
/// puncture and runs through the action exchange, where the motion turns
/// from an inward spiral into an outward drifting cycloid.
fn fig1() -> RunConfig {
    let mut params = SystemParams::unit_with_flux(std::f64::consts::TAU);
    params.potential = PotentialSpec::Sinusoidal {
        alpha: 1.0 / 3.0,
        k1: 1.0,
        k2: 1.0,
    };
    RunConfig {
        params,
        initial: InitialSection {
            cartesian: None,
            action_angle: Some(ActionAngleInit {
                s: -20.0,
                phi1: 0.3,
                phi2: 0.7,
                i1: 0.1,
                i2: 8.0,
            }),
        },
        span: SpanSection {
            start: -20.0,
            end: 40.0,
        },
        integrator: IntegratorConfig {
            sample_count: 6000,
            ..IntegratorConfig::default()
        },
        outputs: OutputsSection {
            trajectory_csv: Some(PathBuf::from("fig1_trajectory.csv")),
            events_json: None,
            constants_json: None,
            plot_data: Some(PathBuf::from("fig1_orbit.dat")),
        },
        sweep: None,
        average: None,
    }
}
