//! Subcommand implementations and the exit-code policy.
//!
//! Config problems exit 2, runtime (numerical or I/O) failures exit 3,
//! and a failing verification suite exits 4. All file outputs go through
//! one writer and use shortest round-trip float formatting, so a rerun of
//! the same config produces byte-identical files.

use std::fmt;
use std::path::Path;

use rayon::prelude::*;
use serde_json::json;

use hallflux::actionangle::ActionAngleState;
use hallflux::asymptotics::fit::{fit_constants, merge_fits, AsymptoticFit, DirectionFit};
use hallflux::asymptotics::series::{AsymptoticConstants, Direction};
use hallflux::asymptotics::transport::{transport_coefficients, TransportRecord};
use hallflux::averaging::{averaging_error_experiment, integrate_averaged, AveragedField, AveragedState};
use hallflux::dynamics::{integrate, Trajectory, TRAJECTORY_CSV_HEADER};
use hallflux::model::SystemParams;
use hallflux::verify::{run_suite, Suite};

use crate::config::RunConfig;

/// Failure of a CLI run, carrying the exit code contract.
#[derive(Debug)]
pub enum CliError {
    /// Bad invocation or configuration: exit 2.
    Config(String),
    /// Failure while computing or writing results: exit 3.
    Numerical(String),
}

impl CliError {
    pub fn config(err: impl fmt::Display) -> Self {
        CliError::Config(err.to_string())
    }

    pub fn numerical(err: impl fmt::Display) -> Self {
        CliError::Numerical(err.to_string())
    }

    pub fn code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::Numerical(_) => 3,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Config(msg) => write!(f, "config: {msg}"),
            CliError::Numerical(msg) => write!(f, "run: {msg}"),
        }
    }
}

/// Write `content` under `out_dir` (absolute paths pass through).
fn write_output(out_dir: &Path, rel: &Path, content: &str) -> Result<(), CliError> {
    let path = if rel.is_absolute() {
        rel.to_path_buf()
    } else {
        out_dir.join(rel)
    };
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            std::fs::create_dir_all(parent)
                .map_err(|e| CliError::Numerical(format!("create {}: {e}", parent.display())))?;
        }
    }
    std::fs::write(&path, content)
        .map_err(|e| CliError::Numerical(format!("write {}: {e}", path.display())))?;
    eprintln!("wrote {}", path.display());
    Ok(())
}

/// Orbit positions as gnuplot-friendly whitespace columns.
fn plot_data(traj: &Trajectory) -> String {
    use std::fmt::Write;
    let mut out = String::from("# q1 q2\n");
    for sample in &traj.samples {
        writeln!(out, "{} {}", sample.state.q.x, sample.state.q.y)
            .expect("writing to a string cannot fail");
    }
    out
}

fn plot_script(data_name: &str, script_name: &str) -> String {
    format!(
        "# orbit plot; render with: gnuplot -p {script_name}\n\
         set size ratio -1\n\
         set xlabel \"q1\"\n\
         set ylabel \"q2\"\n\
         plot \"{data_name}\" using 1:2 with lines notitle\n"
    )
}

fn file_name(path: &Path) -> String {
    path.file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_else(|| path.display().to_string())
}

/// Write the plot data and its companion script (same path, `.gp`).
fn write_plot(out_dir: &Path, data_path: &Path, traj: Option<&Trajectory>) -> Result<(), CliError> {
    let body = traj.map(plot_data).unwrap_or_else(|| String::from("# q1 q2\n"));
    write_output(out_dir, data_path, &body)?;
    let script_path = data_path.with_extension("gp");
    let script = plot_script(&file_name(data_path), &file_name(&script_path));
    write_output(out_dir, &script_path, &script)
}

/// Transport record seen from a future-only fit; the backward constants
/// are not determined by it and are left at zero in the intermediate.
fn future_transport(fit: &DirectionFit, params: &SystemParams) -> TransportRecord {
    let merged = AsymptoticFit {
        constants: AsymptoticConstants {
            a0: fit.amplitude,
            b0: fit.phase,
            k: fit.k,
            a0_tilde: 0.0,
            b0_tilde: 0.0,
            s0: fit.s0,
        },
        low_confidence: fit.low_confidence,
        residuals: fit.residuals.clone(),
    };
    transport_coefficients(&merged, params)
}

/// JSON body for a single-direction fit: the recovered constants plus the
/// transport numbers they determine.
fn direction_json(fit: &DirectionFit, params: &SystemParams) -> serde_json::Value {
    let record = future_transport(fit, params);
    match fit.direction {
        Direction::Future => json!({
            "direction": "future",
            "a0": fit.amplitude,
            "b0": fit.phase,
            "K": fit.k,
            "s0": fit.s0,
            "low_confidence": fit.low_confidence,
            "residuals": fit.residuals,
            "transport": {
                "drift_magnitude": record.drift_magnitude,
                "drift_angle": record.drift_angle,
                "energy_limit": record.energy_limit,
                "past_energy_slope": record.past_energy_slope,
            },
        }),
        Direction::Past => json!({
            "direction": "past",
            "a0_tilde": fit.amplitude,
            "b0_tilde": fit.phase,
            "K": fit.k,
            "s0": fit.s0,
            "low_confidence": fit.low_confidence,
            "residuals": fit.residuals,
            "transport": {
                "past_energy_slope": record.past_energy_slope,
            },
        }),
    }
}

fn to_pretty(value: &impl serde::Serialize) -> Result<String, CliError> {
    let mut text = serde_json::to_string_pretty(value).map_err(CliError::numerical)?;
    text.push('\n');
    Ok(text)
}

/// Integrate one trajectory and write the requested outputs.
pub fn cmd_simulate(config: &RunConfig, out_dir: &Path) -> Result<(), CliError> {
    let span = (config.span.start, config.span.end);
    let outputs = &config.outputs;

    if span.0 == span.1 {
        if outputs.constants_json.is_some() {
            return Err(CliError::Config(
                "constants_json needs a nonempty span to fit".into(),
            ));
        }
        if let Some(path) = &outputs.trajectory_csv {
            write_output(out_dir, path, &format!("{TRAJECTORY_CSV_HEADER}\n"))?;
        }
        if let Some(path) = &outputs.events_json {
            write_output(out_dir, path, "[]\n")?;
        }
        if let Some(path) = &outputs.plot_data {
            write_plot(out_dir, path, None)?;
        }
        return Ok(());
    }

    let traj = integrate(
        config.initial.condition(),
        span,
        &config.integrator,
        &config.params,
    )
    .map_err(CliError::numerical)?;

    if let Some(path) = &outputs.trajectory_csv {
        write_output(out_dir, path, &traj.csv())?;
    }
    if let Some(path) = &outputs.events_json {
        let mut body = traj.events_json();
        body.push('\n');
        write_output(out_dir, path, &body)?;
    }
    if let Some(path) = &outputs.plot_data {
        write_plot(out_dir, path, Some(&traj))?;
    }
    if let Some(path) = &outputs.constants_json {
        let fit = fit_constants(&traj, Direction::Future, None).map_err(CliError::numerical)?;
        write_output(out_dir, path, &to_pretty(&direction_json(&fit, &config.params))?)?;
    }
    Ok(())
}

/// Long horizon run with tail fits on whichever ends the span reaches;
/// both ends present merges into one transport record.
pub fn cmd_asymptotics(config: &RunConfig, out_dir: &Path) -> Result<(), CliError> {
    if !config.params.potential.is_zero() {
        return Err(CliError::Config(
            "asymptotics needs a potential-free configuration".into(),
        ));
    }
    if config.params.flux_rate() <= 0.0 {
        return Err(CliError::Config("asymptotics needs a positive flux rate".into()));
    }
    let want_future = config.span.end > 0.0;
    let want_past = config.span.start < 0.0;
    if !want_future && !want_past {
        return Err(CliError::Config(
            "asymptotics needs a span reaching positive or negative times".into(),
        ));
    }

    let traj = integrate(
        config.initial.condition(),
        (config.span.start, config.span.end),
        &config.integrator,
        &config.params,
    )
    .map_err(CliError::numerical)?;

    if let Some(path) = &config.outputs.trajectory_csv {
        write_output(out_dir, path, &traj.csv())?;
    }
    if let Some(path) = &config.outputs.events_json {
        let mut body = traj.events_json();
        body.push('\n');
        write_output(out_dir, path, &body)?;
    }
    if let Some(path) = &config.outputs.plot_data {
        write_plot(out_dir, path, Some(&traj))?;
    }

    if let Some(path) = &config.outputs.constants_json {
        let future = want_future
            .then(|| fit_constants(&traj, Direction::Future, None))
            .transpose()
            .map_err(CliError::numerical)?;
        let past = want_past
            .then(|| fit_constants(&traj, Direction::Past, None))
            .transpose()
            .map_err(CliError::numerical)?;
        let body = match (&future, &past) {
            (Some(fut), Some(past)) => {
                let record = transport_coefficients(&merge_fits(fut, past), &config.params);
                to_pretty(&record)?
            }
            (Some(single), None) | (None, Some(single)) => {
                to_pretty(&direction_json(single, &config.params))?
            }
            (None, None) => unreachable!("at least one direction is requested"),
        };
        write_output(out_dir, path, &body)?;
    }
    Ok(())
}

pub const SWEEP_CSV_HEADER: &str = "index,b,phi0,i1,i2,status,a0,b0,K,s0,low_confidence,\
                                    drift_magnitude,drift_angle,energy_limit,past_energy_slope";

struct Cell {
    index: usize,
    b: f64,
    phi0: f64,
    i1: f64,
    i2: f64,
}

struct CellOutcome {
    cell: Cell,
    status: String,
    fit: Option<(DirectionFit, TransportRecord)>,
}

fn run_cell(cell: Cell, config: &RunConfig) -> CellOutcome {
    let result = (|| -> Result<(DirectionFit, TransportRecord), String> {
        let mut params = config.params.clone();
        params.b = cell.b;
        params.phi0 = cell.phi0;
        params.validate().map_err(|e| e.to_string())?;
        let base = config
            .initial
            .action_angle
            .expect("sweep validated to use an angle-action initial state");
        let initial = ActionAngleState::new(base.s, base.phi1, base.phi2, cell.i1, cell.i2);
        let traj = integrate(
            initial,
            (config.span.start, config.span.end),
            &config.integrator,
            &params,
        )
        .map_err(|e| e.to_string())?;
        if traj.truncated() {
            return Err("truncated at the guard radius".into());
        }
        let fit = fit_constants(&traj, Direction::Future, None).map_err(|e| e.to_string())?;
        let record = future_transport(&fit, &params);
        Ok((fit, record))
    })();

    match result {
        Ok(pair) => CellOutcome {
            cell,
            status: "ok".into(),
            fit: Some(pair),
        },
        Err(msg) => CellOutcome {
            cell,
            status: msg.replace(',', ";").replace('\n', " "),
            fit: None,
        },
    }
}

fn sweep_row(outcome: &CellOutcome) -> String {
    let c = &outcome.cell;
    match &outcome.fit {
        Some((fit, record)) => format!(
            "{},{},{},{},{},{},{},{},{},{},{},{},{},{},{}",
            c.index,
            c.b,
            c.phi0,
            c.i1,
            c.i2,
            outcome.status,
            fit.amplitude,
            fit.phase,
            fit.k,
            fit.s0,
            fit.low_confidence,
            record.drift_magnitude,
            record.drift_angle,
            record.energy_limit,
            record.past_energy_slope,
        ),
        None => format!(
            "{},{},{},{},{},{},NaN,NaN,NaN,NaN,NaN,NaN,NaN,NaN,NaN",
            c.index, c.b, c.phi0, c.i1, c.i2, outcome.status
        ),
    }
}

/// Run the parameter grid; cells in parallel, rows in grid order, cell
/// failures flagged in the status column without aborting the sweep.
pub fn cmd_sweep(config: &RunConfig, out_dir: &Path, threads: Option<usize>) -> Result<(), CliError> {
    let sweep = config
        .sweep
        .as_ref()
        .ok_or_else(|| CliError::Config("sweep needs a [sweep] section".into()))?;
    let base_init = config.initial.action_angle.ok_or_else(|| {
        CliError::Config("sweep needs an [initial.action_angle] state".into())
    })?;

    let b_axis = sweep.b.clone().unwrap_or_else(|| vec![config.params.b]);
    let phi0_axis = sweep.phi0.clone().unwrap_or_else(|| vec![config.params.phi0]);
    let i1_axis = sweep.i1.clone().unwrap_or_else(|| vec![base_init.i1]);
    let i2_axis = sweep.i2.clone().unwrap_or_else(|| vec![base_init.i2]);

    let mut cells = Vec::new();
    for &b in &b_axis {
        for &phi0 in &phi0_axis {
            for &i1 in &i1_axis {
                for &i2 in &i2_axis {
                    cells.push(Cell {
                        index: cells.len(),
                        b,
                        phi0,
                        i1,
                        i2,
                    });
                }
            }
        }
    }

    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads.unwrap_or(0))
        .build()
        .map_err(CliError::numerical)?;
    let outcomes: Vec<CellOutcome> =
        pool.install(|| cells.into_par_iter().map(|cell| run_cell(cell, config)).collect());

    let mut out = String::from(SWEEP_CSV_HEADER);
    out.push('\n');
    for outcome in &outcomes {
        out.push_str(&sweep_row(outcome));
        out.push('\n');
    }
    write_output(out_dir, &sweep.csv, &out)
}

/// Guiding-center outputs: the averaged trajectory over the span and the
/// full-versus-averaged error table across ramp strengths.
pub fn cmd_average(config: &RunConfig, out_dir: &Path) -> Result<(), CliError> {
    let section = config
        .average
        .as_ref()
        .ok_or_else(|| CliError::Config("average needs an [average] section".into()))?;
    let aa = config.initial.angle_action(&config.params)?;

    if let Some(path) = &section.averaged_csv {
        let field = AveragedField::from_params(&config.params);
        let initial = AveragedState::new(aa.s, aa.phi1, aa.phi2, aa.i1, aa.i2);
        let traj = integrate_averaged(
            &initial,
            &field,
            (config.span.start, config.span.end),
            &config.integrator,
            &config.params,
        )
        .map_err(CliError::numerical)?;
        let body = traj.csv(&field).map_err(CliError::numerical)?;
        write_output(out_dir, path, &body)?;
    }

    if let Some(path) = &section.scaling_csv {
        let scaling = averaging_error_experiment(
            &aa,
            &section.f_values,
            section.horizon_scale,
            &config.params,
            &config.integrator,
        )
        .map_err(CliError::numerical)?;
        let mut body = scaling.csv();
        body.push_str(&format!("# exponent = {}\n", scaling.exponent));
        write_output(out_dir, path, &body)?;
    }
    Ok(())
}

/// Run a verification suite, print one machine-readable row per invariant,
/// and return the process exit code (0 clean, 4 on any failure).
pub fn cmd_verify(name: &str) -> Result<i32, CliError> {
    let suite = Suite::parse(name).ok_or_else(|| {
        CliError::Config(format!(
            "unknown suite {name:?} (available: {})",
            Suite::NAMES.join(", ")
        ))
    })?;
    println!("suite,invariant,residual,threshold,verdict");
    let mut failures = 0;
    for check in run_suite(suite) {
        println!(
            "{},{},{:e},{:e},{}",
            check.suite,
            check.invariant,
            check.residual,
            check.threshold,
            if check.pass { "pass" } else { "fail" }
        );
        if !check.pass {
            failures += 1;
        }
    }
    Ok(if failures > 0 { 4 } else { 0 })
}
