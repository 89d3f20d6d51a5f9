//! End-to-end tests of the `hallflux` binary: config handling, output
//! determinism, sweep behavior, and exit codes.

use std::path::Path;
use std::process::{Command, Output};

fn run_in(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_hallflux"))
        .current_dir(dir)
        .args(args)
        .output()
        .expect("binary runs")
}

fn write(dir: &Path, name: &str, content: &str) -> std::path::PathBuf {
    let path = dir.join(name);
    std::fs::write(&path, content).unwrap();
    path
}

fn read(dir: &Path, name: &str) -> String {
    std::fs::read_to_string(dir.join(name)).unwrap()
}

const DEMO: &str = r#"
[params]
e = 1.0
m = 1.0
b = 1.0
phi0 = 6.283185307179586

[initial.action_angle]
s = 0.0
phi1 = 0.3
phi2 = 1.1
i1 = 3.0
i2 = 0.3

[span]
start = 0.0
end = 30.0

[integrator]
sample_count = 601

[outputs]
trajectory_csv = "traj.csv"
events_json = "events.json"
"#;

fn csv_column(csv: &str, index: usize) -> Vec<f64> {
    csv.lines()
        .skip(1)
        .map(|line| line.split(',').nth(index).unwrap().parse().unwrap())
        .collect()
}

#[test]
fn demo_run_shows_the_linear_action_gap() {
    let dir = tempfile::tempdir().unwrap();
    write(dir.path(), "demo.toml", DEMO);
    let out = run_in(dir.path(), &["simulate", "--config", "demo.toml"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));

    let csv = read(dir.path(), "traj.csv");
    let s = csv_column(&csv, 0);
    let i1 = csv_column(&csv, 5);
    let i2 = csv_column(&csv, 6);
    assert_eq!(s.len(), 601);

    // Without a potential the action gap grows exactly at the flux rate,
    // so consecutive differences of I1 - I2 equal f * (s step).
    let f = 1.0;
    for k in 1..s.len() {
        let diff = (i1[k] - i2[k]) - (i1[k - 1] - i2[k - 1]);
        let expect = f * (s[k] - s[k - 1]);
        assert!(
            (diff - expect).abs() < 1e-7,
            "gap step {diff} vs {expect} at s = {}",
            s[k]
        );
    }

    assert_eq!(read(dir.path(), "events.json").trim(), "[]");
}

#[test]
fn zero_span_emits_a_header_only_csv() {
    let dir = tempfile::tempdir().unwrap();
    let config = DEMO.replace("start = 0.0\nend = 30.0", "start = 1.5\nend = 1.5");
    write(dir.path(), "zero.toml", &config);
    let out = run_in(dir.path(), &["simulate", "--config", "zero.toml"]);
    assert!(out.status.success());
    assert_eq!(read(dir.path(), "traj.csv"), "s,q1,q2,p1,p2,I1,I2,phi1,phi2,H,K,c1,c2\n");
}

#[test]
fn reruns_and_json_configs_are_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    write(dir.path(), "demo.toml", DEMO);
    let json = r#"{
        "params": {"e": 1.0, "m": 1.0, "b": 1.0, "phi0": 6.283185307179586},
        "initial": {"action_angle": {"s": 0.0, "phi1": 0.3, "phi2": 1.1, "i1": 3.0, "i2": 0.3}},
        "span": {"start": 0.0, "end": 30.0},
        "integrator": {"sample_count": 601},
        "outputs": {"trajectory_csv": "traj.csv", "events_json": "events.json"}
    }"#;
    write(dir.path(), "demo.json", json);

    for (config, out_dir) in [("demo.toml", "a"), ("demo.toml", "b"), ("demo.json", "c")] {
        let out = run_in(dir.path(), &["simulate", "--config", config, "--out", out_dir]);
        assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    }
    let a = read(dir.path(), "a/traj.csv");
    assert_eq!(a, read(dir.path(), "b/traj.csv"), "rerun changed bytes");
    assert_eq!(a, read(dir.path(), "c/traj.csv"), "JSON config changed bytes");
}

const SWEEP_BASE: &str = r#"
[params]
e = 1.0
m = 1.0
b = 1.0
phi0 = 6.283185307179586

[initial.action_angle]
s = 0.0
phi1 = 0.3
phi2 = 1.1
i1 = 3.0
i2 = 0.3

[span]
start = 0.0
end = 400.0

[integrator]
sample_count = 900
"#;

#[test]
fn sweep_grid_matches_the_slope_formula_in_order() {
    let dir = tempfile::tempdir().unwrap();
    let config = format!(
        "{SWEEP_BASE}\n[sweep]\nb = [0.8, 1.0, 1.25]\nphi0 = [3.141592653589793, 6.283185307179586, 12.566370614359172]\n"
    );
    write(dir.path(), "sweep.toml", &config);
    let out = run_in(dir.path(), &["sweep", "--config", "sweep.toml", "--threads", "2"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));

    let csv = read(dir.path(), "sweep.csv");
    let rows: Vec<&str> = csv.lines().skip(1).collect();
    assert_eq!(rows.len(), 9);

    let b_axis = [0.8, 1.0, 1.25];
    let phi0_axis = [std::f64::consts::PI, std::f64::consts::TAU, 2.0 * std::f64::consts::TAU];
    for (k, row) in rows.iter().enumerate() {
        let fields: Vec<&str> = row.split(',').collect();
        assert_eq!(fields[0].parse::<usize>().unwrap(), k, "rows in grid order");
        assert_eq!(fields[5], "ok");
        let b = b_axis[k / 3];
        let phi0 = phi0_axis[k % 3];
        assert_eq!(fields[1].parse::<f64>().unwrap(), b);
        let slope: f64 = fields[14].parse().unwrap();
        let expect = -b * phi0 / std::f64::consts::TAU;
        assert!(
            (slope - expect).abs() <= 0.01 * expect.abs(),
            "cell {k}: slope {slope} vs {expect}"
        );
    }
}

#[test]
fn sweep_flags_a_failing_cell_and_finishes_the_rest() {
    let dir = tempfile::tempdir().unwrap();
    // phi1 + phi2 = pi puts the two circle components in opposition, so
    // the cell with equal actions starts exactly on the puncture.
    let config = SWEEP_BASE
        .replace("phi1 = 0.3", "phi1 = 1.0")
        .replace("phi2 = 1.1", "phi2 = 2.141592653589793")
        + "\n[sweep]\ni1 = [0.5, 1.0, 1.5]\ni2 = [0.25, 1.0, 2.0]\n";
    write(dir.path(), "sweep.toml", &config);
    let out = run_in(dir.path(), &["sweep", "--config", "sweep.toml"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));

    let csv = read(dir.path(), "sweep.csv");
    let rows: Vec<&str> = csv.lines().skip(1).collect();
    assert_eq!(rows.len(), 9);
    let ok_rows = rows
        .iter()
        .filter(|row| row.split(',').nth(5).unwrap() == "ok")
        .count();
    assert_eq!(ok_rows, 8, "{csv}");
    let flagged: Vec<&str> = rows
        .iter()
        .copied()
        .filter(|row| row.split(',').nth(5).unwrap() != "ok")
        .collect();
    assert_eq!(flagged.len(), 1);
    // The failing cell is i1 = i2 = 1.0: grid index 4.
    assert!(flagged[0].starts_with("4,"), "{}", flagged[0]);
    assert!(flagged[0].contains("NaN"));
}

#[test]
fn single_cell_sweep_equals_simulate_with_a_fit() {
    let dir = tempfile::tempdir().unwrap();
    let sweep_config = format!("{SWEEP_BASE}\n[sweep]\nb = [1.0]\n");
    write(dir.path(), "sweep.toml", &sweep_config);
    let simulate_config = format!("{SWEEP_BASE}\n[outputs]\nconstants_json = \"constants.json\"\n");
    write(dir.path(), "sim.toml", &simulate_config);

    assert!(run_in(dir.path(), &["sweep", "--config", "sweep.toml"]).status.success());
    assert!(run_in(dir.path(), &["simulate", "--config", "sim.toml"]).status.success());

    let csv = read(dir.path(), "sweep.csv");
    let row: Vec<&str> = csv.lines().nth(1).unwrap().split(',').collect();
    let json: serde_json::Value =
        serde_json::from_str(&read(dir.path(), "constants.json")).unwrap();

    for (field, key) in [(6, "a0"), (7, "b0"), (8, "K"), (9, "s0")] {
        let from_row: f64 = row[field].parse().unwrap();
        let from_json = json[key].as_f64().unwrap();
        assert_eq!(from_row, from_json, "{key} differs between sweep and simulate");
    }
    let drift = json["transport"]["drift_magnitude"].as_f64().unwrap();
    assert_eq!(row[11].parse::<f64>().unwrap(), drift);
}

#[test]
fn average_writes_trajectory_and_scaling_table() {
    let dir = tempfile::tempdir().unwrap();
    let config = r#"
[params]
e = 1.0
m = 1.0
b = 1.0
phi0 = 6.283185307179586

[initial.action_angle]
s = 0.0
phi1 = 0.4
phi2 = -0.7
i1 = 1.6
i2 = 0.4

[span]
start = -6.0
end = 10.0

[average]
averaged_csv = "avg.csv"
scaling_csv = "scaling.csv"
f_values = [0.2, 0.1, 0.05]
"#;
    write(dir.path(), "avg.toml", config);
    let out = run_in(dir.path(), &["average", "--config", "avg.toml"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));

    let avg = read(dir.path(), "avg.csv");
    assert!(avg.starts_with("s,q1,q2,p1,p2,J1,J2,psi1,psi2,H,K,c1,c2\n"));
    assert!(avg.lines().count() > 100);

    let scaling = read(dir.path(), "scaling.csv");
    assert!(scaling.starts_with("f,err,horizon\n"));
    assert_eq!(scaling.lines().filter(|l| !l.starts_with('#')).count(), 4);
    let exponent: f64 = scaling
        .lines()
        .find_map(|l| l.strip_prefix("# exponent = "))
        .unwrap()
        .parse()
        .unwrap();
    assert!((0.5..1.5).contains(&exponent), "exponent {exponent}");
}

#[test]
fn asymptotics_merges_fits_from_both_ends() {
    let dir = tempfile::tempdir().unwrap();
    let config = SWEEP_BASE.replace(
        "[span]\nstart = 0.0\nend = 400.0",
        "[span]\nstart = -700.0\nend = 700.0",
    ) + "\n[outputs]\nconstants_json = \"constants.json\"\n";
    let config = config.replace("sample_count = 900", "sample_count = 2800");
    write(dir.path(), "asym.toml", &config);
    let out = run_in(dir.path(), &["asymptotics", "--config", "asym.toml"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));

    let json: serde_json::Value =
        serde_json::from_str(&read(dir.path(), "constants.json")).unwrap();
    for key in [
        "a0",
        "b0",
        "K",
        "a0_tilde",
        "b0_tilde",
        "s0",
        "drift_magnitude",
        "drift_angle",
        "energy_limit",
        "past_energy_slope",
    ] {
        assert!(json[key].is_number(), "missing {key}: {json}");
    }
    assert!((json["past_energy_slope"].as_f64().unwrap() + 1.0).abs() < 1e-12);
    assert!(json["residuals"]["k_agreement"].is_number());
}

#[test]
fn preset_fig1_emits_plot_data_and_script() {
    let dir = tempfile::tempdir().unwrap();
    let out = run_in(dir.path(), &["simulate", "--preset", "fig1"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));

    let csv = read(dir.path(), "fig1_trajectory.csv");
    assert_eq!(csv.lines().count(), 6001, "run truncated or resampled");
    let s = csv_column(&csv, 0);
    assert_eq!(s[0], -20.0);
    assert_eq!(*s.last().unwrap(), 40.0);

    let dat = read(dir.path(), "fig1_orbit.dat");
    assert_eq!(dat.lines().count(), 6001);
    let script = read(dir.path(), "fig1_orbit.gp");
    assert!(script.contains("fig1_orbit.dat"));
}

#[test]
fn exit_codes_distinguish_config_numerical_and_verification() {
    let dir = tempfile::tempdir().unwrap();

    // Config problems: missing file, unknown preset, both sources at once.
    let out = run_in(dir.path(), &["simulate", "--config", "missing.toml"]);
    assert_eq!(out.status.code(), Some(2));
    let out = run_in(dir.path(), &["simulate", "--preset", "fig9"]);
    assert_eq!(out.status.code(), Some(2));
    write(dir.path(), "demo.toml", DEMO);
    let out = run_in(dir.path(), &["simulate", "--config", "demo.toml", "--preset", "fig1"]);
    assert_eq!(out.status.code(), Some(2));

    // Numerical failure: a trajectory started exactly on the puncture.
    let broken = DEMO
        .replace("phi1 = 0.3", "phi1 = 1.0")
        .replace("phi2 = 1.1", "phi2 = 2.141592653589793")
        .replace("i1 = 3.0", "i1 = 1.0")
        .replace("i2 = 0.3", "i2 = 1.0");
    write(dir.path(), "broken.toml", &broken);
    let out = run_in(dir.path(), &["simulate", "--config", "broken.toml"]);
    assert_eq!(out.status.code(), Some(3), "{}", String::from_utf8_lossy(&out.stderr));

    // Unknown verify suite is a config error; a passing suite exits 0.
    let out = run_in(dir.path(), &["verify", "nonsense"]);
    assert_eq!(out.status.code(), Some(2));
    let out = run_in(dir.path(), &["verify", "brackets"]);
    assert_eq!(out.status.code(), Some(0));
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert!(stdout.starts_with("suite,invariant,residual,threshold,verdict\n"));
    for line in stdout.lines().skip(1) {
        assert_eq!(line.split(',').count(), 5, "bad row {line}");
        assert!(line.ends_with(",pass"), "unexpected failure {line}");
    }
}
