use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;
use willems::multiagent::read_sweep_csv;
use willems::predictive::{read_log_csv, read_plot_csv, Phase};
use willems::Trajectory;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_willems"))
}

fn bundled(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR"))
        .join("configs")
        .join(name)
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("binary runs")
}

fn run_config(cmd: &str, config: &Path, out: &Path, extra: &[&str]) -> Output {
    let mut args = vec![
        cmd,
        "--config",
        config.to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
    ];
    args.extend_from_slice(extra);
    run(&args)
}

fn write_config(dir: &Path, name: &str, value: &Value) -> PathBuf {
    let path = dir.join(name);
    fs::write(&path, serde_json::to_string_pretty(value).unwrap()).unwrap();
    path
}

fn read_json(path: &Path) -> Value {
    serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn tracking_config() -> Value {
    serde_json::from_str(&fs::read_to_string(bundled("fig1_deepc.json")).unwrap()).unwrap()
}

fn benchmark_system() -> Value {
    tracking_config()["system"].clone()
}

#[test]
fn theorem1_random_system_passes() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        "t1.json",
        &serde_json::json!({
            "system": {"random": {"n": 4, "m": 2, "p": 2}},
            "trajectories": 2,
            "horizon": 3,
            "seed": 11
        }),
    );
    let o = run_config("verify-theorem1", &cfg, dir.path(), &[]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let report = read_json(&dir.path().join("theorem1_report.json"));
    assert_eq!(report["status"], "pass");
    assert_eq!(report["image"]["holds"], true);
    assert!(report["image"]["residual"].as_f64().unwrap() <= 1e-8);
    let samples = report["samples"].as_array().unwrap();
    assert_eq!(samples.len(), 4);
    assert!(samples
        .iter()
        .all(|s| s["state_condition"] == true && s["parameterizable"] == true));
}

#[test]
fn theorem1_short_data_reports_hypothesis_violation() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        "t1.json",
        &serde_json::json!({
            "system": {"random": {"n": 3, "m": 1, "p": 1}},
            "horizon": 2,
            "length": 6,
            "max_draws": 3
        }),
    );
    let o = run_config("verify-theorem1", &cfg, dir.path(), &[]);
    assert_eq!(o.status.code(), Some(3), "{}", stderr(&o));
    let report = read_json(&dir.path().join("theorem1_report.json"));
    assert_eq!(report["status"], "hypothesis_violated");
    assert!(report["image"].is_null());
    assert!(report["samples"].as_array().unwrap().is_empty());
}

#[test]
fn theorem1_unreachable_state_is_not_parameterizable() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        "t1.json",
        &serde_json::json!({
            "system": benchmark_system(),
            "horizon": 3,
            "initial_states": "zero",
            "state_samples": [[0.0, 0.0, 1.0, 0.0], [1.0, -2.0, 0.0, 0.0]]
        }),
    );
    let o = run_config("verify-theorem1", &cfg, dir.path(), &[]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let report = read_json(&dir.path().join("theorem1_report.json"));
    let s = &report["samples"];
    assert_eq!(s[0]["state_condition"], false);
    assert_eq!(s[0]["parameterizable"], false);
    assert!(s[0]["relative_residual"].as_f64().unwrap() > 1e-8);
    assert_eq!(s[1]["state_condition"], true);
    assert!(s[1]["relative_residual"].as_f64().unwrap() <= 1e-8);
    assert!(stdout(&o).contains("verdict: pass"));
}

#[test]
fn deepc_bundled_config_reproduces_tracking() {
    let dir = tempfile::tempdir().unwrap();
    let o = run_config("deepc", &bundled("fig1_deepc.json"), dir.path(), &[]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let summary = read_json(&dir.path().join("deepc_summary.json"));
    assert_eq!(summary["outcome"], "completed");
    assert_eq!(summary["control_steps"], 56);
    assert!(summary["max_input_gap"].as_f64().unwrap() <= 1e-5);
    assert!(summary["max_objective_gap"].as_f64().unwrap() <= 1e-6);

    let log = read_log_csv(fs::File::open(dir.path().join("deepc_log.csv")).unwrap()).unwrap();
    assert_eq!(log.len(), 81);
    let last = log.last().unwrap();
    assert!((last.output[0] + 3.0).abs() <= 0.1);
    assert!(last.output[1].abs() <= 0.05);
    assert!(log.iter().all(|e| e.input.amax() <= 1.0 + 1e-8));
    assert!(log
        .iter()
        .filter(|e| e.phase == Phase::Control)
        .all(|e| e.mpc_input.is_some()));

    let plot = read_plot_csv(fs::File::open(dir.path().join("deepc_plot.csv")).unwrap()).unwrap();
    assert_eq!(plot.outputs.ncols(), 81);
    assert_eq!(plot.reference[(0, 40)], -3.0);
    assert_eq!(plot.reference[(1, 40)], 0.1);
}

#[test]
fn deepc_with_k_equal_t_has_single_control_step() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = tracking_config();
    cfg["run_len"] = 25.into();
    cfg["controller"] = "deepc".into();
    let path = write_config(dir.path(), "short.json", &cfg);
    let o = run_config("deepc", &path, dir.path(), &[]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let log = read_log_csv(fs::File::open(dir.path().join("deepc_log.csv")).unwrap()).unwrap();
    assert_eq!(log.len(), 26);
    assert_eq!(log.iter().filter(|e| e.phase == Phase::Control).count(), 1);
    assert!(log.iter().all(|e| e.mpc_input.is_none()));
}

#[test]
fn deepc_infeasible_step_aborts_with_partial_log() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = tracking_config();
    cfg["controller"] = "mpc".into();
    cfg["run_len"] = 30.into();
    cfg["initial_state"] = serde_json::json!([0.0, 0.0, 5.0, 0.0]);
    cfg["output_bounds"] = serde_json::json!({"lower": [null, -0.01], "upper": [null, 0.01]});
    let path = write_config(dir.path(), "infeasible.json", &cfg);
    let o = run_config("deepc", &path, dir.path(), &[]);
    assert_eq!(o.status.code(), Some(4), "{}", stderr(&o));
    let summary = read_json(&dir.path().join("deepc_summary.json"));
    assert_eq!(summary["outcome"], "aborted");
    assert_eq!(summary["aborted_at"], 25);
    let log = read_log_csv(fs::File::open(dir.path().join("deepc_log.csv")).unwrap()).unwrap();
    assert_eq!(log.len(), 25);
}

#[test]
fn deepc_output_is_reproducible_per_seed() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = tracking_config();
    cfg["run_len"] = 35.into();
    let path = write_config(dir.path(), "repro.json", &cfg);
    let strip_timing = |dir: &Path| {
        let mut log = read_log_csv(fs::File::open(dir.join("deepc_log.csv")).unwrap()).unwrap();
        log.iter_mut().for_each(|e| e.solve_ms = None);
        log
    };
    let (a, b, c) = (
        dir.path().join("a"),
        dir.path().join("b"),
        dir.path().join("c"),
    );
    for (out, seed) in [(&a, "3"), (&b, "3"), (&c, "4")] {
        let o = run_config("deepc", &path, out, &["--seed", seed]);
        assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    }
    assert_eq!(strip_timing(&a), strip_timing(&b));
    assert_eq!(
        fs::read(a.join("deepc_plot.csv")).unwrap(),
        fs::read(b.join("deepc_plot.csv")).unwrap()
    );
    assert_ne!(strip_timing(&a)[0].input, strip_timing(&c)[0].input);
    // Atomic writes leave no temporary files behind.
    let mut names: Vec<_> = fs::read_dir(&a)
        .unwrap()
        .map(|e| e.unwrap().file_name())
        .collect();
    names.sort();
    assert_eq!(
        names,
        ["deepc_log.csv", "deepc_plot.csv", "deepc_summary.json"]
    );
}

#[test]
fn identify_bundled_config_matches_bounds() {
    let dir = tempfile::tempdir().unwrap();
    let o = run_config(
        "identify",
        &bundled("fig2_multiagent.json"),
        dir.path(),
        &[],
    );
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let rows = read_sweep_csv(fs::File::open(dir.path().join("sweep.csv")).unwrap()).unwrap();
    assert_eq!(rows.len(), 12);
    for r in &rows {
        let n = r.agents as f64;
        let closed = match r.rule.name() {
            "corollary2" => ((8.0 * n * n + 10.0 * n) / (116.0 - 4.0 * n)).ceil(),
            _ => ((16.0 * n * n + 2.0 * n) / (120.0 - 8.0 * n)).ceil(),
        } as usize;
        assert_eq!(
            r.tau_min,
            Some(closed),
            "N = {} {}",
            r.agents,
            r.rule.name()
        );
    }
    let report = read_json(&dir.path().join("identify_report.json"));
    let ident = &report["identification"][0];
    assert_eq!(ident["status"], "identified");
    assert_eq!(ident["markov_errors"].as_array().unwrap().len(), 5);
    assert!(ident["markov_errors"]
        .as_array()
        .unwrap()
        .iter()
        .all(|e| e.as_f64().unwrap() <= 1e-6));
    for key in ["abar_error", "bbar_error", "incidence_error"] {
        assert!(ident[key].as_f64().unwrap() <= 1e-6, "{key}");
    }
}

#[test]
fn identify_single_agent_is_skipped() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg: Value =
        serde_json::from_str(&fs::read_to_string(bundled("fig2_multiagent.json")).unwrap())
            .unwrap();
    cfg["identify"] = serde_json::json!([1]);
    cfg.as_object_mut().unwrap().remove("sweep");
    let path = write_config(dir.path(), "single.json", &cfg);
    let o = run_config("identify", &path, dir.path(), &[]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    assert!(stdout(&o).contains("no output channel"));
    let report = read_json(&dir.path().join("identify_report.json"));
    assert_eq!(report["identification"][0]["status"], "skipped");
    assert!(!dir.path().join("sweep.csv").exists());
}

#[test]
fn simulate_then_check_pe() {
    let dir = tempfile::tempdir().unwrap();
    let inputs: Vec<f64> = (0..12)
        .map(|t| ((t * 7919) % 13) as f64 / 13.0 - 0.5)
        .collect();
    let cfg = write_config(
        dir.path(),
        "sim.json",
        &serde_json::json!({
            "system": benchmark_system(),
            "initial_state": [0.0, 0.0, 1.0, 0.0],
            "inputs": [inputs],
        }),
    );
    let o = run(&["simulate", "--config", cfg.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let csv = dir.path().join("trajectory.csv");
    let traj = Trajectory::read_csv(fs::File::open(&csv).unwrap()).unwrap();
    assert_eq!(traj.len(), 12);
    assert_eq!(traj.outputs().unwrap()[(1, 0)], 1.0);
    assert_eq!(traj.outputs().unwrap()[(1, 1)], 0.9);

    let o = run(&["check-pe", "--config", csv.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let order: usize = stdout(&o)
        .trim()
        .strip_prefix("pe_order = ")
        .unwrap()
        .parse()
        .unwrap();
    assert!((1..=6).contains(&order));

    let pe = write_config(
        dir.path(),
        "pe.json",
        &serde_json::json!({"trajectories": ["trajectory.csv"], "order": order + 1}),
    );
    let o = run(&["check-pe", "--config", pe.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(3), "{}", stderr(&o));
    assert!(stdout(&o).contains("not exciting"));

    // Inputs may also come from a trajectory CSV.
    let again = write_config(
        dir.path(),
        "sim2.json",
        &serde_json::json!({"system": benchmark_system(), "inputs": "trajectory.csv", "output": "again.csv"}),
    );
    let o = run(&["simulate", "--config", again.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let replay =
        Trajectory::read_csv(fs::File::open(dir.path().join("again.csv")).unwrap()).unwrap();
    assert_eq!(replay.inputs(), traj.inputs());
}

#[test]
fn config_errors_exit_with_usage_code() {
    let dir = tempfile::tempdir().unwrap();
    let unknown = write_config(
        dir.path(),
        "u.json",
        &serde_json::json!({"system": benchmark_system(), "horizon": 2, "horizen": 3}),
    );
    let o = run_config("verify-theorem1", &unknown, dir.path(), &[]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("horizen"));

    let mut sys = benchmark_system();
    sys["a"][1] = serde_json::json!([0.0, 1.0]);
    let ragged = write_config(
        dir.path(),
        "r.json",
        &serde_json::json!({"system": sys, "horizon": 2}),
    );
    let o = run_config("verify-theorem1", &ragged, dir.path(), &[]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("system.a"), "{}", stderr(&o));

    let mut cfg = tracking_config();
    cfg["q"] = serde_json::json!([[1.0, 0.0], [0.0, -1.0]]);
    let indefinite = write_config(dir.path(), "q.json", &cfg);
    let o = run_config("deepc", &indefinite, dir.path(), &[]);
    assert_eq!(o.status.code(), Some(2));
    assert!(
        stderr(&o).contains("positive semidefinite"),
        "{}",
        stderr(&o)
    );

    let o = run_config("deepc", &dir.path().join("missing.json"), dir.path(), &[]);
    assert_eq!(o.status.code(), Some(2));

    let o = run(&["deepc"]);
    assert_eq!(o.status.code(), Some(2));
}
