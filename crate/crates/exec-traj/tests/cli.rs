//! End-to-end tests of the batch CLI: exit-code contract, strict config
//! parsing, file schemas, and the solve -> evaluate round trip.

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

const BASE_CONFIG: &str = r#"
[market]
s = 1.0
sigma = 0.2

[impact]
permanent = "linear"
alpha = 1.0
temporary = "linear"
eta = 1.0

[problem]
shares = 3.0
horizon = 1.0
risk_aversion = 0.0

[solver]
ode_steps = 1000
"#;

fn bin() -> &'static str {
    env!("CARGO_BIN_EXE_exec-traj")
}

fn write_config(dir: &Path, text: &str) -> PathBuf {
    let path = dir.join("run.toml");
    std::fs::write(&path, text).unwrap();
    path
}

fn run(args: &[&str]) -> Output {
    Command::new(bin()).args(args).output().unwrap()
}

fn json_field(text: &str, key: &str) -> f64 {
    let value: serde_json::Value = serde_json::from_str(text).unwrap();
    value[key].as_f64().unwrap_or_else(|| panic!("missing field {key} in {text}"))
}

#[test]
fn solve_writes_trajectory_and_report() {
    let work = tempfile::tempdir().unwrap();
    let config = write_config(work.path(), BASE_CONFIG);
    let out = work.path().join("out");
    let result = run(&["solve", "--config", config.to_str().unwrap(), "--out", out.to_str().unwrap()]);
    assert!(result.status.success(), "{}", String::from_utf8_lossy(&result.stderr));

    let csv = std::fs::read_to_string(out.join("trajectory.csv")).unwrap();
    let mut lines = csv.lines();
    assert_eq!(lines.next().unwrap(), "t,f,c,f1,f2", "stable CSV schema");
    assert_eq!(lines.count(), 1001);

    // lambda = 0: the correction column is identically zero
    for line in csv.lines().skip(1) {
        let f2: f64 = line.split(',').nth(4).unwrap().parse().unwrap();
        assert_eq!(f2, 0.0);
    }

    let report: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(out.join("report.json")).unwrap()).unwrap();
    assert_eq!(report["command"], "solve");
    assert_eq!(report["converged"], true);
    for key in ["objective", "expected_shortfall", "variance_term", "residual_sup", "iterations", "seed"] {
        assert!(!report[key].is_null(), "report.json missing `{key}`");
    }
    // O(h^2) residual at the coarse 1000-step test grid
    assert!(report["residual_sup"].as_f64().unwrap() < 1e-5);
}

#[test]
fn solve_then_evaluate_round_trip() {
    let work = tempfile::tempdir().unwrap();
    let config = write_config(work.path(), BASE_CONFIG);
    let out = work.path().join("out");
    assert!(run(&["solve", "--config", config.to_str().unwrap(), "--out", out.to_str().unwrap()])
        .status
        .success());
    let report: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(out.join("report.json")).unwrap()).unwrap();
    let j_solve = report["objective"].as_f64().unwrap();

    let traj = out.join("trajectory.csv");
    let eval = run(&[
        "evaluate",
        "--config",
        config.to_str().unwrap(),
        "--trajectory",
        traj.to_str().unwrap(),
    ]);
    assert!(eval.status.success(), "{}", String::from_utf8_lossy(&eval.stderr));
    let text = String::from_utf8(eval.stdout).unwrap();
    let j_eval = json_field(&text, "objective");
    assert!(
        (j_eval - j_solve).abs() <= 1e-12 * j_solve.abs(),
        "round trip J: solve {j_solve} vs evaluate {j_eval}"
    );
    // both objective routes printed, and they agree
    let discrepancy = json_field(&text, "discrepancy");
    assert!(discrepancy <= 1e-8 * j_solve.abs());

    // solved schedule beats the uniform one at lambda = 0
    let uniform_csv = {
        let mut text = String::from("t,f,c\n");
        for i in 0..=1000 {
            let t = i as f64 / 1000.0;
            text.push_str(&format!("{:.16e},{:.16e},{:.16e}\n", t, 3.0 * t, 3.0));
        }
        let path = work.path().join("uniform.csv");
        std::fs::write(&path, text).unwrap();
        path
    };
    let eval_uniform = run(&[
        "evaluate",
        "--config",
        config.to_str().unwrap(),
        "--trajectory",
        uniform_csv.to_str().unwrap(),
    ]);
    assert!(eval_uniform.status.success());
    let j_uniform = json_field(&String::from_utf8(eval_uniform.stdout).unwrap(), "objective");
    assert!(j_solve < j_uniform);
}

#[test]
fn malformed_config_key_exits_2_with_single_line_diagnostic() {
    let work = tempfile::tempdir().unwrap();
    let config = write_config(work.path(), &BASE_CONFIG.replace("sigma", "sigmo"));
    let result = run(&["solve", "--config", config.to_str().unwrap()]);
    assert_eq!(result.status.code(), Some(2));
    let stderr = String::from_utf8(result.stderr).unwrap();
    assert!(stderr.contains("sigmo"), "diagnostic must name the key: {stderr}");
    assert_eq!(stderr.trim().lines().count(), 1, "single-line diagnostic: {stderr:?}");
}

#[test]
fn missing_config_file_exits_2() {
    let result = run(&["solve", "--config", "/nonexistent/run.toml"]);
    assert_eq!(result.status.code(), Some(2));
}

#[test]
fn degenerate_impact_exits_3_with_report() {
    let work = tempfile::tempdir().unwrap();
    let config = write_config(
        work.path(),
        &BASE_CONFIG
            .replace("temporary = \"linear\"\neta = 1.0", "temporary = \"zero\""),
    );
    let out = work.path().join("out");
    let result = run(&["solve", "--config", config.to_str().unwrap(), "--out", out.to_str().unwrap()]);
    assert_eq!(result.status.code(), Some(3));
    // diagnostics are still written
    let report: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(out.join("report.json")).unwrap()).unwrap();
    assert_eq!(report["converged"], false);
    assert!(report["error"].as_str().unwrap().contains("degenerate"));
}

#[test]
fn evaluate_rejects_schema_mismatch() {
    let work = tempfile::tempdir().unwrap();
    let config = write_config(work.path(), BASE_CONFIG);
    let bad = work.path().join("bad.csv");
    std::fs::write(&bad, "time,fill\n0.0,0.0\n1.0,3.0\n").unwrap();
    let result = run(&[
        "evaluate",
        "--config",
        config.to_str().unwrap(),
        "--trajectory",
        bad.to_str().unwrap(),
    ]);
    assert_eq!(result.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&result.stderr).contains("schema"));
}

#[test]
fn evaluate_rejects_order_size_mismatch() {
    // a trajectory finishing away from the configured K is a config-level
    // inconsistency, not a numeric failure
    let work = tempfile::tempdir().unwrap();
    let config = write_config(work.path(), BASE_CONFIG);
    let short = work.path().join("short.csv");
    let mut text = String::from("t,f,c\n");
    for i in 0..=100 {
        let t = i as f64 / 100.0;
        text.push_str(&format!("{:.16e},{:.16e},{:.16e}\n", t, 2.0 * t, 2.0));
    }
    std::fs::write(&short, text).unwrap();
    let result = run(&[
        "evaluate",
        "--config",
        config.to_str().unwrap(),
        "--trajectory",
        short.to_str().unwrap(),
    ]);
    assert_eq!(result.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&result.stderr).contains("misses the order size"));
}

#[test]
fn simulate_requires_sim_section() {
    let work = tempfile::tempdir().unwrap();
    let config = write_config(work.path(), BASE_CONFIG);
    let result = run(&["simulate", "--config", config.to_str().unwrap()]);
    assert_eq!(result.status.code(), Some(2));
}

#[test]
fn simulate_zero_impact_passes_and_zero_volatility_is_exact() {
    let work = tempfile::tempdir().unwrap();
    let zero_impact = BASE_CONFIG
        .replace("permanent = \"linear\"\nalpha = 1.0", "permanent = \"zero\"")
        .replace("temporary = \"linear\"\neta = 1.0", "temporary = \"zero\"")
        .replace("shares = 3.0", "shares = 1.0");
    let config = write_config(
        work.path(),
        &format!("{zero_impact}\n[sim]\nn_paths = 20000\nn_steps = 100\nseed = 5\n"),
    );
    let out = work.path().join("out");
    let result =
        run(&["simulate", "--config", config.to_str().unwrap(), "--out", out.to_str().unwrap()]);
    assert!(result.status.success(), "{}", String::from_utf8_lossy(&result.stderr));
    let stats: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(out.join("simstats.json")).unwrap()).unwrap();
    assert!(stats["z_mean"].as_f64().unwrap().abs() < 3.0);
    assert!(stats["z_second"].as_f64().unwrap().abs() < 3.0);
    assert_eq!(stats["refinement"].as_array().unwrap().len(), 3);

    // sigma = 0: deterministic price, exact match flagged as z = 0
    let riskless = zero_impact.replace("sigma = 0.2", "sigma = 0.0");
    let config = write_config(
        work.path(),
        &format!("{riskless}\n[sim]\nn_paths = 64\nn_steps = 100\nseed = 5\n"),
    );
    let out2 = work.path().join("out2");
    let result =
        run(&["simulate", "--config", config.to_str().unwrap(), "--out", out2.to_str().unwrap()]);
    assert!(result.status.success());
    let stats: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(out2.join("simstats.json")).unwrap())
            .unwrap();
    assert_eq!(stats["z_mean"].as_f64().unwrap(), 0.0);
    assert_eq!(stats["shortfall_var"].as_f64().unwrap(), 0.0);
}

#[test]
fn simulate_flags_inconsistent_scheme_with_exit_3() {
    // a deliberately coarse Euler-Maruyama grid biases the sample mean by
    // far more than 5 standard errors at this path count
    let work = tempfile::tempdir().unwrap();
    let config = write_config(
        work.path(),
        &format!(
            "{BASE_CONFIG}\n[sim]\nn_paths = 20000\nn_steps = 10\nseed = 9\nscheme = \"euler-maruyama\"\nrefinement = []\n"
        ),
    );
    let out = work.path().join("out");
    let result =
        run(&["simulate", "--config", config.to_str().unwrap(), "--out", out.to_str().unwrap()]);
    assert_eq!(result.status.code(), Some(3));
    // the stats file is still written for diagnosis
    assert!(out.join("simstats.json").exists());
}

#[test]
fn compare_reports_dominance() {
    let work = tempfile::tempdir().unwrap();
    let config = write_config(work.path(), BASE_CONFIG);
    let out = work.path().join("out");
    let result =
        run(&["compare", "--config", config.to_str().unwrap(), "--out", out.to_str().unwrap()]);
    assert!(result.status.success(), "{}", String::from_utf8_lossy(&result.stderr));

    let csv = std::fs::read_to_string(out.join("compare.csv")).unwrap();
    assert_eq!(csv.lines().next().unwrap(), "t,f_ours,f_ac,f_uniform");

    let summary: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(out.join("compare_summary.json")).unwrap())
            .unwrap();
    // lambda = 0: the arithmetic benchmark is the straight line and the
    // geometric optimum dominates it
    assert_eq!(summary["kappa"].as_f64().unwrap(), 0.0);
    assert!(summary["min_gap_vs_ac"].as_f64().unwrap() >= -1e-6 * 3.0);
}

#[test]
fn json_output_format() {
    let work = tempfile::tempdir().unwrap();
    let config = write_config(
        work.path(),
        &format!("{BASE_CONFIG}\n[output]\nformat = \"json\"\n"),
    );
    let out = work.path().join("out");
    assert!(run(&["solve", "--config", config.to_str().unwrap(), "--out", out.to_str().unwrap()])
        .status
        .success());
    assert!(out.join("trajectory.json").exists());
    assert!(!out.join("trajectory.csv").exists());

    // evaluate accepts the JSON trajectory too
    let eval = run(&[
        "evaluate",
        "--config",
        config.to_str().unwrap(),
        "--trajectory",
        out.join("trajectory.json").to_str().unwrap(),
    ]);
    assert!(eval.status.success(), "{}", String::from_utf8_lossy(&eval.stderr));
}

#[test]
fn risk_averse_solve_orders_above_risk_neutral() {
    // Figure-2 style check through the CLI: the lambda = 1 run dominates the
    // lambda = 0 run pointwise
    let work = tempfile::tempdir().unwrap();
    let risk_averse = BASE_CONFIG.replace("risk_aversion = 0.0", "risk_aversion = 1.0");
    let cfg0 = write_config(work.path(), BASE_CONFIG);
    let out0 = work.path().join("lam0");
    assert!(run(&["solve", "--config", cfg0.to_str().unwrap(), "--out", out0.to_str().unwrap()])
        .status
        .success());
    let cfg1 = {
        let path = work.path().join("run1.toml");
        std::fs::write(&path, &risk_averse).unwrap();
        path
    };
    let out1 = work.path().join("lam1");
    assert!(run(&["solve", "--config", cfg1.to_str().unwrap(), "--out", out1.to_str().unwrap()])
        .status
        .success());

    let read_f = |dir: &Path| -> Vec<f64> {
        std::fs::read_to_string(dir.join("trajectory.csv"))
            .unwrap()
            .lines()
            .skip(1)
            .map(|l| l.split(',').nth(1).unwrap().parse().unwrap())
            .collect()
    };
    let f0 = read_f(&out0);
    let f1 = read_f(&out1);
    assert_eq!(f0.len(), f1.len());
    for (a, b) in f1.iter().zip(&f0) {
        assert!(a - b >= -1e-6 * 3.0, "risk-averse schedule fell below: {a} < {b}");
    }

    // and its f2 column is nontrivial
    let f2_max: f64 = std::fs::read_to_string(out1.join("trajectory.csv"))
        .unwrap()
        .lines()
        .skip(1)
        .map(|l| l.split(',').nth(4).unwrap().parse::<f64>().unwrap().abs())
        .fold(0.0, f64::max);
    assert!(f2_max > 1e-3, "expected a nontrivial correction, got sup |f2| = {f2_max}");
}
