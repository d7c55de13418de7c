use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_pearson-stein"))
}

fn config(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR"))
        .join("../../configs")
        .join(name)
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("binary runs")
}

fn path(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn validate_passes_and_writes_run_directory() {
    let dir = tempfile::tempdir().unwrap();
    let out = run(&["validate", "--seed", "1", "--out", path(dir.path())]);
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    assert!(String::from_utf8_lossy(&out.stdout).contains("validate: PASS"));
    for f in ["config.json", "results.csv", "summary.json"] {
        assert!(dir.path().join(f).is_file(), "missing {f}");
    }
    let summary: serde_json::Value =
        serde_json::from_slice(&std::fs::read(dir.path().join("summary.json")).unwrap()).unwrap();
    assert_eq!(summary["passed"], true);
    assert_eq!(summary["seed"], 1);
    assert_eq!(summary["report"]["failures"], 0);
}

#[test]
fn perturbed_coefficients_fail_validation() {
    let dir = tempfile::tempdir().unwrap();
    let out = run(&[
        "validate",
        "--config",
        path(&config("validate_perturbed.json")),
        "--out",
        path(dir.path()),
    ]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stdout).contains("validate: FAIL"));
    let csv = std::fs::read_to_string(dir.path().join("results.csv")).unwrap();
    assert!(csv
        .lines()
        .any(|l| l.starts_with("rho_cross_check") && l.ends_with("false")));
}

#[test]
fn config_for_another_subcommand_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let out = run(&[
        "lyapunov",
        "--config",
        path(&config("ou_convergence.json")),
        "--out",
        path(dir.path()),
    ]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("exp-convergence"));
    assert!(!dir.path().join("summary.json").exists());
}

#[test]
fn missing_config_and_seed_are_errors() {
    let out = run(&["exp-convergence"]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("--config"));

    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("c.json");
    std::fs::write(&cfg, r#"{"z0": 3.0, "t_grid": [1.0], "n_paths": 1000}"#).unwrap();
    let out = run(&[
        "exp-convergence",
        "--config",
        path(&cfg),
        "--out",
        path(&dir.path().join("run")),
    ]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("seed"));
}

#[test]
fn lyapunov_explosive_drift_fails_and_ou_passes() {
    let dir = tempfile::tempdir().unwrap();
    let bad = run(&[
        "lyapunov",
        "--config",
        path(&config("lyapunov_explosive.json")),
        "--out",
        path(&dir.path().join("bad")),
    ]);
    assert_eq!(bad.status.code(), Some(1));
    let good = run(&[
        "lyapunov",
        "--config",
        path(&config("lyapunov_ou.json")),
        "--out",
        path(&dir.path().join("good")),
    ]);
    assert!(good.status.success());
}

#[test]
fn reruns_are_byte_identical_across_thread_counts() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("c.json");
    std::fs::write(
        &cfg,
        r#"{"seed": 5, "z0": 2.0, "t_grid": [0.5, 1.0], "n_paths": 5000, "dt": 0.005}"#,
    )
    .unwrap();
    let mut runs = Vec::new();
    for (i, threads) in ["1", "2", "1"].iter().enumerate() {
        let out_dir = dir.path().join(format!("r{i}"));
        let out = run(&[
            "exp-convergence",
            "--config",
            path(&cfg),
            "--out",
            path(&out_dir),
            "--threads",
            threads,
        ]);
        assert!(
            out.status.code().is_some(),
            "{}",
            String::from_utf8_lossy(&out.stderr)
        );
        runs.push(
            ["config.json", "results.csv", "summary.json"]
                .map(|f| std::fs::read(out_dir.join(f)).unwrap()),
        );
    }
    assert!(runs.windows(2).all(|w| w[0] == w[1]));
}
