//! End-to-end checks of the batch front end: artifacts, headers, exit codes,
//! and reproducibility across runs and worker counts.

use std::path::Path;
use std::process::{Command, Output};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_enkbf"))
}

fn write_config(dir: &Path, extra: &str) -> std::path::PathBuf {
    let path = dir.join("config.json");
    let base = format!(
        r#"{{"steps": 4, "refinement": 4, "levels": [0, 1, 2], "replications": 4,
            "ensemble_size": 4, "seed": 11{}{}"#,
        if extra.is_empty() { "" } else { ", " },
        extra
    );
    std::fs::write(&path, format!("{base}}}")).unwrap();
    path
}

fn run_ok(out: &Output) {
    assert!(
        out.status.success(),
        "stdout: {}\nstderr: {}",
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
}

fn exit_code(out: &Output) -> i32 {
    out.status.code().expect("no exit code")
}

/// File contents with the `# out_dir` and `# workers` header lines dropped;
/// those record run placement, not results, and legitimately differ between
/// otherwise equal runs.
fn read_normalized(path: &Path) -> String {
    std::fs::read_to_string(path)
        .unwrap()
        .lines()
        .filter(|l| !l.starts_with("# out_dir") && !l.starts_with("# workers"))
        .collect::<Vec<_>>()
        .join("\n")
}

#[test]
fn converge_writes_artifacts_with_resolved_header() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "");
    let out_dir = dir.path().join("run");
    let out = bin()
        .args(["converge", "--config"])
        .arg(&cfg)
        .arg("--out")
        .arg(&out_dir)
        .output()
        .unwrap();
    run_ok(&out);

    let csv = std::fs::read_to_string(out_dir.join("converge.csv")).unwrap();
    assert!(csv.starts_with("# "), "resolved config header expected");
    assert!(csv.contains("# seed = 11"));
    assert!(csv.contains("# refinement = 4"));
    assert!(!csv.contains('\r'), "LF line endings only");

    let json: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(out_dir.join("converge.json")).unwrap())
            .unwrap();
    assert!(json["report"]["slope"].is_f64());
    assert_eq!(json["config"]["seed"], 11);
}

#[test]
fn converge_is_reproducible_across_runs_and_workers() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "");
    let mut renders = Vec::new();
    for (name, workers) in [("a", "1"), ("b", "1"), ("c", "4")] {
        let out_dir = dir.path().join(name);
        let out = bin()
            .args(["converge", "--config"])
            .arg(&cfg)
            .args(["--workers", workers, "--out"])
            .arg(&out_dir)
            .output()
            .unwrap();
        run_ok(&out);
        renders.push(read_normalized(&out_dir.join("converge.csv")));
    }
    assert_eq!(renders[0], renders[1], "same seed must be byte-identical");
    assert_eq!(renders[0], renders[2], "worker count must not change results");
}

#[test]
fn seed_precedence_flag_over_env_over_file() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "");

    let flag_dir = dir.path().join("flag");
    let out = bin()
        .args(["converge", "--config"])
        .arg(&cfg)
        .args(["--seed", "99", "--out"])
        .arg(&flag_dir)
        .output()
        .unwrap();
    run_ok(&out);

    // env sets a different seed; the flag still wins
    let both_dir = dir.path().join("both");
    let out = bin()
        .args(["converge", "--config"])
        .arg(&cfg)
        .args(["--seed", "99", "--out"])
        .arg(&both_dir)
        .env("ENKBF_SEED", "1234")
        .output()
        .unwrap();
    run_ok(&out);
    assert_eq!(
        read_normalized(&flag_dir.join("converge.csv")),
        read_normalized(&both_dir.join("converge.csv"))
    );

    // env alone differs from the file seed
    let env_dir = dir.path().join("env");
    let out = bin()
        .args(["converge", "--config"])
        .arg(&cfg)
        .arg("--out")
        .arg(&env_dir)
        .env("ENKBF_SEED", "1234")
        .output()
        .unwrap();
    run_ok(&out);
    let env_csv = std::fs::read_to_string(env_dir.join("converge.csv")).unwrap();
    assert!(env_csv.contains("# seed = 1234"));
}

#[test]
fn truth_export_is_deterministic_and_dumps_lattice() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), r#""dump_lattice": true"#);
    let a_dir = dir.path().join("a");
    let b_dir = dir.path().join("b");
    for d in [&a_dir, &b_dir] {
        let out = bin()
            .args(["truth", "--config"])
            .arg(&cfg)
            .arg("--out")
            .arg(d)
            .output()
            .unwrap();
        run_ok(&out);
    }
    assert_eq!(
        read_normalized(&a_dir.join("truth.csv")),
        read_normalized(&b_dir.join("truth.csv"))
    );
    assert_eq!(
        read_normalized(&a_dir.join("observations.csv")),
        read_normalized(&b_dir.join("observations.csv"))
    );
    let lattice = enkbf::NoiseLattice::load(&a_dir.join("lattice.bin")).unwrap();
    assert_eq!(lattice.seed, 11);
    assert_eq!(lattice.grid.n_fine(), 64);
}

#[test]
fn diagnose_runs_all_monitors() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "");
    let out_dir = dir.path().join("diag");
    let out = bin()
        .args(["diagnose", "--config"])
        .arg(&cfg)
        .arg("--out")
        .arg(&out_dir)
        .output()
        .unwrap();
    run_ok(&out);
    for f in [
        "monitor_gain.csv",
        "monitor_gain_bare.csv",
        "monitor_spread.csv",
        "monitor_eigen_floor.csv",
        "monitor_exp_moment.csv",
    ] {
        assert!(out_dir.join(f).exists(), "missing {f}");
    }
    assert!(String::from_utf8_lossy(&out.stdout).contains("all monitors passed"));
}

#[test]
fn report_rerenders_converge_json() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "");
    let out_dir = dir.path().join("run");
    let out = bin()
        .args(["converge", "--config"])
        .arg(&cfg)
        .arg("--out")
        .arg(&out_dir)
        .output()
        .unwrap();
    run_ok(&out);
    let out = bin()
        .args(["report", "--input"])
        .arg(out_dir.join("converge.json"))
        .output()
        .unwrap();
    run_ok(&out);
    let text = String::from_utf8_lossy(&out.stdout);
    assert!(text.contains("fitted slope"));
    assert!(text.contains("level"));
}

#[test]
fn config_errors_exit_with_code_2() {
    let dir = tempfile::tempdir().unwrap();
    for (extra, cmd) in [
        (r#""gamma": 0.7"#, "converge"),
        (r#""model": "lorenz""#, "truth"),
        (r#""monitors": []"#, "diagnose"),
        (r#""monitors": ["gain", "entropy"]"#, "diagnose"),
        (r#""variant": "hybrid""#, "converge"),
    ] {
        let sub = tempfile::tempdir_in(dir.path()).unwrap();
        let cfg = write_config(sub.path(), extra);
        let out = bin()
            .args([cmd, "--config"])
            .arg(&cfg)
            .arg("--out")
            .arg(sub.path().join("out"))
            .output()
            .unwrap();
        assert_eq!(
            exit_code(&out),
            2,
            "expected exit 2 for {extra}: {}",
            String::from_utf8_lossy(&out.stderr)
        );
    }

    // missing config file is a usage error, too
    let out = bin()
        .args(["converge", "--config", "/nonexistent/config.json"])
        .output()
        .unwrap();
    assert_ne!(exit_code(&out), 0);
}

#[test]
fn report_on_malformed_input_fails() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("bad.json");
    std::fs::write(&p, "{\"no_report\": 1}").unwrap();
    let out = bin().args(["report", "--input"]).arg(&p).output().unwrap();
    assert_eq!(exit_code(&out), 2);
}
