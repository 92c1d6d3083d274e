use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use cgpnas::bench::{generate_desk, write_idx, Split};

fn cgpnas(args: &[&str], env_root: Option<&Path>) -> Output {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_cgpnas"));
    cmd.args(args).env_remove("CGPNAS_OUTPUT_DIR");
    if let Some(root) = env_root {
        cmd.env("CGPNAS_OUTPUT_DIR", root);
    }
    cmd.output().expect("binary runs")
}

fn ok(out: &Output) -> String {
    assert!(out.status.success(), "stderr: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout.clone()).unwrap()
}

/// A tiny IDX dataset plus a config shrinking the grid and budgets.
fn fixture(dir: &Path) -> String {
    let data = dir.join("data");
    fs::create_dir(&data).unwrap();
    write_idx(&generate_desk(60, 1, Split::Train), &data, "train").unwrap();
    write_idx(&generate_desk(30, 2, Split::Test), &data, "test").unwrap();
    let config = dir.join("tiny.toml");
    fs::write(
        &config,
        "template = \"desk\"\naugment_shift = 1\n[parameters]\nn_r = 2\nn_c = 4\nL = 2\npop_size = 3\nG = 2\nE_train = 1\nE_retrain = 1\n",
    )
    .unwrap();
    format!("idx:{}", data.display())
}

#[test]
fn runs_are_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    let dataset = fixture(dir.path());
    let config = dir.path().join("tiny.toml");
    let config = config.to_str().unwrap();
    for out in ["a", "b"] {
        let o = dir.path().join(out);
        ok(&cgpnas(&["run", "-q", "-c", config, "--scenario", "s4", "--dataset", &dataset, "--seed", "7", "-o", o.to_str().unwrap()], None));
    }
    for f in ["generations.csv", "plot.csv", "archive.json"] {
        assert_eq!(fs::read(dir.path().join("a").join(f)).unwrap(), fs::read(dir.path().join("b").join(f)).unwrap(), "{f}");
    }
    let rows = fs::read_to_string(dir.path().join("a/generations.csv")).unwrap().lines().count() - 1;
    assert_eq!(rows, 3 + 2 * 3);

    let report = ok(&cgpnas(&["report", dir.path().join("a").to_str().unwrap()], None));
    assert!(report.contains("Final acc"));
    assert!(report.contains("mul8u_JFF"));
}

#[test]
fn zero_generations_log_one_population() {
    let dir = tempfile::tempdir().unwrap();
    let dataset = fixture(dir.path());
    let config = dir.path().join("tiny.toml");
    let root = dir.path().join("root");
    let out = ok(&cgpnas(
        &["run", "-q", "-c", config.to_str().unwrap(), "--dataset", &dataset, "--generations", "0", "--pop-size", "4", "-o", "g0"],
        Some(&root),
    ));
    assert!(out.contains("4 evaluations"), "{out}");
    let csv = fs::read_to_string(root.join("g0/generations.csv")).unwrap();
    assert_eq!(csv.lines().count() - 1, 4);
    let manifest = fs::read_to_string(root.join("g0/manifest.toml")).unwrap();
    assert!(manifest.contains("G = 0"));
    assert!(manifest.contains("created_unix_seconds"));
}

#[test]
fn bad_inputs_exit_nonzero() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.toml");
    fs::write(&cfg, "[parameters]\np_arch = 2.0\n").unwrap();
    let out = cgpnas(&["validate-config", cfg.to_str().unwrap()], None);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("p_arch"));
    fs::write(&cfg, "scenario = \"s3\"\nmultiplier = \"mul8u_GR\"\n").unwrap();
    assert!(ok(&cgpnas(&["validate-config", cfg.to_str().unwrap()], None)).contains("ok"));

    let out = cgpnas(&["run", "-q", "--dataset", "idx:/nonexistent", "-o", dir.path().join("x").to_str().unwrap()], None);
    assert!(!out.status.success());
    assert!(!cgpnas(&["report", dir.path().join("missing.json").to_str().unwrap()], None).status.success());
    assert!(!cgpnas(&["mult-info", "mul8u_NOPE"], None).status.success());
}

#[test]
fn mult_info_prints_metrics() {
    let text = ok(&cgpnas(&["mult-info", "mul8u_2N4"], None));
    assert!(text.contains("0.15 pJ"));
    assert!(text.contains("recomputed 880.25"), "{text}");
}
