use std::path::Path;
use std::process::{Command, Output};

const SMALL: &str = "heston.n_steps = 12\nheston.dt = 0.05\nsim.n_train_paths = 96\nsim.n_val_paths = 32\nnet.hidden_dim = 6\ntrain.epochs = 2\n";

fn hedgebench(args: &[&str], dir: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_hedgebench"))
        .args(args)
        .current_dir(dir)
        .env("RUST_LOG", "warn")
        .output()
        .expect("binary runs")
}

fn ok(out: &Output) {
    assert!(
        out.status.success(),
        "status {:?}\nstdout:\n{}\nstderr:\n{}",
        out.status,
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
}

#[test]
fn step_by_step_commands() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    std::fs::write(d.join("run.cfg"), SMALL).unwrap();
    ok(&hedgebench(&["simulate", "--config", "run.cfg", "--out", "paths.csv", "--seed", "4"], d));
    assert!(d.join("paths.csv.meta.json").is_file());
    for opt in ["adam", "kfac"] {
        let model = format!("{opt}.json");
        let curve = format!("{opt}.csv");
        ok(&hedgebench(
            &["train", "--config", "run.cfg", "--paths", "paths.csv", "--optimizer", opt, "--model-out", &model, "--curve-out", &curve],
            d,
        ));
        let curve_text = std::fs::read_to_string(d.join(&curve)).unwrap();
        assert_eq!(curve_text.lines().count(), 3);
        let report = format!("report_{opt}.json");
        ok(&hedgebench(&["evaluate", "--model", &model, "--paths", "paths.csv", "--report-out", &report], d));
    }
    let out = hedgebench(
        &["compare", "--report-a", "report_adam.json", "--report-b", "report_kfac.json", "--out", "cmp.json"],
        d,
    );
    ok(&out);
    let table = String::from_utf8_lossy(&out.stdout);
    assert!(table.contains("Table 1") && table.contains("Table 2"));
    assert!(std::fs::read_to_string(d.join("cmp.json")).unwrap().contains("cost_test"));
}

#[test]
fn pipeline_writes_verified_manifest() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    std::fs::write(d.join("run.cfg"), SMALL).unwrap();
    ok(&hedgebench(&["pipeline", "--config", "run.cfg", "--out-dir", "out"], d));
    let out = d.join("out");
    let manifest = hedgebench::pipeline::verify_manifest(&out).unwrap();
    for name in [
        "paths.csv",
        "model_adam.json",
        "model_kfac.json",
        "curve_adam.csv",
        "curve_kfac.csv",
        "eval_adam.csv",
        "report_kfac.json",
        "comparison.json",
        "comparison.txt",
        "histogram.csv",
        "hedges.csv",
        "correlation.csv",
        "durations.csv",
    ] {
        assert!(manifest.files.contains_key(name), "{name} missing from manifest");
    }
    let leftovers: Vec<_> = std::fs::read_dir(&out)
        .unwrap()
        .filter_map(|e| e.ok())
        .filter(|e| e.file_name().to_string_lossy().ends_with(".partial"))
        .collect();
    assert!(leftovers.is_empty());

    // Tampering is detected.
    std::fs::write(out.join("eval_adam.csv"), "path,pnl,cost,trading_gain\n").unwrap();
    assert!(hedgebench::pipeline::verify_manifest(&out).is_err());
}

#[test]
fn failures_exit_nonzero_with_diagnostics() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    std::fs::write(d.join("bad.cfg"), "train.epochs = 2\nheston.rho = -1.5\n").unwrap();
    let out = hedgebench(&["pipeline", "--config", "bad.cfg", "--out-dir", "out"], d);
    assert!(!out.status.success());
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("heston.rho") && err.contains("line 2"), "{err}");

    let out = hedgebench(&["evaluate", "--model", "missing.json", "--paths", "p.csv", "--report-out", "r.json"], d);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("missing.json"));

    let out = hedgebench(&["train", "--paths", "p.csv", "--optimizer", "sgd", "--model-out", "m", "--curve-out", "c"], d);
    assert!(!out.status.success());
}

#[test]
fn failed_stage_is_named_and_leaves_partial_files() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    std::fs::write(
        d.join("run.cfg"),
        "heston.n_steps = 12\nheston.dt = 0.05\nsim.n_train_paths = 40\nsim.n_val_paths = 8\nnet.hidden_dim = 4\ntrain.epochs = 1\n",
    )
    .unwrap();
    std::fs::create_dir(d.join("out")).unwrap();
    // A directory where a stage output file should go makes the rename fail.
    std::fs::create_dir(d.join("out").join("model_adam.json")).unwrap();
    let out = hedgebench(&["pipeline", "--config", "run.cfg", "--out-dir", "out"], d);
    assert!(!out.status.success());
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("train_adam"), "{err}");
    assert!(d.join("out").join("curve_adam.csv.partial").is_file());
    assert!(d.join("out").join("paths.csv").is_file());
}
