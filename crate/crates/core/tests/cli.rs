use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use semkd::harness::report::collect_reports;

fn fixture(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("fixtures").join(name)
}

fn semkd(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_semkd"))
        .args(args)
        .env("RUST_LOG", "warn")
        .output()
        .unwrap()
}

fn out_override(dir: &Path) -> String {
    format!("output_dir={}", dir.display())
}

#[test]
fn run_writes_a_complete_run_directory() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = fixture("tiny.toml");
    let out = semkd(&["run", "--config", cfg.to_str().unwrap(), "--overrides", &out_override(tmp.path())]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert_eq!(stdout.lines().filter(|l| l.starts_with("session")).count(), 5);

    let reports = collect_reports(tmp.path()).unwrap();
    assert_eq!(reports.len(), 1);
    let (path, report) = &reports[0];
    assert_eq!(report.sessions.len(), 5);
    let dir = path.parent().unwrap();
    for f in ["config.toml", "loss_log.csv", "sessions.csv", "accuracy.png"] {
        assert!(dir.join(f).is_file(), "missing {f}");
    }
    for s in 1..=5 {
        assert!(dir.join(format!("checkpoints/session_{s:02}.semkd")).is_file());
    }

    let agg = semkd(&["report", tmp.path().to_str().unwrap()]);
    assert_eq!(agg.status.code(), Some(0));
    assert!(tmp.path().join("aggregate.csv").is_file());
    assert!(tmp.path().join("fscil_tiny.png").is_file());
}

#[test]
fn missing_config_is_a_config_error() {
    let out = semkd(&["run", "--config", "/nonexistent/semkd.toml"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn bad_override_is_a_config_error() {
    let cfg = fixture("tiny.toml");
    for bad in ["train.no_such_key=3", "model.num_superclasses=99", "missing-equals"] {
        let out = semkd(&["run", "--config", cfg.to_str().unwrap(), "--overrides", bad]);
        assert_eq!(out.status.code(), Some(2), "override {bad}");
    }
}

#[test]
fn report_on_empty_dir_is_a_config_error() {
    let tmp = tempfile::tempdir().unwrap();
    assert_eq!(semkd(&["report", tmp.path().to_str().unwrap()]).status.code(), Some(2));
}

#[test]
fn unknown_subcommand_is_a_config_error() {
    assert_eq!(semkd(&["frobnicate"]).status.code(), Some(2));
}

#[test]
fn check_grads_passes() {
    let out = semkd(&["check-grads", "--seed", "3"]);
    assert_eq!(out.status.code(), Some(0));
}

#[test]
fn ablate_runs_every_combination() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = fixture("tiny.toml");
    let out = semkd(&[
        "ablate",
        "--config",
        cfg.to_str().unwrap(),
        "--switches",
        "no-distill,no-attn-loss,single-embedding",
        "--overrides",
        &out_override(tmp.path()),
        "epochs_per_phase=0",
    ]);
    // unknown top-level key
    assert_eq!(out.status.code(), Some(2));

    let out = semkd(&[
        "ablate",
        "--config",
        cfg.to_str().unwrap(),
        "--switches",
        "no-distill,no-attn-loss,single-embedding",
        "--overrides",
        &out_override(tmp.path()),
    ]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let mut rdr = csv::Reader::from_path(tmp.path().join("ablation.csv")).unwrap();
    let variants: Vec<String> = rdr.records().map(|r| r.unwrap()[0].to_owned()).collect();
    assert_eq!(variants.len(), 8);
    assert_eq!(variants[0], "full");
    assert!(variants.contains(&"no-distill+no-attn-loss+single-embedding".to_owned()));
    assert_eq!(collect_reports(tmp.path()).unwrap().len(), 8);
}
