use std::path::Path;
use std::process::{Command, Output};

fn anyskin(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_anyskin"))
        .args(args)
        .current_dir(dir)
        .env_remove("ANYSKIN_OUT_DIR")
        .env_remove("RUST_LOG")
        .output()
        .unwrap()
}

fn code(o: &Output) -> i32 {
    o.status.code().unwrap()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

#[test]
fn unknown_subcommand_is_a_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    let o = anyskin(dir.path(), &["frobnicate"]);
    assert_eq!(code(&o), 2);
    assert!(stderr(&o).contains("Usage"));
}

#[test]
fn bad_flag_values_are_usage_errors() {
    let dir = tempfile::tempdir().unwrap();
    for args in [
        &["characterize", "--presets", "nonesuch"][..],
        &["simulate", "--kind", "wiggle"],
        &["simulate", "--center", "1"],
        &["localize"],
        &["daq", "csv", "--input", "x"],
        &["characterize", "--threads", "0"],
    ] {
        assert_eq!(code(&anyskin(dir.path(), args)), 2, "{args:?}");
    }
}

#[test]
fn help_and_version_succeed() {
    let dir = tempfile::tempdir().unwrap();
    let o = anyskin(dir.path(), &["--help"]);
    assert_eq!(code(&o), 0);
    let text = String::from_utf8_lossy(&o.stdout);
    for sub in ["characterize", "simulate", "localize", "slip", "daq", "moldgen"] {
        assert!(text.contains(sub), "help lacks {sub}");
    }
    assert_eq!(code(&anyskin(dir.path(), &["--version"])), 0);
}

#[test]
fn runtime_failures_exit_one_with_a_message() {
    let dir = tempfile::tempdir().unwrap();
    let o = anyskin(dir.path(), &["localize", "--input", "missing.alog"]);
    assert_eq!(code(&o), 1);
    assert!(stderr(&o).starts_with("error:"));

    std::fs::write(dir.path().join("open.txt"), "0 0\n1 0\n").unwrap();
    let o = anyskin(dir.path(), &["moldgen", "--contour", "open.txt"]);
    assert_eq!(code(&o), 1);
    assert!(!dir.path().join("mold/manifest.json").exists());

    let o = anyskin(dir.path(), &["characterize", "--instances", "1"]);
    assert_eq!(code(&o), 1);
}

#[test]
fn characterize_writes_one_row_per_preset_and_a_manifest() {
    let dir = tempfile::tempdir().unwrap();
    let o = anyskin(dir.path(), &["characterize", "--presets", "all", "--instances", "5", "--seed", "0", "--out", "report.csv"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let csv = std::fs::read_to_string(dir.path().join("report.csv")).unwrap();
    assert_eq!(csv.lines().count(), 5);
    assert!(csv.starts_with("preset,"));

    let m: serde_json::Value =
        serde_json::from_slice(&std::fs::read(dir.path().join("report.csv.manifest.json")).unwrap()).unwrap();
    assert_eq!(m["subcommand"], "characterize");
    assert_eq!(m["seed"], 0);
    assert_eq!(m["params"]["characterize"]["instances"], 5);
    assert_eq!(m["summary"]["rows"], 4);
    assert!(m["duration_s"].as_f64().unwrap() >= 0.0);
    assert!(m["tool_version"].as_str().unwrap().starts_with("anyskin "));
}

#[test]
fn seed_changes_the_output() {
    let dir = tempfile::tempdir().unwrap();
    for s in ["1", "2"] {
        let out = format!("r{s}.csv");
        assert_eq!(code(&anyskin(dir.path(), &["characterize", "--instances", "2", "--seed", s, "--out", &out])), 0);
    }
    let a = std::fs::read(dir.path().join("r1.csv")).unwrap();
    let b = std::fs::read(dir.path().join("r2.csv")).unwrap();
    assert_ne!(a, b);
}

#[test]
fn output_directory_comes_from_the_environment() {
    let dir = tempfile::tempdir().unwrap();
    let target = dir.path().join("outputs");
    let o = Command::new(env!("CARGO_BIN_EXE_anyskin"))
        .args(["simulate", "--noise", "0", "--out", "s.csv"])
        .current_dir(dir.path())
        .env("ANYSKIN_OUT_DIR", &target)
        .output()
        .unwrap();
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    assert!(target.join("s.csv").exists());
    assert!(target.join("s.csv.manifest.json").exists());
    assert!(!dir.path().join("s.csv").exists());
}

#[test]
fn localize_stdout_is_pure_json_even_when_verbose() {
    let dir = tempfile::tempdir().unwrap();
    let sim = anyskin(dir.path(), &["simulate", "--center", "8,12", "--depth", "0.9", "--noise", "0", "--out", "s.alog"]);
    assert_eq!(code(&sim), 0);
    let o = anyskin(dir.path(), &["-vv", "localize", "--input", "s.alog"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let v: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    let est = &v["result"]["estimate"];
    assert!((est["center"][0].as_f64().unwrap() - 8.0).abs() < 0.05);
    assert!((est["center"][1].as_f64().unwrap() - 12.0).abs() < 0.05);
    assert!((est["depth"].as_f64().unwrap() - 0.9).abs() < 0.05);
    assert_eq!(v["result"]["converged"], true);
}

#[test]
fn thread_count_does_not_change_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let run = |threads: &str, out: &str| {
        let o = anyskin(dir.path(), &["simulate", "--kind", "slip", "--threads", threads, "--out", out]);
        assert_eq!(code(&o), 0, "{}", stderr(&o));
        std::fs::read(dir.path().join(out)).unwrap()
    };
    assert_eq!(run("1", "a.alog"), run("3", "b.alog"));
}

#[test]
fn replay_with_a_tiny_queue_reports_drops_honestly() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(code(&anyskin(dir.path(), &["simulate", "--out", "s.alog"])), 0);
    let o = anyskin(dir.path(), &["daq", "replay", "--input", "s.alog", "--capacity", "4", "--out", "r.csv"]);
    assert_eq!(code(&o), 0);
    let m: serde_json::Value =
        serde_json::from_slice(&std::fs::read(dir.path().join("r.csv.manifest.json")).unwrap()).unwrap();
    let s = &m["summary"];
    assert_eq!(s["frames"], 100);
    assert_eq!(s["received"].as_u64().unwrap() + s["dropped"].as_u64().unwrap(), 100);
    let rows = std::fs::read_to_string(dir.path().join("r.csv")).unwrap().lines().count() as u64 - 1;
    assert_eq!(rows, s["received"].as_u64().unwrap());
}
