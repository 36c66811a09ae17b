use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use dosguard_core::scenario::ScenarioConfig;

fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_dosguard"));
    for var in ["SCENARIO", "POLICY", "SEED", "OUT", "DISABLE", "LOG"] {
        c.env_remove(format!("DOSGUARD_{var}"));
    }
    c
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().unwrap()
}

fn scenario_file(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR"))
        .join("../../scenarios")
        .join(format!("{name}.json"))
}

fn column(csv_text: &str, row: usize, name: &str) -> String {
    let mut lines = csv_text.lines();
    let header: Vec<&str> = lines.next().unwrap().split(',').collect();
    let idx = header.iter().position(|h| *h == name).unwrap();
    lines
        .nth(row)
        .unwrap()
        .split(',')
        .nth(idx)
        .unwrap()
        .to_string()
}

#[test]
fn run_writes_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("o");
    let o = run(&[
        "run",
        "--scenario",
        "builtin:default-attack",
        "--out",
        out.to_str().unwrap(),
    ]);
    assert_eq!(
        o.status.code(),
        Some(0),
        "{}",
        String::from_utf8_lossy(&o.stderr)
    );
    for f in ["report.csv", "execution_log.jsonl", "classifier_state.json"] {
        assert!(out.join(f).is_file(), "missing {f}");
    }
    let report = std::fs::read_to_string(out.join("report.csv")).unwrap();
    assert_eq!(report.lines().count(), 2);
    assert_eq!(column(&report, 0, "policy"), "ours");
}

#[test]
fn missing_scenario_is_validation_error() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("never");
    let o = run(&[
        "run",
        "--scenario",
        "/no/such/file.json",
        "--out",
        out.to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(1));
    assert!(!out.exists());
}

#[test]
fn bad_field_reports_pointer() {
    let dir = tempfile::tempdir().unwrap();
    let mut v: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(scenario_file("default-attack")).unwrap())
            .unwrap();
    v["scheduler"]["parallelism"] = serde_json::json!(0);
    let path = dir.path().join("bad.json");
    std::fs::write(&path, v.to_string()).unwrap();
    let o = run(&[
        "run",
        "--scenario",
        path.to_str().unwrap(),
        "--out",
        dir.path().join("o").to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("/scheduler/parallelism"));
}

#[test]
fn unknown_policy_is_validation_error() {
    let dir = tempfile::tempdir().unwrap();
    let o = run(&[
        "run",
        "--scenario",
        "builtin:benign-only",
        "--policy",
        "lifo",
        "--out",
        dir.path().to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn same_seed_same_report() {
    let dir = tempfile::tempdir().unwrap();
    let read = |sub: &str| {
        let out = dir.path().join(sub);
        let o = run(&[
            "run",
            "--scenario",
            "builtin:high-attack-ratio",
            "--seed",
            "7",
            "--out",
            out.to_str().unwrap(),
        ]);
        assert_eq!(o.status.code(), Some(0));
        (
            std::fs::read(out.join("report.csv")).unwrap(),
            std::fs::read(out.join("execution_log.jsonl")).unwrap(),
        )
    };
    assert_eq!(read("a"), read("b"));
}

#[test]
fn env_vars_configure_run() {
    let dir = tempfile::tempdir().unwrap();
    let o = bin()
        .arg("run")
        .env("DOSGUARD_SCENARIO", "builtin:benign-only")
        .env("DOSGUARD_POLICY", "fcfs")
        .env("DOSGUARD_SEED", "11")
        .env("DOSGUARD_OUT", dir.path())
        .output()
        .unwrap();
    assert_eq!(
        o.status.code(),
        Some(0),
        "{}",
        String::from_utf8_lossy(&o.stderr)
    );
    let report = std::fs::read_to_string(dir.path().join("report.csv")).unwrap();
    assert_eq!(column(&report, 0, "policy"), "fcfs");
    assert_eq!(column(&report, 0, "seed"), "11");
    assert_eq!(column(&report, 0, "scenario"), "benign-only");
}

#[test]
fn compare_reports_ratios() {
    let dir = tempfile::tempdir().unwrap();
    let o = run(&[
        "compare",
        "--scenario",
        scenario_file("default-attack").to_str().unwrap(),
        "--out",
        dir.path().to_str().unwrap(),
    ]);
    assert_eq!(
        o.status.code(),
        Some(0),
        "{}",
        String::from_utf8_lossy(&o.stderr)
    );
    let report = std::fs::read_to_string(dir.path().join("report.csv")).unwrap();
    assert_eq!(report.lines().count(), 4);
    let ratios = std::fs::read_to_string(dir.path().join("ratios.csv")).unwrap();
    for c in [
        "but_ours_over_rr",
        "but_ours_over_fcfs",
        "tt_ours_over_fcfs",
    ] {
        let v: f64 = column(&ratios, 0, c).parse().unwrap();
        assert!(v.is_finite() && v > 0.0, "{c} = {v}");
    }
    for p in ["ours", "fcfs", "rr"] {
        assert!(dir
            .path()
            .join(format!("execution_log_{p}.jsonl"))
            .is_file());
    }
}

#[test]
fn ablating_both_components_matches_rr() {
    let dir = tempfile::tempdir().unwrap();
    let a = dir.path().join("ablate");
    let r = dir.path().join("rr");
    let o = run(&[
        "ablate",
        "--scenario",
        "builtin:default-attack",
        "--disable",
        "polling,suppression",
        "--out",
        a.to_str().unwrap(),
    ]);
    assert_eq!(
        o.status.code(),
        Some(0),
        "{}",
        String::from_utf8_lossy(&o.stderr)
    );
    let o = run(&[
        "run",
        "--scenario",
        "builtin:default-attack",
        "--policy",
        "rr",
        "--out",
        r.to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(0));
    let ablated = std::fs::read_to_string(a.join("report.csv")).unwrap();
    let rr = std::fs::read_to_string(r.join("report.csv")).unwrap();
    assert_eq!(
        column(&ablated, 1, "policy"),
        "ours-no-polling-no-suppression"
    );
    for c in [
        "tt_seconds",
        "but_per_min",
        "ot_per_min",
        "completed",
        "expired",
    ] {
        assert_eq!(column(&ablated, 1, c), column(&rr, 0, c), "{c}");
    }
    assert!(a.join("ablation.csv").is_file());
}

#[test]
fn replay_reproduces_metrics() {
    let dir = tempfile::tempdir().unwrap();
    let o = run(&[
        "run",
        "--scenario",
        "builtin:default-attack",
        "--out",
        dir.path().join("run").to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(0));
    let log = dir.path().join("run/execution_log.jsonl");
    let o = run(&[
        "replay",
        "--log",
        log.to_str().unwrap(),
        "--out",
        dir.path().join("replay").to_str().unwrap(),
    ]);
    assert_eq!(
        o.status.code(),
        Some(0),
        "{}",
        String::from_utf8_lossy(&o.stderr)
    );
    let first = std::fs::read_to_string(dir.path().join("run/report.csv")).unwrap();
    let again = std::fs::read_to_string(dir.path().join("replay/report.csv")).unwrap();
    for c in [
        "tt_seconds",
        "but_per_min",
        "tp",
        "fp",
        "tn",
        "fn",
        "precision",
        "recall",
        "f1",
        "fpr",
        "fjr",
    ] {
        assert_eq!(column(&first, 0, c), column(&again, 0, c), "{c}");
    }
}

#[test]
fn shipped_scenarios_match_builtins() {
    for name in ScenarioConfig::BUILTIN_NAMES {
        let file = ScenarioConfig::load(&scenario_file(name)).unwrap();
        assert_eq!(file, ScenarioConfig::builtin(name).unwrap(), "{name}");
    }
}
