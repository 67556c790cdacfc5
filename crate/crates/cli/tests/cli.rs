use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn decaware(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_decaware"))
        .current_dir(dir)
        .args(args)
        .output()
        .expect("binary runs")
}

fn ok(dir: &Path, args: &[&str]) -> Output {
    let out = decaware(dir, args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

const SMALL: &str = r#"
seed = 4

[input]
kind = "synth"
n_low = 15
n_high = 15
periods = 8

[learner]
kind = "forest"
n_trees = 20
"#;

#[test]
fn staged_commands_agree_with_compare() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    fs::write(d.join("run.toml"), SMALL).unwrap();
    let common = ["--config", "run.toml"];
    let with = |extra: &[&str]| -> Vec<String> {
        common.iter().chain(extra).map(|s| s.to_string()).collect()
    };
    let run = |extra: &[&str]| {
        let args = with(extra);
        let refs: Vec<&str> = args.iter().map(String::as_str).collect();
        ok(d, &refs)
    };
    run(&["--out", "data", "synth"]);
    assert!(d.join("data/features.csv").exists());
    assert!(d.join("data/truth.csv").exists());
    let f = ["--features", "data/features.csv"];
    run(&[f[0], f[1], "--out", "m", "train"]);
    run(&[
        f[0],
        f[1],
        "--out",
        "m",
        "weights",
        "--model",
        "m/model.json",
    ]);
    run(&[
        f[0],
        f[1],
        "--out",
        "m",
        "retrain",
        "--weights",
        "m/weights.csv",
    ]);
    run(&[
        f[0],
        f[1],
        "--out",
        "a",
        "allocate",
        "--model",
        "m/model.json",
    ]);
    run(&[
        f[0],
        f[1],
        "--out",
        "a",
        "allocate",
        "--model",
        "m/model_aware.json",
        "--policy",
        "decision_aware",
    ]);
    run(&[
        f[0],
        f[1],
        "--out",
        "a",
        "allocate",
        "--policy",
        "rolling_average",
    ]);
    run(&[f[0], f[1], "--out", "a", "allocate", "--policy", "oracle"]);
    run(&[
        f[0],
        f[1],
        "--out",
        "e",
        "evaluate",
        "--allocations",
        "a/allocation_decision_blind.json",
        "a/allocation_decision_aware.json",
        "a/allocation_rolling_average.json",
        "a/allocation_oracle.json",
    ]);
    run(&["--out", "c", "compare"]);
    let staged = fs::read_to_string(d.join("e/summary.csv")).unwrap();
    let direct = fs::read_to_string(d.join("c/summary.csv")).unwrap();
    assert_eq!(staged, direct);
    assert_eq!(
        fs::read(d.join("m/weights.csv")).unwrap(),
        fs::read(d.join("c/weights.csv")).unwrap()
    );
}

#[test]
fn compare_prints_policy_summary() {
    let dir = tempfile::tempdir().unwrap();
    let out = ok(
        dir.path(),
        &[
            "--seed",
            "2",
            "--jacobian",
            "diagonal_fd",
            "--out",
            "c",
            "compare",
        ],
    );
    let stdout = String::from_utf8(out.stdout).unwrap();
    for policy in [
        "decision_blind",
        "decision_aware",
        "rolling_average",
        "oracle",
    ] {
        assert!(stdout.contains(policy), "{stdout}");
    }
    let json = fs::read_to_string(dir.path().join("c/report.json")).unwrap();
    assert!(json.contains("\"eval_period\""));
}

#[test]
fn ingest_writes_features_and_exclusions() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let mut csv = String::from("facility_id,product_id,period,region,opening_balance,quantity_received,quantity_dispensed,adjustment,closing_balance\n");
    for m in 1..=6 {
        csv.push_str(&format!(
            "F1,ORS,2021-{m:02},West,50,10,{},0,{}\n",
            10 + m,
            50 - m
        ));
    }
    csv.push_str("F1,ORS,2021-07,West,0,0,0,0,0\n");
    csv.push_str("F1,ORS,2021-08,West,bad,0,0,0,0\n");
    fs::write(d.join("raw.csv"), csv).unwrap();
    ok(
        d,
        &[
            "--out", "ing", "ingest", "--input", "raw.csv", "--lags", "2",
        ],
    );
    let features = fs::read_to_string(d.join("ing/features.csv")).unwrap();
    assert_eq!(features.lines().count(), 7);
    let exclusions = fs::read_to_string(d.join("ing/exclusions.csv")).unwrap();
    assert!(exclusions.contains("all_zero"));
    let rejects = fs::read_to_string(d.join("ing/rejects.csv")).unwrap();
    assert!(rejects.lines().nth(1).unwrap().starts_with("9,"));
}

#[test]
fn errors_are_categorized() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();

    let out = decaware(d, &["--budget-fraction", "1.5", "compare"]);
    assert_eq!(out.status.code(), Some(78));
    assert!(String::from_utf8_lossy(&out.stderr).starts_with("error [config]"));

    let out = decaware(d, &["--config", "missing.toml", "compare"]);
    assert_eq!(out.status.code(), Some(74));
    assert!(String::from_utf8_lossy(&out.stderr).starts_with("error [io]"));

    fs::write(d.join("empty.csv"), "").unwrap();
    let out = decaware(d, &["ingest", "--input", "empty.csv"]);
    assert_eq!(out.status.code(), Some(65));
    assert!(String::from_utf8_lossy(&out.stderr).starts_with("error [input]"));

    let out = decaware(d, &["allocate"]);
    assert_eq!(out.status.code(), Some(78));

    let out = decaware(d, &["--jacobian", "sideways", "compare"]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("jacobian"));
}

#[test]
fn shipped_configs_parse() {
    let root = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs");
    for name in ["synthetic.toml", "stock_reports.toml"] {
        decaware::pipeline::RunConfig::from_file(&root.join(name))
            .unwrap_or_else(|e| panic!("{name}: {e}"));
    }
    let dir = tempfile::tempdir().unwrap();
    let cfg = root.join("synthetic.toml");
    ok(
        dir.path(),
        &["--config", cfg.to_str().unwrap(), "--out", "c", "compare"],
    );
}
