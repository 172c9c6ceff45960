use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn xbatch(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_xbatch")).args(args).output().unwrap()
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn stdout_json(out: &Output) -> serde_json::Value {
    serde_json::from_slice(&out.stdout).unwrap_or_else(|e| {
        panic!("{e}: {}", String::from_utf8_lossy(&out.stdout));
    })
}

fn ok(out: &Output) {
    assert!(
        out.status.success(),
        "status {:?}\n{}\n{}",
        out.status,
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
}

#[test]
fn cover_then_oracle_ot() {
    let dir = tempfile::tempdir().unwrap();
    let points = dir.path().join("points.csv");
    fs::write(&points, "4\n0,1,0,1\n0,0,1,1\n").unwrap();
    let protos = dir.path().join("protos.csv");
    let out = xbatch(&["cover", "--input", p(&points), "--m", "2", "--output", p(&protos)]);
    ok(&out);
    let v = stdout_json(&out);
    assert_eq!(v["prototypes"], 2);
    assert!((v["covering_radius"].as_f64().unwrap() - 1.0).abs() < 1e-12);

    let plan = dir.path().join("plan.csv");
    let out = xbatch(&["oracle-ot", "--p", p(&points), "--q", p(&protos), "--plan", p(&plan)]);
    ok(&out);
    let v = stdout_json(&out);
    assert!(v["duality_gap"].as_f64().unwrap() <= 1e-8);
    assert!(v["mmd_linear"].as_f64().unwrap() <= v["cost"].as_f64().unwrap() + 1e-9);
    assert!(fs::read_to_string(&plan).unwrap().starts_with("2\n"));
}

#[test]
fn fit_over_batches() {
    let dir = tempfile::tempdir().unwrap();
    let files = [
        ("z1.csv", "2\n1,0\n0,1\n"),
        ("y1.csv", "2\n2,0\n0,3\n"),
        ("z2.csv", "1\n0.5\n0.5\n"),
        ("y2.csv", "1\n1\n1.5\n"),
    ];
    for (name, text) in files {
        fs::write(dir.path().join(name), text).unwrap();
    }
    let f = |name: &str| dir.path().join(name);
    let out_path = f("v.csv");
    let out = xbatch(&[
        "fit",
        "--z",
        p(&f("z1.csv")),
        "--y",
        p(&f("y1.csv")),
        "--z",
        p(&f("z2.csv")),
        "--y",
        p(&f("y2.csv")),
        "--forgetting",
        "0.9",
        "--output",
        p(&out_path),
    ]);
    ok(&out);
    assert_eq!(stdout_json(&out)["batches"], 2);
    assert_eq!(fs::read_to_string(&out_path).unwrap().lines().count(), 3);
}

#[test]
fn input_errors_exit_with_code_two() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.json");
    fs::write(&cfg, r#"{"model": {"prototypes": 64, "temprature": 3}}"#).unwrap();
    let out = xbatch(&["experiment", "--config", p(&cfg), "--out", p(&dir.path().join("run"))]);
    assert_eq!(out.status.code(), Some(2));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("model.temprature"), "{err}");

    let bad = dir.path().join("bad.csv");
    fs::write(&bad, "3\n1,2\n").unwrap();
    let out = xbatch(&["cover", "--input", p(&bad), "--m", "1", "--output", p(&dir.path().join("o.csv"))]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn numeric_failures_exit_with_code_three() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("wild.json");
    fs::write(&cfg, r#"{"train": {"steps": 20, "learning_rate": 1e300}, "eval": {"trials": 2}}"#).unwrap();
    let out = xbatch(&["train", "--config", p(&cfg), "--out", p(&dir.path().join("run"))]);
    assert_eq!(out.status.code(), Some(3), "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn train_writes_a_run_that_eval_can_read() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("cfg.json");
    fs::write(&cfg, r#"{"train": {"steps": 30}, "eval": {"trials": 5}}"#).unwrap();
    let run = dir.path().join("run");
    let out = xbatch(&["train", "--config", p(&cfg), "--out", p(&run), "--seed", "4"]);
    ok(&out);
    for f in [
        "linear.csv",
        "prototypes.csv",
        "test_z.csv",
        "test_y.csv",
        "test_labels.csv",
        "history.csv",
        "summary.json",
        "timing.json",
    ] {
        assert!(run.join(f).exists(), "missing {f}");
    }
    let report = stdout_json(&out)["report"].clone();
    let out = xbatch(&[
        "eval",
        "--z",
        p(&run.join("test_z.csv")),
        "--y",
        p(&run.join("test_y.csv")),
        "--labels",
        p(&run.join("test_labels.csv")),
        "--trials",
        "5",
    ]);
    ok(&out);
    let v = stdout_json(&out);
    assert_eq!(v["trial_count"], 5);
    for key in ["map_at_r", "r_at_1", "map_c"] {
        let (a, b) = (v[key].as_f64().unwrap(), report[key].as_f64().unwrap());
        assert!((a - b).abs() < 1e-9, "{key}: {a} vs {b}");
    }
}

#[test]
fn experiment_runs_are_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("cfg.json");
    fs::write(&cfg, r#"{"train": {"steps": 20, "seed_count": 2}, "eval": {"trials": 4}}"#).unwrap();
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    for out_dir in [&a, &b] {
        ok(&xbatch(&["experiment", "--config", p(&cfg), "--out", p(out_dir)]));
    }
    for f in ["summary.json", "metrics.csv", "history.csv"] {
        assert_eq!(fs::read(a.join(f)).unwrap(), fs::read(b.join(f)).unwrap(), "{f}");
    }
    assert!(a.join("timing.json").exists());
}

#[test]
fn verify_subset_prints_table() {
    let out = xbatch(&["verify", "--only", "5,8"]);
    ok(&out);
    let text = String::from_utf8_lossy(&out.stdout);
    assert_eq!(text.lines().filter(|l| l.contains("PASS")).count(), 2, "{text}");
}

#[test]
fn failing_acceptance_exits_with_code_four() {
    let out = xbatch(&["verify", "--only", "99"]);
    assert_eq!(out.status.code(), Some(4));
}
