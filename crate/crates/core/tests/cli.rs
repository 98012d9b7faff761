use std::path::Path;
use std::process::{Command, Output};

use mtlgrad::toybench::parse_oracle_fixtures;

fn mtlgrad(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_mtlgrad")).args(args).output().expect("spawn mtlgrad")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exit code")
}

fn read(p: &Path) -> String {
    std::fs::read_to_string(p).unwrap_or_else(|e| panic!("{}: {e}", p.display()))
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

const HEADER: &str = "step,theta1,theta2,L1,L2,w1,w2,d1,d2,d_norm,r,cos_theta,pareto_fail,skipped";

#[test]
fn toy_run_writes_trace_and_sidecar() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("run.csv");
    let o = mtlgrad(&["toy-run", "--method", "imgrad", "--steps", "300", "--out", s(&out)]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let text = read(&out);
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some(HEADER));
    let rows: Vec<&str> = lines.collect();
    assert_eq!(rows.len(), 301);
    assert!(rows[0].starts_with("0,-8.5,7.5,"));
    assert!(rows[300].starts_with("300,"));

    let side: serde_json::Value = serde_json::from_str(&read(&out.with_extension("json"))).unwrap();
    for key in ["config", "combiner", "records", "final_theta", "final_loss", "oracle_loss", "oracle_gap", "converged"]
    {
        assert!(side.get(key).is_some(), "sidecar lacks {key}");
    }
    assert_eq!(side["records"], 301);
    assert_eq!(side["config"]["steps"], 300);
    assert_eq!(side["config"]["method"], "imgrad");
}

#[test]
fn toy_run_is_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let a = dir.path().join("a.csv");
    let b = dir.path().join("b.csv");
    for p in [&a, &b] {
        let o = mtlgrad(&["toy-run", "--method", "pcgrad", "--steps", "500", "--init=-8.5,5", "--out", s(p)]);
        assert_eq!(code(&o), 0);
    }
    assert_eq!(std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap());
}

#[test]
fn sidecar_config_reruns_identically() {
    let dir = tempfile::tempdir().unwrap();
    let first = dir.path().join("first.csv");
    let o = mtlgrad(&[
        "toy-run",
        "--method",
        "cagrad",
        "--c",
        "0.3",
        "--steps",
        "200",
        "--weights",
        "0.7,0.3",
        "--out",
        s(&first),
    ]);
    assert_eq!(code(&o), 0);
    let side: serde_json::Value = serde_json::from_str(&read(&first.with_extension("json"))).unwrap();
    let mut cfg = side["config"].clone();
    let second = dir.path().join("second.csv");
    cfg["output"] = serde_json::Value::String(s(&second).into());
    let cfg_path = dir.path().join("cfg.json");
    std::fs::write(&cfg_path, serde_json::to_string(&cfg).unwrap()).unwrap();
    let o = mtlgrad(&["toy-run", "--config", s(&cfg_path)]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    assert_eq!(std::fs::read(&first).unwrap(), std::fs::read(&second).unwrap());
}

#[test]
fn bad_config_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("cfg.json");
    std::fs::write(&cfg, r#"{"method": "imgrad", "learning_rate": 0.1}"#).unwrap();
    let out = dir.path().join("x.csv");
    assert_eq!(code(&mtlgrad(&["toy-run", "--config", s(&cfg), "--out", s(&out)])), 2);
    std::fs::write(&cfg, r#"{"c": -1.0}"#).unwrap();
    assert_eq!(code(&mtlgrad(&["toy-run", "--config", s(&cfg), "--out", s(&out)])), 2);
    assert_eq!(code(&mtlgrad(&["toy-run", "--method", "sgd", "--out", s(&out)])), 2);
    assert_eq!(code(&mtlgrad(&["toy-run", "--weights", "0.5", "--out", s(&out)])), 2);
    assert_eq!(code(&mtlgrad(&["toy-run", "--config", s(&dir.path().join("missing.json"))])), 2);
}

#[test]
fn numeric_blowup_exits_3_with_partial_trace() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("boom.csv");
    let o =
        mtlgrad(&["toy-run", "--method", "ls", "--optimizer", "gd", "--lr", "1e300", "--steps", "5", "--out", s(&out)]);
    assert_eq!(code(&o), 3, "{}", String::from_utf8_lossy(&o.stdout));
    let text = read(&out);
    assert!(text.lines().count() >= 2);
    let side: serde_json::Value = serde_json::from_str(&read(&out.with_extension("json"))).unwrap();
    assert!(side["abort"].is_string());
}

#[test]
fn nash_marks_skipped_steps() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("nash.csv");
    let o = mtlgrad(&["toy-run", "--method", "nash", "--steps", "300", "--out", s(&out)]);
    assert_eq!(code(&o), 0);
    let text = read(&out);
    let mut skipped = 0;
    for row in text.lines().skip(1) {
        let f: Vec<&str> = row.split(',').collect();
        assert_eq!(f.len(), 14);
        if f[13] == "1" {
            skipped += 1;
        } else {
            assert_eq!(f[12], "0", "solved step reports a pareto failure: {row}");
        }
    }
    assert!(skipped > 0);
}

#[test]
fn toy_matrix_rows_and_job_independence() {
    let dir = tempfile::tempdir().unwrap();
    let a = dir.path().join("m1.csv");
    let b = dir.path().join("m2.csv");
    for (p, jobs) in [(&a, "1"), (&b, "2")] {
        let o = mtlgrad(&["toy-matrix", "--methods", "ls,imgrad", "--steps", "2000", "--jobs", jobs, "--out", s(p)]);
        assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    }
    let text = read(&a);
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some("method,a1,a2,init1,init2,final_loss,oracle_loss,gap,converged"));
    let rows: Vec<&str> = lines.collect();
    assert_eq!(rows.len(), 50);
    assert!(rows[..25].iter().all(|r| r.starts_with("ls,")));
    assert!(rows[25..].iter().all(|r| r.starts_with("imgrad,")));
    assert_eq!(text, read(&b));
}

#[test]
fn verify_reports_match_exit_code() {
    let dir = tempfile::tempdir().unwrap();
    for suite in ["mgda", "gradcheck"] {
        let report = dir.path().join(format!("{suite}.json"));
        let o = mtlgrad(&["verify", suite, "--seed", "3", "--report", s(&report)]);
        let v: serde_json::Value = serde_json::from_str(&read(&report)).unwrap();
        assert_eq!(v["suite"], suite);
        assert_eq!(v["seed"], 3);
        let passed = v["passed"].as_bool().unwrap();
        assert_eq!(code(&o), if passed { 0 } else { 1 });
        let stdout = String::from_utf8_lossy(&o.stdout);
        assert!(stdout.lines().any(|l| l.starts_with("[PASS]") || l.starts_with("[FAIL]")));
    }
    assert_eq!(code(&mtlgrad(&["verify", "nonsense"])), 2);
}

#[test]
fn stats_histograms_and_progress() {
    let dir = tempfile::tempdir().unwrap();
    let trace = dir.path().join("imgrad.csv");
    assert_eq!(code(&mtlgrad(&["toy-run", "--method", "imgrad", "--steps", "400", "--out", s(&trace)])), 0);
    let stats = dir.path().join("stats");
    let o = mtlgrad(&["stats", s(&trace), "--out-dir", s(&stats), "--bins", "10"]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));

    let progress = read(&stats.join("progress.csv"));
    let mut lines = progress.lines();
    assert_eq!(lines.next(), Some("trace,step,r1,r2"));
    assert_eq!(lines.next(), Some("imgrad,0,1,1"));
    assert_eq!(progress.lines().count(), 402);

    let mu = read(&stats.join("mu_hist.csv"));
    let mut total = 0;
    for row in mu.lines().skip(1) {
        let f: Vec<&str> = row.split(',').collect();
        let lo: f64 = f[1].parse().unwrap();
        let hi: f64 = f[2].parse().unwrap();
        assert!((0.0..=1.0).contains(&lo) && (0.0..=1.0).contains(&hi));
        total += f[3].parse::<usize>().unwrap();
    }
    assert_eq!(mu.lines().count(), 11);
    assert!(total > 0 && total <= 401);
    assert_eq!(read(&stats.join("similarity_hist.csv")).lines().count(), 21);
    assert_eq!(read(&stats.join("imbalance_hist.csv")).lines().count(), 11);
}

#[test]
fn stats_rejects_foreign_csv() {
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.csv");
    std::fs::write(&bad, "a,b\n1,2\n").unwrap();
    assert_eq!(code(&mtlgrad(&["stats", s(&bad), "--out-dir", s(dir.path())])), 2);
}

#[test]
fn oracle_reproduces_fixture() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("oracle.txt");
    assert_eq!(code(&mtlgrad(&["oracle", "--out", s(&out)])), 0);
    let fresh = read(&out);
    assert_eq!(fresh, include_str!("../fixtures/oracle.txt"));
    assert_eq!(parse_oracle_fixtures(&fresh).unwrap().len(), 5);
}
