use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn nakasim(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_nakasim")).args(args).output().expect("binary runs")
}

fn csv_rows(text: &str) -> Vec<Vec<String>> {
    text.lines().map(|l| l.split(',').map(str::to_string).collect()).collect()
}

const SMALL: &str = r#"{
  "sim": { "n_nodes": 5, "lambda_hon": 0.49, "lambda_adv": 0.01, "tau": 0.1, "capacity": 200.0, "nu": 0, "horizon_slots": 3000 },
  "attack": { "strategy": "teaser" },
  "repeat": 2,
  "seed_stride": 7,
  "output": { "trace": true, "analyze": true }
}"#;

fn write_config(dir: &Path, text: &str) -> String {
    let p = dir.join("cfg.json");
    fs::write(&p, text).unwrap();
    p.to_str().unwrap().to_string()
}

#[test]
fn region_rows_and_linearity() {
    let one = nakasim(&["region", "--capacity", "1", "--delta-h", "0", "--beta-grid", "0:0.5:0.05"]);
    assert!(one.status.success());
    let rows = csv_rows(&String::from_utf8(one.stdout).unwrap());
    assert_eq!(rows[0], ["beta", "lambda_max", "c_tilde_star", "model", "status"]);
    let cap: Vec<&Vec<String>> = rows[1..].iter().filter(|r| r[3] == "bounded-capacity").collect();
    assert_eq!(cap.len(), 11);
    let lam: Vec<f64> = cap[..10].iter().map(|r| r[1].parse().unwrap()).collect();
    assert!(lam.windows(2).all(|w| w[1] < w[0]));
    assert_eq!(cap[10][4], "insecure");
    assert!(rows[1..].iter().any(|r| r[3] == "bounded-delay-reference"));

    let two = nakasim(&["region", "--capacity", "2", "--beta-grid", "0:0.45:0.05"]);
    let rows2 = csv_rows(&String::from_utf8(two.stdout).unwrap());
    for (a, b) in lam.iter().zip(rows2[1..11].iter()) {
        let b: f64 = b[1].parse().unwrap();
        assert!((b / a - 2.0).abs() < 1e-6, "{a} {b}");
    }
}

#[test]
fn simulate_is_deterministic_and_analyzable() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), SMALL);
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    for out in [&a, &b] {
        let o = nakasim(&["simulate", "--config", &cfg, "--seed", "3", "--out", out.to_str().unwrap()]);
        assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    }
    for f in ["trace-3.jsonl", "trace-10.jsonl", "metrics.csv"] {
        assert_eq!(fs::read(a.join(f)).unwrap(), fs::read(b.join(f)).unwrap(), "{f}");
    }
    let metrics = csv_rows(&fs::read_to_string(a.join("metrics.csv")).unwrap());
    assert_eq!(metrics.len(), 3);
    assert_eq!(metrics[0][0], "seed");
    assert_eq!(fs::read_to_string(a.join("nodes.csv")).unwrap().lines().count(), 1 + 2 * 5);

    let trace = a.join("trace-3.jsonl");
    let o = nakasim(&["analyze", "--trace", trace.to_str().unwrap(), "--nu", "0", "--c-tilde", "20", "--kcp", "50"]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stdout));
    // One CSV row per non-empty slot.
    let non_empty: std::collections::BTreeSet<u64> = fs::read_to_string(&trace)
        .unwrap()
        .lines()
        .filter(|l| l.contains(r#""kind":"Bpo""#))
        .map(|l| {
            let v: Vec<&str> = l.split(r#""slot":"#).collect();
            v[1].split(|c: char| !c.is_ascii_digit()).next().unwrap().parse().unwrap()
        })
        .collect();
    let pivots = fs::read_to_string(a.join("trace-3.pivots.csv")).unwrap();
    assert_eq!(pivots.lines().count(), non_empty.len() + 1);

    // Doctored: an idle-with-candidates witness makes the audit fail.
    let mut text = fs::read_to_string(&trace).unwrap();
    text.push_str("{\"kind\":\"IdleWithCandidates\",\"slot\":2999,\"node\":0}\n");
    let bad = dir.path().join("bad.jsonl");
    fs::write(&bad, text).unwrap();
    let o = nakasim(&["analyze", "--trace", bad.to_str().unwrap(), "--nu", "0", "--c-tilde", "20", "--kcp", "0"]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn config_errors_name_the_field() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), r#"{"sim": {"capacity": 1, "duration": 10, "tau": -1}}"#);
    let o = nakasim(&["simulate", "--config", &cfg, "--out", dir.path().join("o").to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("sim.tau"));
    let cfg = write_config(dir.path(), r#"{"sim": {"capacity": 1, "duration": 10}, "attack": {"strategy": "nope"}}"#);
    let o = nakasim(&["simulate", "--config", &cfg, "--out", dir.path().join("o").to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("attack.strategy"));
}

#[test]
fn usage_errors_exit_one() {
    assert_eq!(nakasim(&[]).status.code(), Some(1));
    assert_eq!(nakasim(&["region", "--capacity", "1", "--beta-grid", "0.1:0:1"]).status.code(), Some(1));
    assert_eq!(nakasim(&["attack-frontier", "--attack", "bogus", "--capacity-grid", "1"]).status.code(), Some(1));
    assert_eq!(nakasim(&["analyze", "--trace", "/nonexistent.jsonl", "--nu", "0", "--c-tilde", "1", "--kcp", "0"]).status.code(), Some(1));
    assert_eq!(nakasim(&["--help"]).status.code(), Some(0));
}

#[test]
fn frontier_csv_columns() {
    let o = nakasim(&[
        "attack-frontier",
        "--attack",
        "teaser",
        "--capacity-grid",
        "1,2",
        "--seeds",
        "2",
        "--nodes",
        "5",
        "--duration",
        "200",
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let rows = csv_rows(&String::from_utf8(o.stdout).unwrap());
    assert_eq!(
        rows[0],
        [
            "capacity",
            "attack",
            "lambda_grwth",
            "lambda_grwth_lo",
            "lambda_grwth_hi",
            "beta_threshold",
            "lambda_spv",
            "lambda_grwth_spv",
            "beta_threshold_spv"
        ]
    );
    assert_eq!(rows.len(), 3);
    for r in &rows[1..] {
        let g: f64 = r[2].parse().unwrap();
        let beta: f64 = r[5].parse().unwrap();
        assert!((beta - g / (g + 1.0)).abs() < 1e-12);
        assert_eq!(r[6], "0.5");
    }
}
