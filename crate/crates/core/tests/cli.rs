use std::path::Path;
use std::process::{Command, Output};

use distagg::distributions::{ForecastDist, NormalDist};
use distagg::numeric::seeded_rng;
use rand_distr::{Distribution, StandardNormal};
use serde_json::{json, Value};

fn distagg(args: &[&str], dir: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_distagg"))
        .args(args)
        .current_dir(dir)
        .output()
        .unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn write(dir: &Path, name: &str, text: &str) {
    std::fs::write(dir.join(name), text).unwrap();
}

fn minimal_config() -> Value {
    json!({
        "scenario": {"id": "S1", "n_train": 300, "n_valid": 100, "n_test": 200},
        "variants": ["DRN"],
        "methods": ["V0eq"],
        "max_members": 2,
        "sizes": [2],
        "repetitions": 1,
        "net": {"hidden_sizes": [8], "max_epochs": 3}
    })
}

#[test]
fn simulate_minimal_config() {
    let dir = tempfile::tempdir().unwrap();
    write(dir.path(), "config.json", &minimal_config().to_string());
    let out = distagg(&["simulate", "--config", "config.json", "--out", "run"], dir.path());
    assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));
    assert_eq!(stdout(&out).trim(), "run");
    let results = std::fs::read_to_string(dir.path().join("run/results.csv")).unwrap();
    let rows: Vec<&str> = results.lines().skip(1).collect();
    assert_eq!(rows.len(), 2);
    assert!(rows[0].starts_with("S1,DRN,DE,2,0,") && rows[1].starts_with("S1,DRN,V0eq,2,0,"));
}

#[test]
fn simulate_is_idempotent_apart_from_timestamps() {
    let dir = tempfile::tempdir().unwrap();
    write(dir.path(), "config.json", &minimal_config().to_string());
    for out in ["a", "b"] {
        let o = distagg(&["--threads", "1", "simulate", "--config", "config.json", "--seed", "5", "--out", out], dir.path());
        assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    }
    for file in ["results.csv", "coefficients.csv", "pit.csv", "summary.csv", "summary.json"] {
        let a = std::fs::read(dir.path().join("a").join(file)).unwrap();
        let b = std::fs::read(dir.path().join("b").join(file)).unwrap();
        assert_eq!(a, b, "{file}");
    }
    let meta: Value = serde_json::from_slice(&std::fs::read(dir.path().join("a/run_meta.json")).unwrap()).unwrap();
    assert_eq!(meta["config"]["scenario"]["seed"], 5);
    assert_eq!(meta["config"]["net"]["seed"], 5);
}

#[test]
fn simulate_overrides_are_recorded() {
    let dir = tempfile::tempdir().unwrap();
    write(dir.path(), "config.json", &minimal_config().to_string());
    let o = distagg(
        &["simulate", "--config", "config.json", "--overrides", "repetitions=3", "scenario.n_test=50", "--out", "run"],
        dir.path(),
    );
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let meta: Value = serde_json::from_slice(&std::fs::read(dir.path().join("run/run_meta.json")).unwrap()).unwrap();
    assert_eq!(meta["config"]["repetitions"], 3);
    assert_eq!(meta["repetition_seeds"].as_array().unwrap().len(), 3);
}

#[test]
fn simulate_rejects_bad_configs_with_the_key() {
    let dir = tempfile::tempdir().unwrap();
    let mut config = minimal_config();
    config["methods"] = json!(["V0eq", "Vbogus"]);
    write(dir.path(), "bad.json", &config.to_string());
    let o = distagg(&["simulate", "--config", "bad.json"], dir.path());
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("methods"), "{}", stderr(&o));

    write(dir.path(), "ok.json", &minimal_config().to_string());
    let o = distagg(&["simulate", "--config", "ok.json", "--overrides", "net.depth=3"], dir.path());
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("net.depth"));
    let o = distagg(&["simulate", "--config", "missing.json"], dir.path());
    assert_eq!(o.status.code(), Some(2));
    let o = distagg(&["simulate", "--threads", "0"], dir.path());
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn simulate_reports_failed_training_and_succeeds() {
    let dir = tempfile::tempdir().unwrap();
    write(dir.path(), "config.json", &minimal_config().to_string());
    let o = distagg(
        &["simulate", "--config", "config.json", "--overrides", "net.learning_rate=1e300", "--out", "run"],
        dir.path(),
    );
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    assert!(stderr(&o).contains("failed"), "{}", stderr(&o));
    let results = std::fs::read_to_string(dir.path().join("run/results.csv")).unwrap();
    assert!(results.lines().skip(1).all(|l| l.ends_with(",,,,,")));
}

#[test]
fn aggregate_examples() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path();
    write(p, "pair.json", r#"[{"family":"normal","mu":7,"sigma":1},{"family":"normal","mu":10,"sigma":1}]"#);
    let o = distagg(&["aggregate", "pair.json", "--method", "V0eq"], p);
    assert_eq!(o.status.code(), Some(0));
    assert_eq!(stdout(&o).trim(), r#"{"family":"normal","mu":8.5,"sigma":1.0}"#);

    write(
        p,
        "hen.json",
        r#"{"members":[{"family":"histogram","edges":[0,1,2],"probs":[0.5,0.5]},
                       {"family":"histogram","edges":[0,1,2],"probs":[0.25,0.75]}]}"#,
    );
    let o = distagg(&["aggregate", "hen.json", "--method", "LP", "--out", "lp.json"], p);
    assert_eq!(o.status.code(), Some(0));
    let lp: Value = serde_json::from_slice(&std::fs::read(p.join("lp.json")).unwrap()).unwrap();
    assert_eq!(lp, json!({"family": "histogram", "edges": [0.0, 1.0, 2.0], "probs": [0.375, 0.625]}));

    let single = r#"[{"family":"bernstein","coeffs":[0.0,0.5,2.0]}]"#;
    write(p, "single.json", single);
    let o = distagg(&["aggregate", "single.json", "--method", "V0eq"], p);
    let back: ForecastDist = serde_json::from_str(&stdout(&o)).unwrap();
    let input: Vec<ForecastDist> = serde_json::from_str(single).unwrap();
    assert_eq!(back, input[0]);
}

#[test]
fn aggregate_usage_errors() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path();
    write(p, "mixed.json", r#"[{"family":"normal","mu":7,"sigma":1},{"family":"bernstein","coeffs":[0,1]}]"#);
    assert_eq!(distagg(&["aggregate", "mixed.json", "--method", "LP"], p).status.code(), Some(2));
    write(p, "pair.json", r#"[{"family":"normal","mu":7,"sigma":1},{"family":"normal","mu":10,"sigma":1}]"#);
    for method in ["V0w", "Vaw", "Vaeq"] {
        let o = distagg(&["aggregate", "pair.json", "--method", method], p);
        assert_eq!(o.status.code(), Some(2), "{method}");
    }
    let o = distagg(&["aggregate", "pair.json", "--method", "Vfoo"], p);
    assert_eq!(o.status.code(), Some(2));
    write(p, "coeffs.json", r#"{"variant":"V0w","a":0.0,"w0":0.4,"n":3}"#);
    let o = distagg(&["aggregate", "pair.json", "--method", "V0w", "--coeffs", "coeffs.json"], p);
    assert_eq!(o.status.code(), Some(2), "coefficients for another ensemble size");
}

/// Validation data whose members are twice as wide as the truth.
fn write_validation(p: &Path, n: usize) {
    let mut rng = seeded_rng(1);
    let mut ens = Vec::new();
    let mut obs = String::from("y\n");
    for i in 0..n {
        let mu = (i % 7) as f64 * 0.1;
        let z: f64 = StandardNormal.sample(&mut rng);
        obs.push_str(&format!("{}\n", mu + z));
        ens.push(json!([
            {"family": "normal", "mu": mu, "sigma": 2.0},
            {"family": "normal", "mu": mu, "sigma": 2.0}
        ]));
    }
    write(p, "valid.json", &Value::Array(ens).to_string());
    write(p, "valid.csv", &obs);
}

#[test]
fn aggregate_estimates_saves_and_reuses_coefficients() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path();
    write_validation(p, 500);
    write(p, "pair.json", r#"[{"family":"normal","mu":0,"sigma":2},{"family":"normal","mu":0,"sigma":2}]"#);
    let o = distagg(
        &["aggregate", "pair.json", "--method", "V0w", "--valid-ensembles", "valid.json", "--valid-obs", "valid.csv", "--save-coeffs", "c.json"],
        p,
    );
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let estimated = stdout(&o);
    let stored: Value = serde_json::from_slice(&std::fs::read(p.join("c.json")).unwrap()).unwrap();
    assert_eq!(stored["variant"], "V0w");
    assert_eq!(stored["n"], 2);
    assert_eq!(stored["a"], 0.0);
    assert!(stored["w0"].as_f64().unwrap() < 0.5);
    assert!(stored["validation_crps"].as_f64().is_some());
    let o = distagg(&["aggregate", "pair.json", "--method", "V0w", "--coeffs", "c.json"], p);
    assert_eq!(o.status.code(), Some(0));
    assert_eq!(stdout(&o), estimated);

    // A list of ensembles aggregates to a list of forecasts.
    let o = distagg(&["aggregate", "valid.json", "--method", "V0w", "--coeffs", "c.json"], p);
    let list: Vec<ForecastDist> = serde_json::from_str(&stdout(&o)).unwrap();
    assert_eq!(list.len(), 500);
}

#[test]
fn evaluate_examples() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path();
    let n = 10_000;
    let std_normal = serde_json::to_string(&ForecastDist::from(NormalDist::standard())).unwrap();
    let forecasts = format!("[{}]", vec![std_normal; n].join(","));
    write(p, "f.json", &forecasts);
    write(p, "zeros.csv", &format!("y\n{}", "0\n".repeat(n)));
    let o = distagg(&["evaluate", "f.json", "zeros.csv", "--out", "ev"], p);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let mut report = csv::Reader::from_path(p.join("ev/report.csv")).unwrap();
    let headers = report.headers().unwrap().clone();
    let row = report.records().next().unwrap().unwrap();
    let get = |name: &str| row[headers.iter().position(|h| h == name).unwrap()].parse::<f64>().unwrap();
    assert!((get("mean_crps") - 0.233_695).abs() < 1e-6);
    assert_eq!(get("n_cases"), n as f64);
    let cases = std::fs::read_to_string(p.join("ev/cases.csv")).unwrap();
    assert!(cases.starts_with("case,y,crps,pit,lower,upper,median_error,covered\n"));
    assert_eq!(cases.lines().count(), n + 1);

    let mut rng = seeded_rng(9);
    let ys: String = (0..n).map(|_| { let z: f64 = StandardNormal.sample(&mut rng); format!("{z}\n") }).collect();
    write(p, "normal.csv", &format!("y\n{ys}"));
    let o = distagg(&["evaluate", "f.json", "normal.csv"], p);
    let text = stdout(&o);
    let mut r = csv::Reader::from_reader(text.as_bytes());
    let headers = r.headers().unwrap().clone();
    let row = r.records().next().unwrap().unwrap();
    let coverage: f64 = row[headers.iter().position(|h| h == "coverage").unwrap()].parse().unwrap();
    assert!((coverage - 19.0 / 21.0).abs() < 0.01, "{coverage}");
}

#[test]
fn evaluate_point_like_forecasts() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path();
    let ys = [0.5, -1.0, 3.0];
    let f: Vec<Value> = ys.iter().map(|y| json!({"family": "normal", "mu": y, "sigma": 1e-9})).collect();
    write(p, "f.json", &Value::Array(f).to_string());
    write(p, "y.csv", "y\n0.5\n-1.0\n3.0\n");
    let o = distagg(&["evaluate", "f.json", "y.csv"], p);
    let line = stdout(&o).lines().nth(1).unwrap().to_string();
    let mean_crps: f64 = line.split(',').nth(1).unwrap().parse().unwrap();
    assert!(mean_crps.abs() < 1e-8);
}

#[test]
fn evaluate_rejects_count_mismatch() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path();
    write(p, "f.json", r#"[{"family":"normal","mu":0,"sigma":1}]"#);
    write(p, "y.csv", "y\n0\n1\n");
    assert_eq!(distagg(&["evaluate", "f.json", "y.csv"], p).status.code(), Some(2));
    write(p, "x.csv", "x\n0\n");
    assert_eq!(distagg(&["evaluate", "f.json", "x.csv"], p).status.code(), Some(2));
}

#[test]
fn report_writes_table_and_chart() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path();
    write(p, "config.json", &minimal_config().to_string());
    assert_eq!(distagg(&["simulate", "--config", "config.json", "--out", "run"], p).status.code(), Some(0));
    let o = distagg(&["report", "--input", "run", "--out", "fig"], p);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let table = std::fs::read_to_string(p.join("fig/crpss_by_n.csv")).unwrap();
    assert!(table.starts_with("scenario,variant,method,n,crpss_median,"));
    assert_eq!(table.lines().count(), 3);
    assert!(std::fs::read_to_string(p.join("fig/crpss_by_n.svg")).unwrap().contains("</svg>"));
    assert_eq!(distagg(&["report", "--input", "nowhere"], p).status.code(), Some(2));
}

#[test]
fn help_exits_cleanly() {
    let dir = tempfile::tempdir().unwrap();
    let o = distagg(&["--help"], dir.path());
    assert_eq!(o.status.code(), Some(0));
    assert!(stdout(&o).contains("simulate"));
    assert_eq!(distagg(&[], dir.path()).status.code(), Some(2));
}
