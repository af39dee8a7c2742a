use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;
use tempfile::TempDir;

fn fbkit(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_fbkit"))
        .args(args)
        .env_remove("FBKIT_THREADS")
        .output()
        .expect("binary runs")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exited normally")
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn write(dir: &Path, name: &str, text: &str) -> PathBuf {
    let p = dir.join(name);
    fs::write(&p, text).unwrap();
    p
}

fn json(path: &Path) -> Value {
    serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap()
}

/// A 6×4 least-squares problem with an ℓ1 term, read from CSV files.
fn small_lasso(dir: &Path, extra: &str) -> PathBuf {
    write(
        dir,
        "A.csv",
        "1,0.2,0,0.1\n0,1,0.3,0\n0.2,0,1,0.4\n0.1,0.3,0,1\n0.5,0,0.2,0\n0,0.1,0,0.6\n",
    );
    write(dir, "y.csv", "1.0\n-0.5\n0.2\n0.9\n0.4\n-0.1\n");
    let body = format!(
        r#"{{
  "problem": {{ "files": {{
    "operator": {{ "matrix": "A.csv" }},
    "data": "y.csv",
    "regularizer": {{ "kind": "l1" }},
    "lambda": 0.2
  }} }}{extra}
}}"#
    );
    write(dir, "config.json", &body)
}

fn run_in(dir: &Path, config: &Path, out: &str, cmd: &str) -> Output {
    fbkit(&["--config", config.to_str().unwrap(), "--out", dir.join(out).to_str().unwrap(), cmd])
}

#[test]
fn solve_minimal_lasso_writes_files() {
    let tmp = TempDir::new().unwrap();
    let cfg = small_lasso(tmp.path(), "");
    let o = run_in(tmp.path(), &cfg, "out", "solve");
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let out = tmp.path().join("out");
    let trace = fs::read_to_string(out.join("trace_fb.csv")).unwrap();
    assert_eq!(trace.lines().next().unwrap(), "k,a,b,gamma,obj,err,step_norm,sig_hash,sig_desc");
    let summary = json(&out.join("summary.json"));
    let run = &summary["runs"][0];
    assert_eq!(run["label"], "fb");
    assert_eq!(run["stop_reason"], "step_tol");
    assert!(run["error"].as_f64().unwrap() < 1e-8);
    assert!(run["rates"]["rho"].as_f64().unwrap() < 1.0);
    assert!(out.join("effective_config.json").exists());
}

#[test]
fn max_iter_zero_gives_one_record() {
    let tmp = TempDir::new().unwrap();
    let cfg = small_lasso(tmp.path(), r#", "stop": { "max_iter": 0 }"#);
    let o = run_in(tmp.path(), &cfg, "out", "solve");
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let trace = fs::read_to_string(tmp.path().join("out/trace_fb.csv")).unwrap();
    assert_eq!(trace.lines().count(), 2);
    assert_eq!(json(&tmp.path().join("out/summary.json"))["runs"][0]["iterations"], 0);
}

#[test]
fn malformed_and_unknown_keys_exit_one() {
    let tmp = TempDir::new().unwrap();
    let bad = write(tmp.path(), "bad.json", "{ \"problem\": ");
    let o = run_in(tmp.path(), &bad, "out", "solve");
    assert_eq!(code(&o), 1);
    assert!(stderr(&o).contains("config error"));

    let cfg = small_lasso(tmp.path(), r#", "stopping": { "max_iter": 3 }"#);
    let o = run_in(tmp.path(), &cfg, "out", "solve");
    assert_eq!(code(&o), 1);
    assert!(stderr(&o).contains("unknown field"), "{}", stderr(&o));

    let o = fbkit(&["--out", tmp.path().join("o").to_str().unwrap(), "solve"]);
    assert_eq!(code(&o), 1);
    let o = fbkit(&["frobnicate"]);
    assert_eq!(code(&o), 1);
}

#[test]
fn divergent_schedule_exits_two() {
    let tmp = TempDir::new().unwrap();
    write(tmp.path(), "y.csv", "1,2,3\n");
    let cfg = write(
        tmp.path(),
        "config.json",
        r#"{
  "problem": { "files": {
    "operator": { "identity": 3 },
    "data": "y.csv",
    "regularizer": { "kind": "l1" },
    "lambda": 1e-12
  } },
  "methods": [ { "label": "heavy", "inertia": { "rule": "constant", "a": 1.0, "b": 1.0 }, "gamma_over_beta": 1.99 } ],
  "stop": { "max_iter": 100000 },
  "analysis": { "identification": false, "rates": false }
}"#,
    );
    let o = run_in(tmp.path(), &cfg, "out", "solve");
    assert_eq!(code(&o), 2, "{}", stderr(&o));
    let summary = json(&tmp.path().join("out/summary.json"));
    assert!(summary["runs"][0]["diverged_at"].as_u64().unwrap() > 0);
}

#[test]
fn echoed_config_reproduces_outputs() {
    let tmp = TempDir::new().unwrap();
    let cfg = small_lasso(tmp.path(), r#", "methods": [ { "label": "fista", "inertia": { "rule": "fista_q", "q": 50 } } ]"#);
    assert_eq!(code(&run_in(tmp.path(), &cfg, "a", "solve")), 0);
    let echo = tmp.path().join("a/effective_config.json");
    let o = run_in(tmp.path(), &echo, "b", "solve");
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    for f in ["summary.json", "trace_fista.csv", "effective_config.json"] {
        assert_eq!(fs::read(tmp.path().join("a").join(f)).unwrap(), fs::read(tmp.path().join("b").join(f)).unwrap(), "{f}");
    }
    // every default is written out
    let e = json(&echo);
    assert_eq!(e["stop"]["max_iter"], 50000);
    assert_eq!(e["methods"][0]["gamma_over_beta"], 1.0);
    assert_eq!(e["analysis"]["bounds"], true);
}

#[test]
fn rates_curve_anchors_for_eta_three_quarters() {
    let tmp = TempDir::new().unwrap();
    let cfg = write(tmp.path(), "r.json", r#"{ "rates": { "eta_bar": 0.75 } }"#);
    let o = run_in(tmp.path(), &cfg, "out", "rates");
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let curve = fs::read_to_string(tmp.path().join("out/curve.csv")).unwrap();
    let rows: Vec<(f64, f64)> = curve
        .lines()
        .skip(1)
        .map(|l| {
            let (a, r) = l.split_once(',').unwrap();
            (a.parse().unwrap(), r.parse().unwrap())
        })
        .collect();
    let at = |a: f64| rows.iter().find(|r| (r.0 - a).abs() < 1e-12).unwrap().1;
    assert!((at(0.0) - 0.75).abs() < 1e-12);
    assert!((at(1.0 / 3.0) - 0.5).abs() < 1e-12);
    assert!((at(1.0) - 0.75f64.sqrt()).abs() < 1e-12);
    let rates = json(&tmp.path().join("out/rates.json"));
    let region = rates["region"].as_array().unwrap();
    assert!(region[1]["feasible_cells"].as_u64() < region[0]["feasible_cells"].as_u64());
}

#[test]
fn rates_outside_analyzed_regime_is_marked() {
    let tmp = TempDir::new().unwrap();
    let cfg = write(
        tmp.path(),
        "c.json",
        r#"{ "problem": { "instance": { "structure": { "kind": "nuclear", "rows": 5, "cols": 5, "rank": 1 }, "m": 22, "seed": 3 } },
            "rates": { "a": 0.3, "b": 0.1 }, "analysis": { "curve": false, "region": false } }"#,
    );
    let o = run_in(tmp.path(), &cfg, "out", "rates");
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let rates = json(&tmp.path().join("out/rates.json"));
    assert_eq!(rates["report"]["regime"], "outside analyzed regime");
}

#[test]
fn region_counts_shrink_with_the_step() {
    let tmp = TempDir::new().unwrap();
    let o = fbkit(&["--out", tmp.path().join("out").to_str().unwrap(), "region"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let r = json(&tmp.path().join("out/region.json"));
    assert!(r[1]["feasible_cells"].as_u64() < r[0]["feasible_cells"].as_u64());
    let csv = fs::read_to_string(tmp.path().join("out/region_gamma1.csv")).unwrap();
    assert_eq!(csv.lines().next().unwrap(), "a,b,branch,feasible");
    assert_eq!(csv.lines().count(), 201 * 201 + 1);
}

#[test]
fn bounds_on_lasso_preset() {
    let tmp = TempDir::new().unwrap();
    let o = fbkit(&["--preset", "lasso", "--out", tmp.path().join("out").to_str().unwrap(), "bounds"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let b = json(&tmp.path().join("out/bounds.json"));
    let id = &b["identification"];
    let k = id["k_observed"].as_f64().unwrap();
    assert!(k <= id["k_bound_separable"].as_f64().unwrap());
    assert_eq!(id["general_hypothesis_verified"], false);
    assert!(b["required_measurements"].as_f64().unwrap() > 48.0);
}

#[test]
fn experiment_presets_and_seed_override() {
    let o = fbkit(&["experiment", "--list-presets"]);
    assert_eq!(code(&o), 0);
    let listing = String::from_utf8(o.stdout).unwrap();
    assert_eq!(listing.lines().count(), 5);
    for name in ["lasso", "group-lasso", "linf", "tv", "nuclear"] {
        assert!(listing.lines().any(|l| l.starts_with(&format!("{name}\t"))));
    }
    let tmp = TempDir::new().unwrap();
    let o = fbkit(&["--preset", "ridge", "--out", tmp.path().to_str().unwrap(), "experiment"]);
    assert_eq!(code(&o), 1);
    assert!(stderr(&o).contains("unknown preset"));

    let o = fbkit(&["--preset", "lasso", "--seed", "7", "--out", tmp.path().join("s").to_str().unwrap(), "bounds"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    assert_eq!(json(&tmp.path().join("s/effective_config.json"))["problem"]["instance"]["seed"], 7);
}

#[test]
fn experiment_on_lasso_preset_matches_fb_rate() {
    let tmp = TempDir::new().unwrap();
    let out = tmp.path().join("out");
    let o = fbkit(&["--preset", "lasso", "--out", out.to_str().unwrap(), "experiment"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let e = json(&out.join("experiment.json"));
    let fb = e["reports"].as_array().unwrap().iter().find(|r| r["method"]["label"] == "fb").unwrap();
    assert!(fb["slope_rel_error"].as_f64().unwrap() <= 0.05);
    let plot = fs::read_to_string(out.join("plot_fb.csv")).unwrap();
    assert_eq!(plot.lines().next().unwrap(), "k,observed,predicted");
    assert_eq!(json(&out.join("effective_config.json"))["methods"].as_array().unwrap().len(), 5);
}

#[test]
fn thread_cap_is_validated() {
    let tmp = TempDir::new().unwrap();
    let o = Command::new(env!("CARGO_BIN_EXE_fbkit"))
        .args(["--out", tmp.path().to_str().unwrap(), "region"])
        .env("FBKIT_THREADS", "zero")
        .output()
        .unwrap();
    assert_eq!(code(&o), 1);
    let o = Command::new(env!("CARGO_BIN_EXE_fbkit"))
        .args(["--out", tmp.path().to_str().unwrap(), "region"])
        .env("FBKIT_THREADS", "1")
        .output()
        .unwrap();
    assert_eq!(code(&o), 0, "{}", stderr(&o));
}

#[test]
fn no_temp_files_left_behind() {
    let tmp = TempDir::new().unwrap();
    let cfg = small_lasso(tmp.path(), "");
    assert_eq!(code(&run_in(tmp.path(), &cfg, "out", "solve")), 0);
    let mut names: Vec<_> = fs::read_dir(tmp.path().join("out"))
        .unwrap()
        .map(|e| e.unwrap().file_name().into_string().unwrap())
        .collect();
    names.sort();
    assert_eq!(names, ["effective_config.json", "summary.json", "trace_fb.csv"]);
}
