use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn otrsens(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_otrsens")).args(args).output().expect("binary runs")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exit code")
}

fn write_config(dir: &Path, name: &str, body: &str) -> String {
    let p = dir.join(name);
    fs::write(&p, body).unwrap();
    p.to_string_lossy().into_owned()
}

const SMALL: &str = r#"{"replicates": 2, "n": 300, "seed": 4,
    "nuisance": {"n_mc": 200},
    "truth": {"grid": 20, "u_nodes": 32},
    "learner": {"max_iter": 300}}"#;

#[test]
fn usage_errors_exit_one() {
    assert_eq!(code(&otrsens(&[])), 1);
    assert_eq!(code(&otrsens(&["bogus"])), 1);
    assert_eq!(code(&otrsens(&["scenario", "--out", "x"])), 1);
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("o");
    let out = out.to_str().unwrap();
    assert_eq!(code(&otrsens(&["scenario", "--config", "/nonexistent/cfg.json", "--out", out])), 1);
    let bad = write_config(dir.path(), "bad.json", r#"{"replicates": 1, "colour": "red"}"#);
    assert_eq!(code(&otrsens(&["scenario", "--config", &bad, "--out", out])), 1);
    let ok = write_config(dir.path(), "ok.json", SMALL);
    assert_eq!(code(&otrsens(&["scenario", "--config", &ok, "--out", out, "--jobs", "0"])), 1);
}

#[test]
fn help_and_version_exit_zero() {
    let h = otrsens(&["--help"]);
    assert_eq!(code(&h), 0);
    let text = String::from_utf8_lossy(&h.stdout);
    for sub in ["gen", "fit", "scenario", "sweep", "traintest", "oracle-check"] {
        assert!(text.contains(sub), "{sub} missing from help");
    }
    assert_eq!(code(&otrsens(&["--version"])), 0);
}

#[test]
fn gen_then_fit() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "gen.json", SMALL);
    let gen_out = dir.path().join("gen");
    let o = otrsens(&["gen", "--config", &cfg, "--out", gen_out.to_str().unwrap()]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let data = fs::read_to_string(gen_out.join("data.csv")).unwrap();
    assert_eq!(data.lines().count(), 301);
    assert_eq!(fs::read_to_string(gen_out.join("truth.csv")).unwrap().lines().next(), Some("stratum,u,a_minus,a_plus"));
    assert!(gen_out.join("config.json").exists());

    let fit_cfg = write_config(
        dir.path(),
        "fit.json",
        r#"{"nuisance": {"n_mc": 200}, "learner": {"max_iter": 300}, "fit": {"data": "gen/data.csv"}}"#,
    );
    let fit_out = dir.path().join("fit");
    let o = otrsens(&["fit", "--config", &fit_cfg, "--out", fit_out.to_str().unwrap()]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    for m in ["OWL", "IVT", "IPW", "MR"] {
        let w = fs::read_to_string(fit_out.join(format!("weights_{m}.csv"))).unwrap();
        assert_eq!(w.lines().count(), 301);
    }
    let policies: serde_json::Value = serde_json::from_str(&fs::read_to_string(fit_out.join("policies.json")).unwrap()).unwrap();
    assert_eq!(policies.as_array().unwrap().len(), 4);
}

#[test]
fn scenario_writes_tables() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "s.json", SMALL);
    let out = dir.path().join("s");
    let o = otrsens(&["scenario", "--config", &cfg, "--out", out.to_str().unwrap(), "--jobs", "2"]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let flat = fs::read_to_string(out.join("value_estimates.csv")).unwrap();
    assert!(flat.starts_with("method,alpha_minus,alpha_plus,scenario,estimate,se,n,seed\n"));
    assert_eq!(flat.lines().count(), 1 + 2 * 2);
    let status: serde_json::Value = serde_json::from_str(&fs::read_to_string(out.join("status.json")).unwrap()).unwrap();
    assert_eq!(status["valid"], true);
    assert_eq!(status["failed"], 0);
}

#[test]
fn too_many_failures_exit_two() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        "sw.json",
        r#"{"replicates": 1, "n": 300, "seed": 1,
            "nuisance": {"n_mc": 200},
            "truth": {"grid": 20, "u_nodes": 32},
            "learner": {"max_iter": 300},
            "scenario": {"methods": ["IPW"]},
            "sweep": {"grid_minus": [-8.0], "grid_plus": [1.0]}}"#,
    );
    let out = dir.path().join("sw");
    let o = otrsens(&["sweep", "--config", &cfg, "--out", out.to_str().unwrap()]);
    assert_eq!(code(&o), 2, "{}", String::from_utf8_lossy(&o.stderr));
    let failures = fs::read_to_string(out.join("failures.csv")).unwrap();
    assert!(failures.lines().count() >= 2);
}

#[test]
fn oracle_check_passes() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "o.json", r#"{"oracle": {"n": 4000, "seeds": 20}}"#);
    let out = dir.path().join("o");
    let o = otrsens(&["oracle-check", "--config", &cfg, "--out", out.to_str().unwrap()]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stdout));
    assert!(out.join("identification.csv").exists());
}

#[test]
fn seed_flag_overrides_config() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "g.json", r#"{"n": 50, "seed": 1}"#);
    let run = |seed: &str, name: &str| {
        let out = dir.path().join(name);
        let o = otrsens(&["gen", "--config", &cfg, "--out", out.to_str().unwrap(), "--seed", seed]);
        assert_eq!(code(&o), 0);
        fs::read(out.join("data.csv")).unwrap()
    };
    assert_eq!(run("9", "a"), run("9", "b"));
    assert_ne!(run("9", "a"), run("10", "c"));
}
