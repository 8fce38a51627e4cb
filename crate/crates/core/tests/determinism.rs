use std::fs;
use std::path::Path;
use std::process::Command;

fn run(cmd: &str, cfg: &Path, out: &Path, jobs: &str) {
    let o = Command::new(env!("CARGO_BIN_EXE_otrsens"))
        .args([cmd, "--config", cfg.to_str().unwrap(), "--out", out.to_str().unwrap(), "--jobs", jobs])
        .output()
        .unwrap();
    assert!(o.status.success(), "{cmd}: {}", String::from_utf8_lossy(&o.stderr));
}

fn assert_same_tree(a: &Path, b: &Path) {
    let mut names: Vec<_> = fs::read_dir(a).unwrap().map(|e| e.unwrap().file_name()).collect();
    names.sort();
    assert!(!names.is_empty());
    for n in names {
        assert_eq!(fs::read(a.join(&n)).unwrap(), fs::read(b.join(&n)).unwrap(), "{n:?} differs");
    }
}

fn twice(cmd: &str, body: &str) {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("c.json");
    fs::write(&cfg, body).unwrap();
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    run(cmd, &cfg, &a, "1");
    run(cmd, &cfg, &b, "3");
    assert_same_tree(&a, &b);
}

#[test]
fn scenario_is_byte_identical() {
    twice(
        "scenario",
        r#"{"replicates": 4, "n": 300, "seed": 8, "nuisance": {"n_mc": 300},
            "truth": {"grid": 25, "u_nodes": 32}, "learner": {"max_iter": 400}}"#,
    );
}

#[test]
fn sweep_is_byte_identical() {
    twice(
        "sweep",
        r#"{"replicates": 3, "n": 300, "seed": 8, "nuisance": {"n_mc": 300},
            "truth": {"grid": 25, "u_nodes": 32}, "learner": {"max_iter": 400},
            "sweep": {"grid_minus": [-0.5, 0.5], "grid_plus": [-0.5, 0.5]}}"#,
    );
}

#[test]
fn traintest_is_byte_identical() {
    twice(
        "traintest",
        r#"{"seed": 8, "learner": {"max_iter": 400},
            "train_test": {"n": 400, "splits": 3, "grid_minus": [0.5], "grid_plus": [0.0, 1.0]}}"#,
    );
}

#[test]
fn gen_is_byte_identical() {
    twice("gen", r#"{"n": 200, "seed": 8}"#);
}
