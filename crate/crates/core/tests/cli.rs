use std::path::Path;
use std::process::{Command, Output};

fn fedgraph(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_fedgraph")).args(args).output().unwrap()
}

fn arg(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn generate_validate_and_run() {
    let dir = tempfile::tempdir().unwrap();
    let fgb = dir.path().join("g.fgb");
    let out = fedgraph(&["gen-sbm", "sbm:blocks=3,n=20,p_in=0.3,p_out=0.03,d=4,seed=2", arg(&fgb)]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));

    let out = fedgraph(&["validate", arg(&fgb)]);
    assert!(out.status.success());
    assert!(String::from_utf8_lossy(&out.stdout).starts_with("n=60 "));

    let cfg = dir.path().join("run.cfg");
    std::fs::write(&cfg, format!("dataset: {}\nmethod: FedGCN\nn_trainer: 2\nglobal_rounds: 2\n", fgb.display())).unwrap();
    let out = fedgraph(&["check", arg(&cfg)]);
    assert!(out.status.success());
    assert!(String::from_utf8_lossy(&out.stdout).contains("method: FedGCN"));

    let out = fedgraph(&["run", arg(&cfg), "--json"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let report: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(report["accuracy"].as_array().unwrap().len(), 3);
}

#[test]
fn bad_config_exits_with_two() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.cfg");
    std::fs::write(&cfg, "dataset: sbm:\nmethod: FedSomething\nlearning_rate: fast\n").unwrap();
    for cmd in ["check", "run"] {
        let out = fedgraph(&[cmd, arg(&cfg)]);
        assert_eq!(out.status.code(), Some(2));
        let err = String::from_utf8_lossy(&out.stderr);
        assert!(err.contains("method") && err.contains("learning_rate"), "{err}");
    }
}

#[test]
fn bad_dataset_exits_with_three() {
    let dir = tempfile::tempdir().unwrap();
    let junk = dir.path().join("junk.fgb");
    std::fs::write(&junk, b"not a graph").unwrap();
    assert_eq!(fedgraph(&["validate", arg(&junk)]).status.code(), Some(3));

    let cfg = dir.path().join("run.cfg");
    std::fs::write(&cfg, format!("dataset: {}\nmethod: FedAvg\nn_trainer: 2\nglobal_rounds: 1\n", junk.display())).unwrap();
    assert_eq!(fedgraph(&["run", arg(&cfg)]).status.code(), Some(3));
}
