use std::path::Path;
use std::process::{Command, Output};

fn hoi(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_hoi")).args(args).env("RUST_LOG", "warn").output().unwrap()
}

fn path(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn usage_errors_exit_with_two() {
    assert_eq!(hoi(&["train"]).status.code(), Some(2));
    assert_eq!(hoi(&["train", "--config", "/definitely/missing.json"]).status.code(), Some(2));
    assert_eq!(hoi(&["eval", "--data", "x.json"]).status.code(), Some(2));
    assert_eq!(hoi(&["gen-demo", "--task", "juggle", "--out", "x.json"]).status.code(), Some(2));
    assert_eq!(hoi(&["frobnicate"]).status.code(), Some(2));
}

#[test]
fn run_errors_exit_with_one_and_a_message() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.json");
    std::fs::write(&cfg, r#"{"ppo": {"gamma": 2.0}}"#).unwrap();
    let out = hoi(&["train", "--config", path(&cfg)]);
    assert_eq!(out.status.code(), Some(1));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("error:") && err.contains("gamma"), "{err}");

    let out = hoi(&["extract-cg", "--data", path(&dir.path().join("none.json"))]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn demo_contacts_and_replay() {
    let dir = tempfile::tempdir().unwrap();
    let seq = dir.path().join("hold.json");
    assert!(hoi(&["gen-demo", "--task", "hold", "--out", path(&seq)]).status.success());

    for extra in [&[][..], &["--from-sim"][..]] {
        let mut args = vec!["extract-cg", "--data", path(&seq)];
        args.extend_from_slice(extra);
        let out = hoi(&args);
        assert!(out.status.success());
        let text = String::from_utf8(out.stdout).unwrap();
        assert_eq!(text.lines().count(), 60);
        assert!(text.lines().all(|l| l == "1 0 0"), "{text}");
    }

    let csv = dir.path().join("replay.csv");
    let rec = dir.path().join("replayed.json");
    let out = hoi(&["replay", "--data", path(&seq), "--out", path(&csv), "--record", path(&rec)]);
    assert!(out.status.success());
    let table = std::fs::read_to_string(&csv).unwrap();
    assert_eq!(table.lines().next(), Some("frame,penetration,edge_0,edge_1,edge_2"));
    assert_eq!(table.lines().count(), 61);

    let out = hoi(&["eval", "--sim-data", path(&rec), "--data", path(&seq)]);
    assert!(out.status.success());
    let report: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(report["succ"], 1.0);
}

#[test]
fn train_eval_and_rectify_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let seq = dir.path().join("hold.json");
    assert!(hoi(&["gen-demo", "--task", "hold", "--out", path(&seq)]).status.success());
    let cfg = dir.path().join("exp.json");
    std::fs::write(&cfg, r#"{"sequence": "hold.json", "ppo": {"iterations": 2, "num_envs": 2, "hidden": [8]}}"#).unwrap();
    let run = dir.path().join("run");
    let out = hoi(&["train", "--config", path(&cfg), "--seed", "4", "--out", path(&run)]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let ck = run.join("checkpoint_final.json");
    assert!(ck.exists() && run.join("train_log.csv").exists());

    let report_dir = dir.path().join("report");
    let out = hoi(&["eval", "--checkpoint", path(&ck), "--data", path(&seq), "--repeats", "2", "--out", path(&report_dir)]);
    assert!(out.status.success());
    assert!(String::from_utf8_lossy(&out.stdout).starts_with("succ "));
    assert!(report_dir.join("report.json").exists() && report_dir.join("frames.csv").exists());

    let rect = dir.path().join("rectified.json");
    let out = hoi(&["rectify", "--checkpoint", path(&ck), "--data", path(&seq), "--out", path(&rect)]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let out = hoi(&["extract-cg", "--data", path(&rect)]);
    assert_eq!(String::from_utf8(out.stdout).unwrap().lines().count(), 60);
}
