mod common;

use std::path::Path;
use std::process::{Command, Output};

fn modprompt(args: &[&str], env_out: Option<&Path>) -> Output {
    let mut c = Command::new(env!("CARGO_BIN_EXE_modprompt"));
    c.args(args).env("RUST_LOG", "warn").env_remove("MODPROMPT_OUT");
    if let Some(o) = env_out {
        c.env("MODPROMPT_OUT", o);
    }
    c.output().unwrap()
}

fn write_config(dir: &Path) -> String {
    let p = dir.join("tiny.json");
    std::fs::write(&p, serde_json::to_string_pretty(&common::tiny_config_json()).unwrap()).unwrap();
    p.to_str().unwrap().to_string()
}

#[test]
fn unknown_method_is_a_usage_error() {
    let out = modprompt(&["train", "--method", "bogus"], None);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("modular_pt"));
}

#[test]
fn missing_subcommand_and_bad_config_are_usage_errors() {
    assert_eq!(modprompt(&[], None).status.code(), Some(1));
    let tmp = tempfile::tempdir().unwrap();
    let bad = tmp.path().join("bad.json");
    std::fs::write(&bad, r#"{"trials": []}"#).unwrap();
    let out = modprompt(&["train", "--config", bad.to_str().unwrap(), "--out", tmp.path().to_str().unwrap()], None);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stdout).contains("Usage"));
}

#[test]
fn help_exits_zero() {
    let out = modprompt(&["--help"], None);
    assert_eq!(out.status.code(), Some(0));
    for cmd in ["gen-data", "pretrain", "train", "eval", "probe", "report"] {
        assert!(String::from_utf8_lossy(&out.stdout).contains(cmd), "{cmd}");
    }
}

#[test]
fn eval_without_training_is_a_runtime_failure() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path());
    let out = modprompt(&["eval", "--config", &cfg, "--out", tmp.path().join("run").to_str().unwrap()], None);
    assert_eq!(out.status.code(), Some(2), "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn step_by_step_pipeline_matches_flags() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path());
    let run = tmp.path().join("run");
    let r = run.to_str().unwrap();
    let ok = |args: &[&str]| {
        let out = modprompt(args, None);
        assert_eq!(out.status.code(), Some(0), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
    };
    ok(&["gen-data", "--config", &cfg, "--out", r]);
    assert!(run.join("data").read_dir().unwrap().count() >= 3);
    ok(&["train", "--config", &cfg, "--out", r, "--seed", "4", "--method", "modular_pt"]);
    ok(&["eval", "--config", &cfg, "--out", r, "--seed", "4", "--method", "modular_pt", "--regime", "fused", "--constrained"]);
    ok(&["probe", "--config", &cfg, "--out", r, "--seed", "4", "--probe", "permute", "--constrained"]);

    // The snapshot records the last command's overrides, so `report` needs no config.
    let snap: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(run.join("config.json")).unwrap()).unwrap();
    assert_eq!(snap["trials"], serde_json::json!([4]));
    assert_eq!(snap["constrained"], true);
    ok(&["report", "--out", r, "--regime", "fused"]);
    let report: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(run.join("report.json")).unwrap()).unwrap();
    assert_eq!(report["seeds"], serde_json::json!([4]));
    assert!(report["cells"].as_array().unwrap().iter().all(|c| c["regime"] == "fused" && c["constrained"] == true));
    assert_eq!(report["probes"][0]["probe"], "permute");
}

#[test]
fn output_root_comes_from_the_environment() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path());
    let env_root = tmp.path().join("from_env");
    let out = modprompt(&["gen-data", "--config", &cfg], Some(&env_root));
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(env_root.join("config.json").exists());
}
