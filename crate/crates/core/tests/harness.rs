mod common;

use modprompt::eval::{ProbeKind, Regime};
use modprompt::harness::{self, report_from_disk, run_experiment, FailureManifest, FAILED_FILE};
use modprompt::training::Method;

#[test]
fn tiny_experiment_reports_every_cell_over_both_trials() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = common::tiny_config(tmp.path());
    let report = run_experiment(&cfg).unwrap();
    assert!(report.complete);
    assert_eq!(report.seeds, vec![1, 2]);
    for method in ["modular_pt", "pt_cl"] {
        for regime in Regime::ALL {
            let c = report.cell(method, regime, false, "mean").unwrap_or_else(|| panic!("{method} {regime:?}"));
            assert_eq!(c.values.len(), 2);
            assert!(c.values.iter().all(|v| (0.0..=1.0).contains(v)));
            assert!(c.std >= 0.0);
        }
    }
    for p in ProbeKind::ALL {
        assert_eq!(report.probe(p, false, "mean").unwrap().probed.len(), 2);
    }
    for f in ["report.json", "report.md", "report.csv", "config.json", "backbone/pretrain.json"] {
        assert!(tmp.path().join(f).exists(), "{f}");
    }
    assert!(!tmp.path().join(FAILED_FILE).exists());
    assert_eq!(report_from_disk(&cfg).unwrap(), report);
}

#[test]
fn interrupted_run_resumes_to_the_same_report() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = common::tiny_config(tmp.path());
    let first = run_experiment(&cfg).unwrap();
    let before = common::tree_hashes(tmp.path());

    // Lose the last stage of one method, and one metrics file.
    let mdir = harness::method_dir(tmp.path(), 2, Method::ModularPt);
    std::fs::remove_dir_all(mdir.join("stage2")).unwrap();
    let metrics = harness::metrics_path(tmp.path(), 1, Method::PtCl, Regime::Fused, cfg.eval_options());
    std::fs::remove_file(&metrics).unwrap();

    let second = run_experiment(&cfg).unwrap();
    assert_eq!(first, second);
    assert_eq!(before, common::tree_hashes(tmp.path()));
}

#[test]
fn corrupt_checkpoint_leaves_a_failure_manifest_and_partial_report() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = common::tiny_config(tmp.path());
    run_experiment(&cfg).unwrap();
    let stage = harness::method_dir(tmp.path(), 2, Method::PtCl).join("stage1");
    for e in std::fs::read_dir(&stage).unwrap() {
        std::fs::write(e.unwrap().path(), b"garbage").unwrap();
    }
    assert!(run_experiment(&cfg).is_err());
    let manifest: FailureManifest =
        serde_json::from_str(&std::fs::read_to_string(tmp.path().join(FAILED_FILE)).unwrap()).unwrap();
    assert_eq!((manifest.method.as_str(), manifest.seed), ("pt_cl", 2));
    let partial: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(tmp.path().join("report.json")).unwrap()).unwrap();
    assert_eq!(partial["complete"], false);
    assert_eq!(partial["seeds"], serde_json::json!([1]));
}
