//! A small experiment that runs end to end in seconds.

#![allow(dead_code)]

use std::collections::BTreeMap;
use std::path::Path;

use modprompt::harness::ExperimentConfig;
use sha2::{Digest, Sha256};

pub fn tiny_config_json() -> serde_json::Value {
    serde_json::json!({
        "corpus": {
            "kind": "synthetic",
            "n_labels": 4,
            "n_stages": 2,
            "shots_train": 6,
            "shots_val": 2,
            "shots_test": 3,
            "seq_len_min": 4,
            "seq_len_max": 6,
            "seed": 11
        },
        "plan": { "n_stages": 2, "shots_train": 6, "shots_val": 2, "shots_test": 3, "n_fused": 2, "fused_size": 2 },
        "backbone": { "size": "tiny", "pretrain": { "steps": 12, "batch_size": 4, "max_blocks": 2, "rows_per_block": 2 } },
        "methods": ["modular_pt", "pt_cl"],
        "train": { "max_epochs": 2, "batch_size": 4, "soft_len": 2, "patience": 1 },
        "probes": ["drop_gt", "drop_random", "permute"],
        "trials": [1, 2]
    })
}

pub fn tiny_config(out: &Path) -> ExperimentConfig {
    let mut cfg: ExperimentConfig = serde_json::from_value(tiny_config_json()).unwrap();
    cfg.out_dir = out.to_path_buf();
    cfg
}

/// SHA-256 of every file under `root`, keyed by relative path.
pub fn tree_hashes(root: &Path) -> BTreeMap<String, String> {
    fn walk(root: &Path, dir: &Path, out: &mut BTreeMap<String, String>) {
        let mut entries: Vec<_> = std::fs::read_dir(dir).unwrap().map(|e| e.unwrap().path()).collect();
        entries.sort();
        for p in entries {
            if p.is_dir() {
                walk(root, &p, out);
            } else {
                let rel = p.strip_prefix(root).unwrap().to_string_lossy().into_owned();
                out.insert(rel, hex::encode(Sha256::digest(std::fs::read(&p).unwrap())));
            }
        }
    }
    let mut out = BTreeMap::new();
    walk(root, root, &mut out);
    out
}
