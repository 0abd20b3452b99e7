//! Store checkpoints: `store.json` plus two raw f32 files per label.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{LabelPrompt, PromptStore};
use crate::backbone::checkpoint::{read_f32, write_f32};
use crate::backbone::Backbone;
use crate::corpus::io::{read_json, write_json};
use crate::corpus::Label;
use crate::error::{Error, IoContext, Result};
use crate::tensor::Real;

pub const STORE_VERSION: u32 = 1;
pub const STORE_FILE: &str = "store.json";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BlockEntry {
    pub label: Label,
    pub name_rows: usize,
    pub name_file: String,
    pub soft_file: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StoreMeta {
    pub version: u32,
    /// Labels in insertion order.
    pub labels: Vec<Label>,
    pub stage_of: BTreeMap<Label, usize>,
    pub m: usize,
    pub d: usize,
    pub vocab_hash: String,
    pub blocks: Vec<BlockEntry>,
}

pub fn save_store<F: Real>(store: &PromptStore<F>, vocab_hash: &str, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).at(dir)?;
    let mut blocks = Vec::with_capacity(store.len());
    for (i, label) in store.labels().iter().enumerate() {
        let p = store.get(label).expect("ordered labels are present");
        let name_file = format!("p{i:03}.name.f32");
        let soft_file = format!("p{i:03}.soft.f32");
        write_f32(&dir.join(&name_file), p.name_block())?;
        write_f32(&dir.join(&soft_file), &p.soft_block)?;
        blocks.push(BlockEntry { label: label.clone(), name_rows: p.name_block().rows(), name_file, soft_file });
    }
    let meta = StoreMeta {
        version: STORE_VERSION,
        labels: store.labels().to_vec(),
        stage_of: store.labels().iter().map(|l| (l.clone(), store.stage_of(l).unwrap())).collect(),
        m: store.soft_len(),
        d: store.d_model(),
        vocab_hash: vocab_hash.to_string(),
        blocks,
    };
    write_json(&dir.join(STORE_FILE), &meta)
}

/// Load a store saved against `backbone`'s vocabulary.
pub fn load_store<F: Real>(dir: &Path, backbone: &Backbone<F>) -> Result<PromptStore<F>> {
    let path = dir.join(STORE_FILE);
    if !path.exists() {
        return Err(Error::MissingCheckpoint(dir.display().to_string()));
    }
    let meta: StoreMeta = read_json(&path)?;
    if meta.version != STORE_VERSION {
        return Err(Error::Checkpoint(format!("unsupported store version {}", meta.version)));
    }
    if meta.vocab_hash != backbone.vocab().hash() {
        return Err(Error::Checkpoint("store was trained against a different vocabulary".into()));
    }
    if meta.d != backbone.d_model() {
        return Err(Error::DimensionMismatch { expected: backbone.d_model(), got: meta.d });
    }
    let mut store = PromptStore::new(meta.m, meta.d);
    for b in &meta.blocks {
        let name = read_f32(&dir.join(&b.name_file), b.name_rows, meta.d)?;
        let soft = read_f32(&dir.join(&b.soft_file), meta.m, meta.d)?;
        let stage = *meta
            .stage_of
            .get(&b.label)
            .ok_or_else(|| Error::Checkpoint(format!("no stage recorded for {}", b.label)))?;
        store.insert(LabelPrompt::new(b.label.clone(), name, soft)?, stage)?;
    }
    if store.labels() != meta.labels.as_slice() {
        return Err(Error::Checkpoint("label order does not match block list".into()));
    }
    Ok(store)
}
