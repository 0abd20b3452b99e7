//! Backbone checkpoints: `backbone.json` metadata, `vocab.json`, and one raw
//! little-endian f32 array per parameter (row-major).

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{Backbone, BackboneConfig, Vocab};
use crate::corpus::io::{read_json, write_json};
use crate::error::{Error, IoContext, Result};
use crate::tensor::{Mat, Real};

pub const FORMAT_VERSION: u32 = 1;
pub const META_FILE: &str = "backbone.json";
pub const VOCAB_FILE: &str = "vocab.json";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ParamEntry {
    pub name: String,
    pub rows: usize,
    pub cols: usize,
    pub file: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BackboneMeta {
    pub format_version: u32,
    pub config: BackboneConfig,
    pub vocab_hash: String,
    pub frozen: bool,
    pub dtype: String,
    pub params: Vec<ParamEntry>,
}

pub fn write_f32<F: Real>(path: &Path, m: &Mat<F>) -> Result<()> {
    let mut bytes = Vec::with_capacity(m.data().len() * 4);
    for x in m.data() {
        bytes.extend_from_slice(&x.to_f32().unwrap().to_le_bytes());
    }
    fs::write(path, bytes).at(path)
}

pub fn read_f32<F: Real>(path: &Path, rows: usize, cols: usize) -> Result<Mat<F>> {
    let bytes = fs::read(path).at(path)?;
    if bytes.len() != rows * cols * 4 {
        return Err(Error::Checkpoint(format!(
            "{}: expected {} bytes, found {}",
            path.display(),
            rows * cols * 4,
            bytes.len()
        )));
    }
    let data = bytes
        .chunks_exact(4)
        .map(|c| F::from_f32(f32::from_le_bytes([c[0], c[1], c[2], c[3]])).unwrap())
        .collect();
    Ok(Mat::from_vec(rows, cols, data))
}

pub fn save_backbone<F: Real>(model: &Backbone<F>, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).at(dir)?;
    let mut params = Vec::new();
    for (name, p) in model.param_names().zip(model.params()) {
        let file = format!("{name}.f32");
        write_f32(&dir.join(&file), p)?;
        params.push(ParamEntry { name: name.to_string(), rows: p.rows(), cols: p.cols(), file });
    }
    write_json(&dir.join(VOCAB_FILE), &model.vocab().tokens())?;
    let meta = BackboneMeta {
        format_version: FORMAT_VERSION,
        config: model.config().clone(),
        vocab_hash: model.vocab().hash(),
        frozen: model.is_frozen(),
        dtype: "f32le".into(),
        params,
    };
    write_json(&dir.join(META_FILE), &meta)
}

pub fn read_meta(dir: &Path) -> Result<BackboneMeta> {
    let path = dir.join(META_FILE);
    if !path.exists() {
        return Err(Error::MissingCheckpoint(dir.display().to_string()));
    }
    read_json(&path)
}

pub fn load_backbone<F: Real>(dir: &Path) -> Result<Backbone<F>> {
    let meta = read_meta(dir)?;
    if meta.format_version != FORMAT_VERSION {
        return Err(Error::Checkpoint(format!("unsupported format version {}", meta.format_version)));
    }
    let tokens: Vec<String> = read_json(&dir.join(VOCAB_FILE))?;
    let vocab = Vocab::from_full(tokens)?;
    if vocab.hash() != meta.vocab_hash {
        return Err(Error::Checkpoint("vocabulary hash mismatch".into()));
    }
    let params = meta
        .params
        .iter()
        .map(|p| read_f32(&dir.join(&p.file), p.rows, p.cols))
        .collect::<Result<Vec<_>>>()?;
    let model = Backbone::from_parts(meta.config, vocab, params, meta.frozen)?;
    for (want, got) in meta.params.iter().zip(model.param_names()) {
        if want.name != got {
            return Err(Error::Checkpoint(format!("parameter order mismatch at {}", want.name)));
        }
    }
    Ok(model)
}
