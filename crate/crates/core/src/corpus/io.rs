//! JSONL datasets and stage-plan manifests.

use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{Example, Label, StagePlan, TaskKind};
use crate::error::{Error, IoContext, Result};

#[derive(Serialize, Deserialize)]
struct Record {
    input: String,
    target: String,
}

/// Sibling manifest of a JSONL dataset.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub task_kind: TaskKind,
    pub labels: Vec<Label>,
}

pub fn write_jsonl(path: &Path, examples: &[Example]) -> Result<()> {
    let file = fs::File::create(path).at(path)?;
    let mut w = BufWriter::new(file);
    for e in examples {
        serde_json::to_writer(&mut w, &Record { input: e.input.clone(), target: e.target.clone() })?;
        w.write_all(b"\n").at(path)?;
    }
    w.flush().at(path)
}

/// Read a JSONL dataset; every target must parse under `task_kind`.
pub fn read_jsonl(path: &Path, task_kind: TaskKind) -> Result<Vec<Example>> {
    let file = fs::File::open(path).at(path)?;
    let mut out = Vec::new();
    for line in BufReader::new(file).lines() {
        let line = line.at(path)?;
        if line.trim().is_empty() {
            continue;
        }
        let r: Record = serde_json::from_str(&line)?;
        let e = Example::new(r.input, r.target, task_kind);
        e.labels()?;
        out.push(e);
    }
    Ok(out)
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let bytes = serde_json::to_vec_pretty(value)?;
    fs::write(path, bytes).at(path)
}

pub fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let bytes = fs::read(path).at(path)?;
    Ok(serde_json::from_slice(&bytes)?)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StageEntry {
    pub index: usize,
    pub labels: Vec<Label>,
    pub train: String,
    pub validation: String,
    pub specific_test: String,
    pub agnostic_test: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FusedEntry {
    pub labels: Vec<Label>,
    pub test: String,
}

/// On-disk description of a materialised [`StagePlan`]. Paths are relative
/// to the manifest's directory.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PlanManifest {
    pub task_kind: TaskKind,
    pub seed: u64,
    pub shots_train: usize,
    pub shots_val: usize,
    pub shots_test: usize,
    pub stages: Vec<StageEntry>,
    pub fused: Vec<FusedEntry>,
    pub warnings: Vec<String>,
}

pub const PLAN_MANIFEST: &str = "plan.json";

/// Write every split of `plan` as JSONL under `dir` plus `plan.json`.
pub fn write_plan(dir: &Path, plan: &StagePlan) -> Result<PathBuf> {
    fs::create_dir_all(dir).at(dir)?;
    let mut stages = Vec::new();
    for (k, s) in plan.stages.iter().enumerate() {
        let n = s.index;
        let entry = StageEntry {
            index: n,
            labels: s.labels.clone(),
            train: format!("stage{n}_train.jsonl"),
            validation: format!("stage{n}_validation.jsonl"),
            specific_test: format!("stage{n}_specific_test.jsonl"),
            agnostic_test: format!("stage{n}_agnostic_test.jsonl"),
        };
        write_jsonl(&dir.join(&entry.train), &s.train)?;
        write_jsonl(&dir.join(&entry.validation), &s.validation)?;
        write_jsonl(&dir.join(&entry.specific_test), &plan.specific_tests[k])?;
        write_jsonl(&dir.join(&entry.agnostic_test), &plan.agnostic_tests[k])?;
        stages.push(entry);
    }
    let mut fused = Vec::new();
    for (j, f) in plan.fused_tests.iter().enumerate() {
        let entry = FusedEntry { labels: f.labels.clone(), test: format!("fused{}_test.jsonl", j + 1) };
        write_jsonl(&dir.join(&entry.test), &f.test)?;
        fused.push(entry);
    }
    let manifest = PlanManifest {
        task_kind: plan.task_kind,
        seed: plan.options.seed,
        shots_train: plan.options.shots_train,
        shots_val: plan.options.shots_val,
        shots_test: plan.options.shots_test,
        stages,
        fused,
        warnings: plan.warnings.clone(),
    };
    let path = dir.join(PLAN_MANIFEST);
    write_json(&path, &manifest)?;
    Ok(path)
}

/// Load a plan written by [`write_plan`].
pub fn read_plan(dir: &Path) -> Result<StagePlan> {
    let m: PlanManifest = read_json(&dir.join(PLAN_MANIFEST))?;
    let kind = m.task_kind;
    let mut stages = Vec::new();
    let mut specific = Vec::new();
    let mut agnostic = Vec::new();
    for s in &m.stages {
        stages.push(super::Stage {
            index: s.index,
            labels: s.labels.clone(),
            train: read_jsonl(&dir.join(&s.train), kind)?,
            validation: read_jsonl(&dir.join(&s.validation), kind)?,
        });
        specific.push(read_jsonl(&dir.join(&s.specific_test), kind)?);
        agnostic.push(read_jsonl(&dir.join(&s.agnostic_test), kind)?);
    }
    let mut fused = Vec::new();
    for f in &m.fused {
        fused.push(super::FusedTest { labels: f.labels.clone(), test: read_jsonl(&dir.join(&f.test), kind)? });
    }
    let n_fused = fused.len();
    let fused_size = fused.first().map_or(0, |f| f.labels.len());
    let plan = StagePlan {
        task_kind: kind,
        stages,
        specific_tests: specific,
        agnostic_tests: agnostic,
        fused_tests: fused,
        options: super::PlanOptions {
            n_stages: m.stages.len(),
            shots_train: m.shots_train,
            shots_val: m.shots_val,
            shots_test: m.shots_test,
            n_fused,
            fused_size,
            seed: m.seed,
        },
        warnings: m.warnings,
    };
    plan.validate()?;
    Ok(plan)
}

/// Load a JSONL dataset alongside its `<name>.manifest.json` sibling.
pub fn read_dataset(jsonl: &Path) -> Result<(DatasetManifest, Vec<Example>)> {
    let manifest_path = manifest_path_for(jsonl);
    let manifest: DatasetManifest = read_json(&manifest_path)?;
    let examples = read_jsonl(jsonl, manifest.task_kind)?;
    for e in &examples {
        for l in e.labels()? {
            if !manifest.labels.contains(&l) {
                return Err(Error::UnknownLabel(vec![l.to_string()]));
            }
        }
    }
    Ok((manifest, examples))
}

pub fn manifest_path_for(jsonl: &Path) -> PathBuf {
    let stem = jsonl.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    jsonl.with_file_name(format!("{stem}.manifest.json"))
}
