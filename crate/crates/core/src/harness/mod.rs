//! Multi-seed experiments: data, one shared frozen backbone, every method
//! per seed, evaluation, probes and the aggregated report.
//!
//! Output layout under `out_dir`:
//!
//! ```text
//! config.json                      effective config snapshot
//! backbone/                        shared frozen checkpoint + pretrain.json
//! seed{s}/plan/                    stage-plan manifest
//! seed{s}/{method}/stage{k}/...    per-stage checkpoints
//! seed{s}/{method}/train_log.jsonl
//! seed{s}/{method}/metrics/{regime}[-constrained].jsonl
//! seed{s}/probes/{probe}[-constrained].jsonl
//! report.{json,md,csv}
//! failed.json                      only when a run failed
//! ```

pub mod report;

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::backbone::checkpoint::{load_backbone, save_backbone, META_FILE};
use crate::backbone::{pretrain_backbone, Backbone, BackboneConfig, PretrainConfig, PretrainPool, PretrainReport, Vocab};
use crate::corpus::io::{manifest_path_for, read_dataset, read_json, read_jsonl, write_json, write_jsonl, write_plan, DatasetManifest};
use crate::corpus::{
    build_plan, gen_synthetic_task, Example, Label, PlanOptions, StagePlan, SyntheticTaskConfig, TaskKind, CLAUSE_SEP,
    FIELD_SEP, NONE_TARGET, SPAN_SEP,
};
use crate::error::{Error, IoContext, Result};
use crate::eval::{evaluate_regime, run_probe, EvalOptions, MetricRecord, ProbeKind, ProbeRecord, Regime};
use crate::training::{load_artifacts, train_method, Artifacts, LogRecord, Method, TrainConfig};

pub use report::{
    aggregate_trials, mean_std, parse_csv, render_report, write_reports, Cell, EvalReport, ProbeCell, ReportFormat,
    SeedResult,
};

/// Where the examples come from.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum CorpusSource {
    Synthetic(SyntheticTaskConfig),
    /// JSONL files, each with a `<name>.manifest.json` sibling.
    Jsonl { train: PathBuf, validation: PathBuf, test: PathBuf },
}

impl Default for CorpusSource {
    fn default() -> Self {
        CorpusSource::Synthetic(SyntheticTaskConfig::default())
    }
}

/// Stage counts and shots; the sampling seed is the trial seed.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PlanSettings {
    pub n_stages: usize,
    pub shots_train: usize,
    pub shots_val: usize,
    pub shots_test: usize,
    pub n_fused: usize,
    pub fused_size: usize,
}

impl Default for PlanSettings {
    fn default() -> Self {
        Self { n_stages: 4, shots_train: 50, shots_val: 10, shots_test: 20, n_fused: 5, fused_size: 4 }
    }
}

impl PlanSettings {
    pub fn options(&self, seed: u64) -> PlanOptions {
        PlanOptions {
            n_stages: self.n_stages,
            shots_train: self.shots_train,
            shots_val: self.shots_val,
            shots_test: self.shots_test,
            n_fused: self.n_fused,
            fused_size: self.fused_size,
            seed,
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BackboneSize {
    Tiny,
    #[default]
    Desk,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BackboneSettings {
    pub size: BackboneSize,
    /// Pretraining settings; `pretrain.seed` is the dedicated backbone seed.
    pub pretrain: PretrainConfig,
    /// Use this frozen checkpoint instead of pretraining.
    pub checkpoint: Option<PathBuf>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub corpus: CorpusSource,
    pub plan: PlanSettings,
    pub backbone: BackboneSettings,
    pub methods: Vec<Method>,
    /// Settings for every prompt-tuning method.
    pub train: TrainConfig,
    /// Settings for the methods that tune backbone weights.
    pub finetune: TrainConfig,
    pub regimes: Vec<Regime>,
    /// Evaluate with constrained decoding.
    pub constrained: bool,
    /// Probes run on modular_pt, when it is among the methods.
    pub probes: Vec<ProbeKind>,
    pub trials: Vec<u64>,
    pub out_dir: PathBuf,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            corpus: CorpusSource::default(),
            plan: PlanSettings::default(),
            backbone: BackboneSettings::default(),
            methods: vec![Method::ModularPt, Method::PtCl],
            train: TrainConfig::default(),
            finetune: TrainConfig::finetune(),
            regimes: Regime::ALL.to_vec(),
            constrained: false,
            probes: Vec::new(),
            trials: vec![1, 2, 3, 4, 5],
            out_dir: PathBuf::from(DEFAULT_OUT_ROOT),
        }
    }
}

fn has_duplicates<T: PartialEq>(xs: &[T]) -> bool {
    xs.iter().enumerate().any(|(i, x)| xs[..i].contains(x))
}

impl ExperimentConfig {
    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).at(path)?;
        serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::Config(m));
        if self.trials.is_empty() {
            return fail("trials must list at least one seed".into());
        }
        if has_duplicates(&self.trials) {
            return fail("trial seeds must be distinct".into());
        }
        if self.methods.is_empty() || has_duplicates(&self.methods) {
            return fail("methods must be a non-empty list without repeats".into());
        }
        if has_duplicates(&self.regimes) || has_duplicates(&self.probes) {
            return fail("regimes and probes must not repeat".into());
        }
        self.train.validate()?;
        self.finetune.validate()?;
        match &self.corpus {
            CorpusSource::Synthetic(c) => c.validate()?,
            CorpusSource::Jsonl { train, validation, test } => {
                for p in [train, validation, test] {
                    if !p.exists() {
                        return fail(format!("dataset {} does not exist", p.display()));
                    }
                }
            }
        }
        if let Some(c) = &self.backbone.checkpoint {
            if !c.join(META_FILE).exists() {
                return fail(format!("backbone checkpoint {} does not exist", c.display()));
            }
        }
        Ok(())
    }

    /// Training settings for `method` on trial `seed`.
    pub fn train_config(&self, method: Method, seed: u64) -> TrainConfig {
        let base = if method.tunes_backbone() { &self.finetune } else { &self.train };
        TrainConfig { seed, ..base.clone() }
    }

    pub fn eval_options(&self) -> EvalOptions {
        EvalOptions { constrained: self.constrained }
    }
}

/// Examples, label universe, vocabulary and pretraining pool of a task.
#[derive(Clone, Debug)]
pub struct TaskData {
    pub task_kind: TaskKind,
    pub labels: Vec<Label>,
    pub train: Vec<Example>,
    pub validation: Vec<Example>,
    pub test: Vec<Example>,
    pub vocab: Vocab,
    pub pool: PretrainPool,
}

fn structure_tokens() -> Vec<String> {
    [SPAN_SEP, CLAUSE_SEP, FIELD_SEP, NONE_TARGET].iter().map(|s| s.to_string()).collect()
}

/// Vocabulary over structure tokens, label names and every input token.
pub fn vocab_for(labels: &[Label], examples: &[&Example]) -> Result<Vocab> {
    let mut out = structure_tokens();
    let mut seen: std::collections::BTreeSet<String> = out.iter().cloned().collect();
    let mut rest: std::collections::BTreeSet<String> = std::collections::BTreeSet::new();
    for l in labels {
        for t in l.tokens() {
            if seen.insert(t.to_string()) {
                out.push(t.to_string());
            }
        }
    }
    for e in examples {
        for t in e.input.split_whitespace() {
            if !seen.contains(t) {
                rest.insert(t.to_string());
            }
        }
    }
    out.extend(rest);
    Vocab::new(out)
}

/// Generate or read the task's data.
pub fn load_task(source: &CorpusSource) -> Result<TaskData> {
    match source {
        CorpusSource::Synthetic(c) => {
            let corpus = gen_synthetic_task(c)?;
            Ok(TaskData {
                task_kind: c.task_kind,
                labels: corpus.labels.clone(),
                vocab: Vocab::new(corpus.vocab_tokens())?,
                pool: PretrainPool::from_corpus(&corpus),
                train: corpus.train,
                validation: corpus.validation,
                test: corpus.test,
            })
        }
        CorpusSource::Jsonl { train, validation, test } => {
            let (manifest, train) = read_dataset(train)?;
            let validation = read_jsonl(validation, manifest.task_kind)?;
            let test = read_jsonl(test, manifest.task_kind)?;
            let all: Vec<&Example> = train.iter().chain(&validation).chain(&test).collect();
            for e in &all {
                if let Some(l) = e.labels()?.into_iter().find(|l| !manifest.labels.contains(l)) {
                    return Err(Error::UnknownLabel(vec![l.to_string()]));
                }
            }
            let vocab = vocab_for(&manifest.labels, &all)?;
            let pool = PretrainPool::from_examples(manifest.task_kind, &train, &manifest.labels);
            Ok(TaskData { task_kind: manifest.task_kind, labels: manifest.labels, train, validation, test, vocab, pool })
        }
    }
}

/// Write the task's splits as JSONL datasets (with manifests) into `dir`.
/// Returns a corpus source that reads them back.
pub fn write_task_data(data: &TaskData, dir: &Path) -> Result<CorpusSource> {
    std::fs::create_dir_all(dir).at(dir)?;
    let manifest = DatasetManifest { task_kind: data.task_kind, labels: data.labels.clone() };
    let mut paths = Vec::new();
    for (name, examples) in [("train", &data.train), ("validation", &data.validation), ("test", &data.test)] {
        let p = dir.join(format!("{name}.jsonl"));
        write_jsonl(&p, examples)?;
        write_json(&manifest_path_for(&p), &manifest)?;
        paths.push(p);
    }
    let test = paths.pop().expect("three splits");
    let validation = paths.pop().expect("three splits");
    let train = paths.pop().expect("three splits");
    Ok(CorpusSource::Jsonl { train, validation, test })
}

/// Everything the backbone checkpoint depends on; a stored checkpoint is
/// reused only when its fingerprint matches.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BackboneRecord {
    pub config: BackboneConfig,
    pub vocab_hash: String,
    pub pretrain: PretrainConfig,
    pub param_hash: String,
    pub report: PretrainReport,
}

const PRETRAIN_FILE: &str = "pretrain.json";

pub fn backbone_dir(out: &Path) -> PathBuf {
    out.join("backbone")
}

fn backbone_config(size: BackboneSize, vocab_size: usize) -> BackboneConfig {
    match size {
        BackboneSize::Tiny => BackboneConfig::tiny(vocab_size),
        BackboneSize::Desk => BackboneConfig::desk(vocab_size),
    }
}

/// The shared frozen backbone: an explicit checkpoint, a matching cached
/// one under `out/backbone`, or a fresh pretraining run saved there.
pub fn ensure_backbone(cfg: &ExperimentConfig, data: &TaskData) -> Result<Backbone<f32>> {
    let mut model = if let Some(c) = &cfg.backbone.checkpoint {
        load_backbone(c)?
    } else {
        let dir = backbone_dir(&cfg.out_dir);
        let config = backbone_config(cfg.backbone.size, data.vocab.len());
        let record_path = dir.join(PRETRAIN_FILE);
        let cached = record_path
            .exists()
            .then(|| read_json::<BackboneRecord>(&record_path))
            .transpose()?
            .filter(|r| r.config == config && r.vocab_hash == data.vocab.hash() && r.pretrain == cfg.backbone.pretrain);
        match cached {
            Some(r) => {
                let m: Backbone<f32> = load_backbone(&dir)?;
                if m.param_hash() != r.param_hash {
                    return Err(Error::Checkpoint(format!("{} does not match its pretrain record", dir.display())));
                }
                m
            }
            None => {
                log::info!("pretraining backbone ({} steps)", cfg.backbone.pretrain.steps);
                let (m, report) = pretrain_backbone(config.clone(), data.vocab.clone(), &data.pool, &cfg.backbone.pretrain)?;
                save_backbone(&m, &dir)?;
                let record = BackboneRecord {
                    config,
                    vocab_hash: data.vocab.hash(),
                    pretrain: cfg.backbone.pretrain.clone(),
                    param_hash: m.param_hash(),
                    report,
                };
                write_json(&record_path, &record)?;
                m
            }
        }
    };
    if model.vocab().hash() != data.vocab.hash() {
        return Err(Error::Checkpoint("backbone vocabulary does not match the task data".into()));
    }
    model.freeze();
    Ok(model)
}

pub fn seed_dir(out: &Path, seed: u64) -> PathBuf {
    out.join(format!("seed{seed}"))
}

pub fn method_dir(out: &Path, seed: u64, method: Method) -> PathBuf {
    seed_dir(out, seed).join(method.as_str())
}

fn mode_suffix(options: EvalOptions) -> &'static str {
    if options.constrained {
        "-constrained"
    } else {
        ""
    }
}

pub fn metrics_path(out: &Path, seed: u64, method: Method, regime: Regime, options: EvalOptions) -> PathBuf {
    method_dir(out, seed, method).join("metrics").join(format!("{regime}{}.jsonl", mode_suffix(options)))
}

pub fn probes_path(out: &Path, seed: u64, probe: ProbeKind, options: EvalOptions) -> PathBuf {
    seed_dir(out, seed).join("probes").join(format!("{probe}{}.jsonl", mode_suffix(options)))
}

/// Build trial `seed`'s stage plan and write its manifest.
pub fn seed_plan(cfg: &ExperimentConfig, data: &TaskData, seed: u64) -> Result<StagePlan> {
    let plan = build_plan(data.task_kind, &data.labels, &data.train, &data.validation, &data.test, &cfg.plan.options(seed))?;
    for w in &plan.warnings {
        log::warn!("seed {seed}: {w}");
    }
    let dir = seed_dir(&cfg.out_dir, seed).join("plan");
    std::fs::create_dir_all(&dir).at(&dir)?;
    write_plan(&dir, &plan)?;
    Ok(plan)
}

pub fn write_records<T: Serialize>(path: &Path, records: &[T]) -> Result<()> {
    let dir = path.parent().expect("record files live in a directory");
    std::fs::create_dir_all(dir).at(dir)?;
    let mut text = String::new();
    for r in records {
        text.push_str(&serde_json::to_string(r)?);
        text.push('\n');
    }
    std::fs::write(path, text).at(path)
}

pub fn read_records<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<Vec<T>> {
    let text = std::fs::read_to_string(path).at(path)?;
    text.lines().filter(|l| !l.trim().is_empty()).map(|l| Ok(serde_json::from_str(l)?)).collect()
}

/// Train `method` for one trial, resuming from any stage checkpoints, or
/// load it when a previous run completed.
pub fn train_one(cfg: &ExperimentConfig, plan: &StagePlan, backbone: &Backbone<f32>, method: Method, seed: u64) -> Result<Artifacts> {
    let dir = method_dir(&cfg.out_dir, seed, method);
    let tcfg = cfg.train_config(method, seed);
    if let Ok(a) = load_artifacts(method, plan, &tcfg, backbone, &dir) {
        return Ok(a);
    }
    log::info!("seed {seed}: training {method}");
    std::fs::create_dir_all(&dir).at(&dir)?;
    let out = train_method(method, plan, &tcfg, backbone, Some(&dir))?;
    append_log(&dir.join("train_log.jsonl"), &out.log)?;
    Ok(out.artifacts)
}

/// Records of retrained stages replace whatever an interrupted run logged
/// for them, so a resumed log matches an uninterrupted one.
fn append_log(path: &Path, log: &[LogRecord]) -> Result<()> {
    let mut all: Vec<LogRecord> = if path.exists() { read_records(path)? } else { Vec::new() };
    all.retain(|old| !log.iter().any(|r| r.stage == old.stage));
    all.extend(log.iter().cloned());
    all.sort_by_key(|r| r.stage);
    write_records(path, &all)
}

/// Evaluate a trained method on each configured regime and persist the
/// raw records.
pub fn eval_one(
    cfg: &ExperimentConfig,
    plan: &StagePlan,
    backbone: &Backbone<f32>,
    artifacts: &Artifacts,
    method: Method,
    seed: u64,
) -> Result<Vec<MetricRecord>> {
    let options = cfg.eval_options();
    let mut all = Vec::new();
    for &regime in &cfg.regimes {
        let recs = evaluate_regime(regime, method.as_str(), artifacts, plan, backbone, options, seed)?;
        write_records(&metrics_path(&cfg.out_dir, seed, method, regime, options), &recs)?;
        all.extend(recs);
    }
    Ok(all)
}

/// Run every configured probe on a trained label-prompt store.
pub fn probe_one(
    cfg: &ExperimentConfig,
    plan: &StagePlan,
    backbone: &Backbone<f32>,
    artifacts: &Artifacts,
    seed: u64,
) -> Result<Vec<ProbeRecord>> {
    let store = artifacts.store().ok_or_else(|| Error::Config("probes need a label-prompt method".into()))?;
    let options = cfg.eval_options();
    let mut all = Vec::new();
    for &probe in &cfg.probes {
        let recs = run_probe(probe, store, plan, backbone, seed, options)?;
        write_records(&probes_path(&cfg.out_dir, seed, probe, options), &recs)?;
        all.extend(recs);
    }
    Ok(all)
}

/// Which (method, seed, stage) a failed run stopped at.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FailureManifest {
    pub method: String,
    pub seed: u64,
    /// First stage without a checkpoint, if the failure happened in training.
    pub stage: Option<usize>,
    pub error: String,
}

fn failed_stage(dir: &Path, n_stages: usize) -> Option<usize> {
    (1..=n_stages).find(|k| !dir.join(format!("stage{k}")).exists())
}

/// One complete trial: plan, every method, evaluation and probes.
pub fn run_seed(cfg: &ExperimentConfig, data: &TaskData, backbone: &Backbone<f32>, seed: u64) -> Result<SeedResult, (FailureManifest, Error)> {
    let fail = |method: &str, stage: Option<usize>, e: Error| {
        (FailureManifest { method: method.to_string(), seed, stage, error: e.to_string() }, e)
    };
    let plan = seed_plan(cfg, data, seed).map_err(|e| fail("", None, e))?;
    let mut result = SeedResult { seed, metrics: Vec::new(), probes: Vec::new() };
    for &method in &cfg.methods {
        let dir = method_dir(&cfg.out_dir, seed, method);
        let artifacts =
            train_one(cfg, &plan, backbone, method, seed).map_err(|e| fail(method.as_str(), failed_stage(&dir, plan.stages.len()), e))?;
        result.metrics.extend(eval_one(cfg, &plan, backbone, &artifacts, method, seed).map_err(|e| fail(method.as_str(), None, e))?);
        if method == Method::ModularPt && !cfg.probes.is_empty() {
            result.probes = probe_one(cfg, &plan, backbone, &artifacts, seed).map_err(|e| fail(method.as_str(), None, e))?;
        }
    }
    Ok(result)
}

/// Output directory when neither the config nor the environment names one.
pub const DEFAULT_OUT_ROOT: &str = "runs";
pub const CONFIG_FILE: &str = "config.json";
pub const FAILED_FILE: &str = "failed.json";

/// Run the whole experiment and write the reports. On failure the
/// completed trials are still reported, marked incomplete, next to a
/// `failed.json` naming where the run stopped.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<EvalReport> {
    cfg.validate()?;
    let out = &cfg.out_dir;
    std::fs::create_dir_all(out).at(out)?;
    write_json(&out.join(CONFIG_FILE), cfg)?;
    let failed = out.join(FAILED_FILE);
    if failed.exists() {
        std::fs::remove_file(&failed).at(&failed)?;
    }
    let data = load_task(&cfg.corpus)?;
    let backbone = ensure_backbone(cfg, &data)?;
    let mut results = Vec::with_capacity(cfg.trials.len());
    for &seed in &cfg.trials {
        match run_seed(cfg, &data, &backbone, seed) {
            Ok(r) => results.push(r),
            Err((manifest, e)) => {
                write_json(&failed, &manifest)?;
                if !results.is_empty() {
                    let mut partial = aggregate_trials(&results)?;
                    partial.complete = false;
                    write_reports(&partial, out)?;
                }
                return Err(e);
            }
        }
    }
    let report = aggregate_trials(&results)?;
    write_reports(&report, out)?;
    Ok(report)
}

/// Re-read every raw record file under `out` for the configured trials.
pub fn collect_results(cfg: &ExperimentConfig) -> Result<Vec<SeedResult>> {
    let out = &cfg.out_dir;
    let mut results = Vec::new();
    for &seed in &cfg.trials {
        let mut r = SeedResult { seed, metrics: Vec::new(), probes: Vec::new() };
        for &method in &cfg.methods {
            for &regime in &cfg.regimes {
                for constrained in [false, true] {
                    let p = metrics_path(out, seed, method, regime, EvalOptions { constrained });
                    if p.exists() {
                        r.metrics.extend(read_records::<MetricRecord>(&p)?);
                    }
                }
            }
        }
        for &probe in &ProbeKind::ALL {
            for constrained in [false, true] {
                let p = probes_path(out, seed, probe, EvalOptions { constrained });
                if p.exists() {
                    r.probes.extend(read_records::<ProbeRecord>(&p)?);
                }
            }
        }
        if r.metrics.is_empty() {
            return Err(Error::MissingCheckpoint(format!("no metrics for seed {seed} under {}", out.display())));
        }
        results.push(r);
    }
    Ok(results)
}

/// Aggregate the raw records on disk and rewrite the reports.
pub fn report_from_disk(cfg: &ExperimentConfig) -> Result<EvalReport> {
    let mut report = aggregate_trials(&collect_results(cfg)?)?;
    report.complete = !cfg.out_dir.join(FAILED_FILE).exists();
    write_reports(&report, &cfg.out_dir)?;
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn config_defaults_fill_missing_keys() {
        let cfg: ExperimentConfig = serde_json::from_str(r#"{"methods": ["modular_pt"], "trials": [3]}"#).unwrap();
        assert_eq!(cfg.methods, vec![Method::ModularPt]);
        assert_eq!(cfg.plan, PlanSettings::default());
        assert_eq!(cfg.train_config(Method::ModularPt, 3).seed, 3);
        assert_eq!(cfg.train_config(Method::Finetune, 3).learning_rate, TrainConfig::finetune().learning_rate);
        cfg.validate().unwrap();
    }

    #[test]
    fn unknown_keys_and_repeated_seeds_rejected() {
        assert!(serde_json::from_str::<ExperimentConfig>(r#"{"bogus": 1}"#).is_err());
        let cfg = ExperimentConfig { trials: vec![1, 1], ..Default::default() };
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn jsonl_vocab_covers_inputs_and_names() {
        let labels = vec![Label::new("sports").unwrap(), Label::new("world news").unwrap()];
        let ex = Example::new("alpha beta gamma", "sports", TaskKind::SingleClass);
        let v = vocab_for(&labels, &[&ex]).unwrap();
        for t in ["alpha", "gamma", "world", "news", FIELD_SEP] {
            assert!(v.id(t).is_some(), "{t}");
        }
    }
}
