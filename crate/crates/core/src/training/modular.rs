use std::collections::BTreeMap;
use std::path::Path;

use super::config::TrainConfig;
use super::fit::{apply_update, fit, BatchStats, FitSummary, LogRecord};
use super::loss::subset_invariant_loss;
use super::sampler::{SubsetSampler, SubsetSamplerConfig};
use super::adafactor::OptimizerState;
use crate::backbone::Backbone;
use crate::corpus::{Label, Stage, StagePlan, TaskKind};
use crate::error::{Error, Result};
use crate::eval::evaluate_prompt;
use crate::promptstore::checkpoint::{load_store, save_store, STORE_FILE};
use crate::promptstore::{formulate_prompt, init_label_prompt, transfer_init, PromptStore, TransferChoice};

/// Validation exact match (or F1) of the store on a stage, prompting with
/// the stage's full label set. Falls back to the training examples when the
/// stage has no validation data.
pub fn stage_validation(store: &PromptStore<f32>, stage: &Stage, kind: TaskKind, backbone: &Backbone<f32>) -> Result<f64> {
    let order = store.canonical_order(&stage.labels)?;
    let prompt = formulate_prompt(store, &order)?;
    let data = if stage.validation.is_empty() { &stage.train } else { &stage.validation };
    Ok(evaluate_prompt(backbone, &prompt, data, &stage.labels, kind, false)?.value)
}

/// Tune the soft blocks of one stage's labels. Each batch draws a label
/// subset (or uses the whole stage set when the subset-invariant loss is
/// ablated) and updates only the soft blocks of that subset.
pub fn train_stage(
    store: &mut PromptStore<f32>,
    stage: &Stage,
    kind: TaskKind,
    cfg: &TrainConfig,
    backbone: &Backbone<f32>,
    sampler: &mut SubsetSampler,
    method: &str,
    log: &mut Vec<LogRecord>,
) -> Result<FitSummary> {
    if !backbone.is_frozen() {
        return Err(Error::Config("prompt tuning needs a frozen backbone".into()));
    }
    store.canonical_order(&stage.labels)?;
    let mut states: BTreeMap<Label, OptimizerState<f32>> =
        stage.labels.iter().map(|l| (l.clone(), OptimizerState::new(store.soft_len(), store.d_model()))).collect();
    let omega = &stage.labels;
    let tag = format!("modular/stage{}", stage.index);
    fit(
        store,
        &stage.train,
        cfg,
        &tag,
        method,
        stage.index,
        log,
        |store, batch| {
            let subset = if cfg.no_subset_inv { omega.clone() } else { sampler.sample(omega) };
            let out = subset_invariant_loss(batch, &subset, store, backbone)?;
            if out.contributing > 0 {
                for (label, g) in &out.grads {
                    let st = states.get_mut(label).expect("subset drawn from stage labels");
                    let p = store.get_mut(label).expect("checked above");
                    apply_update(&mut p.soft_block, g, st, cfg)?;
                }
            }
            Ok(BatchStats { loss: out.loss, contributing: out.contributing, sampler_calls: sampler.calls() })
        },
        |store| stage_validation(store, stage, kind, backbone),
    )
}

/// Result of training across every stage of a plan.
#[derive(Clone, Debug)]
pub struct ModularRun {
    /// Store after each stage.
    pub stores: Vec<PromptStore<f32>>,
    /// How each stage's new labels were initialised.
    pub transfers: Vec<Vec<TransferChoice>>,
    pub summaries: Vec<Option<FitSummary>>,
    pub log: Vec<LogRecord>,
}

impl ModularRun {
    pub fn final_store(&self) -> &PromptStore<f32> {
        self.stores.last().expect("plans have at least one stage")
    }
}

pub fn stage_dir(root: &Path, stage: usize) -> std::path::PathBuf {
    root.join(format!("stage{stage}"))
}

/// Add a stage's labels to the store: transferred from earlier labels, or
/// freshly initialised for the first stage and when transfer is disabled.
pub fn init_stage(
    store: &mut PromptStore<f32>,
    stage: &Stage,
    prev: &[Label],
    cfg: &TrainConfig,
    backbone: &Backbone<f32>,
) -> Result<Vec<TransferChoice>> {
    if cfg.no_transfer || prev.is_empty() {
        let mut out = Vec::with_capacity(stage.labels.len());
        for l in &stage.labels {
            store.insert(init_label_prompt(l, backbone, store.soft_len(), cfg.seed)?, stage.index)?;
            out.push(TransferChoice { label: l.clone(), donors: Vec::new() });
        }
        return Ok(out);
    }
    transfer_init(store, &stage.labels, prev, cfg.transfer_k, stage.index, backbone, cfg.seed)
}

/// Sequential training over the plan's stages: initialise (with transfer)
/// the new labels, tune them, checkpoint. With `checkpoints`, stages whose
/// checkpoint already exists are loaded instead of retrained, so an
/// interrupted run resumes where it stopped.
pub fn run_in_the_wild(
    plan: &StagePlan,
    cfg: &TrainConfig,
    backbone: &Backbone<f32>,
    checkpoints: Option<&Path>,
    method: &str,
) -> Result<ModularRun> {
    cfg.validate()?;
    if !backbone.is_frozen() {
        return Err(Error::Config("prompt tuning needs a frozen backbone".into()));
    }
    let mut store = PromptStore::new(cfg.soft_len, backbone.d_model());
    let mut run = ModularRun { stores: Vec::new(), transfers: Vec::new(), summaries: Vec::new(), log: Vec::new() };
    for (k, stage) in plan.stages.iter().enumerate() {
        let dir = checkpoints.map(|c| stage_dir(c, stage.index));
        if let Some(d) = dir.as_ref().filter(|d| d.join(STORE_FILE).exists()) {
            store = load_store(d, backbone)?;
            run.transfers.push(Vec::new());
            run.summaries.push(None);
        } else {
            let prev = if k == 0 { Vec::new() } else { plan.seen_labels(k - 1) };
            run.transfers.push(init_stage(&mut store, stage, &prev, cfg, backbone)?);
            let scfg = SubsetSamplerConfig { p: cfg.subset_p, seed: cfg.seed };
            let mut sampler = SubsetSampler::new(&scfg, &format!("sampler/stage{}", stage.index));
            let s = train_stage(&mut store, stage, plan.task_kind, cfg, backbone, &mut sampler, method, &mut run.log)?;
            run.summaries.push(Some(s));
            if let Some(d) = &dir {
                save_store(&store, &backbone.vocab().hash(), d)?;
            }
        }
        run.stores.push(store.clone());
    }
    Ok(run)
}
