use std::path::Path;

use serde::{Deserialize, Serialize};

use super::baselines::{train_finetune, train_multitask, train_pt, train_pt_cl};
use super::config::{Method, TrainConfig};
use super::fit::LogRecord;
use super::modular::{run_in_the_wild, stage_dir};
use crate::backbone::checkpoint::{load_backbone, read_f32};
use crate::backbone::Backbone;
use crate::corpus::io::{read_json, write_json};
use crate::corpus::{Label, StagePlan};
use crate::error::{Error, Result};
use crate::eval::{Regime, RegimeCase};
use crate::promptstore::checkpoint::load_store;
use crate::promptstore::{formulate_prompt, PromptStore};
use crate::tensor::Mat;

/// What a trained method leaves behind for evaluation.
#[derive(Clone, Debug)]
pub enum Artifacts {
    /// Final label-prompt store.
    Modular(PromptStore<f32>),
    /// The sequential task prompt after each stage.
    Pt(Vec<Mat<f32>>),
    /// Independent per-stage task prompts with the labels each was trained on.
    PtCl { prompts: Vec<Mat<f32>>, stage_labels: Vec<Vec<Label>> },
    /// The fine-tuned model after each stage.
    Finetune(Vec<Backbone<f32>>),
    Multitask(Backbone<f32>),
}

/// Model and prompt used for one regime case.
pub struct Inference<'a> {
    pub model: &'a Backbone<f32>,
    pub prompt: Mat<f32>,
    /// The label prompts composed into `prompt`, for methods that have them.
    pub labels: Option<Vec<Label>>,
}

fn pick<T>(items: &[T], regime: Regime, case: &RegimeCase) -> Result<usize> {
    let i = match regime {
        Regime::Specific => case.index - 1,
        _ => items.len().checked_sub(1).ok_or_else(|| Error::MissingCheckpoint("no stages".into()))?,
    };
    if i >= items.len() {
        return Err(Error::MissingCheckpoint(format!("stage {}", i + 1)));
    }
    Ok(i)
}

impl Artifacts {
    /// Model and prompt for a regime case. Label-prompt methods compose the
    /// case's label set; per-stage prompts are concatenated for every stage
    /// whose labels meet the case's; single-prompt and fine-tuned methods use
    /// the stage's own checkpoint for the specific regime and the final one
    /// otherwise.
    pub fn inference<'a>(&'a self, regime: Regime, case: &RegimeCase, backbone: &'a Backbone<f32>) -> Result<Inference<'a>> {
        let empty = || Mat::zeros(0, backbone.d_model());
        Ok(match self {
            Artifacts::Modular(store) => {
                let order = store.canonical_order(&case.labels)?;
                Inference { model: backbone, prompt: formulate_prompt(store, &order)?, labels: Some(order) }
            }
            Artifacts::Pt(prompts) => {
                Inference { model: backbone, prompt: prompts[pick(prompts, regime, case)?].clone(), labels: None }
            }
            Artifacts::PtCl { prompts, stage_labels } => {
                let parts: Vec<&Mat<f32>> = prompts
                    .iter()
                    .zip(stage_labels)
                    .filter(|(_, ls)| ls.iter().any(|l| case.labels.contains(l)))
                    .map(|(p, _)| p)
                    .collect();
                if parts.is_empty() {
                    return Err(Error::MissingCheckpoint(format!("no stage prompt covers case {}", case.index)));
                }
                Inference { model: backbone, prompt: Mat::stack_rows(&parts, backbone.d_model()), labels: None }
            }
            Artifacts::Finetune(models) => Inference { model: &models[pick(models, regime, case)?], prompt: empty(), labels: None },
            Artifacts::Multitask(model) => Inference { model, prompt: empty(), labels: None },
        })
    }

    pub fn store(&self) -> Option<&PromptStore<f32>> {
        match self {
            Artifacts::Modular(s) => Some(s),
            _ => None,
        }
    }
}

/// Trained artifacts plus the training log.
pub struct TrainOutcome {
    pub artifacts: Artifacts,
    pub log: Vec<LogRecord>,
}

/// Train one method over a plan. With `checkpoints`, per-stage checkpoints
/// are written there and reused on a rerun.
pub fn train_method(
    method: Method,
    plan: &StagePlan,
    cfg: &TrainConfig,
    backbone: &Backbone<f32>,
    checkpoints: Option<&Path>,
) -> Result<TrainOutcome> {
    let cfg = method.effective_config(cfg);
    cfg.validate()?;
    let mut log = Vec::new();
    let artifacts = match method {
        Method::ModularPt | Method::NoTransfer | Method::NoSubsetInv => {
            let run = run_in_the_wild(plan, &cfg, backbone, checkpoints, method.as_str())?;
            log = run.log;
            Artifacts::Modular(run.stores.into_iter().last().expect("at least one stage"))
        }
        Method::Pt => Artifacts::Pt(train_pt(plan, &cfg, backbone, checkpoints, &mut log)?),
        Method::PtCl => Artifacts::PtCl {
            prompts: train_pt_cl(plan, &cfg, backbone, checkpoints, &mut log)?,
            stage_labels: plan.stage_label_sets(),
        },
        Method::Finetune => Artifacts::Finetune(train_finetune(plan, &cfg, backbone, checkpoints, &mut log)?),
        Method::Multitask => Artifacts::Multitask(train_multitask(plan, &cfg, backbone, checkpoints, &mut log)?),
    };
    if let Some(c) = checkpoints {
        write_json(&c.join(DONE_FILE), &Done { method, stages: plan.stages.len() })?;
    }
    Ok(TrainOutcome { artifacts, log })
}

const DONE_FILE: &str = "done.json";

#[derive(Serialize, Deserialize)]
struct Done {
    method: Method,
    stages: usize,
}

/// Load the artifacts of a completed training run from its checkpoint dir.
pub fn load_artifacts(method: Method, plan: &StagePlan, cfg: &TrainConfig, backbone: &Backbone<f32>, dir: &Path) -> Result<Artifacts> {
    let done = dir.join(DONE_FILE);
    if !done.exists() {
        return Err(Error::MissingCheckpoint(dir.display().to_string()));
    }
    let d: Done = read_json(&done)?;
    if d.method != method || d.stages != plan.stages.len() {
        return Err(Error::Checkpoint(format!("{} holds a different run", dir.display())));
    }
    let cfg = method.effective_config(cfg);
    let dm = backbone.d_model();
    let stage_path = |s: usize| stage_dir(dir, s);
    Ok(match method {
        Method::ModularPt | Method::NoTransfer | Method::NoSubsetInv => {
            let last = plan.stages.last().expect("at least one stage").index;
            Artifacts::Modular(load_store(&stage_path(last), backbone)?)
        }
        Method::Pt => {
            let rows = super::baselines::task_prompt_rows(&cfg, plan.stages.iter().map(|s| s.labels.len()).max().unwrap_or(1));
            Artifacts::Pt(
                plan.stages.iter().map(|s| read_f32(&stage_path(s.index).join("prompt.f32"), rows, dm)).collect::<Result<_>>()?,
            )
        }
        Method::PtCl => Artifacts::PtCl {
            prompts: plan
                .stages
                .iter()
                .map(|s| {
                    let rows = super::baselines::task_prompt_rows(&cfg, s.labels.len());
                    read_f32(&stage_path(s.index).join("prompt.f32"), rows, dm)
                })
                .collect::<Result<_>>()?,
            stage_labels: plan.stage_label_sets(),
        },
        Method::Finetune => {
            Artifacts::Finetune(plan.stages.iter().map(|s| load_backbone(&stage_path(s.index))).collect::<Result<_>>()?)
        }
        Method::Multitask => Artifacts::Multitask(load_backbone(&dir.join("model"))?),
    })
}
