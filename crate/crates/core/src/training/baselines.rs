//! Task-level prompt tuning (sequential and per-stage), full fine-tuning
//! and the multitask oracle.

use std::path::Path;

use rand::Rng as _;

use super::adafactor::OptimizerState;
use super::config::TrainConfig;
use super::fit::{apply_update, fit, BatchStats, FitSummary, LogRecord};
use crate::backbone::checkpoint::{load_backbone, read_f32, save_backbone, write_f32};
use crate::backbone::{Backbone, UNK};
use crate::corpus::{Example, Label, Stage, StagePlan, TaskKind};
use crate::error::{Error, IoContext, Result};
use crate::eval::evaluate_prompt;
use crate::rng::rng_for;
use crate::tensor::Mat;

/// Rows of a task-level prompt matched to the label prompts' soft rows.
pub fn task_prompt_rows(cfg: &TrainConfig, n_labels: usize) -> usize {
    cfg.soft_len * n_labels
}

/// Prompt rows copied from uniformly drawn non-special vocabulary embeddings.
pub fn init_task_prompt(backbone: &Backbone<f32>, rows: usize, seed: u64, tag: &str) -> Result<Mat<f32>> {
    let mut rng = rng_for(seed, tag);
    let n = backbone.vocab().len();
    let ids: Vec<usize> = (0..rows).map(|_| rng.gen_range(UNK + 1..n)).collect();
    backbone.embed_tokens(&ids)
}

fn validation_data(stage: &Stage) -> &[Example] {
    if stage.validation.is_empty() {
        &stage.train
    } else {
        &stage.validation
    }
}

/// Tune one task-level prompt on a stage.
pub fn train_task_prompt(
    prompt: &mut Mat<f32>,
    stage: &Stage,
    kind: TaskKind,
    cfg: &TrainConfig,
    backbone: &Backbone<f32>,
    method: &str,
    log: &mut Vec<LogRecord>,
) -> Result<FitSummary> {
    let mut st = OptimizerState::new(prompt.rows(), prompt.cols());
    let vocab = backbone.vocab();
    let tag = format!("{method}/stage{}", stage.index);
    fit(
        prompt,
        &stage.train,
        cfg,
        &tag,
        method,
        stage.index,
        log,
        |p, batch| {
            let mut g = Mat::zeros(p.rows(), p.cols());
            let mut nll = 0.0;
            for ex in batch {
                let r = backbone.forward_logprob(p, &vocab.encode(&ex.input), &vocab.encode_target(&ex.target))?;
                nll -= f64::from(r.logprob);
                g.add_assign(&r.prompt_grad);
            }
            g.scale(1.0 / batch.len() as f32);
            apply_update(p, &g, &mut st, cfg)?;
            Ok(BatchStats { loss: nll / batch.len() as f64, contributing: batch.len(), sampler_calls: 0 })
        },
        |p| Ok(evaluate_prompt(backbone, p, validation_data(stage), &stage.labels, kind, false)?.value),
    )
}

/// Tune every weight of `model` on a set of examples.
pub fn train_full(
    model: &mut Backbone<f32>,
    stage: &Stage,
    kind: TaskKind,
    cfg: &TrainConfig,
    method: &str,
    log: &mut Vec<LogRecord>,
) -> Result<FitSummary> {
    let mut states: Vec<OptimizerState<f32>> = model.params().iter().map(|p| OptimizerState::new(p.rows(), p.cols())).collect();
    let empty = Mat::zeros(0, model.d_model());
    let tag = format!("{method}/stage{}", stage.index);
    fit(
        model,
        &stage.train,
        cfg,
        &tag,
        method,
        stage.index,
        log,
        |m, batch| {
            let mut acc: Vec<Mat<f32>> = m.params().iter().map(|p| Mat::zeros(p.rows(), p.cols())).collect();
            let mut nll = 0.0;
            for ex in batch {
                let v = m.vocab();
                let (lp, grads, _) = m.param_gradients(None, &v.encode(&ex.input), &v.encode_target(&ex.target))?;
                nll -= f64::from(lp);
                for (a, g) in acc.iter_mut().zip(&grads) {
                    a.add_assign(g);
                }
            }
            let inv = 1.0 / batch.len() as f32;
            for ((p, g), st) in m.params_mut()?.iter_mut().zip(acc.iter_mut()).zip(states.iter_mut()) {
                g.scale(inv);
                apply_update(p, g, st, cfg)?;
            }
            Ok(BatchStats { loss: nll / batch.len() as f64, contributing: batch.len(), sampler_calls: 0 })
        },
        |m| Ok(evaluate_prompt(m, &empty, validation_data(stage), &stage.labels, kind, false)?.value),
    )
}

fn prompt_file(root: &Path, stage: usize) -> std::path::PathBuf {
    root.join(format!("stage{stage}")).join("prompt.f32")
}

fn load_prompt(root: &Path, stage: usize, rows: usize, d: usize) -> Result<Option<Mat<f32>>> {
    let f = prompt_file(root, stage);
    if f.exists() {
        Ok(Some(read_f32(&f, rows, d)?))
    } else {
        Ok(None)
    }
}

fn save_prompt(root: &Path, stage: usize, p: &Mat<f32>) -> Result<()> {
    let f = prompt_file(root, stage);
    let dir = f.parent().expect("file has a parent");
    std::fs::create_dir_all(dir).at(dir)?;
    write_f32(&f, p)
}

/// One task prompt carried through every stage in order. Returns the prompt
/// after each stage.
pub fn train_pt(
    plan: &StagePlan,
    cfg: &TrainConfig,
    backbone: &Backbone<f32>,
    checkpoints: Option<&Path>,
    log: &mut Vec<LogRecord>,
) -> Result<Vec<Mat<f32>>> {
    let rows = task_prompt_rows(cfg, plan.stages.iter().map(|s| s.labels.len()).max().unwrap_or(1));
    let mut prompt = init_task_prompt(backbone, rows, cfg.seed, "pt/init")?;
    let mut out = Vec::with_capacity(plan.stages.len());
    for stage in &plan.stages {
        match checkpoints.map(|c| load_prompt(c, stage.index, rows, backbone.d_model())).transpose()?.flatten() {
            Some(p) => prompt = p,
            None => {
                train_task_prompt(&mut prompt, stage, plan.task_kind, cfg, backbone, "pt", log)?;
                if let Some(c) = checkpoints {
                    save_prompt(c, stage.index, &prompt)?;
                }
            }
        }
        out.push(prompt.clone());
    }
    Ok(out)
}

/// An independent task prompt per stage.
pub fn train_pt_cl(
    plan: &StagePlan,
    cfg: &TrainConfig,
    backbone: &Backbone<f32>,
    checkpoints: Option<&Path>,
    log: &mut Vec<LogRecord>,
) -> Result<Vec<Mat<f32>>> {
    let mut out = Vec::with_capacity(plan.stages.len());
    for stage in &plan.stages {
        let rows = task_prompt_rows(cfg, stage.labels.len());
        let prompt = match checkpoints.map(|c| load_prompt(c, stage.index, rows, backbone.d_model())).transpose()?.flatten() {
            Some(p) => p,
            None => {
                let mut p = init_task_prompt(backbone, rows, cfg.seed, &format!("pt_cl/init/stage{}", stage.index))?;
                train_task_prompt(&mut p, stage, plan.task_kind, cfg, backbone, "pt_cl", log)?;
                if let Some(c) = checkpoints {
                    save_prompt(c, stage.index, &p)?;
                }
                p
            }
        };
        out.push(prompt);
    }
    Ok(out)
}

/// Fine-tune a private copy of the backbone through the stages in order.
/// Returns the model after each stage; the shared backbone is untouched.
pub fn train_finetune(
    plan: &StagePlan,
    cfg: &TrainConfig,
    backbone: &Backbone<f32>,
    checkpoints: Option<&Path>,
    log: &mut Vec<LogRecord>,
) -> Result<Vec<Backbone<f32>>> {
    let mut model = backbone.unfrozen_copy();
    let mut out = Vec::with_capacity(plan.stages.len());
    for stage in &plan.stages {
        let dir = checkpoints.map(|c| c.join(format!("stage{}", stage.index)));
        match dir.as_ref().filter(|d| d.join(crate::backbone::checkpoint::META_FILE).exists()) {
            Some(d) => model = load_backbone(d)?,
            None => {
                train_full(&mut model, stage, plan.task_kind, cfg, "finetune", log)?;
                if let Some(d) = &dir {
                    save_backbone(&model, d)?;
                }
            }
        }
        out.push(model.clone());
    }
    Ok(out)
}

/// The union of every stage's data as one pseudo-stage.
pub fn union_stage(plan: &StagePlan) -> Stage {
    let labels: Vec<Label> = plan.all_labels();
    Stage {
        index: 0,
        labels,
        train: plan.stages.iter().flat_map(|s| s.train.iter().cloned()).collect(),
        validation: plan.stages.iter().flat_map(|s| s.validation.iter().cloned()).collect(),
    }
}

/// Fine-tune a private copy on all stages at once.
pub fn train_multitask(
    plan: &StagePlan,
    cfg: &TrainConfig,
    backbone: &Backbone<f32>,
    checkpoints: Option<&Path>,
    log: &mut Vec<LogRecord>,
) -> Result<Backbone<f32>> {
    let dir = checkpoints.map(|c| c.join("model"));
    if let Some(d) = dir.as_ref().filter(|d| d.join(crate::backbone::checkpoint::META_FILE).exists()) {
        return load_backbone(d);
    }
    let mut model = backbone.unfrozen_copy();
    let stage = union_stage(plan);
    if stage.train.is_empty() {
        return Err(Error::Config("multitask training needs examples".into()));
    }
    train_full(&mut model, &stage, plan.task_kind, cfg, "multitask", log)?;
    if let Some(d) = &dir {
        save_backbone(&model, d)?;
    }
    Ok(model)
}
