//! Scoring generated targets, decoding constraints, the three test regimes
//! and the prompt-modularity probes.

pub mod constraint;
pub mod metrics;
pub mod probe;
pub mod regime;

pub use constraint::{build_constraint_trie, ClauseGrammar, Constraint, Trie};
pub use metrics::{bio_f1, exact_match_accuracy, score, Metric, MetricName};
pub use probe::{run_probe, ProbeKind, ProbeRecord};
pub use regime::{evaluate_regime, regime_cases, EvalOptions, MetricRecord, Regime, RegimeCase};

use crate::backbone::{generate, Backbone};
use crate::corpus::{Example, Label, TaskKind};
use crate::error::Result;
use crate::tensor::{Mat, Real};

/// Decoding budget for targets over `labels`: the longest label plus slack
/// for single-label tasks, room for a few clauses for sequence labelling.
pub fn max_decode_len<F: Real>(kind: TaskKind, labels: &[Label], backbone: &Backbone<F>) -> usize {
    let longest = labels.iter().map(|l| backbone.vocab().encode(l.as_str()).len()).max().unwrap_or(1);
    match kind {
        TaskKind::SingleClass | TaskKind::Relation => longest + 2,
        TaskKind::SequenceLabel => 4 * (longest + 4),
    }
}

/// Greedy prediction for one input under a numeric prompt.
pub fn predict<F: Real>(
    backbone: &Backbone<F>,
    prompt: &Mat<F>,
    input: &str,
    max_len: usize,
    constraint: Option<&Constraint>,
) -> Result<String> {
    let ids = backbone.vocab().encode(input);
    let c = constraint.map(|c| c as &dyn crate::backbone::DecodeConstraint);
    Ok(backbone.vocab().decode(&generate(backbone, prompt, &ids, max_len, c)?))
}

/// Headline metric of `examples` predicted under one prompt.
pub fn evaluate_prompt<F: Real>(
    backbone: &Backbone<F>,
    prompt: &Mat<F>,
    examples: &[Example],
    labels: &[Label],
    kind: TaskKind,
    constrained: bool,
) -> Result<Metric> {
    let max_len = max_decode_len(kind, labels, backbone);
    let constraint = constrained.then(|| build_constraint_trie(labels, kind, backbone.vocab()));
    let preds = examples
        .iter()
        .map(|e| predict(backbone, prompt, &e.input, max_len, constraint.as_ref()))
        .collect::<Result<Vec<_>>>()?;
    score_examples(kind, &preds, examples)
}

/// Score predictions against the examples they were made for.
pub fn score_examples(kind: TaskKind, preds: &[String], examples: &[Example]) -> Result<Metric> {
    let golds: Vec<String> = examples.iter().map(|e| e.target.clone()).collect();
    let inputs: Vec<String> = examples.iter().map(|e| e.input.clone()).collect();
    score(kind, preds, &golds, &inputs)
}
