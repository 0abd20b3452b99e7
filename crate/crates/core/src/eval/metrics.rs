use serde::{Deserialize, Serialize};

use crate::corpus::{canonical_target, parse_clauses, Clause, Label, TaskKind, CLAUSE_SEP};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MetricName {
    ExactMatch,
    BioF1,
}

impl MetricName {
    pub fn as_str(self) -> &'static str {
        match self {
            MetricName::ExactMatch => "exact_match",
            MetricName::BioF1 => "bio_f1",
        }
    }

    /// Headline metric for a task kind.
    pub fn for_task(kind: TaskKind) -> Self {
        match kind {
            TaskKind::SequenceLabel => MetricName::BioF1,
            _ => MetricName::ExactMatch,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Metric {
    pub name: MetricName,
    pub value: f64,
    pub support: usize,
}

/// Fraction of predictions equal to their gold target after canonicalisation.
pub fn exact_match_accuracy(preds: &[String], golds: &[String], kind: TaskKind) -> Result<Metric> {
    assert_eq!(preds.len(), golds.len(), "prediction/gold length mismatch");
    if preds.is_empty() {
        return Err(Error::EmptyEval);
    }
    let hits = preds
        .iter()
        .zip(golds)
        .filter(|(p, g)| canonical_target(p, kind) == canonical_target(g, kind))
        .count();
    Ok(Metric { name: MetricName::ExactMatch, value: hits as f64 / preds.len() as f64, support: preds.len() })
}

/// Place each clause's span at its first occurrence in `tokens` that does
/// not overlap an earlier placement. Returns the BIO tag sequence and the
/// number of clauses that could not be placed.
pub fn bio_tags(tokens: &[&str], clauses: &[Clause]) -> (Vec<Option<(bool, Label)>>, usize) {
    let mut tags: Vec<Option<(bool, Label)>> = vec![None; tokens.len()];
    let mut missing = 0;
    for c in clauses {
        let span: Vec<&str> = c.span.split(' ').collect();
        let found = (0..=tokens.len().saturating_sub(span.len()))
            .filter(|&s| s + span.len() <= tokens.len())
            .find(|&s| tokens[s..s + span.len()] == span[..] && tags[s..s + span.len()].iter().all(Option::is_none));
        match found {
            Some(s) => {
                for (i, t) in tags[s..s + span.len()].iter_mut().enumerate() {
                    *t = Some((i == 0, c.label.clone()));
                }
            }
            None => missing += 1,
        }
    }
    (tags, missing)
}

/// Entity chunks `(start, end, type)` of a BIO sequence, conlleval style:
/// a chunk starts at `B-x`, or at `I-x` following anything but a chunk of
/// type `x`.
pub fn bio_chunks(tags: &[Option<(bool, Label)>]) -> Vec<(usize, usize, Label)> {
    let mut out = Vec::new();
    let mut open: Option<(usize, Label)> = None;
    for (i, t) in tags.iter().enumerate() {
        let continues = matches!((t, &open), (Some((false, ty)), Some((_, cur))) if ty == cur);
        if !continues {
            if let Some((s, ty)) = open.take() {
                out.push((s, i, ty));
            }
            if let Some((_, ty)) = t {
                open = Some((i, ty.clone()));
            }
        }
    }
    if let Some((s, ty)) = open {
        out.push((s, tags.len(), ty));
    }
    out
}

/// Corpus-level micro F1 over entity chunks. Unplaceable predicted spans
/// count as false positives and unplaceable gold spans as false negatives.
/// With no entities anywhere the score is 1.
pub fn bio_f1(preds: &[String], golds: &[String], inputs: &[String]) -> Result<Metric> {
    assert!(preds.len() == golds.len() && golds.len() == inputs.len(), "length mismatch");
    if preds.is_empty() {
        return Err(Error::EmptyEval);
    }
    let (mut tp, mut fp, mut fneg) = (0usize, 0usize, 0usize);
    for ((p, g), x) in preds.iter().zip(golds).zip(inputs) {
        let tokens: Vec<&str> = x.split_whitespace().collect();
        let (pt, p_missing) = bio_tags(&tokens, &parse_clauses(p)?);
        let (gt, g_missing) = bio_tags(&tokens, &parse_clauses(g)?);
        let pc = bio_chunks(&pt);
        let gc = bio_chunks(&gt);
        let hit = pc.iter().filter(|c| gc.contains(c)).count();
        tp += hit;
        fp += pc.len() - hit + p_missing;
        fneg += gc.len() - hit + g_missing;
    }
    let value = if tp + fp + fneg == 0 {
        1.0
    } else if tp == 0 {
        0.0
    } else {
        let p = tp as f64 / (tp + fp) as f64;
        let r = tp as f64 / (tp + fneg) as f64;
        2.0 * p * r / (p + r)
    };
    Ok(Metric { name: MetricName::BioF1, value, support: preds.len() })
}

/// Keep the well-formed clauses of a generated sequence-labelling output;
/// `none` if nothing survives.
pub fn salvage_clauses(pred: &str) -> String {
    if let Ok(c) = parse_clauses(pred) {
        return crate::corpus::serialize_clauses(&c);
    }
    let kept: Vec<Clause> = pred
        .split(CLAUSE_SEP)
        .filter_map(|piece| parse_clauses(&format!("{piece} {CLAUSE_SEP}")).ok())
        .flatten()
        .collect();
    crate::corpus::serialize_clauses(&kept)
}

/// Headline metric of raw predictions against examples' targets.
pub fn score(kind: TaskKind, preds: &[String], golds: &[String], inputs: &[String]) -> Result<Metric> {
    match kind {
        TaskKind::SequenceLabel => {
            let cleaned: Vec<String> = preds.iter().map(|p| salvage_clauses(p)).collect();
            bio_f1(&cleaned, golds, inputs)
        }
        _ => exact_match_accuracy(preds, golds, kind),
    }
}
