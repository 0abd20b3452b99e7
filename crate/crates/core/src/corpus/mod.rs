//! Text-to-text data model: labels, examples, target grammars, staged
//! few-shot datasets and the synthetic corpus generator.

mod fewshot;
pub mod io;
mod stages;
pub mod synthetic;

use std::collections::BTreeSet;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use fewshot::{subsample_fewshot, FewShotSample};
pub use stages::{
    build_fused_labelsets, build_plan, project_example, split_stages, FusedTest, PlanOptions, Stage,
    StagePlan,
};
pub use synthetic::{gen_synthetic_task, SyntheticCorpus, SyntheticTaskConfig};

/// Sentinel target for a sequence-labelling example with no entities.
pub const NONE_TARGET: &str = "none";
/// Separates a span from its entity type inside a clause.
pub const SPAN_SEP: &str = "!";
/// Terminates a clause.
pub const CLAUSE_SEP: &str = ";";
/// Separates text and entity mentions in relation inputs.
pub const FIELD_SEP: &str = "|";

/// A class label. Whitespace is normalised to single spaces.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct Label(String);

impl Label {
    pub fn new(name: &str) -> Result<Self> {
        let norm = normalize_ws(name);
        if norm.is_empty() {
            return Err(Error::InvalidLabel(name.to_string()));
        }
        if norm.contains(['!', ';', '|']) || norm == NONE_TARGET {
            return Err(Error::InvalidLabel(name.to_string()));
        }
        Ok(Self(norm))
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }

    pub fn tokens(&self) -> impl Iterator<Item = &str> {
        self.0.split(' ')
    }
}

impl fmt::Display for Label {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl TryFrom<String> for Label {
    type Error = Error;
    fn try_from(s: String) -> Result<Self> {
        Label::new(&s)
    }
}

impl From<Label> for String {
    fn from(l: Label) -> String {
        l.0
    }
}

pub fn normalize_ws(s: &str) -> String {
    s.split_whitespace().collect::<Vec<_>>().join(" ")
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TaskKind {
    SingleClass,
    SequenceLabel,
    Relation,
}

impl TaskKind {
    pub fn as_str(self) -> &'static str {
        match self {
            TaskKind::SingleClass => "single_class",
            TaskKind::SequenceLabel => "sequence_label",
            TaskKind::Relation => "relation",
        }
    }
}

impl std::str::FromStr for TaskKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "single_class" => Ok(TaskKind::SingleClass),
            "sequence_label" => Ok(TaskKind::SequenceLabel),
            "relation" => Ok(TaskKind::Relation),
            other => Err(Error::Config(format!("unknown task kind {other:?}"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Example {
    pub input: String,
    pub target: String,
    pub task_kind: TaskKind,
}

impl Example {
    pub fn new(input: impl Into<String>, target: impl Into<String>, task_kind: TaskKind) -> Self {
        Self { input: input.into(), target: target.into(), task_kind }
    }

    /// Labels named by this example's target.
    pub fn labels(&self) -> Result<BTreeSet<Label>> {
        cls_of_target(&self.target, self.task_kind)
    }
}

/// One `span ! type ;` clause of a sequence-labelling target.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct Clause {
    pub span: String,
    pub label: Label,
}

fn malformed(target: &str, reason: &str) -> Error {
    Error::MalformedTarget { target: target.to_string(), reason: reason.to_string() }
}

/// Parse a sequence-labelling target into clauses. `"none"` parses to no clauses.
pub fn parse_clauses(target: &str) -> Result<Vec<Clause>> {
    let t = target.trim();
    if t == NONE_TARGET {
        return Ok(Vec::new());
    }
    if t.is_empty() {
        return Err(malformed(target, "empty target"));
    }
    let mut pieces: Vec<&str> = t.split(CLAUSE_SEP).collect();
    // A well-formed target ends with ';', leaving an empty tail.
    if pieces.last().is_some_and(|p| p.trim().is_empty()) {
        pieces.pop();
    }
    let mut clauses = Vec::with_capacity(pieces.len());
    for piece in pieces {
        let (span, ty) = piece
            .rsplit_once(SPAN_SEP)
            .ok_or_else(|| malformed(target, "clause lacks '!'"))?;
        let span = normalize_ws(span);
        let ty = normalize_ws(ty);
        if span.is_empty() {
            return Err(malformed(target, "empty span"));
        }
        if ty.is_empty() {
            return Err(malformed(target, "empty type"));
        }
        let label = Label::new(&ty).map_err(|_| malformed(target, "invalid type"))?;
        clauses.push(Clause { span, label });
    }
    Ok(clauses)
}

/// Canonical serialisation: `span ! type ;` joined by single spaces, or `none`.
pub fn serialize_clauses(clauses: &[Clause]) -> String {
    if clauses.is_empty() {
        return NONE_TARGET.to_string();
    }
    clauses
        .iter()
        .map(|c| format!("{} {SPAN_SEP} {} {CLAUSE_SEP}", c.span, c.label))
        .collect::<Vec<_>>()
        .join(" ")
}

/// The label set named by a target string.
pub fn cls_of_target(target: &str, kind: TaskKind) -> Result<BTreeSet<Label>> {
    match kind {
        TaskKind::SingleClass | TaskKind::Relation => {
            let label = Label::new(target).map_err(|_| malformed(target, "not a label name"))?;
            Ok(BTreeSet::from([label]))
        }
        TaskKind::SequenceLabel => Ok(parse_clauses(target)?.into_iter().map(|c| c.label).collect()),
    }
}

/// Canonical form of a target string, used for exact-match comparison.
pub fn canonical_target(target: &str, kind: TaskKind) -> String {
    match kind {
        TaskKind::SequenceLabel => match parse_clauses(target) {
            Ok(c) => serialize_clauses(&c),
            Err(_) => normalize_ws(target),
        },
        _ => normalize_ws(target),
    }
}

#[cfg(test)]
pub(crate) fn labels(names: &[&str]) -> Vec<Label> {
    names.iter().map(|n| Label::new(n).expect("valid label")).collect()
}
