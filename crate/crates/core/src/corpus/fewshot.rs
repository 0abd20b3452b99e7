use std::collections::BTreeMap;

use rand::seq::SliceRandom;

use super::{Example, Label, TaskKind};
use crate::rng::rng_for;

#[derive(Clone, Debug, Default)]
pub struct FewShotSample {
    pub examples: Vec<Example>,
    /// Labels whose pool could not supply the requested number of shots.
    pub warnings: Vec<String>,
}

/// Per-label few-shot subsample.
///
/// Single-label tasks take exactly `min(shots, available)` examples per label.
/// Sequence labelling walks a shuffled pool and keeps an example whenever it
/// covers a label that is still short of `shots`.
pub fn subsample_fewshot(examples: &[Example], shots: usize, seed: u64) -> FewShotSample {
    assert!(shots >= 1, "shots must be positive");
    let mut rng = rng_for(seed, "fewshot");
    let mut out = FewShotSample::default();
    let Some(kind) = examples.first().map(|e| e.task_kind) else {
        return out;
    };

    if kind == TaskKind::SequenceLabel {
        let mut order: Vec<usize> = (0..examples.len()).collect();
        order.shuffle(&mut rng);
        let mut counts: BTreeMap<Label, usize> = BTreeMap::new();
        let mut available: BTreeMap<Label, usize> = BTreeMap::new();
        let mut parsed = Vec::with_capacity(examples.len());
        for e in examples {
            let labels = e.labels().unwrap_or_default();
            for l in &labels {
                *available.entry(l.clone()).or_default() += 1;
            }
            parsed.push(labels);
        }
        let mut keep = Vec::new();
        for i in order {
            if parsed[i].iter().any(|l| counts.get(l).copied().unwrap_or(0) < shots) {
                for l in &parsed[i] {
                    *counts.entry(l.clone()).or_default() += 1;
                }
                keep.push(i);
            }
        }
        keep.sort_unstable();
        out.examples = keep.into_iter().map(|i| examples[i].clone()).collect();
        for (label, avail) in available {
            if avail < shots {
                out.warnings.push(format!("label {label:?}: {avail} examples available, {shots} requested"));
            }
        }
        return out;
    }

    let mut by_label: BTreeMap<Label, Vec<usize>> = BTreeMap::new();
    for (i, e) in examples.iter().enumerate() {
        if let Some(l) = e.labels().ok().and_then(|s| s.into_iter().next()) {
            by_label.entry(l).or_default().push(i);
        }
    }
    let mut keep = Vec::new();
    for (label, mut idx) in by_label {
        if idx.len() < shots {
            out.warnings
                .push(format!("label {label:?}: {} examples available, {shots} requested", idx.len()));
        }
        idx.shuffle(&mut rng);
        idx.truncate(shots);
        keep.extend(idx);
    }
    keep.sort_unstable();
    out.examples = keep.into_iter().map(|i| examples[i].clone()).collect();
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pool(per_label: usize, labels: &[&str]) -> Vec<Example> {
        let mut v = Vec::new();
        for l in labels {
            for i in 0..per_label {
                v.push(Example::new(format!("text {i}"), *l, TaskKind::SingleClass));
            }
        }
        v
    }

    fn count(ex: &[Example], label: &str) -> usize {
        ex.iter().filter(|e| e.target == label).count()
    }

    #[test]
    fn exact_shots_per_label() {
        let p = pool(500, &["a", "b", "c"]);
        let s = subsample_fewshot(&p, 200, 3);
        for l in ["a", "b", "c"] {
            assert_eq!(count(&s.examples, l), 200);
        }
        assert!(s.warnings.is_empty());
    }

    #[test]
    fn exhausted_pool_clamps_and_warns() {
        let p = pool(3, &["a", "b"]);
        let s = subsample_fewshot(&p, 50, 3);
        assert_eq!(count(&s.examples, "a"), 3);
        assert_eq!(count(&s.examples, "b"), 3);
        assert_eq!(s.warnings.len(), 2);
    }

    #[test]
    fn deterministic_per_seed() {
        let p = pool(40, &["a", "b"]);
        assert_eq!(subsample_fewshot(&p, 10, 9).examples, subsample_fewshot(&p, 10, 9).examples);
        assert_ne!(subsample_fewshot(&p, 10, 9).examples, subsample_fewshot(&p, 10, 10).examples);
    }
}
