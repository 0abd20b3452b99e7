use std::fmt;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use super::regime::{regime_cases, with_mean, EvalOptions, Regime, MEAN_KEY};
use super::{build_constraint_trie, max_decode_len, predict, score_examples};
use crate::backbone::Backbone;
use crate::corpus::{Example, Label, StagePlan};
use crate::error::{Error, Result};
use crate::promptstore::{formulate_prompt, PromptStore};
use crate::rng::rng_for;
use crate::tensor::Mat;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProbeKind {
    /// Remove the prompts of every gold label.
    DropGt,
    /// Remove one prompt of a non-gold label.
    DropRandom,
    /// Shuffle the prompt order.
    Permute,
}

impl ProbeKind {
    pub const ALL: [ProbeKind; 3] = [ProbeKind::DropGt, ProbeKind::DropRandom, ProbeKind::Permute];

    pub fn as_str(self) -> &'static str {
        match self {
            ProbeKind::DropGt => "drop_gt",
            ProbeKind::DropRandom => "drop_random",
            ProbeKind::Permute => "permute",
        }
    }
}

impl fmt::Display for ProbeKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ProbeKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        ProbeKind::ALL
            .into_iter()
            .find(|p| p.as_str() == s)
            .ok_or_else(|| Error::Config(format!("unknown probe {s:?} (expected drop_gt, drop_random or permute)")))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProbeRecord {
    pub probe: ProbeKind,
    /// Fused-set number, or `mean`.
    pub stage: String,
    pub default: f64,
    pub probed: f64,
    /// `probed - default`.
    pub delta: f64,
    pub support: usize,
    pub seed: u64,
    pub options: EvalOptions,
}

/// The label order shown to the model for one example under a probe.
pub fn probe_labels(kind: ProbeKind, canonical: &[Label], ex: &Example, rng: &mut crate::rng::Rng) -> Result<Vec<Label>> {
    let gold = ex.labels()?;
    let mut out = canonical.to_vec();
    match kind {
        ProbeKind::DropGt => out.retain(|l| !gold.contains(l)),
        ProbeKind::DropRandom => {
            let pool: Vec<usize> = (0..out.len()).filter(|&i| !gold.contains(&out[i])).collect();
            if !pool.is_empty() {
                out.remove(pool[rng.gen_range(0..pool.len())]);
            }
        }
        ProbeKind::Permute => out.shuffle(rng),
    }
    Ok(out)
}

/// Re-run fused evaluation with each example's label set altered by the
/// probe and report the change against default inference.
pub fn run_probe(
    kind: ProbeKind,
    store: &PromptStore<f32>,
    plan: &StagePlan,
    backbone: &Backbone<f32>,
    seed: u64,
    options: EvalOptions,
) -> Result<Vec<ProbeRecord>> {
    let cases = regime_cases(Regime::Fused, plan);
    if cases.is_empty() {
        return Err(Error::Config("probes need at least one fused test set".into()));
    }
    let kindk = plan.task_kind;
    let mut rng = rng_for(seed, &format!("probe/{kind}"));
    let (mut defaults, mut probed) = (Vec::new(), Vec::new());
    for case in &cases {
        if case.test.is_empty() {
            return Err(Error::EmptyEval);
        }
        let order = store.canonical_order(&case.labels)?;
        let max_len = max_decode_len(kindk, &case.labels, backbone);
        let base_prompt = formulate_prompt(store, &order)?;
        let base_c = options.constrained.then(|| build_constraint_trie(&order, kindk, backbone.vocab()));
        let mut base_preds = Vec::with_capacity(case.test.len());
        let mut probe_preds = Vec::with_capacity(case.test.len());
        for ex in &case.test {
            base_preds.push(predict(backbone, &base_prompt, &ex.input, max_len, base_c.as_ref())?);
            let labels = probe_labels(kind, &order, ex, &mut rng)?;
            // With every prompt removed the model sees the bare input.
            let (prompt, c) = if labels.is_empty() {
                (Mat::zeros(0, backbone.d_model()), None)
            } else {
                let c = options.constrained.then(|| build_constraint_trie(&labels, kindk, backbone.vocab()));
                (formulate_prompt(store, &labels)?, c)
            };
            probe_preds.push(predict(backbone, &prompt, &ex.input, max_len, c.as_ref())?);
        }
        defaults.push((case.index, score_examples(kindk, &base_preds, &case.test)?));
        probed.push((case.index, score_examples(kindk, &probe_preds, &case.test)?));
    }
    let d = with_mean("", Regime::Fused, seed, options, defaults);
    let p = with_mean("", Regime::Fused, seed, options, probed);
    Ok(d.into_iter()
        .zip(p)
        .map(|(d, p)| ProbeRecord {
            probe: kind,
            stage: d.stage,
            default: d.value,
            probed: p.value,
            delta: p.value - d.value,
            support: d.support,
            seed,
            options,
        })
        .collect())
}

/// The aggregate line of a probe run.
pub fn probe_mean(records: &[ProbeRecord]) -> Option<&ProbeRecord> {
    records.iter().find(|r| r.stage == MEAN_KEY)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::TaskKind;

    fn labels(v: &[&str]) -> Vec<Label> {
        v.iter().map(|s| Label::new(s).unwrap()).collect()
    }

    #[test]
    fn probe_label_edits() {
        let s = labels(&["a", "b", "c", "d"]);
        let ex = Example::new("x", "b", TaskKind::SingleClass);
        let mut rng = rng_for(0, "t");
        assert_eq!(probe_labels(ProbeKind::DropGt, &s, &ex, &mut rng).unwrap(), labels(&["a", "c", "d"]));
        for _ in 0..50 {
            let d = probe_labels(ProbeKind::DropRandom, &s, &ex, &mut rng).unwrap();
            assert_eq!(d.len(), 3);
            assert!(d.contains(&s[1]));
            let mut p = probe_labels(ProbeKind::Permute, &s, &ex, &mut rng).unwrap();
            p.sort();
            assert_eq!(p, s);
        }
    }

    #[test]
    fn drop_gt_removes_every_gold_type() {
        let s = labels(&["a", "b", "c"]);
        let ex = Example::new("x y z", "x ! a ; z ! c ;", TaskKind::SequenceLabel);
        let mut rng = rng_for(0, "t");
        assert_eq!(probe_labels(ProbeKind::DropGt, &s, &ex, &mut rng).unwrap(), labels(&["b"]));
    }

    #[test]
    fn probe_names_round_trip() {
        for p in ProbeKind::ALL {
            assert_eq!(p.as_str().parse::<ProbeKind>().unwrap(), p);
        }
    }
}
