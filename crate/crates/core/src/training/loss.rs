use std::collections::{BTreeMap, BTreeSet};

use crate::backbone::Backbone;
use crate::corpus::{Example, Label};
use crate::error::Result;
use crate::promptstore::{formulate_with_spans, PromptStore};
use crate::tensor::{Mat, Real};

/// Batch loss and soft-block gradients for one label subset.
#[derive(Clone, Debug, PartialEq)]
pub struct SubsetLoss<F: Real> {
    /// Mean negative log-likelihood over contributing examples (0 if none).
    pub loss: f64,
    /// Examples whose labels all lie inside the subset.
    pub contributing: usize,
    /// Gradient of `loss` for the soft block of every label in the subset.
    pub grads: BTreeMap<Label, Mat<F>>,
}

/// Does every label named by `ex`'s target lie in `subset`?
pub fn covered_by(ex: &Example, subset: &BTreeSet<&Label>) -> Result<bool> {
    Ok(ex.labels()?.iter().all(|l| subset.contains(l)))
}

/// Negative log-likelihood of each target given the prompt formulated from
/// `subset` (in the store's canonical order). Examples naming a label outside
/// the subset contribute nothing; they are skipped before the forward pass.
pub fn subset_invariant_loss<F: Real>(
    batch: &[Example],
    subset: &[Label],
    store: &PromptStore<F>,
    backbone: &Backbone<F>,
) -> Result<SubsetLoss<F>> {
    let order = store.canonical_order(subset)?;
    let (prompt, spans) = formulate_with_spans(store, &order)?;
    let members: BTreeSet<&Label> = order.iter().collect();
    let mut total = Mat::zeros(prompt.rows(), prompt.cols());
    let mut nll = 0.0;
    let mut contributing = 0usize;
    let vocab = backbone.vocab();
    for ex in batch {
        if !covered_by(ex, &members)? {
            continue;
        }
        let r = backbone.forward_logprob(&prompt, &vocab.encode(&ex.input), &vocab.encode_target(&ex.target))?;
        nll -= r.logprob.to_f64().unwrap();
        total.add_assign(&r.prompt_grad);
        contributing += 1;
    }
    if contributing > 0 {
        nll /= contributing as f64;
        total.scale(F::one() / F::from_usize(contributing).unwrap());
    }
    let grads = spans
        .into_iter()
        .map(|s| (s.label, total.slice_rows(s.soft_start, s.soft_start + s.soft_len)))
        .collect();
    Ok(SubsetLoss { loss: nll, contributing, grads })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backbone::{BackboneConfig, Vocab};
    use crate::corpus::TaskKind;
    use crate::promptstore::init_label_prompt;

    fn setup() -> (Backbone<f64>, PromptStore<f64>, Vec<Label>) {
        let mut toks: Vec<String> = ["!", ";", "|", "none", "person", "org", "event"].map(String::from).to_vec();
        toks.extend((0..12).map(|i| format!("w{i}")));
        let v = Vocab::new(toks).unwrap();
        let b: Backbone<f64> = Backbone::new(BackboneConfig::tiny(v.len()), v, 5).unwrap();
        let labels: Vec<Label> = ["person", "org", "event"].iter().map(|s| Label::new(s).unwrap()).collect();
        let mut s = PromptStore::new(3, 16);
        for (i, l) in labels.iter().enumerate() {
            s.insert(init_label_prompt(l, &b, 3, i as u64).unwrap(), 1).unwrap();
        }
        (b, s, labels)
    }

    fn ex(input: &str, target: &str) -> Example {
        Example::new(input, target, TaskKind::SingleClass)
    }

    #[test]
    fn masked_examples_contribute_nothing() {
        let (b, s, l) = setup();
        let subset = vec![l[0].clone(), l[1].clone()];
        let inside = vec![ex("w1 w2", "person"), ex("w3", "org")];
        let mut mixed = inside.clone();
        mixed.push(ex("w4 w5", "event"));
        mixed.push(ex("w6", "event"));
        let a = subset_invariant_loss(&inside, &subset, &s, &b).unwrap();
        let m = subset_invariant_loss(&mixed, &subset, &s, &b).unwrap();
        assert_eq!(a, m);
        assert_eq!(m.contributing, 2);
        assert!(m.loss > 0.0);
        assert!(!m.grads.contains_key(&l[2]));

        let none = subset_invariant_loss(&mixed[2..], &subset, &s, &b).unwrap();
        assert_eq!((none.loss, none.contributing), (0.0, 0));
        assert!(none.grads.values().all(|g| g.max_abs() == 0.0));
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let (b, s, l) = setup();
        let subset = vec![l[1].clone(), l[0].clone()];
        let batch = vec![ex("w1 w2", "person"), ex("w3 w0", "org"), ex("w5", "event")];
        let base = subset_invariant_loss(&batch, &subset, &s, &b).unwrap();
        let h = 1e-5;
        for label in &subset {
            for (i, j) in [(0, 0), (1, 7), (2, 15)] {
                let mut plus = s.clone();
                let mut minus = s.clone();
                let p = plus.get_mut(label).unwrap();
                p.soft_block.set(i, j, p.soft_block.get(i, j) + h);
                let m = minus.get_mut(label).unwrap();
                m.soft_block.set(i, j, m.soft_block.get(i, j) - h);
                let lp = subset_invariant_loss(&batch, &subset, &plus, &b).unwrap().loss;
                let lm = subset_invariant_loss(&batch, &subset, &minus, &b).unwrap().loss;
                let fd = (lp - lm) / (2.0 * h);
                let an = base.grads[label].get(i, j);
                assert!((fd - an).abs() <= 1e-4 * fd.abs().max(an.abs()).max(1e-3), "{label} {i},{j}: {fd} vs {an}");
            }
        }
    }
}
