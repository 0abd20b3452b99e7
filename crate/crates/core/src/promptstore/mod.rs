//! Per-label prompts: creation, formulation of the encoder prefix for a label
//! set, and similarity-weighted initialisation of new labels from old ones.

pub mod checkpoint;

use std::collections::{BTreeMap, BTreeSet};

use rand::Rng as _;
use sha2::{Digest, Sha256};

use crate::backbone::{Backbone, UNK};
use crate::corpus::Label;
use crate::error::{Error, Result};
use crate::rng::rng_for;
use crate::tensor::{Mat, Real};

/// Soft rows per label unless configured otherwise.
pub const DEFAULT_SOFT_LEN: usize = 10;

/// `[name rows; soft rows]` for one label. The name rows are the backbone
/// embedding of the label text and never change.
#[derive(Clone, Debug, PartialEq)]
pub struct LabelPrompt<F: Real = f32> {
    label: Label,
    name_block: Mat<F>,
    /// Tunable rows.
    pub soft_block: Mat<F>,
}

impl<F: Real> LabelPrompt<F> {
    pub fn new(label: Label, name_block: Mat<F>, soft_block: Mat<F>) -> Result<Self> {
        if name_block.rows() == 0 {
            return Err(Error::Config(format!("label {label} has an empty name block")));
        }
        if name_block.cols() != soft_block.cols() {
            return Err(Error::DimensionMismatch { expected: name_block.cols(), got: soft_block.cols() });
        }
        if !name_block.is_finite() || !soft_block.is_finite() {
            return Err(Error::NonFinite(format!("prompt for {label}")));
        }
        Ok(Self { label, name_block, soft_block })
    }

    pub fn label(&self) -> &Label {
        &self.label
    }

    pub fn name_block(&self) -> &Mat<F> {
        &self.name_block
    }

    pub fn rows(&self) -> usize {
        self.name_block.rows() + self.soft_block.rows()
    }
}

/// Label prompts keyed by label, remembering insertion order and the stage
/// each label was introduced in.
#[derive(Clone, Debug, PartialEq)]
pub struct PromptStore<F: Real = f32> {
    soft_len: usize,
    d: usize,
    order: Vec<Label>,
    entries: BTreeMap<Label, LabelPrompt<F>>,
    stage_of: BTreeMap<Label, usize>,
}

impl<F: Real> PromptStore<F> {
    pub fn new(soft_len: usize, d: usize) -> Self {
        Self { soft_len, d, order: Vec::new(), entries: BTreeMap::new(), stage_of: BTreeMap::new() }
    }

    pub fn soft_len(&self) -> usize {
        self.soft_len
    }

    pub fn d_model(&self) -> usize {
        self.d
    }

    pub fn len(&self) -> usize {
        self.order.len()
    }

    pub fn is_empty(&self) -> bool {
        self.order.is_empty()
    }

    /// Labels in insertion order.
    pub fn labels(&self) -> &[Label] {
        &self.order
    }

    pub fn contains(&self, label: &Label) -> bool {
        self.entries.contains_key(label)
    }

    pub fn get(&self, label: &Label) -> Option<&LabelPrompt<F>> {
        self.entries.get(label)
    }

    pub fn get_mut(&mut self, label: &Label) -> Option<&mut LabelPrompt<F>> {
        self.entries.get_mut(label)
    }

    pub fn stage_of(&self, label: &Label) -> Option<usize> {
        self.stage_of.get(label).copied()
    }

    /// Add a prompt, or replace an existing one (keeping its position).
    pub fn insert(&mut self, prompt: LabelPrompt<F>, stage: usize) -> Result<()> {
        if prompt.soft_block.rows() != self.soft_len {
            return Err(Error::Config(format!(
                "soft block of {} has {} rows, store uses {}",
                prompt.label,
                prompt.soft_block.rows(),
                self.soft_len
            )));
        }
        if prompt.name_block.cols() != self.d {
            return Err(Error::DimensionMismatch { expected: self.d, got: prompt.name_block.cols() });
        }
        let label = prompt.label.clone();
        if !self.entries.contains_key(&label) {
            self.order.push(label.clone());
        }
        self.stage_of.insert(label.clone(), stage);
        self.entries.insert(label, prompt);
        Ok(())
    }

    /// `labels` sorted into canonical order (stage, then insertion).
    /// Unknown labels are reported together.
    pub fn canonical_order<'a>(&self, labels: impl IntoIterator<Item = &'a Label>) -> Result<Vec<Label>> {
        let set: BTreeSet<&Label> = labels.into_iter().collect();
        self.check_known(set.iter().copied())?;
        let mut out: Vec<Label> = self.order.iter().filter(|l| set.contains(l)).cloned().collect();
        out.sort_by_key(|l| self.stage_of[l]);
        Ok(out)
    }

    fn check_known<'a>(&self, labels: impl IntoIterator<Item = &'a Label>) -> Result<()> {
        let missing: Vec<String> =
            labels.into_iter().filter(|l| !self.entries.contains_key(*l)).map(|l| l.to_string()).collect();
        if missing.is_empty() {
            Ok(())
        } else {
            Err(Error::UnknownLabel(missing))
        }
    }

    /// SHA-256 over every prompt (insertion order), for reproducibility checks.
    pub fn hash(&self) -> String {
        let mut h = Sha256::new();
        for l in &self.order {
            let p = &self.entries[l];
            h.update(l.as_str().as_bytes());
            h.update((self.stage_of[l] as u64).to_le_bytes());
            for m in [&p.name_block, &p.soft_block] {
                for x in m.data() {
                    h.update(x.to_f32().unwrap().to_le_bytes());
                }
            }
        }
        hex::encode(h.finalize())
    }
}

/// Where a label's soft rows sit inside a formulated prompt.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct BlockSpan {
    pub label: Label,
    /// First row of the soft block.
    pub soft_start: usize,
    pub soft_len: usize,
}

/// Stack `[name; soft]` of every label in `order`, in that order.
pub fn formulate_prompt<F: Real>(store: &PromptStore<F>, order: &[Label]) -> Result<Mat<F>> {
    Ok(formulate_with_spans(store, order)?.0)
}

/// Like [`formulate_prompt`], also returning where each soft block landed.
pub fn formulate_with_spans<F: Real>(store: &PromptStore<F>, order: &[Label]) -> Result<(Mat<F>, Vec<BlockSpan>)> {
    if order.is_empty() {
        return Err(Error::Config("prompt label set must be non-empty".into()));
    }
    store.check_known(order)?;
    let distinct: BTreeSet<&Label> = order.iter().collect();
    if distinct.len() != order.len() {
        return Err(Error::Config("prompt label set contains duplicates".into()));
    }
    let mut parts = Vec::with_capacity(order.len() * 2);
    let mut spans = Vec::with_capacity(order.len());
    let mut row = 0;
    for l in order {
        let p = &store.entries[l];
        parts.push(&p.name_block);
        parts.push(&p.soft_block);
        spans.push(BlockSpan { label: l.clone(), soft_start: row + p.name_block.rows(), soft_len: p.soft_block.rows() });
        row += p.rows();
    }
    Ok((Mat::stack_rows(&parts, store.d), spans))
}

/// Embedding rows of a label's name tokens.
pub fn name_block<F: Real>(label: &Label, backbone: &Backbone<F>) -> Result<Mat<F>> {
    backbone.embed_tokens(&backbone.vocab().encode(label.as_str()))
}

/// Fresh prompt: name rows from the label text, soft rows copied from
/// uniformly drawn non-special vocabulary embeddings.
pub fn init_label_prompt<F: Real>(label: &Label, backbone: &Backbone<F>, soft_len: usize, seed: u64) -> Result<LabelPrompt<F>> {
    let name = name_block(label, backbone)?;
    let mut rng = rng_for(seed, &format!("prompt-init/{label}"));
    let n = backbone.vocab().len();
    let lo = if n > UNK + 1 { UNK + 1 } else { 0 };
    let ids: Vec<usize> = (0..soft_len).map(|_| rng.gen_range(lo..n)).collect();
    let soft = backbone.embed_tokens(&ids)?;
    LabelPrompt::new(label.clone(), name, soft)
}

fn mean_pool<F: Real>(m: &Mat<F>) -> Vec<f64> {
    let mut out = vec![0.0; m.cols()];
    for i in 0..m.rows() {
        for (o, x) in out.iter_mut().zip(m.row(i)) {
            *o += x.to_f64().unwrap();
        }
    }
    let n = m.rows() as f64;
    out.iter_mut().for_each(|o| *o /= n);
    out
}

/// Cosine similarity of the mean-pooled rows of two name blocks.
pub fn label_similarity<F: Real>(a: &Mat<F>, b: &Mat<F>) -> Result<f64> {
    if a.rows() == 0 || b.rows() == 0 {
        return Err(Error::ZeroVector);
    }
    if a.cols() != b.cols() {
        return Err(Error::DimensionMismatch { expected: a.cols(), got: b.cols() });
    }
    let (pa, pb) = (mean_pool(a), mean_pool(b));
    let dot: f64 = pa.iter().zip(&pb).map(|(x, y)| x * y).sum();
    let na = pa.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = pb.iter().map(|x| x * x).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        return Err(Error::ZeroVector);
    }
    Ok((dot / (na * nb)).clamp(-1.0, 1.0))
}

/// Donors and weights for one new label: the top `k` candidates by
/// similarity (ties by label name), keeping those with positive similarity,
/// weights normalised to sum to one. `None` when no donor qualifies.
pub fn transfer_weights(sims: &[(Label, f64)], k: usize) -> Option<Vec<(Label, f64)>> {
    let mut ranked: Vec<&(Label, f64)> = sims.iter().collect();
    ranked.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
    let top: Vec<(Label, f64)> = ranked.into_iter().take(k).filter(|(_, s)| *s > 0.0).cloned().collect();
    if top.is_empty() {
        return None;
    }
    let total: f64 = top.iter().map(|(_, s)| s).sum();
    Some(top.into_iter().map(|(l, s)| (l, s / total)).collect())
}

/// How one new label was initialised.
#[derive(Clone, Debug, PartialEq)]
pub struct TransferChoice {
    pub label: Label,
    /// Donor labels and weights; empty when the label fell back to fresh init.
    pub donors: Vec<(Label, f64)>,
}

/// Add prompts for `new_labels` (introduced in `stage`). Each new soft block
/// is the similarity-weighted mean of its donors' soft blocks, or a fresh
/// init when `prev_labels` is empty or no donor has positive similarity.
pub fn transfer_init<F: Real>(
    store: &mut PromptStore<F>,
    new_labels: &[Label],
    prev_labels: &[Label],
    k: usize,
    stage: usize,
    backbone: &Backbone<F>,
    seed: u64,
) -> Result<Vec<TransferChoice>> {
    if k == 0 {
        return Err(Error::Config("transfer needs K >= 1".into()));
    }
    if let Some(l) = new_labels.iter().find(|l| prev_labels.contains(l)) {
        return Err(Error::Config(format!("label {l} is both new and previous")));
    }
    store.check_known(prev_labels)?;
    let mut out = Vec::with_capacity(new_labels.len());
    let mut fresh = Vec::with_capacity(new_labels.len());
    for label in new_labels {
        let name = name_block(label, backbone)?;
        let sims = prev_labels
            .iter()
            .map(|p| Ok((p.clone(), label_similarity(&name, store.entries[p].name_block())?)))
            .collect::<Result<Vec<_>>>()?;
        let prompt = match transfer_weights(&sims, k) {
            Some(donors) => {
                let mut soft = Mat::zeros(store.soft_len, store.d);
                for (l, w) in &donors {
                    let mut part = store.entries[l].soft_block.clone();
                    part.scale(F::lit(*w));
                    soft.add_assign(&part);
                }
                out.push(TransferChoice { label: label.clone(), donors });
                LabelPrompt::new(label.clone(), name, soft)?
            }
            None => {
                out.push(TransferChoice { label: label.clone(), donors: Vec::new() });
                init_label_prompt(label, backbone, store.soft_len, seed)?
            }
        };
        fresh.push(prompt);
    }
    // Insert only after every donor lookup so new labels never donate to each other.
    for p in fresh {
        store.insert(p, stage)?;
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backbone::{BackboneConfig, Vocab};
    use proptest::prelude::*;

    fn l(s: &str) -> Label {
        Label::new(s).unwrap()
    }

    fn backbone() -> Backbone<f32> {
        let v = Vocab::new(["sports", "science", "politics", "organization", "media", "ice", "hockey", "w0", "w1"].map(String::from))
            .unwrap();
        Backbone::new(BackboneConfig::tiny(v.len()), v, 7).unwrap()
    }

    fn store3(b: &Backbone<f32>) -> PromptStore<f32> {
        let mut s = PromptStore::new(DEFAULT_SOFT_LEN, b.d_model());
        for (i, name) in ["sports", "science", "politics"].iter().enumerate() {
            s.insert(init_label_prompt(&l(name), b, DEFAULT_SOFT_LEN, i as u64).unwrap(), 1).unwrap();
        }
        s
    }

    #[test]
    fn init_shapes_and_membership() {
        let b = backbone();
        let p = init_label_prompt(&l("sports"), &b, 10, 1).unwrap();
        assert_eq!(p.soft_block.shape(), (10, 16));
        assert_eq!(p.name_block().row(0), b.token_embedding().row(b.vocab().id("sports").unwrap()));
        let two = init_label_prompt(&l("organization media"), &b, 10, 1).unwrap();
        assert_eq!(two.name_block().rows(), 2);
        let e = b.token_embedding();
        for r in 0..10 {
            let hit = (0..e.rows()).find(|&i| e.row(i) == p.soft_block.row(r));
            assert!(matches!(hit, Some(i) if !Vocab::is_special(i)));
        }
        assert_eq!(p, init_label_prompt(&l("sports"), &b, 10, 1).unwrap());
    }

    #[test]
    fn formulation_concatenates_in_order() {
        let b = backbone();
        let s = store3(&b);
        let (sp, po) = (l("sports"), l("politics"));
        let t = formulate_prompt(&s, &[po.clone(), sp.clone()]).unwrap();
        assert_eq!(t.rows(), 22);
        assert_eq!(t.row(0), s.get(&po).unwrap().name_block().row(0));
        assert_eq!(t.row(1), s.get(&po).unwrap().soft_block.row(0));
        assert_eq!(t.row(11), s.get(&sp).unwrap().name_block().row(0));
        let single = formulate_prompt(&s, std::slice::from_ref(&sp)).unwrap();
        let p = s.get(&sp).unwrap();
        assert_eq!(single, Mat::stack_rows(&[p.name_block(), &p.soft_block], 16));
    }

    #[test]
    fn formulation_reordering_permutes_rows() {
        let b = backbone();
        let s = store3(&b);
        let key = |m: &Mat<f32>| {
            let mut rows: Vec<Vec<u32>> = (0..m.rows()).map(|i| m.row(i).iter().map(|x| x.to_bits()).collect()).collect();
            rows.sort();
            rows
        };
        let ab = formulate_prompt(&s, &[l("sports"), l("science")]).unwrap();
        let ba = formulate_prompt(&s, &[l("science"), l("sports")]).unwrap();
        assert_ne!(ab, ba);
        assert_eq!(key(&ab), key(&ba));
    }

    #[test]
    fn unknown_labels_listed() {
        let b = backbone();
        let s = store3(&b);
        match formulate_prompt(&s, &[l("sports"), l("media"), l("ice")]) {
            Err(Error::UnknownLabel(m)) => assert_eq!(m, vec!["media".to_string(), "ice".to_string()]),
            other => panic!("{other:?}"),
        }
        assert!(formulate_prompt(&s, &[l("sports"), l("sports")]).is_err());
    }

    #[test]
    fn similarity_examples() {
        let a = Mat::from_vec(1, 2, vec![1.0f64, 0.0]);
        let b = Mat::from_vec(1, 2, vec![0.0f64, 1.0]);
        assert_eq!(label_similarity(&a, &a).unwrap(), 1.0);
        assert_eq!(label_similarity(&a, &b).unwrap(), 0.0);
        let ice_hockey = Mat::from_vec(2, 2, vec![1.0f64, 0.0, 0.0, 1.0]);
        assert!((label_similarity(&ice_hockey, &b).unwrap() - std::f64::consts::FRAC_1_SQRT_2).abs() < 1e-12);
        let zero = Mat::from_vec(2, 2, vec![1.0f64, 0.0, -1.0, 0.0]);
        assert!(matches!(label_similarity(&zero, &a), Err(Error::ZeroVector)));
    }

    #[test]
    fn weights_pick_top_k() {
        let sims = vec![(l("b"), 0.8), (l("c"), 0.2), (l("d"), 0.5)];
        let w = transfer_weights(&sims, 2).unwrap();
        assert_eq!(w[0].0, l("b"));
        assert_eq!(w[1].0, l("d"));
        assert!((w[0].1 - 0.8 / 1.3).abs() < 1e-12);
        assert!((w[1].1 - 0.5 / 1.3).abs() < 1e-12);
        // ties broken by name
        let tied = vec![(l("z"), 0.5), (l("a"), 0.5), (l("m"), 0.5)];
        let w = transfer_weights(&tied, 2).unwrap();
        assert_eq!((w[0].0.as_str(), w[1].0.as_str()), ("a", "m"));
        assert!(transfer_weights(&[(l("a"), -0.1), (l("b"), 0.0)], 2).is_none());
    }

    #[test]
    fn transfer_fallback_and_degenerate_cases() {
        let b = backbone();
        let mut s: PromptStore<f32> = PromptStore::new(10, 16);
        let got = transfer_init(&mut s, &[l("sports")], &[], 3, 1, &b, 4).unwrap();
        assert!(got[0].donors.is_empty());
        assert_eq!(s.get(&l("sports")).unwrap(), &init_label_prompt(&l("sports"), &b, 10, 4).unwrap());

        let mut s = store3(&b);
        let donor = l("science");
        // Repeating the donor's name token gives similarity exactly 1.
        let new = l("science science");
        let got = transfer_init(&mut s, std::slice::from_ref(&new), std::slice::from_ref(&donor), 1, 2, &b, 0).unwrap();
        assert_eq!(got[0].donors, vec![(donor.clone(), 1.0)]);
        assert_eq!(s.get(&new).unwrap().soft_block, s.get(&donor).unwrap().soft_block);
        assert_eq!(s.stage_of(&new), Some(2));
        assert_eq!(s.get(&new).unwrap().name_block().rows(), 2);
    }

    #[test]
    fn canonical_order_is_stage_then_insertion() {
        let b = backbone();
        let mut s = store3(&b);
        s.insert(init_label_prompt(&l("media"), &b, 10, 0).unwrap(), 0).unwrap();
        let order = s.canonical_order([&l("politics"), &l("media"), &l("sports")]).unwrap();
        assert_eq!(order, vec![l("media"), l("sports"), l("politics")]);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]
        #[test]
        fn formulation_locality(which in 0usize..3, subset in proptest::collection::btree_set(0usize..3, 1..=3)) {
            let b = backbone();
            let mut s = store3(&b);
            let labels: Vec<Label> = s.labels().to_vec();
            let order: Vec<Label> = subset.iter().map(|&i| labels[i].clone()).collect();
            let before = formulate_prompt(&s, &order).unwrap();
            s.get_mut(&labels[which]).unwrap().soft_block.data_mut()[0] += 1.0;
            let after = formulate_prompt(&s, &order).unwrap();
            prop_assert_eq!(before != after, subset.contains(&which));
        }
    }
}
