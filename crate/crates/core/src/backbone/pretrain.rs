//! Pretraining the shared backbone.
//!
//! Two objectives are mixed:
//!
//! * input copy: reproduce the input text, which teaches the decoder to read
//!   the encoder token by token;
//! * in-context matching: the encoder sees a prefix of label blocks, each
//!   shaped like a label prompt (name-token rows, then `rows_per_block`
//!   rows), followed by a text containing keys of one block (the gold one).
//!   Each non-name row mixes the embedding of one of the block's keys with
//!   the embedding of a name token, so a row both matches its keys and
//!   carries its label. The target is the gold block's name (or, for
//!   sequence labelling, the clause list built from the mentions whose key
//!   belongs to a listed block).
//!
//! Keys are re-drawn for every example, so the backbone never learns a fixed
//! association between content tokens and labels. Anything it knows about a
//! particular label at test time has to come from that label's prompt block,
//! which is exactly the role the tuned soft rows take later.

use rand::seq::{index, SliceRandom};
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use super::{generate, Backbone, BackboneConfig, Vocab};
use crate::corpus::{serialize_clauses, Clause, Example, Label, SyntheticCorpus, TaskKind, FIELD_SEP};
use crate::error::{Error, Result};
use crate::rng::{rng_for, Rng};
use crate::tensor::{Mat, Real};
use crate::training::adafactor::{adafactor_step, AdafactorConfig, OptimizerState};

/// Raw material for pretraining examples.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PretrainPool {
    pub task_kind: TaskKind,
    /// Tokenised input texts used for the copy objective.
    pub texts: Vec<Vec<String>>,
    /// Candidate label names (token lists) for matching blocks.
    pub names: Vec<Vec<String>>,
    /// Tokens usable as keys and filler.
    pub content: Vec<String>,
    /// Tokens used for entity spans; falls back to `content` when empty.
    pub entities: Vec<String>,
}

impl PretrainPool {
    /// Pool over a synthetic corpus's training inputs and label names.
    pub fn from_corpus(c: &SyntheticCorpus) -> Self {
        let mut content: Vec<String> = c.cues.iter().flatten().cloned().collect();
        content.extend(c.noise.iter().cloned());
        Self {
            task_kind: c.config.task_kind,
            texts: c.train.iter().map(|e| tokens(&e.input)).collect(),
            names: c.labels.iter().map(|l| l.tokens().map(String::from).collect()).collect(),
            content,
            entities: c.entities.clone(),
        }
    }

    /// Pool over arbitrary examples: content tokens are every input token
    /// except the field separator.
    pub fn from_examples(kind: TaskKind, examples: &[Example], labels: &[Label]) -> Self {
        let mut content: Vec<String> = examples
            .iter()
            .flat_map(|e| e.input.split_whitespace())
            .filter(|t| *t != FIELD_SEP)
            .map(String::from)
            .collect();
        content.sort();
        content.dedup();
        Self {
            task_kind: kind,
            texts: examples.iter().map(|e| tokens(&e.input)).collect(),
            names: labels.iter().map(|l| l.tokens().map(String::from).collect()).collect(),
            content,
            entities: Vec::new(),
        }
    }

    fn validate(&self) -> Result<()> {
        if self.texts.is_empty() || self.names.is_empty() {
            return Err(Error::Config("pretraining pool is empty".into()));
        }
        if self.content.len() < 8 {
            return Err(Error::Config("pretraining pool needs at least 8 content tokens".into()));
        }
        Ok(())
    }
}

fn tokens(s: &str) -> Vec<String> {
    s.split_whitespace().map(String::from).collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PretrainConfig {
    pub steps: usize,
    pub batch_size: usize,
    pub lr: f64,
    /// First-moment smoothing for the optimizer.
    pub momentum: Option<f64>,
    /// Probability that an example is a copy example at full difficulty.
    pub copy_fraction: f64,
    /// Largest number of blocks in a matching prefix.
    pub max_blocks: usize,
    /// Distinct keys owned by each block.
    pub keys_per_block: usize,
    /// Rows following the name in each block (matches the soft prompt length).
    pub rows_per_block: usize,
    /// Filler tokens around the keys of a matching text.
    pub filler_min: usize,
    pub filler_max: usize,
    /// Fraction of steps spent at the easiest difficulty (two blocks, one
    /// key and one row per block, no filler).
    pub warmup_fraction: f64,
    /// Fraction of steps over which difficulty then ramps linearly to full.
    pub ramp_fraction: f64,
    pub seed: u64,
}

/// Defaults are sized for the desk backbone: about four and a half minutes
/// on one core. Fewer than eight blocks or a shorter warmup leaves matching
/// near chance; tiny test backbones override `steps`.
impl Default for PretrainConfig {
    fn default() -> Self {
        Self {
            steps: 40_000,
            batch_size: 8,
            lr: 1e-2,
            momentum: Some(0.9),
            copy_fraction: 0.3,
            max_blocks: 8,
            keys_per_block: 4,
            rows_per_block: 10,
            filler_min: 6,
            filler_max: 10,
            warmup_fraction: 0.25,
            ramp_fraction: 0.6,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PretrainReport {
    /// Mean per-token loss over the first tenth of steps.
    pub initial_loss: f64,
    /// Mean per-token loss over the last tenth of steps.
    pub final_loss: f64,
    /// Per-step mean per-token loss.
    pub losses: Vec<f64>,
}

/// A prompt-shaped block: name rows, then one mixed row per key slot.
#[derive(Clone, Debug, PartialEq)]
pub(crate) struct Block {
    pub name: Vec<String>,
    pub keys: Vec<String>,
}

/// One pretraining example. Copy examples have no blocks.
#[derive(Clone, Debug, PartialEq)]
pub(crate) struct PretrainExample {
    pub blocks: Vec<Block>,
    pub text: Vec<String>,
    pub target: String,
}

struct Sampler<'a> {
    pool: &'a PretrainPool,
    cfg: &'a PretrainConfig,
    /// Curriculum position in [0, 1]; 1 is full difficulty.
    level: f64,
}

fn lerp(lo: usize, hi: usize, t: f64) -> usize {
    if hi <= lo {
        return hi;
    }
    lo + ((hi - lo) as f64 * t).round() as usize
}

impl PretrainConfig {
    /// Curriculum level at `step`.
    pub fn level_at(&self, step: usize) -> f64 {
        let x = step as f64 / self.steps.max(1) as f64;
        if self.ramp_fraction <= 0.0 {
            return if x < self.warmup_fraction { 0.0 } else { 1.0 };
        }
        ((x - self.warmup_fraction) / self.ramp_fraction).clamp(0.0, 1.0)
    }
}

impl Sampler<'_> {
    fn sample(&self, rng: &mut Rng) -> PretrainExample {
        // Copy examples are phased in with the curriculum so the warmup is
        // spent entirely on the matching task.
        if rng.gen_bool(self.cfg.copy_fraction * self.level) {
            let text = self.pool.texts[rng.gen_range(0..self.pool.texts.len())].clone();
            let target = text.join(" ");
            return PretrainExample { blocks: Vec::new(), text, target };
        }
        self.matching(rng)
    }

    fn matching(&self, rng: &mut Rng) -> PretrainExample {
        let pool = self.pool;
        let t = self.level;
        let kpb = lerp(1, self.cfg.keys_per_block, t);
        let n_rows = lerp(1, self.cfg.rows_per_block, t);
        let max_b = lerp(2, self.cfg.max_blocks, t).min(pool.names.len()).min(pool.content.len() / (kpb + 1)).max(1);
        let n_blocks = rng.gen_range(1..=max_b);
        let names: Vec<&Vec<String>> =
            index::sample(rng, pool.names.len(), n_blocks).into_iter().map(|i| &pool.names[i]).collect();
        // Keys for every block plus one spare set for distractors, all disjoint.
        let picked = index::sample(rng, pool.content.len(), (n_blocks + 1) * kpb).into_vec();
        let keys: Vec<Vec<&str>> = picked.chunks(kpb).map(|c| c.iter().map(|&i| pool.content[i].as_str()).collect()).collect();
        let used: std::collections::HashSet<&str> = keys.iter().flatten().copied().collect();
        let filler = |rng: &mut Rng| loop {
            let t = pool.content[rng.gen_range(0..pool.content.len())].as_str();
            if !used.contains(t) {
                return t.to_string();
            }
        };

        let mut blocks = Vec::with_capacity(n_blocks);
        for (name, ks) in names.iter().zip(&keys) {
            let mut rows: Vec<String> = (0..n_rows).map(|r| ks[r % kpb].to_string()).collect();
            rows.shuffle(rng);
            blocks.push(Block { name: (*name).clone(), keys: rows });
        }
        let gold = rng.gen_range(0..n_blocks);
        let len = rng.gen_range(lerp(0, self.cfg.filler_min, t)..=lerp(0, self.cfg.filler_max, t));
        let mut text: Vec<String> = (0..len).map(|_| filler(rng)).collect();
        let entity = |rng: &mut Rng| -> String {
            let src = if pool.entities.is_empty() { &pool.content } else { &pool.entities };
            loop {
                let t = &src[rng.gen_range(0..src.len())];
                if !used.contains(t.as_str()) {
                    return t.clone();
                }
            }
        };

        let target = match pool.task_kind {
            TaskKind::SingleClass | TaskKind::Relation => {
                for k in index::sample(rng, kpb, 2.min(kpb)) {
                    let pos = rng.gen_range(0..=text.len());
                    text.insert(pos, keys[gold][k].to_string());
                }
                if pool.task_kind == TaskKind::Relation {
                    let (h, t) = (entity(rng), entity(rng));
                    let hp = rng.gen_range(0..=text.len());
                    text.insert(hp, h.clone());
                    let tp = rng.gen_range(0..=text.len());
                    text.insert(tp, t.clone());
                    text.extend([FIELD_SEP.to_string(), h, FIELD_SEP.to_string(), t]);
                }
                names[gold].join(" ")
            }
            TaskKind::SequenceLabel => {
                // Mentions: (key, span, Some(block)) or an unlisted-key distractor.
                let n_mentions = rng.gen_range(1..=3usize);
                let mut mentions: Vec<(String, Vec<String>, Option<usize>)> = Vec::new();
                for m in 0..n_mentions {
                    let b = if m == 0 { gold } else { rng.gen_range(0..n_blocks) };
                    let span = (0..rng.gen_range(1..=2usize)).map(|_| entity(rng)).collect();
                    mentions.push((keys[b][rng.gen_range(0..kpb)].to_string(), span, Some(b)));
                }
                if rng.gen_bool(0.3) {
                    let span = (0..rng.gen_range(1..=2usize)).map(|_| entity(rng)).collect();
                    mentions.push((keys[n_blocks][rng.gen_range(0..kpb)].to_string(), span, None));
                }
                mentions.shuffle(rng);
                let mut slots: Vec<usize> = mentions.iter().map(|_| rng.gen_range(0..=text.len())).collect();
                slots.sort_unstable();
                let mut out = Vec::new();
                let mut clauses = Vec::new();
                let mut next = 0;
                for i in 0..=text.len() {
                    while next < mentions.len() && slots[next] == i {
                        let (key, span, block) = &mentions[next];
                        out.push(key.clone());
                        out.extend(span.iter().cloned());
                        if let Some(b) = block {
                            let label = Label::new(&names[*b].join(" ")).expect("pool names are labels");
                            clauses.push(Clause { span: span.join(" "), label });
                        }
                        next += 1;
                    }
                    if i < text.len() {
                        out.push(text[i].clone());
                    }
                }
                text = out;
                serialize_clauses(&clauses)
            }
        };
        PretrainExample { blocks, text, target }
    }
}

struct BlockIds {
    name: Vec<usize>,
    keys: Vec<usize>,
    /// Name token mixed into each key row.
    mix: Vec<usize>,
}

fn block_ids<F: Real>(model: &Backbone<F>, blocks: &[Block]) -> Vec<BlockIds> {
    let v = model.vocab();
    blocks
        .iter()
        .map(|b| {
            let name = v.encode(&b.name.join(" "));
            let keys = v.encode(&b.keys.join(" "));
            let mix = (0..keys.len()).map(|j| name[j % name.len()]).collect();
            BlockIds { name, keys, mix }
        })
        .collect()
}

fn mix_scale() -> f64 {
    std::f64::consts::FRAC_1_SQRT_2
}

/// The numeric prompt a matching example's blocks stand for.
pub(crate) fn blocks_prompt<F: Real>(model: &Backbone<F>, blocks: &[Block]) -> Result<Mat<F>> {
    let mut parts = Vec::new();
    for b in block_ids(model, blocks) {
        parts.push(model.embed_tokens(&b.name)?);
        let mut rows = model.embed_tokens(&b.keys)?;
        rows.add_assign(&model.embed_tokens(&b.mix)?);
        rows.scale(F::lit(mix_scale()));
        parts.push(rows);
    }
    let refs: Vec<&Mat<F>> = parts.iter().collect();
    Ok(Mat::stack_rows(&refs, model.d_model()))
}

/// Log-probability, parameter gradients and target length for one example.
/// Block rows are built inside the graph so the embeddings learn through them.
fn example_gradients(model: &Backbone<f32>, ex: &PretrainExample) -> Result<(f32, Vec<Mat<f32>>, usize)> {
    let v = model.vocab();
    let text = v.encode(&ex.text.join(" "));
    let target = v.encode_target(&ex.target);
    let ids = block_ids(model, &ex.blocks);
    let embed = model.layout.embed;
    let (lp, (grads, ())) = model.param_gradients_with(
        |g, pv| {
            if ids.is_empty() {
                return None;
            }
            let mut parts = Vec::with_capacity(ids.len() * 2);
            for b in &ids {
                parts.push(g.gather(pv[embed], &b.name));
                let k = g.gather(pv[embed], &b.keys);
                let m = g.gather(pv[embed], &b.mix);
                let sum = g.add(k, m);
                parts.push(g.scale(sum, mix_scale() as f32));
            }
            Some(g.concat_rows(&parts))
        },
        &text,
        &target,
        |_, _| (),
    )?;
    Ok((lp, grads, target.len()))
}

/// Train every backbone parameter on the copy/matching mixture, then freeze.
pub fn pretrain_backbone(
    config: BackboneConfig,
    vocab: Vocab,
    pool: &PretrainPool,
    cfg: &PretrainConfig,
) -> Result<(Backbone<f32>, PretrainReport)> {
    pool.validate()?;
    if cfg.steps == 0 || cfg.batch_size == 0 {
        return Err(Error::Config("pretraining needs steps >= 1 and batch_size >= 1".into()));
    }
    let mut model: Backbone<f32> = Backbone::new(config, vocab, cfg.seed)?;
    let mut rng = rng_for(cfg.seed, "pretrain/examples");
    let mut sampler = Sampler { pool, cfg, level: 0.0 };
    let mut states: Vec<OptimizerState<f32>> = model.params().iter().map(|p| OptimizerState::new(p.rows(), p.cols())).collect();
    let opt = AdafactorConfig { beta1: cfg.momentum, ..Default::default() };
    let mut losses = Vec::with_capacity(cfg.steps);
    for step in 0..cfg.steps {
        sampler.level = cfg.level_at(step);
        let mut acc: Vec<Mat<f32>> = model.params().iter().map(|p| Mat::zeros(p.rows(), p.cols())).collect();
        let mut nll = 0.0f64;
        let mut n_tok = 0usize;
        for _ in 0..cfg.batch_size {
            let ex = sampler.sample(&mut rng);
            let (lp, grads, n) = example_gradients(&model, &ex)?;
            nll -= f64::from(lp);
            n_tok += n;
            for (a, g) in acc.iter_mut().zip(&grads) {
                a.add_assign(g);
            }
        }
        let inv = 1.0 / n_tok as f32;
        let params = model.params_mut()?;
        for ((p, g), st) in params.iter_mut().zip(acc.iter_mut()).zip(states.iter_mut()) {
            g.scale(inv);
            adafactor_step(p, g, st, cfg.lr, &opt)?;
        }
        losses.push(nll / n_tok as f64);
    }
    model.freeze();
    let tenth = (cfg.steps / 10).max(1);
    let mean = |xs: &[f64]| xs.iter().sum::<f64>() / xs.len() as f64;
    let report = PretrainReport {
        initial_loss: mean(&losses[..tenth]),
        final_loss: mean(&losses[losses.len() - tenth..]),
        losses,
    };
    Ok((model, report))
}

/// Greedy copy accuracy: fraction of input positions reproduced exactly.
pub fn copy_accuracy<F: Real>(model: &Backbone<F>, texts: &[Vec<String>]) -> Result<f64> {
    let empty = Mat::zeros(0, model.d_model());
    let (mut hit, mut total) = (0usize, 0usize);
    for t in texts {
        let ids = model.vocab().encode(&t.join(" "));
        let out = generate(model, &empty, &ids, ids.len() + 2, None)?;
        hit += ids.iter().zip(&out).filter(|(a, b)| a == b).count();
        total += ids.len();
    }
    if total == 0 {
        return Err(Error::EmptyEval);
    }
    Ok(hit as f64 / total as f64)
}

/// Greedy exact-match accuracy on freshly sampled matching examples, a
/// quick probe of how well the prefix mechanism was learned.
pub fn matching_accuracy<F: Real>(model: &Backbone<F>, pool: &PretrainPool, cfg: &PretrainConfig, n: usize, seed: u64) -> Result<f64> {
    let sampler = Sampler { pool, cfg, level: 1.0 };
    let mut rng = rng_for(seed, "pretrain/matching-eval");
    let mut hit = 0;
    for _ in 0..n {
        let ex = sampler.matching(&mut rng);
        let prompt = blocks_prompt(model, &ex.blocks)?;
        let ids = model.vocab().encode(&ex.text.join(" "));
        let out = generate(model, &prompt, &ids, 32, None)?;
        if model.vocab().decode(&out) == ex.target {
            hit += 1;
        }
    }
    if n == 0 {
        return Err(Error::EmptyEval);
    }
    Ok(hit as f64 / n as f64)
}

#[cfg(test)]
pub(crate) fn sample_examples(pool: &PretrainPool, cfg: &PretrainConfig, n: usize, seed: u64) -> Vec<PretrainExample> {
    let sampler = Sampler { pool, cfg, level: 1.0 };
    let mut rng = rng_for(seed, "pretrain/examples");
    (0..n).map(|_| sampler.sample(&mut rng)).collect()
}
