//! A small pre-LN encoder-decoder transformer.
//!
//! Prompt rows are stacked above the input token embeddings and attend
//! exactly like tokens, occupying positions `0..N`. Output logits use the
//! tied token-embedding matrix. Every forward pass builds an autodiff graph
//! that borrows the parameters, so a frozen backbone is never copied or
//! written while prompts are tuned.

pub mod checkpoint;
mod generate;
pub mod pretrain;
mod vocab;

use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::autodiff::{Graph, Var};
use crate::error::{Error, Result};
use crate::rng::rng_for;
use crate::tensor::{Mat, Real};

pub use generate::{generate, AllowedNext, DecodeConstraint};
pub use pretrain::{pretrain_backbone, PretrainConfig, PretrainPool, PretrainReport};
pub use vocab::{Vocab, BOS, EOS, PAD, UNK};

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct BackboneConfig {
    pub vocab_size: usize,
    pub d_model: usize,
    pub n_heads: usize,
    pub d_ff: usize,
    pub enc_layers: usize,
    pub dec_layers: usize,
}

impl BackboneConfig {
    /// Smallest useful model; used for gradient checks.
    pub fn tiny(vocab_size: usize) -> Self {
        Self { vocab_size, d_model: 16, n_heads: 2, d_ff: 32, enc_layers: 2, dec_layers: 2 }
    }

    /// Default size for synthetic experiments.
    pub fn desk(vocab_size: usize) -> Self {
        Self { vocab_size, d_model: 32, n_heads: 4, d_ff: 64, enc_layers: 2, dec_layers: 2 }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(format!("backbone: {m}")));
        if !(16..=128).contains(&self.d_model) {
            return bad("d_model must be in 16..=128");
        }
        if self.n_heads == 0 || !self.d_model.is_multiple_of(self.n_heads) {
            return bad("n_heads must divide d_model");
        }
        if !(1..=4).contains(&self.enc_layers) || !(1..=4).contains(&self.dec_layers) {
            return bad("layer counts must be in 1..=4");
        }
        if self.vocab_size < 5 || self.vocab_size > 2048 {
            return bad("vocab_size must be in 5..=2048");
        }
        if self.d_ff == 0 {
            return bad("d_ff must be positive");
        }
        Ok(())
    }
}

#[derive(Clone, Debug)]
struct Ln {
    g: usize,
    b: usize,
}

#[derive(Clone, Debug)]
struct Attn {
    q: usize,
    k: usize,
    v: usize,
    o: usize,
}

#[derive(Clone, Debug)]
struct Ffn {
    w1: usize,
    b1: usize,
    w2: usize,
    b2: usize,
}

#[derive(Clone, Debug)]
struct EncLayer {
    ln1: Ln,
    attn: Attn,
    ln2: Ln,
    ffn: Ffn,
}

#[derive(Clone, Debug)]
struct DecLayer {
    ln1: Ln,
    self_attn: Attn,
    ln2: Ln,
    cross: Attn,
    ln3: Ln,
    ffn: Ffn,
}

#[derive(Clone, Debug)]
struct Layout {
    embed: usize,
    enc: Vec<EncLayer>,
    enc_ln: Ln,
    dec: Vec<DecLayer>,
    dec_ln: Ln,
}

/// Parameter shape and init recipe, in layout order.
#[derive(Clone, Debug)]
pub(crate) struct ParamSpec {
    pub name: String,
    pub rows: usize,
    pub cols: usize,
    init: Init,
}

#[derive(Clone, Copy, Debug)]
enum Init {
    Zeros,
    Ones,
    Normal(f64),
}

struct LayoutBuilder {
    specs: Vec<ParamSpec>,
}

impl LayoutBuilder {
    fn add(&mut self, name: String, rows: usize, cols: usize, init: Init) -> usize {
        self.specs.push(ParamSpec { name, rows, cols, init });
        self.specs.len() - 1
    }

    fn ln(&mut self, prefix: &str, d: usize) -> Ln {
        Ln {
            g: self.add(format!("{prefix}.gain"), 1, d, Init::Ones),
            b: self.add(format!("{prefix}.bias"), 1, d, Init::Zeros),
        }
    }

    fn attn(&mut self, prefix: &str, d: usize, out_std: f64) -> Attn {
        let s = 1.0 / (d as f64).sqrt();
        Attn {
            q: self.add(format!("{prefix}.q"), d, d, Init::Normal(s)),
            k: self.add(format!("{prefix}.k"), d, d, Init::Normal(s)),
            v: self.add(format!("{prefix}.v"), d, d, Init::Normal(s)),
            o: self.add(format!("{prefix}.o"), d, d, Init::Normal(out_std)),
        }
    }

    fn ffn(&mut self, prefix: &str, d: usize, ff: usize, depth_scale: f64) -> Ffn {
        Ffn {
            w1: self.add(format!("{prefix}.w1"), d, ff, Init::Normal(1.0 / (d as f64).sqrt())),
            b1: self.add(format!("{prefix}.b1"), 1, ff, Init::Zeros),
            w2: self.add(format!("{prefix}.w2"), ff, d, Init::Normal(depth_scale / (ff as f64).sqrt())),
            b2: self.add(format!("{prefix}.b2"), 1, d, Init::Zeros),
        }
    }
}

fn build_layout(c: &BackboneConfig) -> (Layout, Vec<ParamSpec>) {
    let mut b = LayoutBuilder { specs: Vec::new() };
    let d = c.d_model;
    let depth_scale = 1.0 / ((2 * (c.enc_layers + c.dec_layers)) as f64).sqrt();
    let out_std = depth_scale / (d as f64).sqrt();
    let embed = b.add("embed".into(), c.vocab_size, d, Init::Normal(1.0));
    let enc = (0..c.enc_layers)
        .map(|i| {
            let p = format!("enc{i}");
            EncLayer {
                ln1: b.ln(&format!("{p}.ln1"), d),
                attn: b.attn(&format!("{p}.attn"), d, out_std),
                ln2: b.ln(&format!("{p}.ln2"), d),
                ffn: b.ffn(&format!("{p}.ffn"), d, c.d_ff, depth_scale),
            }
        })
        .collect();
    let enc_ln = b.ln("enc.final_ln", d);
    let dec = (0..c.dec_layers)
        .map(|i| {
            let p = format!("dec{i}");
            DecLayer {
                ln1: b.ln(&format!("{p}.ln1"), d),
                self_attn: b.attn(&format!("{p}.self"), d, out_std),
                ln2: b.ln(&format!("{p}.ln2"), d),
                cross: b.attn(&format!("{p}.cross"), d, out_std),
                ln3: b.ln(&format!("{p}.ln3"), d),
                ffn: b.ffn(&format!("{p}.ffn"), d, c.d_ff, depth_scale),
            }
        })
        .collect();
    let dec_ln = b.ln("dec.final_ln", d);
    (Layout { embed, enc, enc_ln, dec, dec_ln }, b.specs)
}

/// Sinusoidal position table for positions `0..len`.
fn positions<F: Real>(len: usize, d: usize) -> Mat<F> {
    Mat::from_fn(len, d, |p, j| {
        let i = (j / 2) as f64;
        let angle = p as f64 / 10000f64.powf(2.0 * i / d as f64);
        F::lit(if j % 2 == 0 { angle.sin() } else { angle.cos() })
    })
}

/// Output of a teacher-forced forward pass.
#[derive(Clone, Debug)]
pub struct ForwardResult<F> {
    /// Sum of target-token log-probabilities.
    pub logprob: F,
    /// Gradient of `-logprob` with respect to each prompt row.
    pub prompt_grad: Mat<F>,
}

/// Gradients of `-logprob` for every backbone parameter, in layout order.
pub type ParamGrads<F> = Vec<Mat<F>>;

#[derive(Clone, Debug)]
pub struct Backbone<F: Real> {
    config: BackboneConfig,
    vocab: Vocab,
    params: Vec<Mat<F>>,
    specs: Vec<ParamSpec>,
    layout: Layout,
    frozen: bool,
}

impl<F: Real> Backbone<F> {
    /// Randomly initialised, unfrozen backbone.
    pub fn new(config: BackboneConfig, vocab: Vocab, seed: u64) -> Result<Self> {
        config.validate()?;
        if vocab.len() != config.vocab_size {
            return Err(Error::Config(format!(
                "vocab has {} tokens, config expects {}",
                vocab.len(),
                config.vocab_size
            )));
        }
        let (layout, specs) = build_layout(&config);
        let mut rng = rng_for(seed, "backbone/init");
        let params = specs
            .iter()
            .map(|s| match s.init {
                Init::Zeros => Mat::zeros(s.rows, s.cols),
                Init::Ones => Mat::from_fn(s.rows, s.cols, |_, _| F::one()),
                Init::Normal(std) => {
                    let n = Normal::new(0.0, std).expect("positive std");
                    Mat::from_fn(s.rows, s.cols, |_, _| F::lit(n.sample(&mut rng)))
                }
            })
            .collect();
        Ok(Self { config, vocab, params, specs, layout, frozen: false })
    }

    pub(crate) fn from_parts(config: BackboneConfig, vocab: Vocab, params: Vec<Mat<F>>, frozen: bool) -> Result<Self> {
        config.validate()?;
        let (layout, specs) = build_layout(&config);
        if params.len() != specs.len() {
            return Err(Error::Checkpoint(format!("expected {} parameters, got {}", specs.len(), params.len())));
        }
        for (p, s) in params.iter().zip(&specs) {
            if p.shape() != (s.rows, s.cols) {
                return Err(Error::Checkpoint(format!("parameter {} has shape {:?}", s.name, p.shape())));
            }
        }
        Ok(Self { config, vocab, params, specs, layout, frozen })
    }

    pub fn config(&self) -> &BackboneConfig {
        &self.config
    }

    pub fn vocab(&self) -> &Vocab {
        &self.vocab
    }

    pub fn d_model(&self) -> usize {
        self.config.d_model
    }

    pub fn is_frozen(&self) -> bool {
        self.frozen
    }

    pub fn freeze(&mut self) {
        self.frozen = true;
    }

    /// A private, trainable copy (used by full fine-tuning baselines).
    pub fn unfrozen_copy(&self) -> Self {
        let mut c = self.clone();
        c.frozen = false;
        c
    }

    pub fn params(&self) -> &[Mat<F>] {
        &self.params
    }

    pub fn param_names(&self) -> impl Iterator<Item = &str> {
        self.specs.iter().map(|s| s.name.as_str())
    }

    /// Mutable parameters; refused while frozen.
    pub fn params_mut(&mut self) -> Result<&mut [Mat<F>]> {
        if self.frozen {
            return Err(Error::Config("backbone is frozen".into()));
        }
        Ok(&mut self.params)
    }

    pub fn token_embedding(&self) -> &Mat<F> {
        &self.params[self.layout.embed]
    }

    /// Convert to another precision (e.g. a 32-bit checkpoint into 64-bit mode).
    pub fn cast<G: Real>(&self) -> Backbone<G> {
        Backbone {
            config: self.config.clone(),
            vocab: self.vocab.clone(),
            params: self.params.iter().map(Mat::cast).collect(),
            specs: self.specs.clone(),
            layout: self.layout.clone(),
            frozen: self.frozen,
        }
    }

    /// SHA-256 over parameter names, shapes and little-endian f32 values,
    /// plus the vocabulary hash.
    pub fn param_hash(&self) -> String {
        let mut h = Sha256::new();
        h.update(self.vocab.hash().as_bytes());
        for (p, s) in self.params.iter().zip(&self.specs) {
            h.update(s.name.as_bytes());
            h.update((p.rows() as u64).to_le_bytes());
            h.update((p.cols() as u64).to_le_bytes());
            for x in p.data() {
                h.update(x.to_f32().unwrap().to_le_bytes());
            }
        }
        hex::encode(h.finalize())
    }

    fn check_ids(&self, ids: &[usize]) -> Result<()> {
        match ids.iter().find(|&&i| i >= self.config.vocab_size) {
            Some(&id) => Err(Error::UnknownToken { id, size: self.config.vocab_size }),
            None => Ok(()),
        }
    }

    fn check_prompt(&self, prompt: &Mat<F>) -> Result<()> {
        if prompt.rows() > 0 && prompt.cols() != self.config.d_model {
            return Err(Error::DimensionMismatch { expected: self.config.d_model, got: prompt.cols() });
        }
        Ok(())
    }

    /// Row `t` of the result is the embedding of `ids[t]`.
    pub fn embed_tokens(&self, ids: &[usize]) -> Result<Mat<F>> {
        self.check_ids(ids)?;
        let e = self.token_embedding();
        let mut out = Mat::zeros(ids.len(), e.cols());
        for (r, &id) in ids.iter().enumerate() {
            out.row_mut(r).copy_from_slice(e.row(id));
        }
        Ok(out)
    }

    pub(crate) fn param_vars<'a>(&'a self, g: &mut Graph<'a, F>, trainable: bool) -> Vec<Var> {
        self.params.iter().map(|p| g.leaf_ref(p, trainable)).collect()
    }

    fn layer_norm(g: &mut Graph<'_, F>, pv: &[Var], ln: &Ln, x: Var) -> Var {
        g.layer_norm(x, pv[ln.g], pv[ln.b])
    }

    fn attention(&self, g: &mut Graph<'_, F>, pv: &[Var], a: &Attn, xq: Var, xkv: Var, causal: bool) -> Var {
        let q = g.matmul(xq, pv[a.q], false);
        let k = g.matmul(xkv, pv[a.k], false);
        let v = g.matmul(xkv, pv[a.v], false);
        let dk = self.config.d_model / self.config.n_heads;
        let scale = F::lit(1.0 / (dk as f64).sqrt());
        let mut heads = Vec::with_capacity(self.config.n_heads);
        for h in 0..self.config.n_heads {
            let qh = g.slice_cols(q, h * dk, dk);
            let kh = g.slice_cols(k, h * dk, dk);
            let vh = g.slice_cols(v, h * dk, dk);
            let s = g.matmul(qh, kh, true);
            let s = g.scale(s, scale);
            let p = g.softmax(s, causal);
            heads.push(g.matmul(p, vh, false));
        }
        let o = if heads.len() == 1 { heads[0] } else { g.concat_cols(&heads) };
        g.matmul(o, pv[a.o], false)
    }

    fn ffn(g: &mut Graph<'_, F>, pv: &[Var], f: &Ffn, x: Var) -> Var {
        let h = g.matmul(x, pv[f.w1], false);
        let h = g.add_row(h, pv[f.b1]);
        let h = g.gelu(h);
        let h = g.matmul(h, pv[f.w2], false);
        g.add_row(h, pv[f.b2])
    }

    /// Encoder over `prompt ⊕ embed(input ++ [eos])`.
    fn encode(&self, g: &mut Graph<'_, F>, pv: &[Var], prompt: Option<Var>, input_ids: &[usize]) -> Var {
        let mut ids = input_ids.to_vec();
        ids.push(EOS);
        let tok = g.gather(pv[self.layout.embed], &ids);
        let x = match prompt {
            Some(p) if g.value(p).rows() > 0 => g.concat_rows(&[p, tok]),
            _ => tok,
        };
        let n = g.value(x).rows();
        let pos = g.leaf(positions(n, self.config.d_model), false);
        let mut x = g.add(x, pos);
        for l in &self.layout.enc {
            let h = Self::layer_norm(g, pv, &l.ln1, x);
            let a = self.attention(g, pv, &l.attn, h, h, false);
            x = g.add(x, a);
            let h = Self::layer_norm(g, pv, &l.ln2, x);
            let f = Self::ffn(g, pv, &l.ffn, h);
            x = g.add(x, f);
        }
        Self::layer_norm(g, pv, &self.layout.enc_ln, x)
    }

    /// Decoder logits for every position of `dec_ids` (teacher forcing).
    fn decode(&self, g: &mut Graph<'_, F>, pv: &[Var], memory: Var, dec_ids: &[usize]) -> Var {
        let emb = pv[self.layout.embed];
        let y = g.gather(emb, dec_ids);
        let pos = g.leaf(positions(dec_ids.len(), self.config.d_model), false);
        let mut y = g.add(y, pos);
        for l in &self.layout.dec {
            let h = Self::layer_norm(g, pv, &l.ln1, y);
            let a = self.attention(g, pv, &l.self_attn, h, h, true);
            y = g.add(y, a);
            let h = Self::layer_norm(g, pv, &l.ln2, y);
            let c = self.attention(g, pv, &l.cross, h, memory, false);
            y = g.add(y, c);
            let h = Self::layer_norm(g, pv, &l.ln3, y);
            let f = Self::ffn(g, pv, &l.ffn, h);
            y = g.add(y, f);
        }
        let h = Self::layer_norm(g, pv, &self.layout.dec_ln, y);
        let logits = g.matmul(h, emb, true);
        g.scale(logits, F::lit(1.0 / (self.config.d_model as f64).sqrt()))
    }

    pub(crate) fn teacher_forced<'a>(
        &'a self,
        g: &mut Graph<'a, F>,
        pv: &[Var],
        prompt: Option<Var>,
        input_ids: &[usize],
        target_ids: &[usize],
    ) -> Var {
        let memory = self.encode(g, pv, prompt, input_ids);
        let mut dec_in = Vec::with_capacity(target_ids.len());
        dec_in.push(BOS);
        dec_in.extend_from_slice(&target_ids[..target_ids.len() - 1]);
        let logits = self.decode(g, pv, memory, &dec_in);
        g.log_prob_pick(logits, target_ids)
    }

    fn check_pair(&self, prompt: &Mat<F>, input_ids: &[usize], target_ids: &[usize]) -> Result<()> {
        self.check_prompt(prompt)?;
        self.check_ids(input_ids)?;
        self.check_ids(target_ids)?;
        if target_ids.is_empty() {
            return Err(Error::Config("target must be non-empty".into()));
        }
        Ok(())
    }

    /// `log P(target | prompt ⊕ input)` and its gradient w.r.t. the prompt.
    /// `target_ids` is scored as given (include `<eos>` to score termination).
    pub fn forward_logprob(&self, prompt: &Mat<F>, input_ids: &[usize], target_ids: &[usize]) -> Result<ForwardResult<F>> {
        self.check_pair(prompt, input_ids, target_ids)?;
        let mut g = Graph::new();
        let pv = self.param_vars(&mut g, false);
        let pvar = (prompt.rows() > 0).then(|| g.leaf_ref(prompt, true));
        let lp = self.teacher_forced(&mut g, &pv, pvar, input_ids, target_ids);
        let logprob = g.value(lp).get(0, 0);
        let prompt_grad = match pvar {
            Some(p) => {
                let mut grads = g.backward(lp, -F::one());
                grads.take(p).unwrap_or_else(|| Mat::zeros(prompt.rows(), prompt.cols()))
            }
            None => Mat::zeros(0, self.config.d_model),
        };
        Ok(ForwardResult { logprob, prompt_grad })
    }

    /// Log-probability only; no backward pass.
    pub fn score(&self, prompt: &Mat<F>, input_ids: &[usize], target_ids: &[usize]) -> Result<F> {
        self.check_pair(prompt, input_ids, target_ids)?;
        let mut g = Graph::new();
        let pv = self.param_vars(&mut g, false);
        let pvar = (prompt.rows() > 0).then(|| g.leaf_ref(prompt, false));
        let lp = self.teacher_forced(&mut g, &pv, pvar, input_ids, target_ids);
        Ok(g.value(lp).get(0, 0))
    }

    /// Log-probability plus gradients of `-logprob` for every parameter and,
    /// when given, the prompt. Used by pretraining and full fine-tuning.
    pub fn param_gradients(
        &self,
        prompt: Option<&Mat<F>>,
        input_ids: &[usize],
        target_ids: &[usize],
    ) -> Result<(F, ParamGrads<F>, Option<Mat<F>>)> {
        let empty = Mat::zeros(0, self.config.d_model);
        self.check_pair(prompt.unwrap_or(&empty), input_ids, target_ids)?;
        let (lp, grads) = self.param_gradients_with(
            |g, _| prompt.filter(|p| p.rows() > 0).map(|p| g.leaf_ref(p, true)),
            input_ids,
            target_ids,
            |grads, pvar| pvar.and_then(|v| grads.take(v)),
        )?;
        Ok((lp, grads.0, grads.1))
    }

    /// Full-parameter gradients where the prompt is built inside the graph
    /// from the parameter handles (so it can depend on the embeddings).
    /// `extract` sees the prompt handle and pulls out any extra gradient
    /// before the parameter gradients are collected.
    pub(crate) fn param_gradients_with<'a, X>(
        &'a self,
        build_prompt: impl FnOnce(&mut Graph<'a, F>, &[Var]) -> Option<Var>,
        input_ids: &[usize],
        target_ids: &[usize],
        extract: impl FnOnce(&mut crate::autodiff::Grads<F>, Option<Var>) -> X,
    ) -> Result<(F, (ParamGrads<F>, X))> {
        self.check_ids(input_ids)?;
        self.check_ids(target_ids)?;
        if target_ids.is_empty() {
            return Err(Error::Config("target must be non-empty".into()));
        }
        let mut g = Graph::new();
        let pv = self.param_vars(&mut g, true);
        let prompt = build_prompt(&mut g, &pv);
        let lp = self.teacher_forced(&mut g, &pv, prompt, input_ids, target_ids);
        let logprob = g.value(lp).get(0, 0);
        let mut grads = g.backward(lp, -F::one());
        let extra = extract(&mut grads, prompt);
        let pgrads = pv
            .iter()
            .zip(&self.params)
            .map(|(&v, p)| grads.take(v).unwrap_or_else(|| Mat::zeros(p.rows(), p.cols())))
            .collect();
        Ok((logprob, (pgrads, extra)))
    }

    /// Final encoder states for `prompt ⊕ input`.
    pub fn encode_memory(&self, prompt: &Mat<F>, input_ids: &[usize]) -> Result<Mat<F>> {
        self.check_prompt(prompt)?;
        self.check_ids(input_ids)?;
        let mut g = Graph::new();
        let pv = self.param_vars(&mut g, false);
        let pvar = (prompt.rows() > 0).then(|| g.leaf_ref(prompt, false));
        let m = self.encode(&mut g, &pv, pvar, input_ids);
        Ok(g.value(m).clone())
    }

    /// Next-token logits after `prefix` (which starts with `<bos>`).
    pub fn next_logits(&self, memory: &Mat<F>, prefix: &[usize]) -> Result<Vec<F>> {
        self.check_ids(prefix)?;
        let mut g = Graph::new();
        let pv = self.param_vars(&mut g, false);
        let mv = g.leaf_ref(memory, false);
        let logits = self.decode(&mut g, &pv, mv, prefix);
        let l = g.value(logits);
        Ok(l.row(l.rows() - 1).to_vec())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::rng_for;
    use rand::Rng;

    pub(crate) fn toy_vocab(n: usize) -> Vocab {
        Vocab::new((0..n).map(|i| format!("t{i}"))).unwrap()
    }

    fn tiny() -> Backbone<f64> {
        let v = toy_vocab(20);
        Backbone::new(BackboneConfig::tiny(v.len()), v, 3).unwrap()
    }

    #[test]
    fn embedding_lookup_matches_gather() {
        let b = tiny();
        let mut rng = rng_for(1, "t");
        let ids: Vec<usize> = (0..15).map(|_| rng.gen_range(0..b.config.vocab_size)).collect();
        let m = b.embed_tokens(&ids).unwrap();
        for (r, &id) in ids.iter().enumerate() {
            for j in 0..b.d_model() {
                assert_eq!(m.get(r, j), b.token_embedding().get(id, j));
            }
        }
        let pad = b.embed_tokens(&[PAD]).unwrap();
        assert_eq!(pad.row(0), b.token_embedding().row(PAD));
        let twice = b.embed_tokens(&[7, 7]).unwrap();
        assert_eq!(twice.row(0), twice.row(1));
        assert!(matches!(b.embed_tokens(&[99]), Err(Error::UnknownToken { id: 99, .. })));
    }

    #[test]
    fn logprob_is_nonpositive_and_empty_prompt_is_plain_seq2seq() {
        let b = tiny();
        let empty = Mat::zeros(0, b.d_model());
        let r = b.forward_logprob(&empty, &[5, 6, 7], &[8, EOS]).unwrap();
        assert!(r.logprob <= 0.0);
        assert_eq!(r.prompt_grad.rows(), 0);
        assert_eq!(r.logprob, b.score(&empty, &[5, 6, 7], &[8, EOS]).unwrap());
    }

    #[test]
    fn prompt_width_checked() {
        let b = tiny();
        let bad = Mat::zeros(2, 5);
        assert!(matches!(b.forward_logprob(&bad, &[5], &[EOS]), Err(Error::DimensionMismatch { .. })));
    }

    #[test]
    fn stacked_prompt_equals_concatenation() {
        let b = tiny();
        let a = Mat::from_fn(2, 16, |i, j| ((i + j) as f64 * 0.3).sin());
        let c = Mat::from_fn(3, 16, |i, j| ((i * j) as f64 * 0.2).cos());
        let stacked = Mat::stack_rows(&[&a, &c], 16);
        let r1 = b.forward_logprob(&stacked, &[4, 5], &[6, EOS]).unwrap();
        let r2 = b.forward_logprob(&Mat::stack_rows(&[&a, &c], 16), &[4, 5], &[6, EOS]).unwrap();
        assert_eq!(r1.logprob.to_bits(), r2.logprob.to_bits());
        assert_eq!(r1.prompt_grad, r2.prompt_grad);
    }

    #[test]
    fn param_grads_agree_with_prompt_grads() {
        let b = tiny();
        let p = Mat::from_fn(3, 16, |i, j| ((i + 2 * j) as f64 * 0.1).sin());
        let r = b.forward_logprob(&p, &[4, 9], &[5, EOS]).unwrap();
        let (lp, grads, pg) = b.param_gradients(Some(&p), &[4, 9], &[5, EOS]).unwrap();
        assert!((lp - r.logprob).abs() < 1e-12);
        let pg = pg.unwrap();
        for (x, y) in pg.data().iter().zip(r.prompt_grad.data()) {
            assert!((x - y).abs() < 1e-12);
        }
        assert_eq!(grads.len(), b.params().len());
        assert!(grads.iter().all(|g| g.is_finite()));
    }

    #[test]
    fn frozen_refuses_mutation() {
        let mut b = tiny();
        b.freeze();
        assert!(b.params_mut().is_err());
        assert!(b.unfrozen_copy().params_mut().is_ok());
    }
}
