//! Synthetic text-to-text corpora with label-discriminative cue tokens.
//!
//! Every label owns a disjoint set of cue tokens. Inputs mix a few cues of
//! the gold label with shared noise tokens, so the label is recoverable from
//! the input alone but only if the model knows which cues belong to which
//! label.

use std::collections::BTreeSet;

use rand::seq::{index, SliceRandom};
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use super::{serialize_clauses, Clause, Example, Label, TaskKind, CLAUSE_SEP, FIELD_SEP, NONE_TARGET, SPAN_SEP};
use crate::error::{Error, Result};
use crate::rng::{rng_for, Rng};

const NAME_WORDS: &[&str] = &[
    "sports", "politics", "science", "travel", "food", "health", "business", "comedy", "crime", "culture",
    "education", "environment", "fashion", "finance", "gaming", "history", "housing", "language", "law",
    "media", "medicine", "military", "music", "nature", "parenting", "religion", "romance", "shopping",
    "space", "style", "technology", "theater", "weather", "wellness", "wine", "animals", "architecture",
    "aviation", "banking", "chemistry", "cinema", "coffee", "dance", "design", "energy", "farming",
    "fitness", "geology", "hockey", "insurance", "justice", "literature", "marine", "mining", "museums",
    "oceans", "painting", "photography", "poetry", "radio", "railways", "robotics", "sailing", "soccer",
    "tennis", "textiles", "tourism", "trade", "transport", "urbanism", "vehicles", "volunteering", "weddings",
    "wildlife", "writing", "yoga", "zoology", "astronomy", "biology", "cycling",
];

const QUALIFIERS: &[&str] = &["news", "other", "affairs", "life", "world", "arts"];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SyntheticTaskConfig {
    pub n_labels: usize,
    /// Total vocabulary size including specials; the remainder after names,
    /// cues and entities is filled with noise tokens.
    pub vocab_size: usize,
    pub n_stages: usize,
    pub shots_train: usize,
    pub shots_val: usize,
    pub shots_test: usize,
    pub seq_len_min: usize,
    pub seq_len_max: usize,
    pub task_kind: TaskKind,
    pub seed: u64,
    pub triggers_per_label: usize,
}

impl Default for SyntheticTaskConfig {
    fn default() -> Self {
        Self {
            n_labels: 16,
            vocab_size: 320,
            n_stages: 4,
            shots_train: 50,
            shots_val: 10,
            shots_test: 20,
            seq_len_min: 8,
            seq_len_max: 12,
            task_kind: TaskKind::SingleClass,
            seed: 0,
            triggers_per_label: 4,
        }
    }
}

/// Number of reserved special tokens (pad, bos, eos, unk).
pub const N_SPECIALS: usize = 4;
const N_ENTITIES: usize = 96;

impl SyntheticTaskConfig {
    fn n_entities(&self) -> usize {
        if self.task_kind == TaskKind::SingleClass {
            0
        } else {
            N_ENTITIES
        }
    }

    fn n_name_words(&self) -> usize {
        self.n_labels + QUALIFIERS.len().min(self.n_labels / 3)
    }

    fn n_noise(&self) -> isize {
        self.vocab_size as isize
            - (N_SPECIALS + 4 + self.n_name_words() + self.n_labels * self.triggers_per_label + self.n_entities())
                as isize
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::Config(m));
        if self.n_stages < 1 || self.n_labels < 2 * self.n_stages {
            return fail(format!("need n_labels >= 2 * n_stages (got {} and {})", self.n_labels, self.n_stages));
        }
        if self.n_labels > NAME_WORDS.len() {
            return fail(format!("at most {} synthetic labels supported", NAME_WORDS.len()));
        }
        if self.shots_train < 1 || self.shots_val < 1 || self.shots_test < 1 {
            return fail("shots must be >= 1".into());
        }
        if self.seq_len_min < 4 || self.seq_len_max < self.seq_len_min {
            return fail("seq_len range must satisfy 4 <= min <= max".into());
        }
        if self.triggers_per_label < 2 {
            return fail("triggers_per_label must be >= 2".into());
        }
        if self.n_noise() < 16 {
            return fail(format!("vocab_size {} too small for this configuration", self.vocab_size));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SyntheticCorpus {
    pub config: SyntheticTaskConfig,
    pub labels: Vec<Label>,
    /// Cue tokens owned by each label (parallel to `labels`).
    pub cues: Vec<Vec<String>>,
    pub noise: Vec<String>,
    pub entities: Vec<String>,
    pub train: Vec<Example>,
    pub validation: Vec<Example>,
    pub test: Vec<Example>,
}

impl SyntheticCorpus {
    /// Non-special vocabulary in a fixed order: structure tokens, label-name
    /// words, cues, entities, noise.
    pub fn vocab_tokens(&self) -> Vec<String> {
        let mut out: Vec<String> = [SPAN_SEP, CLAUSE_SEP, FIELD_SEP, NONE_TARGET].iter().map(|s| s.to_string()).collect();
        let mut seen: BTreeSet<String> = out.iter().cloned().collect();
        for l in &self.labels {
            for t in l.tokens() {
                if seen.insert(t.to_string()) {
                    out.push(t.to_string());
                }
            }
        }
        // Unused qualifier words still get a slot so the vocab size is fixed.
        for q in QUALIFIERS.iter().take(self.config.n_labels / 3) {
            if seen.insert(q.to_string()) {
                out.push(q.to_string());
            }
        }
        out.extend(self.cues.iter().flatten().cloned());
        out.extend(self.entities.iter().cloned());
        out.extend(self.noise.iter().cloned());
        out
    }

    /// Every token that may appear in input text (cues, entities, noise).
    pub fn content_tokens(&self) -> Vec<String> {
        let mut out: Vec<String> = self.cues.iter().flatten().cloned().collect();
        out.extend(self.entities.iter().cloned());
        out.extend(self.noise.iter().cloned());
        out
    }

    pub fn all_examples(&self) -> impl Iterator<Item = &Example> {
        self.train.iter().chain(&self.validation).chain(&self.test)
    }
}

fn label_names(n: usize) -> Vec<Label> {
    (0..n)
        .map(|i| {
            let name = if i % 3 == 2 {
                format!("{} {}", NAME_WORDS[i], QUALIFIERS[(i / 3) % QUALIFIERS.len()])
            } else {
                NAME_WORDS[i].to_string()
            };
            Label::new(&name).expect("static label names are valid")
        })
        .collect()
}

struct Generator<'a> {
    cfg: &'a SyntheticTaskConfig,
    cues: &'a [Vec<String>],
    noise: &'a [String],
    entities: &'a [String],
    labels: &'a [Label],
}

impl Generator<'_> {
    fn noise_tokens(&self, rng: &mut Rng, n: usize) -> Vec<String> {
        (0..n).map(|_| self.noise[rng.gen_range(0..self.noise.len())].clone()).collect()
    }

    fn length(&self, rng: &mut Rng) -> usize {
        rng.gen_range(self.cfg.seq_len_min..=self.cfg.seq_len_max)
    }

    /// Noise sentence with `n_cues` distinct cues of `label` at random positions.
    fn cue_sentence(&self, rng: &mut Rng, label: usize) -> Vec<String> {
        let len = self.length(rng);
        let n_cues = 2.min(self.cues[label].len());
        let mut toks = self.noise_tokens(rng, len - n_cues);
        for ci in index::sample(rng, self.cues[label].len(), n_cues) {
            let pos = rng.gen_range(0..=toks.len());
            toks.insert(pos, self.cues[label][ci].clone());
        }
        toks
    }

    fn single(&self, rng: &mut Rng, label: usize) -> Example {
        let toks = self.cue_sentence(rng, label);
        Example::new(toks.join(" "), self.labels[label].as_str(), TaskKind::SingleClass)
    }

    fn relation(&self, rng: &mut Rng, label: usize) -> Example {
        let mut toks = self.cue_sentence(rng, label);
        let pair = index::sample(rng, self.entities.len(), 2);
        let (h, t) = (self.entities[pair.index(0)].clone(), self.entities[pair.index(1)].clone());
        let hp = rng.gen_range(0..=toks.len());
        toks.insert(hp, h.clone());
        let tp = rng.gen_range(0..=toks.len());
        toks.insert(tp, t.clone());
        let input = format!("{} {FIELD_SEP} {h} {FIELD_SEP} {t}", toks.join(" "));
        Example::new(input, self.labels[label].as_str(), TaskKind::Relation)
    }

    /// Sentence with 1-3 mentions, each a cue of its type followed by a 1-2
    /// token entity span. The first mention has the primary type.
    fn tagged(&self, rng: &mut Rng, primary: usize) -> Example {
        let n_mentions = rng.gen_range(1..=3usize);
        let len = self.length(rng);
        let mut types = vec![primary];
        for _ in 1..n_mentions {
            types.push(rng.gen_range(0..self.labels.len()));
        }
        let span_lens: Vec<usize> = types.iter().map(|_| rng.gen_range(1..=2usize)).collect();
        let total_span: usize = span_lens.iter().sum();
        let ent = index::sample(rng, self.entities.len(), total_span).into_vec();
        let mut ent_it = ent.into_iter();
        let mut mentions: Vec<(Vec<String>, usize)> = Vec::new();
        for (&ty, &sl) in types.iter().zip(&span_lens) {
            let cue = self.cues[ty][rng.gen_range(0..self.cues[ty].len())].clone();
            let span: Vec<String> = ent_it.by_ref().take(sl).map(|i| self.entities[i].clone()).collect();
            let mut chunk = vec![cue];
            chunk.extend(span);
            mentions.push((chunk, ty));
        }
        let n_noise = len.saturating_sub(n_mentions).max(2);
        let noise = self.noise_tokens(rng, n_noise);
        // Choose insertion slots among the noise tokens, then sort so the
        // clause order follows order of appearance.
        let mut slots: Vec<usize> = (0..n_mentions).map(|_| rng.gen_range(0..=noise.len())).collect();
        let mut order: Vec<usize> = (0..n_mentions).collect();
        order.shuffle(rng);
        slots.sort_unstable();
        let mut toks: Vec<String> = Vec::new();
        let mut clauses = Vec::new();
        let mut next = 0;
        for (i, tok) in noise.iter().enumerate() {
            while next < n_mentions && slots[next] == i {
                let (chunk, ty) = &mentions[order[next]];
                clauses.push(Clause { span: chunk[1..].join(" "), label: self.labels[*ty].clone() });
                toks.extend(chunk.iter().cloned());
                next += 1;
            }
            toks.push(tok.clone());
        }
        while next < n_mentions {
            let (chunk, ty) = &mentions[order[next]];
            clauses.push(Clause { span: chunk[1..].join(" "), label: self.labels[*ty].clone() });
            toks.extend(chunk.iter().cloned());
            next += 1;
        }
        Example::new(toks.join(" "), serialize_clauses(&clauses), TaskKind::SequenceLabel)
    }

    fn example(&self, rng: &mut Rng, label: usize) -> Example {
        match self.cfg.task_kind {
            TaskKind::SingleClass => self.single(rng, label),
            TaskKind::Relation => self.relation(rng, label),
            TaskKind::SequenceLabel => self.tagged(rng, label),
        }
    }

    fn split(&self, rng: &mut Rng, shots: usize) -> Vec<Example> {
        let mut out = Vec::with_capacity(shots * self.labels.len());
        for label in 0..self.labels.len() {
            for _ in 0..shots {
                out.push(self.example(rng, label));
            }
        }
        out
    }
}

/// Generate a label universe and train/validation/test pools with exactly
/// `shots_*` examples per label (as primary label for sequence labelling).
pub fn gen_synthetic_task(config: &SyntheticTaskConfig) -> Result<SyntheticCorpus> {
    config.validate()?;
    let labels = label_names(config.n_labels);
    let cues: Vec<Vec<String>> = (0..config.n_labels)
        .map(|i| (0..config.triggers_per_label).map(|j| format!("cue{i:02}{}", (b'a' + j as u8) as char)).collect())
        .collect();
    let entities: Vec<String> = (0..config.n_entities()).map(|i| format!("ent{i:03}")).collect();
    let noise: Vec<String> = (0..config.n_noise() as usize).map(|i| format!("w{i:03}")).collect();

    let gen = Generator { cfg: config, cues: &cues, noise: &noise, entities: &entities, labels: &labels };
    let train = gen.split(&mut rng_for(config.seed, "synthetic/train"), config.shots_train);
    let validation = gen.split(&mut rng_for(config.seed, "synthetic/val"), config.shots_val);
    let test = gen.split(&mut rng_for(config.seed, "synthetic/test"), config.shots_test);
    Ok(SyntheticCorpus { config: config.clone(), labels, cues, noise, entities, train, validation, test })
}
