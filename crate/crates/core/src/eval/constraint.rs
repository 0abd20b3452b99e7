//! Decoding constraints: a token trie over candidate label names, and a
//! clause grammar for sequence-labelling targets whose type positions are
//! restricted to a label set.

use std::collections::BTreeMap;

use crate::backbone::{AllowedNext, DecodeConstraint, Vocab, UNK};
use crate::corpus::{Label, TaskKind, CLAUSE_SEP, NONE_TARGET, SPAN_SEP};

#[derive(Clone, Debug, Default, PartialEq)]
struct Node {
    children: BTreeMap<usize, usize>,
    terminal: bool,
    /// Edges to the nearest terminal below (0 for terminal nodes).
    dist: usize,
}

/// Prefix tree over token-id sequences.
#[derive(Clone, Debug, PartialEq)]
pub struct Trie {
    nodes: Vec<Node>,
}

impl Default for Trie {
    fn default() -> Self {
        Self { nodes: vec![Node::default()] }
    }
}

impl Trie {
    pub fn new<'a>(seqs: impl IntoIterator<Item = &'a [usize]>) -> Self {
        let mut t = Self::default();
        for s in seqs {
            t.insert(s);
        }
        t.update_distances();
        t
    }

    fn insert(&mut self, seq: &[usize]) {
        let mut cur = 0;
        for &tok in seq {
            cur = match self.nodes[cur].children.get(&tok) {
                Some(&n) => n,
                None => {
                    self.nodes.push(Node::default());
                    let n = self.nodes.len() - 1;
                    self.nodes[cur].children.insert(tok, n);
                    n
                }
            };
        }
        self.nodes[cur].terminal = true;
    }

    fn update_distances(&mut self) {
        // Children always have larger indices than parents.
        for i in (0..self.nodes.len()).rev() {
            let n = &self.nodes[i];
            let d = if n.terminal {
                0
            } else {
                n.children.values().map(|&c| self.nodes[c].dist + 1).min().unwrap_or(usize::MAX)
            };
            self.nodes[i].dist = d;
        }
    }

    pub fn is_empty(&self) -> bool {
        !self.nodes[0].terminal && self.nodes[0].children.is_empty()
    }

    /// Node reached from the root by `seq`, if any.
    pub fn walk(&self, seq: &[usize]) -> Option<usize> {
        seq.iter().try_fold(0, |cur, tok| self.nodes[cur].children.get(tok).copied())
    }

    pub fn contains(&self, seq: &[usize]) -> bool {
        self.walk(seq).is_some_and(|n| self.nodes[n].terminal)
    }

    fn next(&self, node: usize, finishing: bool) -> AllowedNext {
        let n = &self.nodes[node];
        if finishing && n.terminal {
            return AllowedNext { tokens: Vec::new(), can_end: true };
        }
        let tokens = n
            .children
            .iter()
            .filter(|(_, &c)| !finishing || self.nodes[c].dist + 1 == n.dist)
            .map(|(&t, _)| t)
            .collect();
        AllowedNext { tokens, can_end: n.terminal }
    }

    /// Every stored sequence, in token order.
    pub fn sequences(&self) -> Vec<Vec<usize>> {
        let mut out = Vec::new();
        let mut stack = vec![(0usize, Vec::new())];
        while let Some((n, path)) = stack.pop() {
            if self.nodes[n].terminal {
                out.push(path.clone());
            }
            for (&t, &c) in self.nodes[n].children.iter().rev() {
                let mut p = path.clone();
                p.push(t);
                stack.push((c, p));
            }
        }
        out
    }
}

impl DecodeConstraint for Trie {
    fn allowed(&self, prefix: &[usize], finishing: bool) -> AllowedNext {
        match self.walk(prefix) {
            Some(n) => self.next(n, finishing),
            None => AllowedNext::default(),
        }
    }
}

/// Grammar `none | (span+ ! type ;)+` where `type` must be a path of the
/// label trie and span tokens are any ordinary vocabulary token.
#[derive(Clone, Debug, PartialEq)]
pub struct ClauseGrammar {
    types: Trie,
    span_tokens: Vec<usize>,
    bang: usize,
    semi: usize,
    none: usize,
}

enum State {
    Start,
    Done,
    InSpan,
    InType(usize),
    AfterClause,
    Invalid,
}

impl ClauseGrammar {
    fn state(&self, prefix: &[usize]) -> State {
        let mut st = State::Start;
        for &t in prefix {
            st = match st {
                State::Start if t == self.none => State::Done,
                State::Start | State::AfterClause | State::InSpan if self.is_span(t) => State::InSpan,
                State::InSpan if t == self.bang => State::InType(0),
                State::InType(n) if t == self.semi && self.types.nodes[n].terminal => State::AfterClause,
                State::InType(n) => match self.types.nodes[n].children.get(&t) {
                    Some(&c) => State::InType(c),
                    None => State::Invalid,
                },
                _ => State::Invalid,
            };
        }
        st
    }

    fn is_span(&self, t: usize) -> bool {
        self.span_tokens.binary_search(&t).is_ok()
    }
}

impl DecodeConstraint for ClauseGrammar {
    fn allowed(&self, prefix: &[usize], finishing: bool) -> AllowedNext {
        match self.state(prefix) {
            State::Start if finishing => AllowedNext { tokens: vec![self.none], can_end: false },
            State::Start => {
                let mut tokens = self.span_tokens.clone();
                tokens.push(self.none);
                AllowedNext { tokens, can_end: false }
            }
            State::Done => AllowedNext { tokens: Vec::new(), can_end: true },
            State::InSpan if finishing => AllowedNext { tokens: vec![self.bang], can_end: false },
            State::InSpan => {
                let mut tokens = self.span_tokens.clone();
                tokens.push(self.bang);
                AllowedNext { tokens, can_end: false }
            }
            State::InType(n) => {
                let node = &self.types.nodes[n];
                if node.terminal && finishing {
                    return AllowedNext { tokens: vec![self.semi], can_end: false };
                }
                let mut next = self.types.next(n, finishing);
                next.can_end = false;
                if node.terminal {
                    next.tokens.push(self.semi);
                }
                next
            }
            State::AfterClause if finishing => AllowedNext { tokens: Vec::new(), can_end: true },
            State::AfterClause => AllowedNext { tokens: self.span_tokens.clone(), can_end: true },
            State::Invalid => AllowedNext::default(),
        }
    }
}

/// A decoding constraint for one candidate label set.
#[derive(Clone, Debug, PartialEq)]
pub enum Constraint {
    Labels(Trie),
    Clauses(ClauseGrammar),
}

impl DecodeConstraint for Constraint {
    fn allowed(&self, prefix: &[usize], finishing: bool) -> AllowedNext {
        match self {
            Constraint::Labels(t) => t.allowed(prefix, finishing),
            Constraint::Clauses(g) => g.allowed(prefix, finishing),
        }
    }
}

fn label_trie(labels: &[Label], vocab: &Vocab) -> Trie {
    let seqs: Vec<Vec<usize>> = labels.iter().map(|l| vocab.encode(l.as_str())).collect();
    Trie::new(seqs.iter().map(Vec::as_slice))
}

/// Constraint for decoding over `labels`: a label-name trie for
/// single-label tasks, the clause grammar for sequence labelling.
pub fn build_constraint_trie(labels: &[Label], kind: TaskKind, vocab: &Vocab) -> Constraint {
    assert!(!labels.is_empty(), "constraint needs at least one label");
    let types = label_trie(labels, vocab);
    match kind {
        TaskKind::SingleClass | TaskKind::Relation => Constraint::Labels(types),
        TaskKind::SequenceLabel => {
            let id = |s: &str| vocab.id(s).unwrap_or(UNK);
            let (bang, semi, none) = (id(SPAN_SEP), id(CLAUSE_SEP), id(NONE_TARGET));
            let span_tokens = (UNK + 1..vocab.len()).filter(|&t| t != bang && t != semi && t != none).collect();
            Constraint::Clauses(ClauseGrammar { types, span_tokens, bang, semi, none })
        }
    }
}
