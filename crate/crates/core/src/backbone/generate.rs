use super::{Backbone, BOS, EOS};
use crate::error::{Error, Result};
use crate::tensor::{Mat, Real};

/// Tokens permitted after a decoded prefix.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct AllowedNext {
    pub tokens: Vec<usize>,
    /// Whether the output may end here (`<eos>` is legal).
    pub can_end: bool,
}

/// Restricts greedy decoding to a language of token sequences.
pub trait DecodeConstraint {
    /// Allowed continuations of `prefix` (which excludes `<bos>`). With
    /// `finishing`, only continuations that move toward the nearest legal
    /// end are returned.
    fn allowed(&self, prefix: &[usize], finishing: bool) -> AllowedNext;
}

fn argmax<F: Real>(logits: &[F], candidates: impl Iterator<Item = usize>) -> Option<usize> {
    let mut best: Option<(usize, F)> = None;
    for c in candidates {
        let v = logits[c];
        if best.is_none_or(|(_, b)| v > b) {
            best = Some((c, v));
        }
    }
    best.map(|(c, _)| c)
}

/// Greedy decoding, optionally constrained. Returns generated ids without
/// `<bos>`/`<eos>`.
///
/// Unconstrained decoding stops at `<eos>` or after `max_len` tokens.
/// Constrained decoding takes the argmax over allowed tokens only and stops
/// only where the constraint permits an end; past `max_len` it switches the
/// constraint to finishing mode so the output is always a complete member
/// of the constrained language.
pub fn generate<F: Real>(
    model: &Backbone<F>,
    prompt: &Mat<F>,
    input_ids: &[usize],
    max_len: usize,
    constraint: Option<&dyn DecodeConstraint>,
) -> Result<Vec<usize>> {
    assert!(max_len >= 1, "max_len must be positive");
    let memory = model.encode_memory(prompt, input_ids)?;
    let mut prefix = vec![BOS];
    let hard_cap = max_len * 4 + 64;
    loop {
        let step = prefix.len() - 1;
        match constraint {
            None => {
                if step >= max_len {
                    break;
                }
                let logits = model.next_logits(&memory, &prefix)?;
                let tok = argmax(&logits, 0..logits.len()).ok_or(Error::DeadEnd)?;
                if tok == EOS {
                    break;
                }
                prefix.push(tok);
            }
            Some(c) => {
                if step >= hard_cap {
                    return Err(Error::DeadEnd);
                }
                let allowed = c.allowed(&prefix[1..], step >= max_len);
                if allowed.tokens.is_empty() {
                    if allowed.can_end {
                        break;
                    }
                    return Err(Error::DeadEnd);
                }
                let logits = model.next_logits(&memory, &prefix)?;
                let end = allowed.can_end.then_some(EOS);
                let tok = argmax(&logits, allowed.tokens.iter().copied().chain(end)).ok_or(Error::DeadEnd)?;
                if tok == EOS {
                    break;
                }
                prefix.push(tok);
            }
        }
    }
    prefix.remove(0);
    Ok(prefix)
}
