use rand::seq::index;
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::corpus::Label;
use crate::rng::{rng_for, Rng};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SubsetSamplerConfig {
    /// Chance of returning the whole label set.
    pub p: f64,
    pub seed: u64,
}

impl Default for SubsetSamplerConfig {
    fn default() -> Self {
        Self { p: 0.5, seed: 0 }
    }
}

/// With probability `p` the whole of `omega`; otherwise a uniform size in
/// `1..|omega|` and then a uniform subset of that size. Order follows `omega`.
pub fn sample_label_subset(omega: &[Label], p: f64, rng: &mut Rng) -> Vec<Label> {
    assert!(!omega.is_empty(), "cannot sample from an empty label set");
    let n = omega.len();
    if n == 1 || rng.gen_bool(p.clamp(0.0, 1.0)) {
        return omega.to_vec();
    }
    let size = rng.gen_range(1..n);
    let mut picked = index::sample(rng, n, size).into_vec();
    picked.sort_unstable();
    picked.into_iter().map(|i| omega[i].clone()).collect()
}

/// A seeded stream of label subsets that counts how often it was queried.
#[derive(Clone, Debug)]
pub struct SubsetSampler {
    p: f64,
    rng: Rng,
    calls: u64,
}

impl SubsetSampler {
    pub fn new(cfg: &SubsetSamplerConfig, tag: &str) -> Self {
        Self { p: cfg.p, rng: rng_for(cfg.seed, tag), calls: 0 }
    }

    pub fn sample(&mut self, omega: &[Label]) -> Vec<Label> {
        self.calls += 1;
        sample_label_subset(omega, self.p, &mut self.rng)
    }

    pub fn calls(&self) -> u64 {
        self.calls
    }
}

#[cfg(test)]
mod tests {
    use std::collections::BTreeMap;

    use super::*;

    fn labels(v: &[&str]) -> Vec<Label> {
        v.iter().map(|s| Label::new(s).unwrap()).collect()
    }

    #[test]
    fn two_branch_law() {
        let omega = labels(&["a", "b", "c"]);
        let mut rng = rng_for(1, "t");
        let n = 200_000;
        let mut counts: BTreeMap<Vec<Label>, usize> = BTreeMap::new();
        for _ in 0..n {
            *counts.entry(sample_label_subset(&omega, 0.5, &mut rng)).or_default() += 1;
        }
        assert_eq!(counts.len(), 7);
        for (s, c) in counts {
            let want = if s.len() == 3 { 0.5 } else { 1.0 / 12.0 };
            assert!((c as f64 / n as f64 - want).abs() < 0.006, "{s:?}");
        }
    }

    #[test]
    fn degenerate_cases() {
        let mut rng = rng_for(2, "t");
        let one = labels(&["a"]);
        let many = labels(&["a", "b", "c", "d"]);
        for _ in 0..100 {
            assert_eq!(sample_label_subset(&one, 0.0, &mut rng), one);
            assert_eq!(sample_label_subset(&many, 1.0, &mut rng), many);
            let s = sample_label_subset(&many, 0.0, &mut rng);
            assert!(!s.is_empty() && s.len() < many.len());
        }
    }

    #[test]
    fn sampler_counts_calls() {
        let mut s = SubsetSampler::new(&SubsetSamplerConfig::default(), "x");
        let omega = labels(&["a", "b"]);
        s.sample(&omega);
        s.sample(&omega);
        assert_eq!(s.calls(), 2);
    }
}
