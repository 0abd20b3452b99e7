use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::metrics::{Metric, MetricName};
use crate::backbone::Backbone;
use crate::corpus::{Example, Label, StagePlan};
use crate::error::{Error, Result};
use crate::training::Artifacts;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Regime {
    /// One stage's test set over that stage's labels.
    Specific,
    /// Cumulative test set over every label seen so far.
    Agnostic,
    /// A cross-stage label set matching no single stage.
    Fused,
}

impl Regime {
    pub const ALL: [Regime; 3] = [Regime::Specific, Regime::Agnostic, Regime::Fused];

    pub fn as_str(self) -> &'static str {
        match self {
            Regime::Specific => "specific",
            Regime::Agnostic => "agnostic",
            Regime::Fused => "fused",
        }
    }
}

impl fmt::Display for Regime {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Regime {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        Regime::ALL
            .into_iter()
            .find(|r| r.as_str() == s)
            .ok_or_else(|| Error::Config(format!("unknown regime {s:?} (expected specific, agnostic or fused)")))
    }
}

/// One evaluation unit of a regime.
#[derive(Clone, Debug, PartialEq)]
pub struct RegimeCase {
    /// 1-based stage number, or fused-set number for the fused regime.
    pub index: usize,
    /// The label set the model is told about.
    pub labels: Vec<Label>,
    pub test: Vec<Example>,
}

pub fn regime_cases(regime: Regime, plan: &StagePlan) -> Vec<RegimeCase> {
    match regime {
        Regime::Specific => plan
            .stages
            .iter()
            .zip(&plan.specific_tests)
            .map(|(s, t)| RegimeCase { index: s.index, labels: s.labels.clone(), test: t.clone() })
            .collect(),
        Regime::Agnostic => plan
            .agnostic_tests
            .iter()
            .enumerate()
            .map(|(k, t)| RegimeCase { index: k + 1, labels: plan.seen_labels(k), test: t.clone() })
            .collect(),
        Regime::Fused => plan
            .fused_tests
            .iter()
            .enumerate()
            .map(|(j, f)| RegimeCase { index: j + 1, labels: f.labels.clone(), test: f.test.clone() })
            .collect(),
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct EvalOptions {
    pub constrained: bool,
}

/// One line of the metric output.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricRecord {
    pub method: String,
    pub regime: Regime,
    /// Stage or fused-set number, or `mean`.
    pub stage: String,
    pub metric: MetricName,
    pub value: f64,
    pub support: usize,
    pub seed: u64,
    pub options: EvalOptions,
}

pub const MEAN_KEY: &str = "mean";

/// Per-case records followed by their unweighted mean.
pub(crate) fn with_mean(
    method: &str,
    regime: Regime,
    seed: u64,
    options: EvalOptions,
    metrics: Vec<(usize, Metric)>,
) -> Vec<MetricRecord> {
    let rec = |stage: String, m: Metric| MetricRecord {
        method: method.to_string(),
        regime,
        stage,
        metric: m.name,
        value: m.value,
        support: m.support,
        seed,
        options,
    };
    let mut out: Vec<MetricRecord> = metrics.iter().map(|(i, m)| rec(i.to_string(), *m)).collect();
    if let Some((_, first)) = metrics.first() {
        let value = metrics.iter().map(|(_, m)| m.value).sum::<f64>() / metrics.len() as f64;
        let support = metrics.iter().map(|(_, m)| m.support).sum();
        out.push(rec(MEAN_KEY.to_string(), Metric { name: first.name, value, support }));
    }
    out
}

/// Evaluate trained artifacts on every case of a regime.
pub fn evaluate_regime(
    regime: Regime,
    method: &str,
    artifacts: &Artifacts,
    plan: &StagePlan,
    backbone: &Backbone<f32>,
    options: EvalOptions,
    seed: u64,
) -> Result<Vec<MetricRecord>> {
    let mut metrics = Vec::new();
    for case in regime_cases(regime, plan) {
        if case.test.is_empty() {
            return Err(Error::EmptyEval);
        }
        let inf = artifacts.inference(regime, &case, backbone)?;
        let m = super::evaluate_prompt(inf.model, &inf.prompt, &case.test, &case.labels, plan.task_kind, options.constrained)?;
        metrics.push((case.index, m));
    }
    Ok(with_mean(method, regime, seed, options, metrics))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{build_plan, gen_synthetic_task, PlanOptions, SyntheticTaskConfig};

    pub(crate) fn small_plan() -> StagePlan {
        let c = gen_synthetic_task(&SyntheticTaskConfig { n_labels: 6, n_stages: 3, ..Default::default() }).unwrap();
        let opts = PlanOptions { n_stages: 3, shots_train: 4, shots_val: 2, shots_test: 2, n_fused: 2, fused_size: 3, seed: 1 };
        build_plan(c.config.task_kind, &c.labels, &c.train, &c.validation, &c.test, &opts).unwrap()
    }

    #[test]
    fn case_label_sets_follow_definitions() {
        let plan = small_plan();
        let spec = regime_cases(Regime::Specific, &plan);
        assert_eq!(spec.len(), 3);
        for (c, s) in spec.iter().zip(&plan.stages) {
            assert_eq!(c.labels, s.labels);
        }
        let agn = regime_cases(Regime::Agnostic, &plan);
        for (k, c) in agn.iter().enumerate() {
            let n: usize = plan.stages[..=k].iter().map(|s| s.labels.len()).sum();
            assert_eq!(c.labels.len(), n);
        }
        let fused = regime_cases(Regime::Fused, &plan);
        assert_eq!(fused.len(), 2);
        assert!(fused.iter().all(|c| c.labels.len() == 3));
    }

    #[test]
    fn mean_is_appended() {
        let m = |v| Metric { name: MetricName::ExactMatch, value: v, support: 10 };
        let recs = with_mean("x", Regime::Specific, 1, EvalOptions::default(), vec![(1, m(0.5)), (2, m(1.0))]);
        assert_eq!(recs.len(), 3);
        assert_eq!(recs[2].stage, MEAN_KEY);
        assert!((recs[2].value - 0.75).abs() < 1e-12);
        assert_eq!(recs[2].support, 20);
    }

    #[test]
    fn regime_names_round_trip() {
        for r in Regime::ALL {
            assert_eq!(r.as_str().parse::<Regime>().unwrap(), r);
        }
        assert!("bogus".parse::<Regime>().is_err());
    }
}
