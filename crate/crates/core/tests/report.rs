//! Report aggregation against hand-computed statistics, and the JSON output
//! against the published schema.

use modprompt::eval::{EvalOptions, MetricName, MetricRecord, ProbeKind, ProbeRecord, Regime};
use modprompt::harness::report::{aggregate_trials, parse_csv, render_csv, render_report, ReportFormat, SeedResult};
use proptest::prelude::*;
use serde_json::Value;

const SCHEMA: &str = include_str!("../schema/report.schema.json");

/// Checks the subset of JSON Schema the report schema uses: type, enum,
/// required, properties, additionalProperties=false, items, minimum.
fn conforms(v: &Value, s: &Value, path: &str) -> Result<(), String> {
    if let Some(e) = s.get("enum") {
        if !e.as_array().unwrap().contains(v) {
            return Err(format!("{path}: {v} not in {e}"));
        }
    }
    if let Some(t) = s.get("type").and_then(Value::as_str) {
        let ok = match t {
            "object" => v.is_object(),
            "array" => v.is_array(),
            "string" => v.is_string(),
            "boolean" => v.is_boolean(),
            "number" => v.is_number(),
            "integer" => v.is_u64() || v.is_i64(),
            other => return Err(format!("{path}: validator lacks type {other}")),
        };
        if !ok {
            return Err(format!("{path}: expected {t}, got {v}"));
        }
    }
    if let Some(min) = s.get("minimum").and_then(Value::as_f64) {
        if v.as_f64().is_some_and(|x| x < min) {
            return Err(format!("{path}: {v} below {min}"));
        }
    }
    if let Some(obj) = v.as_object() {
        for r in s.get("required").and_then(Value::as_array).into_iter().flatten() {
            if !obj.contains_key(r.as_str().unwrap()) {
                return Err(format!("{path}: missing {r}"));
            }
        }
        let props = s.get("properties").and_then(Value::as_object);
        for (k, x) in obj {
            match props.and_then(|p| p.get(k)) {
                Some(ps) => conforms(x, ps, &format!("{path}.{k}"))?,
                None if s.get("additionalProperties") == Some(&Value::Bool(false)) => {
                    return Err(format!("{path}: unexpected key {k}"))
                }
                None => {}
            }
        }
    }
    if let (Some(arr), Some(items)) = (v.as_array(), s.get("items")) {
        for (i, x) in arr.iter().enumerate() {
            conforms(x, items, &format!("{path}[{i}]"))?;
        }
    }
    Ok(())
}

fn metric(method: &str, regime: Regime, stage: &str, value: f64, seed: u64) -> MetricRecord {
    MetricRecord {
        method: method.into(),
        regime,
        stage: stage.into(),
        metric: MetricName::ExactMatch,
        value,
        support: 10,
        seed,
        options: EvalOptions::default(),
    }
}

fn probe(kind: ProbeKind, default: f64, probed: f64, seed: u64) -> ProbeRecord {
    ProbeRecord {
        probe: kind,
        stage: "mean".into(),
        default,
        probed,
        delta: probed - default,
        support: 10,
        seed,
        options: EvalOptions::default(),
    }
}

fn seed_result(seed: u64, fused: f64, pt_cl: f64) -> SeedResult {
    SeedResult {
        seed,
        metrics: vec![
            metric("modular_pt", Regime::Fused, "1", fused, seed),
            metric("modular_pt", Regime::Fused, "mean", fused, seed),
            metric("pt_cl", Regime::Fused, "mean", pt_cl, seed),
        ],
        probes: vec![probe(ProbeKind::DropGt, fused, fused / 4.0, seed)],
    }
}

/// Two-pass mean and population standard deviation.
fn oracle(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let m = xs.iter().sum::<f64>() / n;
    (m, (xs.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / n).sqrt())
}

#[test]
fn json_report_conforms_to_schema() {
    let schema: Value = serde_json::from_str(SCHEMA).unwrap();
    let report = aggregate_trials(&[seed_result(1, 0.5, 0.1), seed_result(2, 0.7, 0.2)]).unwrap();
    let json: Value = serde_json::from_str(&render_report(&report, ReportFormat::Json).unwrap()).unwrap();
    conforms(&json, &schema, "$").unwrap();

    let mut bad = json.clone();
    bad["cells"][0]["regime"] = Value::from("sideways");
    assert!(conforms(&bad, &schema, "$").is_err());
    let mut bad = json;
    bad["probes"][0].as_object_mut().unwrap().remove("delta_std");
    assert!(conforms(&bad, &schema, "$").is_err());
}

#[test]
fn two_trial_cells_match_hand_computation() {
    let report = aggregate_trials(&[seed_result(1, 0.5, 0.1), seed_result(2, 0.7, 0.2)]).unwrap();
    assert_eq!(report.seeds, vec![1, 2]);
    assert!(report.complete);
    let c = report.cell("modular_pt", Regime::Fused, false, "mean").unwrap();
    assert_eq!(c.values, vec![0.5, 0.7]);
    assert!((c.mean - 0.6).abs() < 1e-12);
    assert!((c.std - 0.1).abs() < 1e-12);
    let p = report.probe(ProbeKind::DropGt, false, "mean").unwrap();
    assert!((p.delta_mean - (-0.45)).abs() < 1e-12);
    assert!((p.delta_std - 0.075).abs() < 1e-12);
}

proptest! {
    #[test]
    fn aggregation_matches_two_pass_oracle(vals in prop::collection::vec((0.0f64..1.0, 0.0f64..1.0), 1..8)) {
        let results: Vec<SeedResult> = vals.iter().enumerate().map(|(i, &(a, b))| seed_result(i as u64 + 1, a, b)).collect();
        let report = aggregate_trials(&results).unwrap();
        for (method, pick) in [("modular_pt", 0usize), ("pt_cl", 1)] {
            let xs: Vec<f64> = vals.iter().map(|v| if pick == 0 { v.0 } else { v.1 }).collect();
            let (m, s) = oracle(&xs);
            let c = report.cell(method, Regime::Fused, false, "mean").unwrap();
            prop_assert!((c.mean - m).abs() < 1e-12);
            prop_assert!((c.std - s).abs() < 1e-12);
        }
        let back = parse_csv(&render_csv(&report).unwrap()).unwrap();
        prop_assert_eq!(back, report);
    }
}

#[test]
fn trial_order_does_not_change_cells() {
    let a = aggregate_trials(&[seed_result(1, 0.5, 0.1), seed_result(2, 0.7, 0.2), seed_result(3, 0.2, 0.0)]).unwrap();
    let b = aggregate_trials(&[seed_result(3, 0.2, 0.0), seed_result(1, 0.5, 0.1), seed_result(2, 0.7, 0.2)]).unwrap();
    assert_eq!(a, b);
}
