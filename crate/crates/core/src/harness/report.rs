//! Multi-seed aggregation and report rendering.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, IoContext, Result};
use crate::eval::regime::MEAN_KEY;
use crate::eval::{MetricName, MetricRecord, ProbeKind, ProbeRecord, Regime};
use crate::training::Method;

/// Everything one seed produced.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SeedResult {
    pub seed: u64,
    pub metrics: Vec<MetricRecord>,
    pub probes: Vec<ProbeRecord>,
}

/// One table cell: a metric for (method, regime, decoding mode, stage)
/// across trials.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Cell {
    pub method: String,
    pub regime: Regime,
    pub constrained: bool,
    pub stage: String,
    pub metric: MetricName,
    /// One value per trial, in seed order.
    pub values: Vec<f64>,
    pub mean: f64,
    /// Population standard deviation.
    pub std: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProbeCell {
    pub probe: ProbeKind,
    pub constrained: bool,
    pub stage: String,
    pub default: Vec<f64>,
    pub probed: Vec<f64>,
    pub default_mean: f64,
    pub probed_mean: f64,
    pub delta_mean: f64,
    pub delta_std: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub seeds: Vec<u64>,
    pub cells: Vec<Cell>,
    pub probes: Vec<ProbeCell>,
    /// False when some method or seed failed and the report is partial.
    pub complete: bool,
}

/// Mean and population standard deviation.
pub fn mean_std(xs: &[f64]) -> (f64, f64) {
    if xs.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
    (mean, var.sqrt())
}

fn method_rank(m: &str) -> usize {
    m.parse::<Method>().map(|m| Method::ALL.iter().position(|x| *x == m).unwrap()).unwrap_or(usize::MAX)
}

/// Stages sort numerically with the mean column last.
fn stage_rank(s: &str) -> (usize, String) {
    match s.parse::<usize>() {
        Ok(n) => (n, String::new()),
        Err(_) => (usize::MAX, s.to_string()),
    }
}

type Key = (usize, String, Regime, bool, (usize, String));

fn key_of(r: &MetricRecord) -> Key {
    (method_rank(&r.method), r.method.clone(), r.regime, r.options.constrained, stage_rank(&r.stage))
}

type ProbeKey = (ProbeKind, bool, (usize, String));

fn probe_key(r: &ProbeRecord) -> ProbeKey {
    (r.probe, r.options.constrained, stage_rank(&r.stage))
}

fn describe(k: &Key) -> String {
    format!("{}/{}/{}/{}", k.1, k.2, if k.3 { "constrained" } else { "free" }, k.4 .1.clone() + &k.4 .0.to_string())
}

/// Mean and population std per cell. Every trial must report exactly the
/// same cells. Trials are ordered by seed, so the report does not depend on
/// the order they finished in.
pub fn aggregate_trials(results: &[SeedResult]) -> Result<EvalReport> {
    let mut results: Vec<&SeedResult> = results.iter().collect();
    results.sort_by_key(|r| r.seed);
    let mut per_seed: Vec<BTreeMap<Key, &MetricRecord>> = Vec::with_capacity(results.len());
    let mut probe_seed: Vec<BTreeMap<ProbeKey, &ProbeRecord>> = Vec::with_capacity(results.len());
    for r in &results {
        let mut m = BTreeMap::new();
        for rec in &r.metrics {
            if m.insert(key_of(rec), rec).is_some() {
                return Err(Error::KeyMismatch(format!("seed {} repeats {}", r.seed, describe(&key_of(rec)))));
            }
        }
        per_seed.push(m);
        probe_seed.push(r.probes.iter().map(|p| (probe_key(p), p)).collect());
    }
    let seeds: Vec<u64> = results.iter().map(|r| r.seed).collect();
    if seeds.iter().collect::<BTreeSet<_>>().len() != seeds.len() {
        return Err(Error::KeyMismatch("duplicate seed".into()));
    }
    let mut cells = Vec::new();
    if let Some(first) = per_seed.first() {
        for (i, m) in per_seed.iter().enumerate().skip(1) {
            let a: BTreeSet<&Key> = first.keys().collect();
            let b: BTreeSet<&Key> = m.keys().collect();
            if let Some(k) = a.symmetric_difference(&b).next() {
                return Err(Error::KeyMismatch(format!("seed {} vs seed {}: {}", seeds[0], seeds[i], describe(k))));
            }
        }
        for (k, rec) in first {
            let values: Vec<f64> = per_seed.iter().map(|m| m[k].value).collect();
            let (mean, std) = mean_std(&values);
            cells.push(Cell {
                method: rec.method.clone(),
                regime: rec.regime,
                constrained: rec.options.constrained,
                stage: rec.stage.clone(),
                metric: rec.metric,
                values,
                mean,
                std,
            });
        }
    }
    let mut probes = Vec::new();
    if let Some(first) = probe_seed.first() {
        for m in &probe_seed[1..] {
            if m.keys().ne(first.keys()) {
                return Err(Error::KeyMismatch("probe cells differ across seeds".into()));
            }
        }
        for (k, rec) in first {
            let default: Vec<f64> = probe_seed.iter().map(|m| m[k].default).collect();
            let probed: Vec<f64> = probe_seed.iter().map(|m| m[k].probed).collect();
            let deltas: Vec<f64> = probe_seed.iter().map(|m| m[k].delta).collect();
            let (delta_mean, delta_std) = mean_std(&deltas);
            probes.push(ProbeCell {
                probe: rec.probe,
                constrained: rec.options.constrained,
                stage: rec.stage.clone(),
                default_mean: mean_std(&default).0,
                probed_mean: mean_std(&probed).0,
                default,
                probed,
                delta_mean,
                delta_std,
            });
        }
    }
    Ok(EvalReport { seeds, cells, probes, complete: true })
}

impl EvalReport {
    pub fn cell(&self, method: &str, regime: Regime, constrained: bool, stage: &str) -> Option<&Cell> {
        self.cells
            .iter()
            .find(|c| c.method == method && c.regime == regime && c.constrained == constrained && c.stage == stage)
    }

    pub fn probe(&self, probe: ProbeKind, constrained: bool, stage: &str) -> Option<&ProbeCell> {
        self.probes.iter().find(|p| p.probe == probe && p.constrained == constrained && p.stage == stage)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReportFormat {
    Json,
    Markdown,
    Csv,
}

impl ReportFormat {
    pub const ALL: [ReportFormat; 3] = [ReportFormat::Json, ReportFormat::Markdown, ReportFormat::Csv];

    pub fn extension(self) -> &'static str {
        match self {
            ReportFormat::Json => "json",
            ReportFormat::Markdown => "md",
            ReportFormat::Csv => "csv",
        }
    }
}

fn pct(x: f64, s: f64) -> String {
    format!("{:.1}±{:.1}", 100.0 * x, 100.0 * s)
}

/// Markdown tables: one per regime and decoding mode, methods as rows and
/// stages as columns, then the probe table.
pub fn render_markdown(r: &EvalReport) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "# Evaluation report\n");
    let _ = writeln!(
        out,
        "Cells are mean±std in percent over {} trial(s) (seeds {}); std is the population standard deviation.\n",
        r.seeds.len(),
        r.seeds.iter().map(u64::to_string).collect::<Vec<_>>().join(", ")
    );
    if !r.complete {
        let _ = writeln!(out, "**Incomplete:** some runs failed; see failed.json.\n");
    }
    let groups: BTreeSet<(Regime, bool)> = r.cells.iter().map(|c| (c.regime, c.constrained)).collect();
    for (regime, constrained) in groups {
        let cells: Vec<&Cell> = r.cells.iter().filter(|c| c.regime == regime && c.constrained == constrained).collect();
        let mut stages: Vec<&str> = cells.iter().map(|c| c.stage.as_str()).collect::<BTreeSet<_>>().into_iter().collect();
        stages.sort_by_key(|s| stage_rank(s));
        let mut methods: Vec<&str> = Vec::new();
        for c in &cells {
            if !methods.contains(&c.method.as_str()) {
                methods.push(&c.method);
            }
        }
        let metric = cells.first().map(|c| c.metric.as_str()).unwrap_or("");
        let mode = if constrained { ", constrained decoding" } else { "" };
        let _ = writeln!(out, "## Stage-{regime} ({metric}{mode})\n");
        let header: Vec<String> =
            stages.iter().map(|s| if *s == MEAN_KEY { "Mean".to_string() } else { s.to_string() }).collect();
        let _ = writeln!(out, "| method | {} |", header.join(" | "));
        let _ = writeln!(out, "|---|{}", "---|".repeat(stages.len()));
        for m in methods {
            let row: Vec<String> = stages
                .iter()
                .map(|s| {
                    cells
                        .iter()
                        .find(|c| c.method == m && c.stage == *s)
                        .map_or("-".to_string(), |c| pct(c.mean, c.std))
                })
                .collect();
            let _ = writeln!(out, "| {m} | {} |", row.join(" | "));
        }
        let _ = writeln!(out);
    }
    if !r.probes.is_empty() {
        let _ = writeln!(out, "## Probes (stage-fused, modular_pt)\n");
        let _ = writeln!(out, "| probe | decoding | default | probed | delta |");
        let _ = writeln!(out, "|---|---|---|---|---|");
        for p in r.probes.iter().filter(|p| p.stage == MEAN_KEY) {
            let _ = writeln!(
                out,
                "| {} | {} | {:.1} | {:.1} | {} |",
                p.probe,
                if p.constrained { "constrained" } else { "free" },
                100.0 * p.default_mean,
                100.0 * p.probed_mean,
                pct(p.delta_mean, p.delta_std)
            );
        }
        let _ = writeln!(out);
    }
    out
}

#[derive(Debug, Serialize, Deserialize)]
struct CsvRow {
    kind: String,
    method: String,
    regime: String,
    constrained: bool,
    stage: String,
    metric: String,
    seed: u64,
    value: f64,
    default: Option<f64>,
}

/// Long-format CSV: one row per (cell, trial), probes included. Parsing
/// it back and re-aggregating reproduces the report.
pub fn render_csv(r: &EvalReport) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for c in &r.cells {
        for (seed, v) in r.seeds.iter().zip(&c.values) {
            w.serialize(CsvRow {
                kind: "metric".into(),
                method: c.method.clone(),
                regime: c.regime.to_string(),
                constrained: c.constrained,
                stage: c.stage.clone(),
                metric: c.metric.as_str().into(),
                seed: *seed,
                value: *v,
                default: None,
            })?;
        }
    }
    for p in &r.probes {
        for ((seed, v), d) in r.seeds.iter().zip(&p.probed).zip(&p.default) {
            w.serialize(CsvRow {
                kind: "probe".into(),
                method: String::new(),
                regime: p.probe.to_string(),
                constrained: p.constrained,
                stage: p.stage.clone(),
                metric: String::new(),
                seed: *seed,
                value: *v,
                default: Some(*d),
            })?;
        }
    }
    let bytes = w.into_inner().map_err(|e| Error::Config(format!("csv: {e}")))?;
    Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
}

/// Parse a CSV produced by [`render_csv`] back into a report.
pub fn parse_csv(text: &str) -> Result<EvalReport> {
    let mut rdr = csv::Reader::from_reader(text.as_bytes());
    let mut by_seed: Vec<SeedResult> = Vec::new();
    for row in rdr.deserialize::<CsvRow>() {
        let row = row?;
        let idx = match by_seed.iter().position(|s| s.seed == row.seed) {
            Some(i) => i,
            None => {
                by_seed.push(SeedResult { seed: row.seed, metrics: Vec::new(), probes: Vec::new() });
                by_seed.len() - 1
            }
        };
        let options = crate::eval::EvalOptions { constrained: row.constrained };
        match row.kind.as_str() {
            "metric" => {
                let metric = match row.metric.as_str() {
                    "exact_match" => MetricName::ExactMatch,
                    "bio_f1" => MetricName::BioF1,
                    other => return Err(Error::Config(format!("unknown metric {other:?}"))),
                };
                by_seed[idx].metrics.push(MetricRecord {
                    method: row.method,
                    regime: row.regime.parse()?,
                    stage: row.stage,
                    metric,
                    value: row.value,
                    support: 0,
                    seed: row.seed,
                    options,
                });
            }
            "probe" => {
                let default = row.default.ok_or_else(|| Error::Config("probe row lacks default".into()))?;
                by_seed[idx].probes.push(ProbeRecord {
                    probe: row.regime.parse()?,
                    stage: row.stage,
                    default,
                    probed: row.value,
                    delta: row.value - default,
                    support: 0,
                    seed: row.seed,
                    options,
                });
            }
            other => return Err(Error::Config(format!("unknown row kind {other:?}"))),
        }
    }
    aggregate_trials(&by_seed)
}

/// Render `report` in `format`.
pub fn render_report(report: &EvalReport, format: ReportFormat) -> Result<String> {
    match format {
        ReportFormat::Json => Ok(serde_json::to_string_pretty(report)? + "\n"),
        ReportFormat::Markdown => Ok(render_markdown(report)),
        ReportFormat::Csv => render_csv(report),
    }
}

/// Write `report.{json,md,csv}` into `dir`.
pub fn write_reports(report: &EvalReport, dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).at(dir)?;
    for f in ReportFormat::ALL {
        let path = dir.join(format!("report.{}", f.extension()));
        std::fs::write(&path, render_report(report, f)?).at(&path)?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::eval::EvalOptions;

    fn rec(method: &str, stage: &str, value: f64, seed: u64) -> MetricRecord {
        MetricRecord {
            method: method.into(),
            regime: Regime::Fused,
            stage: stage.into(),
            metric: MetricName::ExactMatch,
            value,
            support: 10,
            seed,
            options: EvalOptions::default(),
        }
    }

    fn probe(stage: &str, default: f64, probed: f64, seed: u64) -> ProbeRecord {
        ProbeRecord {
            probe: ProbeKind::DropGt,
            stage: stage.into(),
            default,
            probed,
            delta: probed - default,
            support: 10,
            seed,
            options: EvalOptions::default(),
        }
    }

    fn results() -> Vec<SeedResult> {
        vec![
            SeedResult { seed: 1, metrics: vec![rec("modular_pt", "1", 0.5, 1), rec("pt_cl", "1", 0.6, 1)], probes: vec![probe("mean", 0.5, 0.1, 1)] },
            SeedResult { seed: 2, metrics: vec![rec("modular_pt", "1", 0.7, 2), rec("pt_cl", "1", 0.6, 2)], probes: vec![probe("mean", 0.7, 0.0, 2)] },
        ]
    }

    #[test]
    fn two_point_statistics() {
        let r = aggregate_trials(&results()).unwrap();
        let c = r.cell("modular_pt", Regime::Fused, false, "1").unwrap();
        assert!((c.mean - 0.6).abs() < 1e-12 && (c.std - 0.1).abs() < 1e-12);
        let c = r.cell("pt_cl", Regime::Fused, false, "1").unwrap();
        assert_eq!((c.mean, c.std), (0.6, 0.0));
        let p = r.probe(ProbeKind::DropGt, false, "mean").unwrap();
        assert!((p.delta_mean + 0.55).abs() < 1e-12);
    }

    #[test]
    fn mismatched_keys_rejected() {
        let mut rs = results();
        rs[1].metrics.pop();
        assert!(matches!(aggregate_trials(&rs), Err(Error::KeyMismatch(_))));
    }

    #[test]
    fn csv_round_trips_and_markdown_has_method_rows() {
        let r = aggregate_trials(&results()).unwrap();
        let text = render_csv(&r).unwrap();
        assert_eq!(parse_csv(&text).unwrap(), r);
        let md = render_markdown(&r);
        assert_eq!(md.lines().filter(|l| l.starts_with("| modular_pt ")).count(), 1);
        assert_eq!(md.lines().filter(|l| l.starts_with("| pt_cl ")).count(), 1);
    }
}
