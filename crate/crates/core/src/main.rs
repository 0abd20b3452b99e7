//! `modprompt`: data generation, backbone pretraining, training, evaluation,
//! probing and reporting for label-modular prompt tuning experiments.
//!
//! The experiment config file is the source of truth; flags override single
//! keys. Progress goes to stderr, results only to files under the output
//! directory. Exit codes: 0 success, 1 usage error, 2 runtime failure.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use modprompt::corpus::io::read_json;
use modprompt::eval::{ProbeKind, Regime};
use modprompt::harness::{self, ExperimentConfig, CONFIG_FILE, DEFAULT_OUT_ROOT};
use modprompt::training::Method;

/// Environment variable naming the default output root.
const OUT_ENV: &str = "MODPROMPT_OUT";

#[derive(Parser, Debug)]
#[command(name = "modprompt", version, about = "Label-modular prompt tuning experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Write the task's train/validation/test splits as JSONL under <out>/data.
    GenData(Common),
    /// Pretrain (or reuse) the shared frozen backbone under <out>/backbone.
    Pretrain(Common),
    /// Train the configured methods for every trial seed.
    Train(Common),
    /// Evaluate trained methods on the configured regimes.
    Eval(Common),
    /// Run modularity probes on trained modular_pt stores.
    Probe(Common),
    /// Aggregate raw metrics on disk into report.{json,md,csv}.
    Report(Common),
    /// Everything: train, evaluate, probe and report.
    Run(Common),
}

#[derive(Args, Debug, Clone)]
struct Common {
    /// Experiment config (JSON). Defaults apply to every missing key.
    #[arg(long, value_name = "PATH")]
    config: Option<PathBuf>,
    /// Run this single trial seed instead of the configured list.
    #[arg(long, value_name = "N")]
    seed: Option<u64>,
    /// Run this single method instead of the configured list.
    #[arg(long, value_name = "NAME", value_parser = parse_method)]
    method: Option<Method>,
    /// Evaluate this single regime instead of the configured list.
    #[arg(long, value_name = "NAME", value_parser = parse_regime)]
    regime: Option<Regime>,
    /// Evaluate with constrained decoding.
    #[arg(long)]
    constrained: bool,
    /// Run this single probe instead of the configured list.
    #[arg(long, value_name = "NAME", value_parser = parse_probe)]
    probe: Option<ProbeKind>,
    /// Output directory [default: config's out_dir, else $MODPROMPT_OUT, else "runs"].
    #[arg(long, value_name = "DIR")]
    out: Option<PathBuf>,
}

fn parse_method(s: &str) -> Result<Method, String> {
    s.parse().map_err(|_| format!("valid methods: {}", Method::names()))
}

fn parse_regime(s: &str) -> Result<Regime, String> {
    s.parse().map_err(|_| format!("valid regimes: {}", Regime::ALL.map(Regime::as_str).join(", ")))
}

fn parse_probe(s: &str) -> Result<ProbeKind, String> {
    s.parse().map_err(|_| format!("valid probes: {}", ProbeKind::ALL.map(ProbeKind::as_str).join(", ")))
}

/// A bad config or flag combination is a usage error; anything after
/// that is a runtime failure.
enum Failure {
    Usage(modprompt::Error),
    Runtime(modprompt::Error),
}

impl From<modprompt::Error> for Failure {
    fn from(e: modprompt::Error) -> Self {
        Failure::Runtime(e)
    }
}

/// Config file (or defaults) with the flag overrides applied.
fn effective_config(c: &Common, snapshot_fallback: bool) -> Result<ExperimentConfig, Failure> {
    resolve_config(c, snapshot_fallback).map_err(Failure::Usage)
}

fn resolve_config(c: &Common, snapshot_fallback: bool) -> modprompt::Result<ExperimentConfig> {
    let env_out = std::env::var_os(OUT_ENV).map(PathBuf::from);
    let (mut cfg, has_out) = match &c.config {
        Some(p) => {
            let raw: serde_json::Value = read_json(p)?;
            (ExperimentConfig::from_file(p)?, raw.get("out_dir").is_some())
        }
        None => {
            let dir = c.out.clone().or_else(|| env_out.clone()).unwrap_or_else(|| PathBuf::from(DEFAULT_OUT_ROOT));
            let snap = dir.join(CONFIG_FILE);
            if snapshot_fallback && snap.exists() {
                (ExperimentConfig::from_file(&snap)?, true)
            } else {
                (ExperimentConfig::default(), false)
            }
        }
    };
    if let Some(o) = &c.out {
        cfg.out_dir = o.clone();
    } else if !has_out {
        if let Some(e) = env_out {
            cfg.out_dir = e;
        }
    }
    if let Some(s) = c.seed {
        cfg.trials = vec![s];
    }
    if let Some(m) = c.method {
        cfg.methods = vec![m];
    }
    if let Some(r) = c.regime {
        cfg.regimes = vec![r];
    }
    if c.constrained {
        cfg.constrained = true;
    }
    if let Some(p) = c.probe {
        cfg.probes = vec![p];
    }
    cfg.validate()?;
    Ok(cfg)
}

fn snapshot(cfg: &ExperimentConfig) -> modprompt::Result<()> {
    std::fs::create_dir_all(&cfg.out_dir).map_err(|source| modprompt::Error::Io { path: cfg.out_dir.clone(), source })?;
    modprompt::corpus::io::write_json(&cfg.out_dir.join(CONFIG_FILE), cfg)
}

fn dispatch(command: Command) -> Result<(), Failure> {
    match command {
        Command::GenData(c) => {
            let cfg = effective_config(&c, false)?;
            snapshot(&cfg)?;
            let data = harness::load_task(&cfg.corpus)?;
            let dir = cfg.out_dir.join("data");
            harness::write_task_data(&data, &dir)?;
            log::info!("wrote {} / {} / {} examples to {}", data.train.len(), data.validation.len(), data.test.len(), dir.display());
        }
        Command::Pretrain(c) => {
            let cfg = effective_config(&c, false)?;
            snapshot(&cfg)?;
            let data = harness::load_task(&cfg.corpus)?;
            let bb = harness::ensure_backbone(&cfg, &data)?;
            log::info!("backbone {} ready", bb.param_hash());
        }
        Command::Train(c) => run_steps(&c, Step::Train)?,
        Command::Eval(c) => run_steps(&c, Step::Eval)?,
        Command::Probe(c) => run_steps(&c, Step::Probe)?,
        Command::Report(c) => {
            let cfg = effective_config(&c, true)?;
            let report = harness::report_from_disk(&cfg)?;
            log::info!("report over {} trial(s) written to {}", report.seeds.len(), cfg.out_dir.display());
        }
        Command::Run(c) => {
            let cfg = effective_config(&c, false)?;
            let report = harness::run_experiment(&cfg)?;
            log::info!("report over {} trial(s) written to {}", report.seeds.len(), cfg.out_dir.display());
        }
    }
    Ok(())
}

#[derive(Clone, Copy, PartialEq)]
enum Step {
    Train,
    Eval,
    Probe,
}

/// Per-seed training, evaluation or probing. Evaluation and probing load
/// finished checkpoints and never train.
fn run_steps(c: &Common, step: Step) -> Result<(), Failure> {
    let mut cfg = effective_config(c, false)?;
    if step == Step::Probe {
        cfg.methods = vec![Method::ModularPt];
        if cfg.probes.is_empty() {
            cfg.probes = ProbeKind::ALL.to_vec();
        }
    }
    snapshot(&cfg)?;
    let data = harness::load_task(&cfg.corpus)?;
    let backbone = harness::ensure_backbone(&cfg, &data)?;
    for &seed in &cfg.trials {
        let plan = harness::seed_plan(&cfg, &data, seed)?;
        for &method in &cfg.methods {
            let artifacts = match step {
                Step::Train => harness::train_one(&cfg, &plan, &backbone, method, seed)?,
                _ => {
                    let dir = harness::method_dir(&cfg.out_dir, seed, method);
                    modprompt::training::load_artifacts(method, &plan, &cfg.train_config(method, seed), &backbone, &dir)?
                }
            };
            match step {
                Step::Train => log::info!("seed {seed}: {method} trained"),
                Step::Eval => {
                    let recs = harness::eval_one(&cfg, &plan, &backbone, &artifacts, method, seed)?;
                    for r in recs.iter().filter(|r| r.stage == modprompt::eval::regime::MEAN_KEY) {
                        log::info!("seed {seed}: {method} {} mean {:.3}", r.regime, r.value);
                    }
                }
                Step::Probe => {
                    for r in harness::probe_one(&cfg, &plan, &backbone, &artifacts, seed)?
                        .iter()
                        .filter(|r| r.stage == modprompt::eval::regime::MEAN_KEY)
                    {
                        log::info!("seed {seed}: {} default {:.3} probed {:.3}", r.probe, r.default, r.probed);
                    }
                }
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).format_timestamp(None).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match dispatch(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Usage(e)) => {
            eprintln!("error: {e}\n");
            let _ = <Cli as clap::CommandFactory>::command().print_help();
            ExitCode::from(1)
        }
        Err(Failure::Runtime(e)) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}
