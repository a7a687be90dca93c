//! Command-line front end: train a base model, scrub it with a chosen
//! method, re-evaluate a checkpoint, or compare methods in one table.

use clap::{Parser, Subcommand};
use scrublab::harness::config::{load_config, ExperimentConfig, METHOD_NAMES};
use scrublab::harness::{persist, run};
use scrublab::Result;
use std::path::PathBuf;

#[derive(Parser)]
#[command(name = "scrublab", version, about = "selective forgetting laboratory for toy diffusion models")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
    /// JSON config file; omitted fields fall back to defaults.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides the config seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Method name, or a comma-separated list for `report`.
    #[arg(long, global = true)]
    method: Option<String>,
    /// Output directory for artifacts.
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,
    /// Dotted-path config override, e.g. `erasediff.lambda=0.5` (repeatable).
    /// Takes precedence over both the config file and defaults.
    #[arg(long = "override", global = true, value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

#[derive(Subcommand)]
enum Cmd {
    /// Trains the unscrubbed base model and evaluates it.
    Train,
    /// Runs the configured scrubbing method from the cached base model.
    Unlearn,
    /// Recomputes the metric battery for an existing checkpoint in --out.
    Eval,
    /// Runs several methods on one base model and writes a comparison table.
    Report,
}

fn load(cli: &Cli, method: Option<&str>) -> Result<ExperimentConfig> {
    load_config(cli.config.as_deref(), &cli.overrides, cli.seed, method)
}

fn finish_run(record: run::RunRecord) -> Result<()> {
    let text = serde_json::to_string_pretty(&record)?;
    if let Some(f) = record.failure {
        return Err(scrublab::Error::InvalidConfig(format!("run failed: {f}")));
    }
    println!("{text}");
    Ok(())
}

fn execute(cli: &Cli) -> Result<()> {
    match cli.cmd {
        Cmd::Train => {
            let cfg = load(cli, Some("unscrubbed"))?;
            finish_run(run::run_experiment(&cfg, &cli.out)?)
        }
        Cmd::Unlearn => {
            let cfg = load(cli, cli.method.as_deref())?;
            finish_run(run::run_experiment(&cfg, &cli.out)?)
        }
        Cmd::Eval => {
            let cfg = load(cli, cli.method.as_deref())?;
            let prep = run::prepare(&cfg)?;
            let (params, ckpt) = persist::load_checkpoint(&cli.out.join("checkpoint.json"))?;
            let clf = run::train_classifier(&cfg, &prep)?;
            // grad-step counts live in the original run record when present
            let grad_steps = std::fs::read_to_string(cli.out.join("record.json"))
                .ok()
                .and_then(|t| serde_json::from_str::<run::RunRecord>(&t).ok())
                .and_then(|r| r.report.map(|rep| rep.grad_steps))
                .unwrap_or(0);
            let mut cfg = cfg;
            cfg.method = ckpt.method.clone();
            let (report, _) = run::compute_metrics(&cfg, &prep, &clf, &params, grad_steps, None)?;
            persist::write_report(&cli.out.join("report.json"), &report)?;
            println!("{}", serde_json::to_string_pretty(&report)?);
            Ok(())
        }
        Cmd::Report => {
            let methods: Vec<String> = match &cli.method {
                Some(m) => m.split(',').map(|s| s.trim().to_string()).collect(),
                None => METHOD_NAMES.iter().map(|s| s.to_string()).collect(),
            };
            let mut cfgs = Vec::with_capacity(methods.len());
            for m in &methods {
                cfgs.push(load(cli, Some(m))?);
            }
            let table = run::compare_methods(&cfgs, &cli.out)?;
            print!("{table}");
            Ok(())
        }
    }
}

fn main() {
    let cli = Cli::parse();
    if let Err(e) = execute(&cli) {
        eprintln!(
            "{}",
            serde_json::json!({ "status": "error", "error": e.to_string() })
        );
        std::process::exit(1);
    }
}
