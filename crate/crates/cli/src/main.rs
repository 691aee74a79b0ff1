//! `spikeshift`: verification suites, cost tables and the spiking demo.
//!
//! Exit status: 0 when every checked property holds, 1 when one fails,
//! 2 for usage, configuration or I/O errors.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Result;
use clap::{Args, Parser, Subcommand};

use config::RunConfig;

#[derive(Parser)]
#[command(
    name = "spikeshift",
    version,
    about = "Multiplier-free spiking transformer toolkit"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
    #[command(flatten)]
    flags: Flags,
}

#[derive(Subcommand)]
enum Command {
    /// Run the property suites and write the suite report.
    Verify,
    /// Tabulated against measured operation counts for each kernel.
    BenchOps,
    /// Build a toy model, convert it to spikes, and report spike rates.
    Demo,
    /// Spike rates of a saved spiking checkpoint.
    SpikeReport {
        /// Checkpoint directory; defaults to `<out>/checkpoint`.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
}

/// Every flag mirrors a config-file key and overrides it.
#[derive(Args)]
struct Flags {
    /// Flat `key = value` file applied before the flags.
    #[arg(long, global = true, value_name = "FILE")]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<String>,
    #[arg(long, global = true)]
    timesteps: Option<String>,
    #[arg(long, global = true)]
    blocks: Option<String>,
    #[arg(long, global = true)]
    dim: Option<String>,
    #[arg(long, global = true)]
    heads: Option<String>,
    #[arg(long, global = true)]
    seq: Option<String>,
    /// Softmax clamp, or `none`.
    #[arg(long, global = true)]
    clamp_max: Option<String>,
    #[arg(long, global = true, value_parser = ["ceil", "round"])]
    k_mode: Option<String>,
    #[arg(long, global = true, num_args = 0..=1, default_missing_value = "true", value_name = "BOOL")]
    pow2_norm: Option<String>,
    /// Comma-separated suite names.
    #[arg(long, global = true)]
    suites: Option<String>,
    #[arg(long, global = true)]
    lemma_samples: Option<String>,
    #[arg(long, global = true)]
    equivalence_instances: Option<String>,
    #[arg(long, global = true)]
    gradient_batches: Option<String>,
    #[arg(long, global = true)]
    inputs: Option<String>,
    #[arg(long, global = true, value_name = "DIR")]
    out: Option<String>,
}

impl Flags {
    fn pairs(&self) -> Vec<(&'static str, &String)> {
        let all = [
            ("seed", &self.seed),
            ("timesteps", &self.timesteps),
            ("blocks", &self.blocks),
            ("dim", &self.dim),
            ("heads", &self.heads),
            ("seq", &self.seq),
            ("clamp_max", &self.clamp_max),
            ("k_mode", &self.k_mode),
            ("pow2_norm", &self.pow2_norm),
            ("suites", &self.suites),
            ("lemma_samples", &self.lemma_samples),
            ("equivalence_instances", &self.equivalence_instances),
            ("gradient_batches", &self.gradient_batches),
            ("inputs", &self.inputs),
            ("out", &self.out),
        ];
        all.into_iter()
            .filter_map(|(k, v)| v.as_ref().map(|v| (k, v)))
            .collect()
    }

    fn resolve(&self) -> Result<RunConfig> {
        let mut cfg = RunConfig::default();
        if let Some(path) = &self.config {
            cfg.apply_file(path)?;
        }
        for (key, value) in self.pairs() {
            cfg.set(key, value)?;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

fn run(cli: Cli) -> Result<bool> {
    let cfg = cli.flags.resolve()?;
    match cli.command {
        Command::Verify => commands::verify(&cfg),
        Command::BenchOps => commands::bench_ops(&cfg),
        Command::Demo => commands::demo(&cfg),
        Command::SpikeReport { checkpoint } => {
            let dir = checkpoint.unwrap_or_else(|| cfg.out.join("checkpoint"));
            commands::spike_report(&cfg, &dir)
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
