use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Parser, Subcommand};
use vrank_core::Algo;
use vrank_harness::commands;
use vrank_harness::verify::oracle_suite;
use vrank_harness::ExperimentConfig;

#[derive(Parser)]
#[command(name = "vrank", version, about = "Offline RL-to-rank experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// TOML experiment config; defaults apply to anything left out.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Run a single seed instead of the configured list.
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[arg(long, global = true)]
    algo: Option<Algo>,
    /// Output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Checkpoint to evaluate, roll out, or resume training from.
    #[arg(long, global = true)]
    checkpoint: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate logged sessions and write them with a manifest.
    Simulate,
    /// Train a learner, writing a JSON-lines trace and a checkpoint.
    Train,
    /// Offline ranking metrics of a checkpoint on the test split.
    Eval,
    /// Online CTR in the simulator.
    Online,
    /// Overestimation bias of a value-based learner.
    Bias,
    /// Grid sweep over gamma, alpha or beta.
    Sweep,
    /// Run the oracle suite.
    Verify,
}

fn load(cli: &Cli) -> Result<ExperimentConfig> {
    let mut config = match &cli.config {
        Some(path) => ExperimentConfig::load(path)?,
        None => ExperimentConfig::default(),
    };
    if let Some(seed) = cli.seed {
        config.seeds = vec![seed];
    }
    if let Some(algo) = cli.algo {
        config.train.algo = algo;
        config.sweep.algos = vec![algo];
    }
    if let Some(out) = &cli.out {
        config.out = out.clone();
    }
    Ok(config)
}

fn run(cli: &Cli) -> Result<bool> {
    let config = load(cli)?;
    let checkpoint = cli.checkpoint.as_deref();
    match cli.command {
        Command::Simulate => {
            for m in commands::simulate(&config)? {
                println!(
                    "seed {}: {} sessions, {} transitions ({} clicks, {} purchases)",
                    m.seed, m.sessions, m.transitions, m.clicks, m.purchases
                );
            }
        }
        Command::Train => {
            for s in commands::train(&config, checkpoint)? {
                let last = s.last.as_ref();
                println!(
                    "{} seed {}: {} epochs, ndcg@5 {:.4}, trace {}",
                    s.algo,
                    s.seed,
                    s.epochs,
                    last.map_or(f64::NAN, |r| r.ndcg5),
                    s.dir.join(commands::TRACE_FILE).display()
                );
            }
        }
        Command::Eval => {
            let path = checkpoint.context("eval needs --checkpoint")?;
            println!("{}", serde_json::to_string_pretty(&commands::eval(&config, path)?)?);
        }
        Command::Online => {
            let r = commands::online(&config, checkpoint)?;
            println!(
                "{}: ctr {} (behavior {}), coverage {}% over {} seeds",
                r.algo, r.ctr, r.behavior_ctr, r.coverage, r.ctr.n
            );
        }
        Command::Bias => {
            let r = commands::bias(&config)?;
            println!("{} gamma {}: bias {}", r.algo, r.gamma, r.bias);
        }
        Command::Sweep => {
            let out = commands::sweep(&config)?;
            println!("{} rows -> {}, {}", out.rows.len(), out.curve.display(), out.summary.display());
        }
        Command::Verify => {
            let seed = config.seeds[0];
            let results = oracle_suite(seed);
            for r in &results {
                println!("{r}");
            }
            return Ok(results.iter().all(|r| r.passed));
        }
    }
    Ok(true)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(2),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
