use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Result;
use bolero::pipeline::{cmd_compare, cmd_export_graph, cmd_run, cmd_stub_embed, RunConfig, RESULTS_FILE};
use clap::{Parser, Subcommand};

/// Graph-prior heads for tabular prediction on frozen row embeddings.
#[derive(Debug, Parser)]
#[command(name = "bolero", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Train every dataset under every seed; writes results.jsonl and checkpoints.
    Run {
        /// Run configuration (JSON).
        #[arg(long, short)]
        config: PathBuf,
    },
    /// Compare methods from one or more JSONL score files.
    Compare {
        /// Score files (the results.jsonl of runs, or external baselines).
        #[arg(required = true)]
        scores: Vec<PathBuf>,
        /// Significance level for the Wilcoxon tests.
        #[arg(long, default_value_t = 0.05)]
        alpha: f64,
        /// Directory for leaderboard and pairwise tables.
        #[arg(long, short)]
        out: PathBuf,
    },
    /// Write the anchor graph of each dataset as JSON.
    ExportGraph {
        #[arg(long, short)]
        config: PathBuf,
    },
    /// Write stub embeddings of each dataset in the binary embedding format.
    StubEmbed {
        #[arg(long, short)]
        config: PathBuf,
    },
    /// Check a configuration and every file it references.
    ValidateConfig {
        #[arg(long, short)]
        config: PathBuf,
    },
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Run { config } => {
            let cfg = RunConfig::from_file(&config)?;
            let outcomes = cmd_run(&cfg)?;
            for o in &outcomes {
                eprintln!(
                    "{} seed {}: test {} = {:.6} after {} epochs",
                    o.dataset, o.record.seed, o.result.metric_name, o.result.test_metric, o.result.epochs
                );
            }
            println!("{}", cfg.output_dir().join(RESULTS_FILE).display());
        }
        Command::Compare { scores, alpha, out } => {
            let output = cmd_compare(&scores, alpha, &out)?;
            for note in &output.notes {
                eprintln!("{note}");
            }
            for f in &output.files {
                println!("{}", f.display());
            }
        }
        Command::ExportGraph { config } => {
            for f in cmd_export_graph(&RunConfig::from_file(&config)?)? {
                println!("{}", f.display());
            }
        }
        Command::StubEmbed { config } => {
            for f in cmd_stub_embed(&RunConfig::from_file(&config)?)? {
                println!("{}", f.display());
            }
        }
        Command::ValidateConfig { config } => {
            let cfg = RunConfig::from_file(&config)?;
            cfg.validate()?;
            println!("ok config_hash={}", cfg.hash());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
