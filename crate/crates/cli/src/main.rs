//! `tfs3d`: encode blocks, segment episodes, train QUEST, evaluate, and
//! generate synthetic datasets.
//!
//! Exit codes: 0 on success, 1 on internal errors, 2 on invalid input or
//! configuration.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use config::Overrides;

/// Environment variable holding the default worker count for `eval`.
pub const THREADS_ENV: &str = "TFS3D_THREADS";

/// Marks an error as caused by the user's input (exit code 2).
#[derive(Debug)]
pub struct InputError(pub String);

impl std::fmt::Display for InputError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for InputError {}

#[derive(Debug, Parser)]
#[command(name = "tfs3d", version, about = "Training-free few-shot point-cloud segmentation")]
struct Cli {
    #[command(flatten)]
    overrides: Overrides,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Encode one block and write its per-point features.
    Encode {
        block: PathBuf,
        #[arg(long, short)]
        out: PathBuf,
    },
    /// Segment query blocks from labeled support blocks, training-free.
    Segment {
        /// Support shot as `CLASS=PATH`; repeat for every shot of every class.
        #[arg(long = "support", required = true, value_parser = commands::parse_support)]
        support: Vec<(i32, PathBuf)>,
        #[arg(long = "query", required = true)]
        query: Vec<PathBuf>,
        /// Directory for per-query prediction files.
        #[arg(long, short)]
        out: Option<PathBuf>,
    },
    /// Train QUEST on episodes from the seen classes of a manifest.
    Train {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long, short)]
        out: PathBuf,
        #[arg(long)]
        iterations: Option<usize>,
        /// Loss history as CSV.
        #[arg(long)]
        history: Option<PathBuf>,
    },
    /// Evaluate on the unseen classes of a manifest.
    Eval {
        #[arg(long)]
        manifest: PathBuf,
        /// QUEST checkpoint; without it the training-free head is used.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long)]
        per_combination: Option<usize>,
        /// Worker threads; defaults to $TFS3D_THREADS, then all cores.
        #[arg(long, env = THREADS_ENV)]
        threads: Option<usize>,
        /// Directory for summary.txt, classes.csv and episodes.csv.
        #[arg(long, short)]
        out: Option<PathBuf>,
    },
    /// Write a synthetic dataset (blocks plus manifest) from a spec file.
    Synth {
        spec: PathBuf,
        #[arg(long, short)]
        out: PathBuf,
    },
    /// Print the resolved run configuration as TOML.
    Config,
}

fn exit_code(err: &anyhow::Error) -> u8 {
    use tfs3d_core::Error as E;
    for cause in err.chain() {
        if cause.is::<InputError>() || cause.is::<toml::de::Error>() {
            return 2;
        }
        if let Some(e) = cause.downcast_ref::<E>() {
            return match e {
                E::Encode(_) | E::Quest(_) | E::Training(_) | E::EmptyEvaluation => 1,
                _ => 2,
            };
        }
    }
    1
}

fn run(cli: Cli) -> anyhow::Result<()> {
    let cfg = cli.overrides.resolve()?;
    match cli.command {
        Command::Encode { block, out } => commands::encode(&cfg, &block, &out),
        Command::Segment { support, query, out } => commands::segment(&cfg, &support, &query, out.as_deref()),
        Command::Train { manifest, out, iterations, history } => {
            commands::train(&cfg, &manifest, &out, iterations, history.as_deref())
        }
        Command::Eval { manifest, checkpoint, per_combination, threads, out } => commands::eval(
            &cfg,
            &commands::EvalArgs {
                manifest,
                checkpoint,
                per_combination: per_combination.unwrap_or(cfg.episodes.per_combination),
                threads,
                out,
            },
        ),
        Command::Synth { spec, out } => commands::synth(&spec, &out),
        Command::Config => {
            print!("{}", toml::to_string(&cfg)?);
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::from(exit_code(&err))
        }
    }
}
