use std::path::PathBuf;
use std::process::ExitCode;

use cban_cli::check::{print_table, run_suite, Suite};
use cban_cli::commands::{cmd_complete, cmd_eval, cmd_train, MaskArgs, SettleArgs};
use cban_cli::{init_threads, CliResult, EXIT_FAILED, EXIT_OK, EXIT_USAGE};
use clap::{Parser, Subcommand};

/// Bipartite attractor networks: train, complete images, evaluate, self-check.
///
/// Set CBAN_THREADS to bound the worker pool.
#[derive(Debug, Parser)]
#[command(name = "cban", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Train from a JSON run config.
    Train {
        #[arg(long)]
        config: PathBuf,
        /// Overrides the config's output directory.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Continue from a checkpoint.
        #[arg(long)]
        resume: Option<PathBuf>,
    },
    /// Settle from an image or evidence file and write the completion,
    /// the dream and an energy trace.
    Complete {
        #[arg(long)]
        ckpt: PathBuf,
        /// PGM/PPM image, or a JSON evidence file.
        #[arg(long)]
        input: PathBuf,
        #[arg(long, default_value = "completion")]
        out: PathBuf,
        #[command(flatten)]
        mask: MaskArgs,
        #[command(flatten)]
        settle: SettleArgs,
    },
    /// Score a checkpoint and print the metrics as JSON.
    Eval {
        #[arg(long)]
        ckpt: PathBuf,
        /// IDX image file, PGM/PPM folder, or `bar`.
        #[arg(long)]
        data: PathBuf,
        /// IDX label file, for supervised nets.
        #[arg(long)]
        labels: Option<PathBuf>,
        #[arg(long)]
        limit: Option<usize>,
        #[command(flatten)]
        mask: MaskArgs,
        #[command(flatten)]
        settle: SettleArgs,
    },
    /// Run a randomized invariant suite.
    Check {
        #[arg(long, value_enum)]
        suite: Suite,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

fn run(cli: Cli) -> CliResult<i32> {
    init_threads()?;
    match cli.command {
        Command::Train { config, out, resume } => {
            let s = cmd_train(&config, out.as_deref(), resume.as_deref())?;
            println!("trained {} epochs, outputs in {}", s.epochs, s.output_dir.display());
            Ok(EXIT_OK)
        }
        Command::Complete {
            ckpt,
            input,
            out,
            mask,
            settle,
        } => {
            let s = cmd_complete(&ckpt, &input, &out, &mask, &settle)?;
            let status = if s.converged { "settled" } else { "did not settle" };
            println!("{status} after {} sweeps", s.t_star);
            if let Some(label) = s.label {
                println!("label {label}");
            }
            println!(
                "wrote {}, {}, {}",
                s.completed.display(),
                s.dream.display(),
                s.trace.display()
            );
            Ok(s.exit_code())
        }
        Command::Eval {
            ckpt,
            data,
            labels,
            limit,
            mask,
            settle,
        } => {
            let metrics = cmd_eval(&ckpt, &data, labels.as_deref(), limit, &mask, &settle)?;
            let map: serde_json::Map<String, serde_json::Value> =
                metrics.into_iter().map(|(k, v)| (k, v.into())).collect();
            println!("{}", serde_json::to_string_pretty(&map).expect("metrics serialize"));
            Ok(EXIT_OK)
        }
        Command::Check { suite, seed } => {
            let rows = run_suite(suite, seed)?;
            print_table(&rows);
            Ok(if rows.iter().all(|r| r.passed()) {
                EXIT_OK
            } else {
                EXIT_FAILED
            })
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() {
                EXIT_USAGE as u8
            } else {
                EXIT_OK as u8
            });
        }
    };
    match run(cli) {
        Ok(code) => ExitCode::from(code as u8),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(EXIT_USAGE as u8)
        }
    }
}
