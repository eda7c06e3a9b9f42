//! Command-line front end.
//!
//! Exit codes: 0 success, 1 failure, 2 invalid configuration,
//! 3 partial failure (some items failed and were excluded; see the
//! manifest's `failed_items`).

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use debatelab::pipeline::{cmd_run, PipelineError, RunCommand, RunOverrides};
use debatelab::storage::{validate_dataset, write_questions, RunConfig};
use debatelab::synthetic::synthetic_questions;

#[derive(Parser)]
#[command(
    name = "debatelab",
    version,
    about = "Debate and consultancy oversight protocols: transcripts, preference data, training losses, and tournament evaluation"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run an experiment subcommand against a config file.
    Run {
        #[command(subcommand)]
        task: Task,
    },
    /// Check a question dataset against the record invariants.
    ValidateDataset {
        /// Line-delimited JSON question file.
        path: PathBuf,
    },
    /// Generate a synthetic question dataset for offline runs.
    MakeDataset {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 20)]
        count: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

#[derive(Subcommand)]
enum Task {
    /// Self-play debates over the dataset, judged and persisted.
    Debate(RunArgs),
    /// Single, ensembled, or double consultancy (per config).
    Consultancy(RunArgs),
    /// Branching rollouts producing a preference-pair dataset.
    GenPrefs(RunArgs),
    /// Round-robin tournament with Elo ratings and a skill-accuracy series.
    Tournament(RunArgs),
    /// Accuracy, calibration, and style reports over stored transcripts.
    Report(RunArgs),
    /// Per-pair loss/gradient records for cross-validating a trainer.
    LossCheck(RunArgs),
    /// Solve for the reward-shape scale hitting a target preferred weight.
    CalibrateGamma(RunArgs),
}

#[derive(Args)]
struct RunArgs {
    /// TOML run configuration.
    #[arg(long)]
    config: PathBuf,
    /// Override the config's global seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Override the config's worker count (0 = library default).
    #[arg(long)]
    workers: Option<usize>,
    /// Disable the remote response cache for this run.
    #[arg(long)]
    no_cache: bool,
}

impl Task {
    fn split(self) -> (RunCommand, RunArgs) {
        match self {
            Task::Debate(args) => (RunCommand::Debate, args),
            Task::Consultancy(args) => (RunCommand::Consultancy, args),
            Task::GenPrefs(args) => (RunCommand::GenPrefs, args),
            Task::Tournament(args) => (RunCommand::Tournament, args),
            Task::Report(args) => (RunCommand::Report, args),
            Task::LossCheck(args) => (RunCommand::LossCheck, args),
            Task::CalibrateGamma(args) => (RunCommand::CalibrateGamma, args),
        }
    }
}

fn run_task(task: Task) -> ExitCode {
    let (command, args) = task.split();
    let config = match RunConfig::load(&args.config) {
        Ok(config) => config,
        Err(message) => {
            eprintln!("error: {message}");
            return ExitCode::from(2);
        }
    };
    let overrides = RunOverrides {
        seed: args.seed,
        workers: args.workers,
        no_cache: args.no_cache,
    };
    match cmd_run(command, &config, &overrides) {
        Ok(outcome) => {
            for note in &outcome.notes {
                eprintln!("note: {note}");
            }
            println!(
                "{}: wrote {} artifact(s) to {}",
                command.name(),
                outcome.manifest.artifacts.len(),
                outcome.output_dir.display()
            );
            for artifact in &outcome.manifest.artifacts {
                println!("  {}  {}", artifact.path, &artifact.sha256[..12]);
            }
            if outcome.partial {
                eprintln!(
                    "warning: {} item(s) failed and were excluded; see manifest.json",
                    outcome.manifest.failed_items.len()
                );
                ExitCode::from(3)
            } else {
                ExitCode::SUCCESS
            }
        }
        Err(PipelineError::InvalidConfig(problems)) => {
            eprintln!("error: invalid configuration:");
            for problem in problems {
                eprintln!("  - {problem}");
            }
            ExitCode::from(2)
        }
        Err(other) => {
            eprintln!("error: {other}");
            ExitCode::from(1)
        }
    }
}

fn run_validate(path: PathBuf) -> ExitCode {
    match validate_dataset(&path) {
        Ok(report) => {
            println!(
                "{}: {} record(s), {} fatal issue(s), {} warning(s)",
                path.display(),
                report.questions.len(),
                report.fatal.len(),
                report.warnings.len()
            );
            for issue in &report.fatal {
                println!("  fatal line {}: {}", issue.line, issue.message);
            }
            for issue in &report.warnings {
                println!("  warning line {}: {}", issue.line, issue.message);
            }
            if report.is_clean() {
                ExitCode::SUCCESS
            } else {
                ExitCode::from(1)
            }
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
    }
}

fn run_make_dataset(out: PathBuf, count: usize, seed: u64) -> ExitCode {
    let questions = synthetic_questions(count, seed);
    match write_questions(&out, &questions) {
        Ok(()) => {
            println!("wrote {} question(s) to {}", questions.len(), out.display());
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: cannot write {}: {e}", out.display());
            ExitCode::from(1)
        }
    }
}

fn main() -> ExitCode {
    match Cli::parse().command {
        Command::Run { task } => run_task(task),
        Command::ValidateDataset { path } => run_validate(path),
        Command::MakeDataset { out, count, seed } => run_make_dataset(out, count, seed),
    }
}
