//! Operator entry point: ingest trajectories, form memory, run refinement
//! rounds, evaluate on held-out goals, or do all of it in one run.
//!
//! Exit codes: 0 success, 2 configuration error, 1 runtime error.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use memact::pipeline::{
    cmd_eval, cmd_form, cmd_ingest, cmd_refine, cmd_run, default_eval_goals, default_refine_goals,
    render_eval_table, render_refine_table, RunConfig,
};
use memact::Error;

#[derive(Parser)]
#[command(name = "memact", about = "memory-augmented decision agents", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Path to the JSON run configuration.
    #[arg(long)]
    config: PathBuf,
    /// Override the config's seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Override the config's worker count.
    #[arg(long)]
    workers: Option<usize>,
    /// Override the output directory.
    #[arg(long)]
    output_dir: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Generate expert demonstration trajectories.
    Ingest {
        #[command(flatten)]
        common: Common,
        /// Override the trajectory count.
        #[arg(long)]
        count: Option<usize>,
    },
    /// Build batch memories from a trajectory file.
    FormMemory {
        #[command(flatten)]
        common: Common,
        /// Override the batch size.
        #[arg(long)]
        batch_size: Option<usize>,
    },
    /// Refine the memory by tree exploration on new goals.
    Refine {
        #[command(flatten)]
        common: Common,
        /// Refinement rounds.
        #[arg(long)]
        rounds: Option<usize>,
        /// File with one goal per line; defaults to the pool slice.
        #[arg(long)]
        goals: Option<PathBuf>,
    },
    /// Evaluate on held-out goals and report score and success rate.
    Eval {
        #[command(flatten)]
        common: Common,
        /// File with one goal per line; defaults to the pool slice.
        #[arg(long)]
        goals: Option<PathBuf>,
    },
    /// Full pipeline: ingest, form-memory, refine, eval.
    Run {
        #[command(flatten)]
        common: Common,
    },
}

fn load_config(common: &Common) -> Result<RunConfig, Error> {
    let mut config = RunConfig::from_file(&common.config)?;
    if let Some(seed) = common.seed {
        config.seed = seed;
    }
    if let Some(workers) = common.workers {
        config.workers = workers;
    }
    if let Some(output_dir) = &common.output_dir {
        config.paths.output_dir = output_dir.clone();
    }
    Ok(config)
}

fn read_goals_file(path: &PathBuf) -> Result<Vec<String>, Error> {
    let text = std::fs::read_to_string(path)?;
    Ok(text.lines().map(str::trim).filter(|l| !l.is_empty()).map(String::from).collect())
}

fn run() -> Result<(), Error> {
    let cli = Cli::parse();
    match cli.command {
        Command::Ingest { common, count } => {
            let mut config = load_config(&common)?;
            if let Some(count) = count {
                config.ingest.count = count;
            }
            let report = cmd_ingest(&config)?;
            println!("wrote {} trajectories to {}", report.count, report.path.display());
        }
        Command::FormMemory { common, batch_size } => {
            let mut config = load_config(&common)?;
            if let Some(batch_size) = batch_size {
                config.formation.batch_size = batch_size;
            }
            let report = cmd_form(&config)?;
            println!("formed {} batch memories", report.batch_count);
            for (i, count) in report.tuple_counts.iter().enumerate() {
                println!("batch {}: {} tuples", i + 1, count);
            }
        }
        Command::Refine { common, rounds, goals } => {
            let config = load_config(&common)?;
            let rounds = rounds.unwrap_or(config.refine_rounds);
            let goals = match goals {
                Some(path) => read_goals_file(&path)?,
                None => default_refine_goals(&config),
            };
            let report = cmd_refine(&config, rounds, &goals)?;
            print!("{}", render_refine_table(&report));
        }
        Command::Eval { common, goals } => {
            let config = load_config(&common)?;
            let goals = match goals {
                Some(path) => read_goals_file(&path)?,
                None => default_eval_goals(&config),
            };
            let report = cmd_eval(&config, &goals)?;
            print!("{}", render_eval_table(&report));
        }
        Command::Run { common } => {
            let config = load_config(&common)?;
            let report = cmd_run(&config)?;
            println!(
                "ingested {} trajectories; formed {} batches; refinement added {} tuples",
                report.ingest.count, report.form.batch_count, report.refine.tuples_added
            );
            print!("{}", render_eval_table(&report.eval));
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run() {
        Ok(()) => ExitCode::SUCCESS,
        Err(Error::Config(message)) => {
            eprintln!("configuration error: {message}");
            ExitCode::from(2)
        }
        Err(Error::Env(memact::EnvError::UnparseableGoal(goal))) => {
            eprintln!("configuration error: unparseable goal {goal:?}");
            ExitCode::from(2)
        }
        Err(error) => {
            eprintln!("error: {error}");
            ExitCode::FAILURE
        }
    }
}
