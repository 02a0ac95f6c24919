use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Result;
use clap::{Parser, Subcommand};
use sdgd::pipeline::{self, Axis, Diagnostic, Run};
use sdgd::{RunConfig, ValidationError};

/// Safe planning with cost-limit conditioned trajectory diffusion.
#[derive(Debug, Parser)]
#[command(version, about)]
struct Cli {
    /// Run configuration file; defaults apply when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides `[seed] value`.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory for datasets, checkpoints and results.
    #[arg(long, global = true, default_value = "runs/default")]
    out: PathBuf,
    /// Suppress progress messages on stderr.
    #[arg(long, short, global = true)]
    quiet: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Roll out the behavior policies and write the dataset file.
    GenData {
        #[arg(long)]
        dataset: Option<PathBuf>,
    },
    /// Train the denoiser, reward models and cost model.
    Train {
        #[arg(long)]
        dataset: Option<PathBuf>,
        #[arg(long)]
        checkpoints: Option<PathBuf>,
    },
    /// Evaluate the planner over episodes × seeds.
    Eval {
        #[arg(long)]
        checkpoints: Option<PathBuf>,
    },
    /// Re-evaluate across an axis: limit, lambda-w or f.
    Sweep {
        #[arg(long)]
        axis: String,
        /// Comma-separated values; `lambda:w` pairs for the lambda-w axis.
        #[arg(long)]
        values: Option<String>,
        #[arg(long)]
        dataset: Option<PathBuf>,
        #[arg(long)]
        checkpoints: Option<PathBuf>,
    },
    /// Compare the full sampler with its ablations and the swapped baseline.
    Ablate {
        #[arg(long)]
        dataset: Option<PathBuf>,
        #[arg(long)]
        checkpoints: Option<PathBuf>,
    },
    /// Sampling diagnostics: drift, alignment, correlation or rollout.
    Diagnose {
        #[arg(long)]
        which: String,
        #[arg(long)]
        dataset: Option<PathBuf>,
        #[arg(long)]
        checkpoints: Option<PathBuf>,
    },
}

fn print_json(value: &impl serde::Serialize) -> Result<()> {
    println!("{}", serde_json::to_string_pretty(value)?);
    Ok(())
}

fn execute(cli: Cli) -> Result<()> {
    let mut config = match &cli.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    if let Some(seed) = cli.seed {
        config.seed = seed;
    }
    let mut run = Run::new(config, cli.out);
    run.quiet = cli.quiet;
    let data = |p: Option<PathBuf>| p.unwrap_or_else(|| run.dataset_path());
    let ckpt = |p: Option<PathBuf>| p.unwrap_or_else(|| run.checkpoint_dir());
    match cli.command {
        Command::GenData { dataset } => print_json(&pipeline::gen_data(&run, &data(dataset))?),
        Command::Train { dataset, checkpoints } => print_json(&pipeline::train(&run, &data(dataset), &ckpt(checkpoints))?),
        Command::Eval { checkpoints } => {
            let e = pipeline::eval(&run, &ckpt(checkpoints))?;
            print_json(&serde_json::json!({
                "per_seed": e.per_seed,
                "normalized_reward": e.normalized_reward_mean,
                "normalized_cost": e.normalized_cost_mean,
            }))
        }
        Command::Sweep { axis, values, dataset, checkpoints } => {
            let axis: Axis = axis.parse()?;
            let points = pipeline::sweep(&run, axis, values.as_deref(), &data(dataset), &ckpt(checkpoints))?;
            let rows: Vec<_> = points
                .iter()
                .map(|p| {
                    serde_json::json!({
                        "values": p.values,
                        "normalized_reward": p.evaluation.normalized_reward_mean,
                        "normalized_cost": p.evaluation.normalized_cost_mean,
                    })
                })
                .collect();
            print_json(&rows)
        }
        Command::Ablate { dataset, checkpoints } => {
            let rows: Vec<_> = pipeline::ablate(&run, &data(dataset), &ckpt(checkpoints))?
                .iter()
                .map(|e| {
                    serde_json::json!({
                        "variant": e.variant.as_str(),
                        "w": e.w,
                        "lambda": e.lambda,
                        "normalized_reward": e.normalized_reward_mean,
                        "normalized_cost": e.normalized_cost_mean,
                    })
                })
                .collect();
            print_json(&rows)
        }
        Command::Diagnose { which, dataset, checkpoints } => {
            let which: Diagnostic = which.parse()?;
            print_json(&pipeline::diagnose(&run, which, &data(dataset), &ckpt(checkpoints))?)
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    match execute(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            if e.downcast_ref::<ValidationError>().is_some() {
                ExitCode::from(1)
            } else {
                ExitCode::from(2)
            }
        }
    }
}
