//! Thin CLI over the library's harness commands.
//!
//! Exit codes: 0 success, 1 configuration error, 2 runtime error.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use guidance_rl::harness::{
    self, AblationAxis, ExperimentConfig,
};
use guidance_rl::Error;

#[derive(Parser)]
#[command(
    name = "guidance-rl",
    version,
    about = "Learned dynamic CFG guidance schedules for a toy masked-diffusion sampler"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train a guidance policy and write checkpoint + history.
    Train(RunArgs),
    /// Evaluate the 7 heuristic schedules and the 13 fixed scales.
    Sweep(RunArgs),
    /// Distill a checkpoint into RL-Mean/RL-Freq and compare all methods.
    Eval(EvalArgs),
    /// Run an ablation grid (temperature, reward_weights or steps).
    Ablate(AblateArgs),
    /// Print the default configuration as TOML.
    PrintConfig(PrintConfigArgs),
}

#[derive(Args)]
struct RunArgs {
    /// TOML experiment configuration; defaults apply when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory override.
    #[arg(long)]
    out_dir: Option<PathBuf>,
    /// Task override: keyword, length_control, neg_to_pos or pos_to_neg.
    #[arg(long)]
    task: Option<String>,
    /// Total reverse steps K override.
    #[arg(long)]
    k: Option<usize>,
    #[arg(long)]
    train_seed: Option<u64>,
    #[arg(long)]
    eval_seed: Option<u64>,
    #[arg(long)]
    model_seed: Option<u64>,
}

#[derive(Args)]
struct EvalArgs {
    #[command(flatten)]
    run: RunArgs,
    /// Trained checkpoint to distill.
    #[arg(long)]
    checkpoint: PathBuf,
}

#[derive(Args)]
struct AblateArgs {
    #[command(flatten)]
    run: RunArgs,
    /// Ablation axis: temperature, reward_weights or steps.
    #[arg(long)]
    axis: String,
    /// Checkpoint to reuse (required by the temperature axis).
    #[arg(long)]
    checkpoint: Option<PathBuf>,
}

#[derive(Args)]
struct PrintConfigArgs {
    /// Show defaults for this task instead of the keyword task.
    #[arg(long)]
    task: Option<String>,
}

fn load_config(args: &RunArgs) -> Result<ExperimentConfig, Error> {
    let mut config = match &args.config {
        Some(path) => ExperimentConfig::load(path)?,
        None => ExperimentConfig::default(),
    };
    if let Some(dir) = &args.out_dir {
        config.out_dir = dir.clone();
    }
    if let Some(task) = &args.task {
        config.task = harness::parse_task(task)?;
    }
    if let Some(k) = args.k {
        config.sampler.total_steps = k;
        config.sampler.unmask_per_step = None;
    }
    if let Some(seed) = args.train_seed {
        config.seeds.train = seed;
    }
    if let Some(seed) = args.eval_seed {
        config.seeds.eval = seed;
    }
    if let Some(seed) = args.model_seed {
        config.seeds.model = seed;
    }
    config.validate()?;
    Ok(config)
}

fn run() -> Result<(), Error> {
    match Cli::parse().command {
        Command::Train(args) => {
            let config = load_config(&args)?;
            let artifacts = harness::cmd_train(&config)?;
            println!(
                "trained {} iterations; final mean reward {:.4}",
                config.ppo.iterations, artifacts.final_mean_reward
            );
            println!("checkpoint: {}", artifacts.checkpoint.display());
            println!("history:    {}", artifacts.history.display());
        }
        Command::Sweep(args) => {
            let config = load_config(&args)?;
            let report = harness::cmd_sweep(&config)?;
            print_report_summary(&report);
            println!("report: {}", config.out_dir.join("sweep_report.csv").display());
        }
        Command::Eval(args) => {
            let config = load_config(&args.run)?;
            let report = harness::cmd_eval(&config, &args.checkpoint)?;
            print_report_summary(&report);
            println!("report: {}", config.out_dir.join("eval_report.csv").display());
        }
        Command::Ablate(args) => {
            let config = load_config(&args.run)?;
            let axis = AblationAxis::parse(&args.axis)?;
            let report = harness::cmd_ablate(&config, axis, args.checkpoint.as_deref())?;
            println!("{} rows written for axis {}", report.rows.len(), report.axis);
            println!(
                "report: {}",
                config.out_dir.join(format!("ablate_{}.csv", report.axis)).display()
            );
        }
        Command::PrintConfig(args) => {
            let task = match &args.task {
                Some(name) => Some(harness::parse_task(name)?),
                None => None,
            };
            print!("{}", harness::default_config_toml(task)?);
        }
    }
    Ok(())
}

fn print_report_summary(report: &harness::EvalReport) {
    println!(
        "{:<18} {:>12} {:>10} {:>10} {:>10}",
        "method", "mean_reward", "ctrl_pct", "ppl", "content"
    );
    for row in &report.rows {
        let content = row.content_pct.map(|v| format!("{v:.1}")).unwrap_or_else(|| "-".into());
        let marker = if row.best_fixed { " *best fixed" } else { "" };
        println!(
            "{:<18} {:>12.4} {:>10.1} {:>10.1} {:>10}{}",
            row.method, row.mean_reward, row.ctrl_pct, row.ppl, content, marker
        );
    }
}

fn main() -> ExitCode {
    match run() {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            if e.is_config_error() {
                ExitCode::from(1)
            } else {
                ExitCode::from(2)
            }
        }
    }
}
