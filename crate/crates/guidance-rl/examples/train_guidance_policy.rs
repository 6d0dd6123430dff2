//! Train a guidance policy with PPO on the keyword task (a short run) and
//! print the learning curve.
//!
//! ```bash
//! cargo run --example train_guidance_policy
//! ```
//!
//! For a full run use the CLI: `guidance-rl train --config <file>`.

use guidance_rl::harness::{cmd_train, ExperimentConfig};

fn main() -> guidance_rl::Result<()> {
    let mut config = ExperimentConfig::default();
    config.out_dir = std::env::temp_dir().join("guidance-rl-train-example");
    config.ppo.iterations = 30;

    println!(
        "training {} iterations x {} episodes on the {:?} task...",
        config.ppo.iterations, config.ppo.episodes_per_iteration, config.task
    );
    let artifacts = cmd_train(&config)?;

    let history = std::fs::read_to_string(&artifacts.history)?;
    println!("\nlast five iterations (iteration,mean_reward,policy_loss,value_loss,entropy,kl):");
    for line in history.lines().rev().take(5).collect::<Vec<_>>().into_iter().rev() {
        println!("  {line}");
    }
    println!("\ncheckpoint: {}", artifacts.checkpoint.display());
    Ok(())
}
