//! End-to-end comparison at a small scale: train, distill RL-Mean/RL-Freq,
//! and evaluate them against every baseline on a paired episode set.
//!
//! ```bash
//! cargo run --example compare_methods
//! ```
//!
//! This is a miniature of `guidance-rl train` followed by
//! `guidance-rl eval --checkpoint ...`.

use guidance_rl::harness::{cmd_eval, cmd_train, ExperimentConfig};

fn main() -> guidance_rl::Result<()> {
    let mut config = ExperimentConfig::default();
    config.out_dir = std::env::temp_dir().join("guidance-rl-compare-example");
    config.ppo.iterations = 40;
    config.eval_episodes = 50;
    config.aggregation.trajectories = 50;

    println!("training ({} iterations)...", config.ppo.iterations);
    let artifacts = cmd_train(&config)?;
    let report = cmd_eval(&config, &artifacts.checkpoint)?;

    println!("\n{:<16} {:>11} {:>9} {:>7}", "method", "mean_reward", "ctrl_pct", "ppl");
    for row in &report.rows {
        let mark = if row.best_fixed { "  <- best fixed" } else { "" };
        println!(
            "{:<16} {:>11.4} {:>9.1} {:>7.1}{}",
            row.method, row.mean_reward, row.ctrl_pct, row.ppl, mark
        );
    }
    println!("\npolicy calls during schedule replay: {}", report.policy_calls_during_replay);
    println!("full artifacts in {}", config.out_dir.display());
    Ok(())
}
