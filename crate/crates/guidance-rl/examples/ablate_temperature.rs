//! Sweep the policy sampling temperature used during trajectory
//! aggregation and report its effect on the distilled schedules.
//!
//! ```bash
//! cargo run --example ablate_temperature
//! ```

use guidance_rl::harness::{cmd_ablate, cmd_train, AblationAxis, ExperimentConfig};

fn main() -> guidance_rl::Result<()> {
    let mut config = ExperimentConfig::default();
    config.out_dir = std::env::temp_dir().join("guidance-rl-ablate-example");
    config.ppo.iterations = 40;
    config.eval_episodes = 50;
    config.aggregation.trajectories = 50;

    println!("training ({} iterations)...", config.ppo.iterations);
    let artifacts = cmd_train(&config)?;
    let report = cmd_ablate(&config, AblationAxis::Temperature, Some(&artifacts.checkpoint))?;

    println!("\n{:>11} {:<8} {:>11} {:>9} {:>7}", "temperature", "method", "mean_reward", "ctrl_pct", "ppl");
    for row in &report.rows {
        println!(
            "{:>11} {:<8} {:>11.4} {:>9.1} {:>7.1}",
            row.setting, row.method, row.mean_reward, row.ctrl_pct, row.ppl
        );
    }
    println!("\ncsv written to {}", config.out_dir.join("ablate_temperature.csv").display());
    Ok(())
}
