//! Evaluate the seven heuristic curves plus all thirteen fixed guidance
//! scales on a paired episode set and print the report table.
//!
//! ```bash
//! cargo run --example sweep_baselines
//! ```

use guidance_rl::harness::{cmd_sweep, ExperimentConfig};

fn main() -> guidance_rl::Result<()> {
    let mut config = ExperimentConfig::default();
    config.out_dir = std::env::temp_dir().join("guidance-rl-sweep-example");
    config.eval_episodes = 50;

    let report = cmd_sweep(&config)?;
    println!(
        "{:<16} {:>11} {:>9} {:>7}",
        "method", "mean_reward", "ctrl_pct", "ppl"
    );
    for row in &report.rows {
        let mark = if row.best_fixed { "  <- best fixed" } else { "" };
        println!(
            "{:<16} {:>11.4} {:>9.1} {:>7.1}{}",
            row.method, row.mean_reward, row.ctrl_pct, row.ppl, mark
        );
    }
    println!("\nreports written to {}", config.out_dir.display());
    Ok(())
}
