//! Distill a trained policy into deterministic guidance schedules via Monte
//! Carlo trajectory aggregation, and show how the frequency power `p`
//! interpolates between the mean and the per-block mode.
//!
//! ```bash
//! cargo run --example distill_schedules
//! ```

use guidance_rl::aggregate::{freq_weighted_trajectory, mean_trajectory, sample_trajectories};
use guidance_rl::env::sample_condition;
use guidance_rl::harness::{train_policy, ExperimentConfig};

fn main() -> guidance_rl::Result<()> {
    let mut config = ExperimentConfig::default();
    config.ppo.iterations = 30;
    let model = config.build_model()?;
    let env_cfg = config.env_config()?;

    println!("training a quick policy ({} iterations)...", config.ppo.iterations);
    let (params, _) = train_policy(&config, &model, &env_cfg)?;

    let task = config.task;
    let task_params = config.task_params;
    let set = sample_trajectories(
        &model,
        &env_cfg,
        &params.sampler(1.0),
        |rng| sample_condition(&model, task, &task_params, rng),
        100,
        1.0,
        config.seeds.train,
    )?;
    println!("sampled {} trajectories of {} decisions each\n", set.len(), set.decisions());

    let mean = mean_trajectory(&set)?;
    println!("rl_mean:        {}", fmt(&mean.values));
    for p in [1.0, 2.0, 8.0, 50.0] {
        let freq = freq_weighted_trajectory(&set, p)?;
        println!("rl_freq p={p:<4}: {}", fmt(&freq.values));
    }
    Ok(())
}

fn fmt(values: &[f64]) -> String {
    values.iter().map(|v| format!("{v:.2}")).collect::<Vec<_>>().join(" ")
}
