//! Run a single policy-driven episode and inspect its record: per-block
//! features, actions and the sparse terminal reward.
//!
//! ```bash
//! cargo run --example rollout_episode
//! ```

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use guidance_rl::env::{rollout, sample_condition, EnvConfig, TaskParams};
use guidance_rl::ppo::init_networks;
use guidance_rl::rewards::{RewardWeights, TaskKind};
use guidance_rl::sampler::SamplerConfig;
use guidance_rl::toy_dlm::build_model;

fn main() -> guidance_rl::Result<()> {
    let model = build_model(11, 64)?.with_mix_alpha(0.9)?.with_boost_delta(0.8)?;
    let config = EnvConfig::new(
        SamplerConfig::new(30, 24, 24)?,
        1,
        TaskKind::Keyword,
        RewardWeights::for_task(TaskKind::Keyword),
    )?;

    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let cond = sample_condition(&model, TaskKind::Keyword, &TaskParams::default(), &mut rng)?;
    let params = init_networks(0);
    let record = rollout(&model, &cond, &config, &params.sampler(1.0), &mut rng)?;

    println!("condition: {cond:?}\n");
    println!(
        "{:>5} {:>6} {:>6} {:>9} {:>9} {:>9} {:>7}",
        "block", "gamma", "step%", "mask%", "progress", "conf", "reward"
    );
    for (j, block) in record.blocks.iter().enumerate() {
        let f = &block.features;
        println!(
            "{:>5} {:>6.2} {:>6.2} {:>9.2} {:>9.2} {:>9.3} {:>7.3}",
            j + 1,
            block.gamma,
            f.step_ratio,
            f.mask_ratio,
            f.task_progress,
            f.mean_confidence,
            block.reward
        );
    }
    println!(
        "\nterminal reward {:.4} (ctrl {:.2}, ppl {:.2}, semantic {:.2})",
        record.breakdown.total,
        record.breakdown.r_ctrl,
        record.breakdown.r_ppl,
        record.breakdown.r_semantic
    );
    println!("episode as JSONL: {} bytes", record.to_json_line()?.len());
    Ok(())
}
