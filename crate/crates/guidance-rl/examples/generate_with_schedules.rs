//! Generate sequences from the toy diffusion model under different guidance
//! schedules and compare their fluency.
//!
//! ```bash
//! cargo run --example generate_with_schedules
//! ```

use guidance_rl::sampler::{generate, SamplerConfig};
use guidance_rl::schedules::{materialize, CurveKind, HeuristicCurve, ALL_CURVES};
use guidance_rl::toy_dlm::{build_model, Condition};

fn main() -> guidance_rl::Result<()> {
    let model = build_model(11, 64)?.with_mix_alpha(0.9)?.with_boost_delta(0.8)?;
    let config = SamplerConfig::new(30, 24, 24)?;
    let cond = Condition::keywords([3, 17, 29, 41, 55].into_iter().collect())?;

    println!("keyword condition: tokens {{3, 17, 29, 41, 55}}, L=24, K=30\n");
    println!("{:<18} {:>6} {:>10}  tokens", "schedule", "ppl", "coverage");

    for kind in ALL_CURVES {
        let schedule = materialize(&HeuristicCurve::new(kind), &config, 1)?;
        let (tokens, _log) = generate(&model, &cond, &schedule.per_step()?, &config)?;
        let ppl = model.sequence_perplexity(&tokens)?;
        let covered = [3, 17, 29, 41, 55]
            .iter()
            .filter(|kw| tokens.contains(kw))
            .count();
        println!(
            "{:<18} {:>6.1} {:>7}/5    {:?}",
            kind.name(),
            ppl,
            covered,
            tokens
        );
    }

    // Per-step trajectory log of one run, as the JSONL export would emit it.
    let schedule = materialize(&HeuristicCurve::new(CurveKind::Beta), &config, 1)?;
    let (_, log) = generate(&model, &cond, &schedule.per_step()?, &config)?;
    println!("\nfirst three step-log records (beta schedule):");
    for line in guidance_rl::sampler::step_logs_to_jsonl(&log)?.lines().take(3) {
        println!("  {line}");
    }
    Ok(())
}
