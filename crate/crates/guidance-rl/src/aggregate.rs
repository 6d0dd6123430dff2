//! Monte Carlo distillation of a trained policy into deterministic
//! schedules.
//!
//! A stochastic policy induces a distribution over guidance trajectories.
//! Sampling N rollouts and aggregating per decision block yields a
//! deterministic, task-level schedule: either the empirical mean or a
//! frequency-weighted mean in which each distinct action value's weight is
//! its empirical frequency raised to a power `p >= 1` (`p = 1` recovers the
//! plain mean; large `p` approaches the per-block mode).

use std::collections::BTreeMap;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::env::{self, EnvConfig, GammaPolicy};
use crate::schedules::GuidanceSchedule;
use crate::toy_dlm::{Condition, ToyModel};
use crate::{Error, Result};

/// A set of sampled guidance trajectories (per-block gamma values).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrajectorySet {
    /// `N` rows, each with one gamma per decision block.
    pub trajectories: Vec<Vec<f64>>,
    pub temperature: f64,
    pub seed: u64,
    /// Action repetition factor of the generating environment.
    pub action_repeat: usize,
    pub total_steps: usize,
}

impl TrajectorySet {
    pub fn len(&self) -> usize {
        self.trajectories.len()
    }

    pub fn is_empty(&self) -> bool {
        self.trajectories.is_empty()
    }

    pub fn decisions(&self) -> usize {
        self.trajectories.first().map_or(0, Vec::len)
    }

    fn check_nonempty(&self) -> Result<()> {
        if self.is_empty() {
            return Err(Error::InvalidInput("empty trajectory set".into()));
        }
        let m = self.decisions();
        if self.trajectories.iter().any(|t| t.len() != m) {
            return Err(Error::InvalidInput("ragged trajectory set".into()));
        }
        Ok(())
    }
}

/// Sample `count` independent policy rollouts, recording only the per-block
/// guidance actions. Conditions come from `cond_sampler` (one fresh task
/// instance per rollout); `temperature` scales the policy's action logits
/// before sampling, with 0 decoding the argmax.
pub fn sample_trajectories<P, F>(
    model: &ToyModel,
    config: &EnvConfig,
    policy: &P,
    mut cond_sampler: F,
    count: usize,
    temperature: f64,
    seed: u64,
) -> Result<TrajectorySet>
where
    P: GammaPolicy,
    F: FnMut(&mut ChaCha8Rng) -> Result<Condition>,
{
    if count == 0 {
        return Err(Error::InvalidInput("trajectory count must be >= 1".into()));
    }
    if temperature < 0.0 {
        return Err(Error::InvalidInput(format!("temperature {temperature} negative")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut trajectories = Vec::with_capacity(count);
    for _ in 0..count {
        let cond = cond_sampler(&mut rng)?;
        let record = env::rollout(model, &cond, config, policy, &mut rng)?;
        trajectories.push(record.blocks.iter().map(|b| b.gamma).collect());
    }
    Ok(TrajectorySet {
        trajectories,
        temperature,
        seed,
        action_repeat: config.action_repeat,
        total_steps: config.sampler.total_steps,
    })
}

/// Empirical mean trajectory: per-block average of the sampled actions.
pub fn mean_trajectory(set: &TrajectorySet) -> Result<GuidanceSchedule> {
    set.check_nonempty()?;
    let n = set.len() as f64;
    let m = set.decisions();
    let values = (0..m)
        .map(|j| set.trajectories.iter().map(|t| t[j]).sum::<f64>() / n)
        .collect();
    Ok(GuidanceSchedule { values, n: set.action_repeat, total_steps: set.total_steps })
}

/// Frequency-weighted mean trajectory: per block, bucket the sampled actions
/// by value and emit `sum(f_i^p * v_i) / sum(f_i^p)` over the buckets, where
/// `f_i` is each value's empirical frequency.
pub fn freq_weighted_trajectory(set: &TrajectorySet, p: f64) -> Result<GuidanceSchedule> {
    if p < 1.0 {
        return Err(Error::InvalidInput(format!("frequency power p={p} below 1")));
    }
    set.check_nonempty()?;
    let n = set.len() as f64;
    let m = set.decisions();
    let mut values = Vec::with_capacity(m);
    for j in 0..m {
        // Bucket by exact bit pattern; all gammas are non-negative, so the
        // bit order matches the value order and iteration is deterministic.
        let mut buckets: BTreeMap<u64, usize> = BTreeMap::new();
        for t in &set.trajectories {
            *buckets.entry(t[j].to_bits()).or_insert(0) += 1;
        }
        let mut numerator = 0.0;
        let mut denominator = 0.0;
        for (&bits, &count) in &buckets {
            let value = f64::from_bits(bits);
            let weight = (count as f64 / n).powf(p);
            numerator += weight * value;
            denominator += weight;
        }
        values.push(numerator / denominator);
    }
    Ok(GuidanceSchedule { values, n: set.action_repeat, total_steps: set.total_steps })
}
