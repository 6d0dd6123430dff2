//! From-scratch actor-critic policy optimization.
//!
//! The actor maps the five state features to logits over the 13 guidance
//! actions; the critic shares the trunk shape with a scalar head. Updates
//! use the clipped surrogate objective with an entropy bonus and a value
//! regression term, advantages from GAE, global-norm gradient clipping, and
//! an adaptive-moment (Adam) step rule.

mod gae;
mod net;

pub use gae::compute_gae;
pub use net::{ForwardCache, LayerNorm, Linear, Mlp};

use std::cell::Cell;
use std::path::Path;

use ndarray::Array1;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::env::{self, Decision, EpisodeRecord, GammaPolicy, StateFeatures};
use crate::{Error, Result};

pub const FEATURE_DIM: usize = 5;
pub const HIDDEN_DIM: usize = 128;
/// Actor output head gain; near-zero so the initial policy is near-uniform.
pub const ACTOR_HEAD_GAIN: f64 = 0.01;
pub const CRITIC_HEAD_GAIN: f64 = 1.0;

thread_local! {
    static POLICY_FORWARD_CALLS: Cell<u64> = const { Cell::new(0) };
}

/// Number of `policy_forward` invocations on this thread; instrumentation
/// for asserting that schedule replay never consults the policy.
pub fn policy_forward_call_count() -> u64 {
    POLICY_FORWARD_CALLS.with(|c| c.get())
}

pub fn reset_policy_forward_call_count() {
    POLICY_FORWARD_CALLS.with(|c| c.set(0));
}

/// Actor and critic parameter sets.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolicyParams {
    pub actor: Mlp,
    pub critic: Mlp,
}

impl PolicyParams {
    pub fn n_params(&self) -> usize {
        self.actor.n_params() + self.critic.n_params()
    }

    /// All parameters (actor then critic) in a fixed flat order.
    pub fn flatten(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.n_params());
        self.actor.flatten_into(&mut out);
        self.critic.flatten_into(&mut out);
        out
    }

    pub fn assign_from_flat(&mut self, values: &[f64]) {
        let used = self.actor.assign_from_slice(values);
        self.critic.assign_from_slice(&values[used..]);
    }

    /// Wrap as a sampling policy with the given temperature (0 = argmax).
    pub fn sampler(&self, temperature: f64) -> PolicySampler<'_> {
        PolicySampler { params: self, temperature }
    }
}

/// Orthogonally initialized actor (head gain 0.01) and critic (head gain
/// 1.0) networks for the 5-feature, 13-action interface.
pub fn init_networks(seed: u64) -> PolicyParams {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let actor = Mlp::init(FEATURE_DIM, HIDDEN_DIM, env::ACTION_COUNT, ACTOR_HEAD_GAIN, &mut rng);
    let critic = Mlp::init(FEATURE_DIM, HIDDEN_DIM, 1, CRITIC_HEAD_GAIN, &mut rng);
    PolicyParams { actor, critic }
}

fn features_array(features: &StateFeatures) -> Result<Array1<f64>> {
    let v = features.as_array();
    if v.iter().any(|x| !x.is_finite()) {
        return Err(Error::ContractViolation(format!("non-finite features {v:?}")));
    }
    Ok(Array1::from(v.to_vec()))
}

/// Actor forward pass: action logits and their log-softmax.
pub fn policy_forward(
    params: &PolicyParams,
    features: &StateFeatures,
) -> Result<(Array1<f64>, Array1<f64>)> {
    POLICY_FORWARD_CALLS.with(|c| c.set(c.get() + 1));
    let x = features_array(features)?;
    let logits = params.actor.forward(&x);
    let logps = log_softmax(&logits);
    Ok((logits, logps))
}

/// Critic forward pass: scalar state-value estimate.
pub fn value_forward(params: &PolicyParams, features: &StateFeatures) -> Result<f64> {
    let x = features_array(features)?;
    Ok(params.critic.forward(&x)[0])
}

pub fn log_softmax(logits: &Array1<f64>) -> Array1<f64> {
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let lse = logits.mapv(|x| (x - max).exp()).sum().ln() + max;
    logits.mapv(|x| x - lse)
}

/// Categorical entropy from log-probabilities, in nats.
pub fn entropy(logps: &Array1<f64>) -> f64 {
    -logps.iter().map(|&lp| lp.exp() * lp).sum::<f64>()
}

/// A [`GammaPolicy`] view of trained parameters: temperature-scaled
/// categorical sampling over the action logits (temperature 0 decodes the
/// argmax). The recorded log-probability is always under the unscaled
/// policy.
pub struct PolicySampler<'a> {
    params: &'a PolicyParams,
    temperature: f64,
}

impl GammaPolicy for PolicySampler<'_> {
    fn decide(&self, features: &StateFeatures, rng: &mut ChaCha8Rng) -> Result<Decision> {
        let (logits, logps) = policy_forward(self.params, features)?;
        let action = if self.temperature <= 0.0 {
            argmax_index(&logits)
        } else {
            let scaled = logits.mapv(|x| x / self.temperature);
            sample_categorical(&log_softmax(&scaled), rng)
        };
        let value = value_forward(self.params, features)?;
        Ok(Decision { action, log_prob: logps[action], value })
    }
}

fn argmax_index(v: &Array1<f64>) -> usize {
    let mut best = 0;
    for i in 1..v.len() {
        if v[i] > v[best] {
            best = i;
        }
    }
    best
}

fn sample_categorical(logps: &Array1<f64>, rng: &mut ChaCha8Rng) -> usize {
    let u: f64 = rng.gen();
    let mut cum = 0.0;
    for (i, &lp) in logps.iter().enumerate() {
        cum += lp.exp();
        if u < cum {
            return i;
        }
    }
    logps.len() - 1
}

/// PPO hyperparameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PpoConfig {
    pub clip_epsilon: f64,
    pub learning_rate: f64,
    pub update_epochs: usize,
    pub minibatch_size: usize,
    pub discount: f64,
    pub gae_lambda: f64,
    pub entropy_coef: f64,
    pub value_coef: f64,
    pub episodes_per_iteration: usize,
    pub iterations: usize,
    pub max_grad_norm: f64,
}

impl Default for PpoConfig {
    fn default() -> Self {
        Self {
            clip_epsilon: 0.2,
            learning_rate: 2e-3,
            update_epochs: 6,
            minibatch_size: 64,
            // Purely terminal reward: no reason to discount by default.
            discount: 1.0,
            gae_lambda: 0.95,
            // Small: per-action reward differences on the toy tasks are a
            // few thousandths, a large bonus pins the policy near uniform.
            entropy_coef: 5e-4,
            value_coef: 0.5,
            episodes_per_iteration: 16,
            iterations: 200,
            max_grad_norm: 0.5,
        }
    }
}

impl PpoConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.clip_epsilon > 0.0 && self.clip_epsilon < 1.0) {
            return Err(Error::InvalidConfig(format!(
                "clip_epsilon {} outside (0, 1)",
                self.clip_epsilon
            )));
        }
        if !(self.discount > 0.0 && self.discount <= 1.0) {
            return Err(Error::InvalidConfig(format!(
                "discount {} outside (0, 1]",
                self.discount
            )));
        }
        if !(0.0..=1.0).contains(&self.gae_lambda) {
            return Err(Error::InvalidConfig(format!(
                "gae_lambda {} outside [0, 1]",
                self.gae_lambda
            )));
        }
        if self.learning_rate <= 0.0 {
            return Err(Error::InvalidConfig("learning_rate must be > 0".into()));
        }
        if self.update_epochs == 0
            || self.minibatch_size == 0
            || self.episodes_per_iteration == 0
        {
            return Err(Error::InvalidConfig(
                "update_epochs, minibatch_size and episodes_per_iteration must be >= 1".into(),
            ));
        }
        if self.entropy_coef < 0.0 || self.value_coef < 0.0 || self.max_grad_norm <= 0.0 {
            return Err(Error::InvalidConfig(
                "entropy_coef/value_coef must be >= 0 and max_grad_norm > 0".into(),
            ));
        }
        Ok(())
    }
}

/// One transition of a training batch. Advantages are expected to be
/// normalized per batch by the caller (mean 0, std 1 with an epsilon guard),
/// as `train` does.
#[derive(Debug, Clone, Copy)]
pub struct Sample {
    pub features: [f64; 5],
    pub action: usize,
    pub old_log_prob: f64,
    pub advantage: f64,
    pub ret: f64,
}

/// Loss components of one minibatch (pre-update values).
#[derive(Debug, Clone, Copy, Default)]
pub struct LossParts {
    pub total: f64,
    pub policy: f64,
    pub value: f64,
    pub entropy: f64,
    pub approx_kl: f64,
}

/// Mean loss statistics over the minibatch updates of one `ppo_update` call.
#[derive(Debug, Clone, Copy, Default, Serialize, Deserialize)]
pub struct UpdateStats {
    pub policy_loss: f64,
    pub value_loss: f64,
    pub entropy: f64,
    pub approx_kl: f64,
}

/// Exact loss and parameter gradients for a batch, without updating.
///
/// Loss = policy (clipped surrogate) + `value_coef` * value MSE
/// - `entropy_coef` * entropy, averaged over the batch. Gradients land in a
/// `PolicyParams`-shaped accumulator.
pub fn loss_and_grads(
    params: &PolicyParams,
    batch: &[Sample],
    config: &PpoConfig,
) -> Result<(LossParts, PolicyParams)> {
    if batch.is_empty() {
        return Err(Error::ContractViolation("empty batch".into()));
    }
    let scale = 1.0 / batch.len() as f64;
    let eps = config.clip_epsilon;
    let mut grads = PolicyParams {
        actor: params.actor.zeros_like(),
        critic: params.critic.zeros_like(),
    };
    let mut parts = LossParts::default();

    for sample in batch {
        let x = Array1::from(sample.features.to_vec());
        let (logits, cache_a) = params.actor.forward_cached(&x);
        let logps = log_softmax(&logits);
        let probs = logps.mapv(f64::exp);
        let lp = logps[sample.action];
        let ratio = (lp - sample.old_log_prob).exp();
        let clipped = ratio.clamp(1.0 - eps, 1.0 + eps);
        let surr_unclipped = ratio * sample.advantage;
        let surr_clipped = clipped * sample.advantage;
        let objective = surr_unclipped.min(surr_clipped);
        let ent = entropy(&logps);

        parts.policy += -objective * scale;
        parts.entropy += ent * scale;
        parts.approx_kl += (sample.old_log_prob - lp) * scale;

        // d(-objective)/d lp: the clipped branch is constant in lp whenever
        // it is strictly smaller, so gradient flows only through the
        // unclipped surrogate.
        let dobj_dlp = if surr_unclipped <= surr_clipped { ratio * sample.advantage } else { 0.0 };
        // dlp/dz = onehot(action) - probs; dH/dz = -p (logp + H).
        let mut dlogits = Array1::<f64>::zeros(logits.len());
        for i in 0..logits.len() {
            let onehot = if i == sample.action { 1.0 } else { 0.0 };
            let d_policy = -dobj_dlp * (onehot - probs[i]);
            let d_entropy = config.entropy_coef * probs[i] * (logps[i] + ent);
            dlogits[i] = (d_policy + d_entropy) * scale;
        }
        params.actor.backward(&cache_a, &dlogits, &mut grads.actor);

        let (value_out, cache_c) = params.critic.forward_cached(&x);
        let v = value_out[0];
        let err = v - sample.ret;
        parts.value += err * err * scale;
        let dv = Array1::from(vec![config.value_coef * 2.0 * err * scale]);
        params.critic.backward(&cache_c, &dv, &mut grads.critic);
    }

    parts.total = parts.policy + config.value_coef * parts.value - config.entropy_coef * parts.entropy;
    if !parts.total.is_finite() {
        return Err(Error::Numerical(format!(
            "non-finite loss: policy={} value={} entropy={}",
            parts.policy, parts.value, parts.entropy
        )));
    }
    Ok((parts, grads))
}

/// Adaptive-moment estimation state over the flattened actor+critic
/// parameter vector.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AdamState {
    m: Vec<f64>,
    v: Vec<f64>,
    t: u64,
}

const ADAM_BETA1: f64 = 0.9;
const ADAM_BETA2: f64 = 0.999;
const ADAM_EPS: f64 = 1e-8;

impl AdamState {
    pub fn new(n_params: usize) -> Self {
        Self { m: vec![0.0; n_params], v: vec![0.0; n_params], t: 0 }
    }

    fn step(&mut self, params: &mut Vec<f64>, grads: &[f64], lr: f64) {
        self.t += 1;
        let bc1 = 1.0 - ADAM_BETA1.powi(self.t as i32);
        let bc2 = 1.0 - ADAM_BETA2.powi(self.t as i32);
        for i in 0..params.len() {
            let g = grads[i];
            self.m[i] = ADAM_BETA1 * self.m[i] + (1.0 - ADAM_BETA1) * g;
            self.v[i] = ADAM_BETA2 * self.v[i] + (1.0 - ADAM_BETA2) * g * g;
            let mhat = self.m[i] / bc1;
            let vhat = self.v[i] / bc2;
            params[i] -= lr * mhat / (vhat.sqrt() + ADAM_EPS);
        }
    }
}

/// One PPO update over a collected batch: `update_epochs` passes of shuffled
/// minibatches, each applying exact backprop gradients with global-norm
/// clipping and an Adam step. Returns the mean pre-update loss statistics.
pub fn ppo_update(
    params: &mut PolicyParams,
    opt: &mut AdamState,
    batch: &[Sample],
    config: &PpoConfig,
    rng: &mut ChaCha8Rng,
) -> Result<UpdateStats> {
    if batch.is_empty() {
        return Err(Error::ContractViolation("ppo_update on an empty batch".into()));
    }
    config.validate()?;
    let mut indices: Vec<usize> = (0..batch.len()).collect();
    let mut stats = UpdateStats::default();
    let mut updates = 0usize;

    for _ in 0..config.update_epochs {
        shuffle(&mut indices, rng);
        for chunk in indices.chunks(config.minibatch_size) {
            let minibatch: Vec<Sample> = chunk.iter().map(|&i| batch[i]).collect();
            let (parts, grads) = loss_and_grads(params, &minibatch, config)?;

            let mut grad_flat = grads.flatten();
            clip_global_norm(&mut grad_flat, config.max_grad_norm);
            let mut param_flat = params.flatten();
            opt.step(&mut param_flat, &grad_flat, config.learning_rate);
            params.assign_from_flat(&param_flat);

            stats.policy_loss += parts.policy;
            stats.value_loss += parts.value;
            stats.entropy += parts.entropy;
            stats.approx_kl += parts.approx_kl;
            updates += 1;
        }
    }
    let n = updates as f64;
    stats.policy_loss /= n;
    stats.value_loss /= n;
    stats.entropy /= n;
    stats.approx_kl /= n;
    Ok(stats)
}

fn clip_global_norm(grads: &mut [f64], max_norm: f64) {
    let norm = grads.iter().map(|g| g * g).sum::<f64>().sqrt();
    if norm > max_norm {
        let scale = max_norm / norm;
        for g in grads.iter_mut() {
            *g *= scale;
        }
    }
}

/// Fisher-Yates shuffle driven by the training rng (keeps runs reproducible
/// without depending on thread-local entropy).
fn shuffle(indices: &mut [usize], rng: &mut ChaCha8Rng) {
    for i in (1..indices.len()).rev() {
        let j = rng.gen_range(0..=i);
        indices.swap(i, j);
    }
}

/// Per-iteration training statistics.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct IterationStats {
    pub iteration: usize,
    pub mean_reward: f64,
    pub policy_loss: f64,
    pub value_loss: f64,
    pub entropy: f64,
    pub approx_kl: f64,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct TrainHistory {
    pub entries: Vec<IterationStats>,
}

impl TrainHistory {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("iteration,mean_reward,policy_loss,value_loss,entropy,approx_kl\n");
        for e in &self.entries {
            out.push_str(&format!(
                "{},{},{},{},{},{}\n",
                e.iteration, e.mean_reward, e.policy_loss, e.value_loss, e.entropy, e.approx_kl
            ));
        }
        out
    }

    pub fn save_csv(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_csv())?;
        Ok(())
    }
}

/// On-policy training loop.
///
/// `collect` runs one episode under the current parameters (the environment
/// factory); per iteration it is invoked `episodes_per_iteration` times, the
/// episodes are turned into a batch via GAE with batch-normalized
/// advantages, and one `ppo_update` is applied.
pub fn train<F>(mut collect: F, config: &PpoConfig, seed: u64) -> Result<(PolicyParams, TrainHistory)>
where
    F: FnMut(&PolicyParams, &mut ChaCha8Rng) -> Result<EpisodeRecord>,
{
    config.validate()?;
    let mut params = init_networks(seed);
    let mut opt = AdamState::new(params.n_params());
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(0x7261_696e); // distinct stream from network init draws
    let mut history = TrainHistory::default();

    for iteration in 0..config.iterations {
        let mut episodes = Vec::with_capacity(config.episodes_per_iteration);
        for _ in 0..config.episodes_per_iteration {
            episodes.push(collect(&params, &mut rng)?);
        }
        let mean_reward = episodes.iter().map(|e| e.terminal_reward()).sum::<f64>()
            / episodes.len() as f64;

        let batch = batch_from_episodes(&episodes, config)?;
        let stats = ppo_update(&mut params, &mut opt, &batch, config, &mut rng)?;
        history.entries.push(IterationStats {
            iteration,
            mean_reward,
            policy_loss: stats.policy_loss,
            value_loss: stats.value_loss,
            entropy: stats.entropy,
            approx_kl: stats.approx_kl,
        });
    }
    Ok((params, history))
}

/// Flatten episodes into PPO samples: GAE per episode, then advantage
/// normalization across the whole batch (mean 0, std 1, std guard 1e-8).
pub fn batch_from_episodes(episodes: &[EpisodeRecord], config: &PpoConfig) -> Result<Vec<Sample>> {
    let mut samples = Vec::new();
    for ep in episodes {
        let rewards = ep.block_rewards();
        let values = ep.block_values();
        let (advantages, returns) =
            compute_gae(&rewards, &values, config.discount, config.gae_lambda)?;
        for (j, block) in ep.blocks.iter().enumerate() {
            samples.push(Sample {
                features: block.features.as_array(),
                action: block.action,
                old_log_prob: block.log_prob,
                advantage: advantages[j],
                ret: returns[j],
            });
        }
    }
    if samples.is_empty() {
        return Err(Error::ContractViolation("no samples collected".into()));
    }
    let n = samples.len() as f64;
    let mean = samples.iter().map(|s| s.advantage).sum::<f64>() / n;
    let var = samples.iter().map(|s| (s.advantage - mean).powi(2)).sum::<f64>() / n;
    let std = var.sqrt().max(1e-8);
    for s in &mut samples {
        s.advantage = (s.advantage - mean) / std;
    }
    Ok(samples)
}

/// Versioned checkpoint: parameters plus the configuration and seed that
/// produced them.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Checkpoint {
    pub version: u32,
    pub seed: u64,
    pub config: PpoConfig,
    pub params: PolicyParams,
}

pub const CHECKPOINT_VERSION: u32 = 1;

impl Checkpoint {
    pub fn new(seed: u64, config: PpoConfig, params: PolicyParams) -> Self {
        Self { version: CHECKPOINT_VERSION, seed, config, params }
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, serde_json::to_string(self)?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let ckpt: Checkpoint = serde_json::from_str(&std::fs::read_to_string(path)?)?;
        if ckpt.version != CHECKPOINT_VERSION {
            return Err(Error::InvalidInput(format!(
                "unsupported checkpoint version {}",
                ckpt.version
            )));
        }
        Ok(ckpt)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;
    use rand::Rng;

    fn fixture_features(i: usize) -> StateFeatures {
        let t = i as f64 * 0.13;
        StateFeatures::from_array([
            (t.sin() * 0.5 + 0.5).clamp(0.0, 1.0),
            (t.cos() * 0.5 + 0.5).clamp(0.0, 1.0),
            ((t * 1.7).sin().abs()).clamp(0.0, 1.0),
            ((t * 0.9).cos().abs()).clamp(0.0, 1.0),
            ((t * 2.3).sin() * 0.5 + 0.5).clamp(0.0, 1.0),
        ])
    }

    #[test]
    fn init_is_deterministic() {
        let a = init_networks(5);
        let b = init_networks(5);
        assert_eq!(a, b);
    }

    #[test]
    fn initial_policy_is_near_uniform() {
        let params = init_networks(0);
        for i in 0..20 {
            let (_, logps) = policy_forward(&params, &fixture_features(i)).unwrap();
            let max_prob = logps.iter().cloned().fold(f64::NEG_INFINITY, f64::max).exp();
            assert!(max_prob <= 0.10, "max action probability {max_prob} too peaked");
        }
    }

    #[test]
    fn policy_probabilities_normalize_and_shift_invariant() {
        let params = init_networks(1);
        let f = fixture_features(3);
        let (logits, logps) = policy_forward(&params, &f).unwrap();
        let sum: f64 = logps.iter().map(|lp| lp.exp()).sum();
        assert_abs_diff_eq!(sum, 1.0, epsilon = 1e-9);
        let shifted = logits.mapv(|x| x + 7.5);
        let logps_shifted = log_softmax(&shifted);
        for i in 0..logps.len() {
            assert_abs_diff_eq!(logps[i], logps_shifted[i], epsilon = 1e-9);
        }
    }

    #[test]
    fn policy_forward_rejects_non_finite_features() {
        let params = init_networks(1);
        let f = StateFeatures::from_array([0.1, f64::NAN, 0.2, 0.3, 0.4]);
        assert!(matches!(policy_forward(&params, &f), Err(Error::ContractViolation(_))));
    }

    #[test]
    fn value_forward_zero_network_is_zero() {
        let params = PolicyParams {
            actor: Mlp::zeros(FEATURE_DIM, 8, env::ACTION_COUNT),
            critic: Mlp::zeros(FEATURE_DIM, 8, 1),
        };
        assert_eq!(value_forward(&params, &fixture_features(0)).unwrap(), 0.0);
    }

    #[test]
    fn value_forward_finite_on_unit_cube() {
        let params = init_networks(2);
        for i in 0..50 {
            let v = value_forward(&params, &fixture_features(i)).unwrap();
            assert!(v.is_finite());
        }
    }

    fn one_sample_config() -> PpoConfig {
        PpoConfig {
            update_epochs: 1,
            minibatch_size: 8,
            entropy_coef: 0.0,
            value_coef: 0.5,
            ..PpoConfig::default()
        }
    }

    /// Build a sample whose ratio is forced to `ratio` by back-dating the
    /// old log-probability.
    fn forced_ratio_sample(params: &PolicyParams, ratio: f64, advantage: f64) -> Sample {
        let f = fixture_features(1);
        let (_, logps) = policy_forward(params, &f).unwrap();
        let action = 4;
        Sample {
            features: f.as_array(),
            action,
            old_log_prob: logps[action] - ratio.ln(),
            advantage,
            ret: 0.3,
        }
    }

    #[test]
    fn clipped_surrogate_hand_values() {
        let params = init_networks(3);
        let config = one_sample_config();
        for (ratio, advantage, expected) in [
            (1.0, 1.0, -1.0),   // unclipped branch, min(1, 1) * 1
            (2.0, 1.0, -1.2),   // clip ceiling binds: min(2, 1.2)
            (0.5, -1.0, 0.8),   // clip floor binds: min(-0.5, -0.8) = -0.8
        ] {
            let batch = [forced_ratio_sample(&params, ratio, advantage)];
            let (parts, _) = loss_and_grads(&params, &batch, &config).unwrap();
            assert_abs_diff_eq!(parts.policy, expected, epsilon = 1e-9);
        }
    }

    proptest! {
        #[test]
        fn clipped_objective_never_exceeds_unclipped(
            ratio in 0.01_f64..5.0,
            advantage in -3.0_f64..3.0,
        ) {
            let eps = 0.2;
            let clipped = ratio.clamp(1.0 - eps, 1.0 + eps);
            let objective = (ratio * advantage).min(clipped * advantage);
            // Pessimism bound: the objective is never more optimistic than
            // the raw surrogate, equivalently the loss never undercuts it.
            prop_assert!(objective <= ratio * advantage + 1e-15);
            prop_assert!(-objective >= -(ratio * advantage) - 1e-15);
        }

        #[test]
        fn entropy_stays_in_categorical_range(raw in proptest::collection::vec(-8.0_f64..8.0, 13)) {
            let logps = log_softmax(&Array1::from(raw));
            let h = entropy(&logps);
            prop_assert!(h >= -1e-12);
            prop_assert!(h <= (13.0_f64).ln() + 1e-12);
        }
    }

    #[test]
    fn gradients_match_finite_differences_on_small_fixtures() {
        // Small networks exercising the exact production loss path,
        // including both normalization layers.
        let config = PpoConfig {
            entropy_coef: 0.01,
            value_coef: 0.5,
            ..PpoConfig::default()
        };
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        for fixture in 0..5 {
            let params = PolicyParams {
                actor: Mlp::init(FEATURE_DIM, 8, 5, 0.5, &mut rng),
                critic: Mlp::init(FEATURE_DIM, 8, 1, 1.0, &mut rng),
            };
            let batch = gradient_check_batch(&params, 4, fixture, &mut rng);
            let max_rel = max_fd_rel_error(&params, &batch, &config);
            assert!(max_rel < 1e-4, "fixture {fixture}: rel error {max_rel}");
        }
    }

    /// Batch generator that keeps every sample away from clip and ReLU
    /// kinks so central differences are valid.
    pub(crate) fn gradient_check_batch(
        params: &PolicyParams,
        len: usize,
        salt: usize,
        rng: &mut ChaCha8Rng,
    ) -> Vec<Sample> {
        let mut batch = Vec::new();
        let mut attempt = 0usize;
        while batch.len() < len {
            attempt += 1;
            let f = fixture_features(salt * 31 + attempt * 7);
            let (_, logps) = policy_forward(params, &f).unwrap();
            let action = rng.gen_range(0..params.actor.out_dim());
            let jitter: f64 = rng.gen_range(-0.1..0.1);
            let sample = Sample {
                features: f.as_array(),
                action,
                old_log_prob: logps[action] - jitter,
                advantage: rng.gen_range(-2.0..2.0),
                ret: rng.gen_range(-1.0..1.0),
            };
            let ratio = jitter.exp();
            // Keep clear of the clip boundaries at 1 +- epsilon.
            if (ratio - 0.8).abs() < 0.02 || (ratio - 1.2).abs() < 0.02 {
                continue;
            }
            batch.push(sample);
        }
        batch
    }

    pub(crate) fn max_fd_rel_error(
        params: &PolicyParams,
        batch: &[Sample],
        config: &PpoConfig,
    ) -> f64 {
        let (_, grads) = loss_and_grads(params, batch, config).unwrap();
        let grad_flat = grads.flatten();
        let base_flat = params.flatten();
        let h = 1e-5;
        let mut max_rel = 0.0_f64;
        let mut perturbed = params.clone();
        for i in 0..base_flat.len() {
            let mut plus = base_flat.clone();
            plus[i] += h;
            perturbed.assign_from_flat(&plus);
            let (lp, _) = loss_and_grads(&perturbed, batch, config).unwrap();
            let mut minus = base_flat.clone();
            minus[i] -= h;
            perturbed.assign_from_flat(&minus);
            let (lm, _) = loss_and_grads(&perturbed, batch, config).unwrap();
            let fd = (lp.total - lm.total) / (2.0 * h);
            let denom = grad_flat[i].abs().max(fd.abs()).max(1e-4);
            max_rel = max_rel.max((grad_flat[i] - fd).abs() / denom);
        }
        max_rel
    }

    #[test]
    fn value_only_updates_decrease_value_loss() {
        let mut params = init_networks(11);
        let mut opt = AdamState::new(params.n_params());
        let config = PpoConfig {
            learning_rate: 1e-3,
            update_epochs: 1,
            minibatch_size: 64,
            entropy_coef: 0.0,
            ..PpoConfig::default()
        };
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        // Zero advantages: the actor receives no gradient, only the critic
        // regresses toward the returns.
        let batch: Vec<Sample> = (0..16)
            .map(|i| {
                let f = fixture_features(i);
                let (_, logps) = policy_forward(&params, &f).unwrap();
                Sample {
                    features: f.as_array(),
                    action: i % 13,
                    old_log_prob: logps[i % 13],
                    advantage: 0.0,
                    ret: (i as f64 * 0.811).sin(),
                }
            })
            .collect();
        let mut last = f64::INFINITY;
        for step in 0..10 {
            let stats = ppo_update(&mut params, &mut opt, &batch, &config, &mut rng).unwrap();
            assert!(
                stats.value_loss < last,
                "value loss did not decrease at step {step}: {} >= {last}",
                stats.value_loss
            );
            last = stats.value_loss;
        }
    }

    #[test]
    fn train_zero_iterations_returns_initial_params() {
        let config = PpoConfig { iterations: 0, ..PpoConfig::default() };
        let (params, history) = train(
            |_, _| unreachable!("no episodes should be collected"),
            &config,
            123,
        )
        .unwrap();
        assert_eq!(params, init_networks(123));
        assert!(history.entries.is_empty());
    }

    #[test]
    fn history_has_one_entry_per_iteration_and_csv_shape() {
        use crate::env::{BlockRecord, EpisodeRecord};
        use crate::rewards::RewardBreakdown;
        let config = PpoConfig {
            iterations: 3,
            episodes_per_iteration: 4,
            minibatch_size: 8,
            update_epochs: 1,
            ..PpoConfig::default()
        };
        // Synthetic one-decision episodes; reward prefers action 6.
        let collect = |params: &PolicyParams, rng: &mut ChaCha8Rng| {
            let f = fixture_features(0);
            let decision = params.sampler(1.0).decide(&f, rng)?;
            let reward = if decision.action == 6 { 1.0 } else { 0.0 };
            Ok(EpisodeRecord {
                blocks: vec![BlockRecord {
                    features: f,
                    action: decision.action,
                    gamma: 0.25 * decision.action as f64,
                    log_prob: decision.log_prob,
                    value: decision.value,
                    reward,
                }],
                final_tokens: vec![0],
                breakdown: RewardBreakdown { r_ctrl: reward, r_ppl: 0.0, r_semantic: 0.0, total: reward },
            })
        };
        let (_, history) = train(collect, &config, 7).unwrap();
        assert_eq!(history.entries.len(), 3);
        let csv = history.to_csv();
        assert_eq!(csv.lines().count(), 4);
        assert!(csv.starts_with("iteration,mean_reward"));
    }

    #[test]
    fn checkpoint_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("ckpt.json");
        let params = init_networks(3);
        let ckpt = Checkpoint::new(3, PpoConfig::default(), params.clone());
        ckpt.save(&path).unwrap();
        let loaded = Checkpoint::load(&path).unwrap();
        assert_eq!(loaded.params, params);
        assert_eq!(loaded.seed, 3);
    }

    #[test]
    fn temperature_zero_sampler_is_argmax() {
        let params = init_networks(4);
        let f = fixture_features(2);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let d1 = params.sampler(0.0).decide(&f, &mut rng).unwrap();
        let d2 = params.sampler(0.0).decide(&f, &mut rng).unwrap();
        assert_eq!(d1.action, d2.action);
        let (logits, _) = policy_forward(&params, &f).unwrap();
        assert_eq!(d1.action, argmax_index(&logits));
    }
}
