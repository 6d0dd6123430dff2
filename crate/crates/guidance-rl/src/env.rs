//! The MDP wrapper around the sampler.
//!
//! A guidance policy interacts with the reverse diffusion process once per
//! decision block: it observes a five-component state summary, picks one of
//! 13 discrete guidance scales, and the chosen scale is held for `n`
//! consecutive reverse steps. The reward is sparse — a single terminal value
//! computed from the completed output; every intermediate reward is zero.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::rewards::{self, RewardBreakdown, RewardWeights, TaskKind};
use crate::sampler::{self, DiffusionState, SamplerConfig};
use crate::schedules::GuidanceSchedule;
use crate::toy_dlm::{Condition, Polarity, TokenId, ToyModel};
use crate::{Error, Result};

/// Number of discrete guidance actions.
pub const ACTION_COUNT: usize = 13;
/// Spacing of the action grid.
pub const ACTION_STEP: f64 = 0.25;
/// Largest guidance scale in the action set.
pub const GAMMA_MAX: f64 = 3.0;

/// Map an action index to its guidance scale: `0.25 * index`.
pub fn action_to_gamma(index: usize) -> Result<f64> {
    if index >= ACTION_COUNT {
        return Err(Error::ContractViolation(format!(
            "action index {index} outside [0, {}]",
            ACTION_COUNT - 1
        )));
    }
    Ok(ACTION_STEP * index as f64)
}

/// The ordered 13-value action set {0, 0.25, ..., 3.0}.
pub fn action_values() -> [f64; ACTION_COUNT] {
    std::array::from_fn(|i| ACTION_STEP * i as f64)
}

/// Five-component policy observation, each clamped to [0, 1].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StateFeatures {
    /// Fraction of reverse steps already spent.
    pub step_ratio: f64,
    /// Fraction of generation positions still masked.
    pub mask_ratio: f64,
    /// Task-specific progress of the current unmasked text.
    pub task_progress: f64,
    /// Previous guidance scale over `GAMMA_MAX` (0 at the first decision).
    pub prev_gamma_norm: f64,
    /// Mean top softmax probability over currently masked positions
    /// (1.0 when none remain).
    pub mean_confidence: f64,
}

impl StateFeatures {
    pub fn as_array(&self) -> [f64; 5] {
        [
            self.step_ratio,
            self.mask_ratio,
            self.task_progress,
            self.prev_gamma_norm,
            self.mean_confidence,
        ]
    }

    pub fn from_array(v: [f64; 5]) -> Self {
        Self {
            step_ratio: v[0],
            mask_ratio: v[1],
            task_progress: v[2],
            prev_gamma_norm: v[3],
            mean_confidence: v[4],
        }
    }
}

fn clamp01(x: f64) -> f64 {
    x.clamp(0.0, 1.0)
}

/// Summarize a diffusion state for the policy.
///
/// `confidences` holds one entry per currently masked position (any order);
/// `total_steps` is the episode's step budget `K`.
pub fn featurize(
    model: &ToyModel,
    state: &DiffusionState,
    cond: &Condition,
    prev_gamma: f64,
    confidences: &[f64],
    total_steps: usize,
) -> StateFeatures {
    let spent = total_steps.saturating_sub(state.steps_remaining);
    let step_ratio = clamp01(spent as f64 / total_steps.max(1) as f64);
    let mask_ratio = clamp01(state.masked_count() as f64 / state.gen_len().max(1) as f64);
    let task_progress = clamp01(task_progress(model, state, cond));
    let prev_gamma_norm = clamp01(prev_gamma / GAMMA_MAX);
    let mean_confidence = if confidences.is_empty() {
        1.0
    } else {
        clamp01(confidences.iter().sum::<f64>() / confidences.len() as f64)
    };
    StateFeatures { step_ratio, mask_ratio, task_progress, prev_gamma_norm, mean_confidence }
}

/// Task progress on the unmasked portion of the text: keyword coverage
/// fraction, clamped output-length ratio, or a binary target-polarity
/// indicator.
fn task_progress(model: &ToyModel, state: &DiffusionState, cond: &Condition) -> f64 {
    let unmasked: Vec<TokenId> = state
        .tokens
        .iter()
        .zip(&state.masked)
        .filter(|(_, &m)| !m)
        .map(|(&t, _)| t)
        .collect();
    match cond {
        Condition::Keywords { keywords } => {
            if keywords.is_empty() {
                return 1.0;
            }
            let found = keywords.iter().filter(|kw| unmasked.contains(kw)).count();
            found as f64 / keywords.len() as f64
        }
        Condition::LengthWindow { source, .. } => {
            let out = rewards::effective_output(&model.vocab, &unmasked);
            out.len() as f64 / source.len().max(1) as f64
        }
        Condition::TargetPolarity { polarity, .. } => {
            let out = rewards::effective_output(&model.vocab, &unmasked);
            if rewards::sentiment_score(&model.vocab, out, *polarity) > 0.5 {
                1.0
            } else {
                0.0
            }
        }
    }
}

/// Expand per-block actions into per-step scales: step `k` (1-based, in
/// execution order) uses block `ceil(k / n)`; the final block truncates to
/// fit `total_steps`.
pub fn repeat_actions(block_actions: &[f64], n: usize, total_steps: usize) -> Result<Vec<f64>> {
    if n == 0 {
        return Err(Error::ContractViolation("action repetition n must be >= 1".into()));
    }
    let m = total_steps.div_ceil(n);
    if block_actions.len() != m {
        return Err(Error::ContractViolation(format!(
            "expected {} block actions for K={} n={}, got {}",
            m,
            total_steps,
            n,
            block_actions.len()
        )));
    }
    Ok((0..total_steps).map(|step| block_actions[step / n]).collect())
}

/// Environment configuration: sampler geometry, action repetition and the
/// reward definition.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EnvConfig {
    pub sampler: SamplerConfig,
    /// Action repetition factor `n` (one decision per `n` reverse steps).
    pub action_repeat: usize,
    pub task: TaskKind,
    pub weights: RewardWeights,
}

impl EnvConfig {
    pub fn new(
        sampler: SamplerConfig,
        action_repeat: usize,
        task: TaskKind,
        weights: RewardWeights,
    ) -> Result<Self> {
        let cfg = Self { sampler, action_repeat, task, weights };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        self.sampler.validate()?;
        self.weights.validate()?;
        if self.action_repeat == 0 {
            return Err(Error::InvalidConfig("action_repeat must be >= 1".into()));
        }
        Ok(())
    }

    /// Number of decision blocks `m = ceil(K / n)`.
    pub fn decisions(&self) -> usize {
        self.sampler.total_steps.div_ceil(self.action_repeat)
    }
}

/// One decision made by a guidance policy.
#[derive(Debug, Clone, Copy)]
pub struct Decision {
    pub action: usize,
    /// Log-probability of `action` under the policy (not the sampling
    /// temperature's distribution).
    pub log_prob: f64,
    /// Critic value estimate of the observed state.
    pub value: f64,
}

/// A guidance policy queried once per decision block.
pub trait GammaPolicy {
    fn decide(&self, features: &StateFeatures, rng: &mut ChaCha8Rng) -> Result<Decision>;
}

/// Per-block rollout record.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BlockRecord {
    pub features: StateFeatures,
    pub action: usize,
    pub gamma: f64,
    pub log_prob: f64,
    pub value: f64,
    /// Zero everywhere except the final block, which carries the terminal
    /// reward.
    pub reward: f64,
}

/// One complete episode: exactly `m` block records plus the terminal
/// breakdown and output.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EpisodeRecord {
    pub blocks: Vec<BlockRecord>,
    pub final_tokens: Vec<TokenId>,
    pub breakdown: RewardBreakdown,
}

impl EpisodeRecord {
    pub fn terminal_reward(&self) -> f64 {
        self.breakdown.total
    }

    pub fn block_rewards(&self) -> Vec<f64> {
        self.blocks.iter().map(|b| b.reward).collect()
    }

    pub fn block_values(&self) -> Vec<f64> {
        self.blocks.iter().map(|b| b.value).collect()
    }

    pub fn to_json_line(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }
}

/// Run one policy-driven episode.
///
/// For each of the `m` decision blocks: featurize the current state, query
/// the policy, convert the action to a guidance scale and advance the
/// sampler by `n` reverse steps (fewer once the sequence completes; later
/// blocks still record decisions so every episode has exactly `m` entries).
/// The terminal reward is computed once, on the completed output.
pub fn rollout(
    model: &ToyModel,
    cond: &Condition,
    config: &EnvConfig,
    policy: &impl GammaPolicy,
    rng: &mut ChaCha8Rng,
) -> Result<EpisodeRecord> {
    config.validate()?;
    let total_steps = config.sampler.total_steps;
    let mut state =
        DiffusionState::fully_masked(config.sampler.gen_len, model.vocab.mask_id, total_steps);
    let mut blocks = Vec::with_capacity(config.decisions());
    let mut prev_gamma = 0.0;

    for _ in 0..config.decisions() {
        let confidences = masked_confidences(model, &state, cond)?;
        let features = featurize(model, &state, cond, prev_gamma, &confidences, total_steps);
        let decision = policy.decide(&features, rng)?;
        let gamma = action_to_gamma(decision.action)?;
        for _ in 0..config.action_repeat {
            if state.is_complete() || state.steps_remaining == 0 {
                break;
            }
            sampler::reverse_step(model, &mut state, gamma, cond, &config.sampler)?;
        }
        blocks.push(BlockRecord {
            features,
            action: decision.action,
            gamma,
            log_prob: decision.log_prob,
            value: decision.value,
            reward: 0.0,
        });
        prev_gamma = gamma;
    }

    if !state.is_complete() {
        return Err(Error::ContractViolation(format!(
            "episode ended with {} masked positions",
            state.masked_count()
        )));
    }
    let breakdown =
        rewards::terminal_reward(model, config.task, &state.tokens, cond, &config.weights)?;
    blocks.last_mut().expect("m >= 1").reward = breakdown.total;
    Ok(EpisodeRecord { blocks, final_tokens: state.tokens, breakdown })
}

/// Top softmax probability of the conditional prediction at every masked
/// position, used for the confidence feature.
fn masked_confidences(
    model: &ToyModel,
    state: &DiffusionState,
    cond: &Condition,
) -> Result<Vec<f64>> {
    let mut out = Vec::new();
    for pos in state.gen_range.0..state.gen_range.1 {
        if state.masked[pos] {
            let probs = sampler::softmax(&model.cond_logits(state, pos, cond)?);
            let top = probs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            out.push(top);
        }
    }
    Ok(out)
}

/// Replay a deterministic schedule (no policy involved) and score it.
pub fn run_schedule(
    model: &ToyModel,
    cond: &Condition,
    config: &EnvConfig,
    schedule: &GuidanceSchedule,
) -> Result<(Vec<TokenId>, RewardBreakdown)> {
    let gammas = schedule.per_step()?;
    if gammas.len() != config.sampler.total_steps {
        return Err(Error::ContractViolation(format!(
            "schedule covers {} steps but sampler needs {}",
            gammas.len(),
            config.sampler.total_steps
        )));
    }
    let (tokens, _) = sampler::generate(model, cond, &gammas, &config.sampler)?;
    let breakdown = rewards::terminal_reward(model, config.task, &tokens, cond, &config.weights)?;
    Ok((tokens, breakdown))
}

/// Draw a task instance (condition) for training or evaluation.
pub fn sample_condition(
    model: &ToyModel,
    task: TaskKind,
    params: &TaskParams,
    rng: &mut ChaCha8Rng,
) -> Result<Condition> {
    match task {
        TaskKind::Keyword => {
            let ordinary: Vec<TokenId> = model.vocab.ordinary().collect();
            let count = params.keyword_count.min(ordinary.len());
            let mut keywords = std::collections::BTreeSet::new();
            while keywords.len() < count {
                keywords.insert(ordinary[rng.gen_range(0..ordinary.len())]);
            }
            Condition::keywords(keywords)
        }
        TaskKind::LengthControl => {
            let len = sample_source_len(params, rng);
            let source = model.sample_source(len, rng);
            Condition::length_window(params.length_window.0, params.length_window.1, source)
        }
        TaskKind::NegToPos => {
            let len = sample_source_len(params, rng);
            let source = model.sample_source(len, rng);
            Condition::target_polarity(Polarity::Positive, source)
        }
        TaskKind::PosToNeg => {
            let len = sample_source_len(params, rng);
            let source = model.sample_source(len, rng);
            Condition::target_polarity(Polarity::Negative, source)
        }
    }
}

fn sample_source_len(params: &TaskParams, rng: &mut ChaCha8Rng) -> usize {
    let (lo, hi) = params.source_len;
    if lo >= hi {
        lo
    } else {
        rng.gen_range(lo..=hi)
    }
}

/// Task-instance sampling knobs.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TaskParams {
    /// Keywords per instance (keyword task).
    pub keyword_count: usize,
    /// Output-length window as fractions of the source length.
    pub length_window: (f64, f64),
    /// Source length range, inclusive (length and sentiment tasks).
    pub source_len: (usize, usize),
}

impl Default for TaskParams {
    fn default() -> Self {
        Self { keyword_count: 8, length_window: (0.4, 0.8), source_len: (18, 24) }
    }
}
