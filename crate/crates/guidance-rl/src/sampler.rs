//! Forward masking process and the reverse diffusion loop.
//!
//! The reverse loop uses CFG-combined logits, greedy (temperature 0)
//! decoding, low-confidence remasking — only the highest-confidence
//! predictions of a step are committed, the rest stay masked — and
//! semi-autoregressive blocks filled left to right.

use ndarray::Array1;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::toy_dlm::{Condition, TokenId, ToyModel, Vocabulary};
use crate::{Error, Result};

/// Partially masked token sequence with step and block bookkeeping.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiffusionState {
    pub tokens: Vec<TokenId>,
    pub masked: Vec<bool>,
    /// Reverse steps still available; counts down from the configured total
    /// to 0.
    pub steps_remaining: usize,
    /// Active semi-autoregressive block (advanced left to right).
    pub block_index: usize,
    /// Half-open position range subject to generation; positions outside it
    /// are never masked.
    pub gen_range: (usize, usize),
}

impl DiffusionState {
    /// Fully masked generation region of length `len`, the initial state of
    /// the reverse process.
    pub fn fully_masked(len: usize, mask_id: TokenId, total_steps: usize) -> Self {
        Self {
            tokens: vec![mask_id; len],
            masked: vec![true; len],
            steps_remaining: total_steps,
            block_index: 0,
            gen_range: (0, len),
        }
    }

    pub fn gen_len(&self) -> usize {
        self.gen_range.1 - self.gen_range.0
    }

    pub fn masked_count(&self) -> usize {
        self.masked.iter().filter(|&&m| m).count()
    }

    pub fn is_complete(&self) -> bool {
        self.masked_count() == 0
    }

    /// Positions of the block `index` under `config`'s block geometry.
    pub fn block_span(&self, config: &SamplerConfig, index: usize) -> (usize, usize) {
        let start = self.gen_range.0 + index * config.block_length;
        let end = (start + config.block_length).min(self.gen_range.1);
        (start, end)
    }

    fn masked_positions_in(&self, span: (usize, usize)) -> Vec<usize> {
        (span.0..span.1).filter(|&p| self.masked[p]).collect()
    }

    /// Advance `block_index` past completed blocks. Returns the masked
    /// positions of the active block, or an empty vector when generation is
    /// complete.
    fn advance_block(&mut self, config: &SamplerConfig) -> Vec<usize> {
        let blocks = config.num_blocks();
        while self.block_index < blocks {
            let span = self.block_span(config, self.block_index);
            let masked = self.masked_positions_in(span);
            if !masked.is_empty() {
                return masked;
            }
            self.block_index += 1;
        }
        Vec::new()
    }
}

/// Reverse-process discretization and block geometry.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SamplerConfig {
    /// Total reverse steps `K`.
    pub total_steps: usize,
    /// Generation length `L`.
    pub gen_len: usize,
    /// Positions per semi-autoregressive block.
    pub block_length: usize,
    /// Positions committed per reverse step (the final step of a block
    /// commits whatever remains).
    pub unmask_per_step: usize,
}

impl SamplerConfig {
    /// `unmask_per_step` defaults to `ceil(L / K)`.
    pub fn new(total_steps: usize, gen_len: usize, block_length: usize) -> Result<Self> {
        let unmask = if total_steps == 0 { 1 } else { gen_len.div_ceil(total_steps).max(1) };
        Self { total_steps, gen_len, block_length, unmask_per_step: unmask }.validated()
    }

    pub fn with_unmask_per_step(mut self, unmask_per_step: usize) -> Result<Self> {
        self.unmask_per_step = unmask_per_step;
        self.validated()
    }

    fn validated(self) -> Result<Self> {
        self.validate()?;
        Ok(self)
    }

    pub fn validate(&self) -> Result<()> {
        if self.total_steps == 0 {
            return Err(Error::InvalidConfig("total_steps must be >= 1".into()));
        }
        if self.gen_len == 0 {
            return Err(Error::InvalidConfig("gen_len must be >= 1".into()));
        }
        if self.block_length == 0 || self.block_length > self.gen_len {
            return Err(Error::InvalidConfig(format!(
                "block_length {} outside [1, {}]",
                self.block_length, self.gen_len
            )));
        }
        if self.unmask_per_step == 0 {
            return Err(Error::InvalidConfig("unmask_per_step must be >= 1".into()));
        }
        let needed = self.steps_needed();
        if needed > self.total_steps {
            return Err(Error::InvalidConfig(format!(
                "step budget too small: blocks need {} reverse steps but total_steps = {}",
                needed, self.total_steps
            )));
        }
        Ok(())
    }

    pub fn num_blocks(&self) -> usize {
        self.gen_len.div_ceil(self.block_length)
    }

    /// Reverse steps actually required to fill every block.
    pub fn steps_needed(&self) -> usize {
        let full_blocks = self.gen_len / self.block_length;
        let tail = self.gen_len % self.block_length;
        let mut steps = full_blocks * self.block_length.div_ceil(self.unmask_per_step);
        if tail > 0 {
            steps += tail.div_ceil(self.unmask_per_step);
        }
        steps
    }
}

/// Forward masking: each position of `x0` independently becomes the mask
/// token with probability `t`.
pub fn forward_mask(
    vocab: &Vocabulary,
    x0: &[TokenId],
    t: f64,
    rng: &mut ChaCha8Rng,
) -> Result<DiffusionState> {
    if !(0.0..=1.0).contains(&t) {
        return Err(Error::InvalidInput(format!("noise level t={t} outside [0, 1]")));
    }
    if x0.iter().any(|&tok| tok == vocab.mask_id) {
        return Err(Error::InvalidInput("forward_mask input already contains masks".into()));
    }
    let mut tokens = x0.to_vec();
    let mut masked = vec![false; x0.len()];
    for i in 0..x0.len() {
        if rng.gen::<f64>() < t {
            tokens[i] = vocab.mask_id;
            masked[i] = true;
        }
    }
    Ok(DiffusionState {
        tokens,
        masked,
        steps_remaining: 0,
        block_index: 0,
        gen_range: (0, x0.len()),
    })
}

/// Guided logits: `l_uncond + (1 + gamma) * (l_cond - l_uncond)`, evaluated
/// in the algebraically equal form `l_cond + gamma * (l_cond - l_uncond)` so
/// that `gamma = 0` reproduces the conditional logits bit-exactly. Entries
/// where the two inputs agree (including matching `-inf` pairs) pass through
/// unchanged.
pub fn cfg_combine(
    l_uncond: &Array1<f64>,
    l_cond: &Array1<f64>,
    gamma: f64,
) -> Result<Array1<f64>> {
    if l_uncond.len() != l_cond.len() {
        return Err(Error::ContractViolation(format!(
            "logit length mismatch: {} vs {}",
            l_uncond.len(),
            l_cond.len()
        )));
    }
    if gamma < 0.0 {
        return Err(Error::InvalidInput(format!("guidance scale {gamma} negative")));
    }
    let mut out = Array1::<f64>::zeros(l_cond.len());
    for i in 0..l_cond.len() {
        let (u, c) = (l_uncond[i], l_cond[i]);
        out[i] = if u == c { c } else { c + gamma * (c - u) };
    }
    Ok(out)
}

/// Numerically stable softmax; `-inf` logits map to probability zero.
pub fn softmax(logits: &Array1<f64>) -> Array1<f64> {
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut out = logits.mapv(|x| (x - max).exp());
    let sum = out.sum();
    out.mapv_inplace(|x| x / sum);
    out
}

/// One committed prediction of a reverse step.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct Commit {
    pub position: usize,
    pub token: TokenId,
    pub confidence: f64,
}

/// Summary of a single reverse step.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StepOutcome {
    pub commits: Vec<Commit>,
    /// Mean top-probability over all masked positions considered this step.
    pub mean_confidence: f64,
}

/// One reverse diffusion step on the active block.
///
/// Computes guided logits at every masked position of the active block,
/// takes the argmax token and its softmax probability as confidence, and
/// commits the `unmask_per_step` highest-confidence positions (all remaining
/// if fewer). Confidence ties break toward the lower position index.
pub fn reverse_step(
    model: &ToyModel,
    state: &mut DiffusionState,
    gamma: f64,
    cond: &Condition,
    config: &SamplerConfig,
) -> Result<StepOutcome> {
    if state.steps_remaining == 0 {
        return Err(Error::ContractViolation("reverse_step with no steps remaining".into()));
    }
    let masked = state.advance_block(config);
    if masked.is_empty() {
        return Err(Error::ContractViolation(
            "reverse_step on a fully unmasked sequence".into(),
        ));
    }

    let mut candidates = Vec::with_capacity(masked.len());
    for &pos in &masked {
        let l_uncond = model.uncond_logits(state, pos)?;
        let l_cond = model.cond_logits(state, pos, cond)?;
        let guided = cfg_combine(&l_uncond, &l_cond, gamma)?;
        let probs = softmax(&guided);
        let (token, confidence) = argmax(&probs);
        candidates.push(Commit { position: pos, token, confidence });
    }
    let mean_confidence =
        candidates.iter().map(|c| c.confidence).sum::<f64>() / candidates.len() as f64;

    candidates.sort_by(|a, b| {
        b.confidence
            .partial_cmp(&a.confidence)
            .expect("confidences are finite")
            .then(a.position.cmp(&b.position))
    });
    let take = config.unmask_per_step.min(candidates.len());
    let commits: Vec<Commit> = candidates.into_iter().take(take).collect();
    for c in &commits {
        state.tokens[c.position] = c.token;
        state.masked[c.position] = false;
    }
    state.steps_remaining -= 1;
    Ok(StepOutcome { commits, mean_confidence })
}

fn argmax(probs: &Array1<f64>) -> (usize, f64) {
    let mut best = 0;
    for i in 1..probs.len() {
        if probs[i] > probs[best] {
            best = i;
        }
    }
    (best, probs[best])
}

/// Per-step trajectory log record.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StepLog {
    /// Steps remaining after this step (counts down to 0).
    pub k: usize,
    pub gamma: f64,
    /// Masked positions remaining after this step.
    pub masked_remaining: usize,
    pub mean_confidence: f64,
}

/// Run the full reverse process from an all-masked state.
///
/// `gammas` supplies one guidance scale per step in execution order and must
/// cover the configured step budget. Blocks fill sequentially left to right;
/// the loop stops as soon as every position is committed, which the config
/// validation guarantees happens within the budget.
pub fn generate(
    model: &ToyModel,
    cond: &Condition,
    gammas: &[f64],
    config: &SamplerConfig,
) -> Result<(Vec<TokenId>, Vec<StepLog>)> {
    config.validate()?;
    if gammas.len() != config.total_steps {
        return Err(Error::InvalidInput(format!(
            "gamma schedule has {} entries, expected one per step ({})",
            gammas.len(),
            config.total_steps
        )));
    }
    let mut state = DiffusionState::fully_masked(
        config.gen_len,
        model.vocab.mask_id,
        config.total_steps,
    );
    let mut logs = Vec::new();
    for &gamma in gammas {
        if state.is_complete() {
            break;
        }
        let outcome = reverse_step(model, &mut state, gamma, cond, config)?;
        logs.push(StepLog {
            k: state.steps_remaining,
            gamma,
            masked_remaining: state.masked_count(),
            mean_confidence: outcome.mean_confidence,
        });
    }
    debug_assert!(state.is_complete());
    Ok((state.tokens, logs))
}

/// Serialize step logs as JSON lines (one record per step).
pub fn step_logs_to_jsonl(logs: &[StepLog]) -> Result<String> {
    let mut out = String::new();
    for log in logs {
        out.push_str(&serde_json::to_string(log)?);
        out.push('\n');
    }
    Ok(out)
}
