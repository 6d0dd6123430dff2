//! Seeded synthetic conditional mask predictor.
//!
//! Stands in for a pretrained masked diffusion language model: a smoothed
//! bigram/unigram mixture over a small token vocabulary, generated
//! deterministically from a seed. It exposes exactly the two logit functions
//! CFG needs — conditional and unconditional token log-probabilities at a
//! masked position — plus a reference fluency model (`sequence_perplexity`).
//!
//! Conditioning is implemented as additive logit boosts rather than a prompt
//! prefix, which keeps the conditional/unconditional pair explicit:
//!
//! - keywords: boost required tokens that are not yet present in the
//!   unmasked text,
//! - target polarity: boost tokens of the target polarity and suppress the
//!   opposite polarity,
//! - length window: boost/suppress the end-of-sequence token depending on
//!   whether the position falls inside the target output-length window.
//!
//! The model never predicts the mask token (its logit is `-inf`).

use std::collections::BTreeSet;
use std::path::Path;

use ndarray::{Array1, Array2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::sampler::DiffusionState;
use crate::{Error, Result};

pub type TokenId = usize;

/// Additive smoothing applied to raw bigram weights before normalization.
/// Small, so rows keep strong contrast (structured context).
const BIGRAM_SMOOTHING: f64 = 0.01;
/// Bigram weights are drawn as `u^4`: each context prefers a few successors
/// strongly, so committing a token without knowing its context carries a
/// multi-nat likelihood penalty.
const BIGRAM_SKEW: i32 = 4;
/// Additive smoothing for the unigram (start / no-context fallback).
/// Flatter than the bigram rows, so positions with a revealed left neighbor
/// decode with higher confidence than blind ones and placing a token without
/// context carries a real fluency cost.
const UNIGRAM_SMOOTHING: f64 = 0.5;

/// Minimum supported vocabulary size (two reserved ids plus a few real ones).
pub const MIN_VOCAB_SIZE: usize = 8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Polarity {
    Positive,
    Negative,
    Neutral,
}

impl Polarity {
    pub fn opposite(self) -> Polarity {
        match self {
            Polarity::Positive => Polarity::Negative,
            Polarity::Negative => Polarity::Positive,
            Polarity::Neutral => Polarity::Neutral,
        }
    }
}

/// Token alphabet with two reserved ids (mask, end-of-sequence) and a fixed
/// polarity label for every ordinary token.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Vocabulary {
    pub size: usize,
    pub mask_id: TokenId,
    pub eos_id: TokenId,
    polarity: Vec<Polarity>,
}

impl Vocabulary {
    /// The two highest ids are reserved: `size-1` is the mask, `size-2` the
    /// end-of-sequence marker. Ordinary tokens cycle positive / negative /
    /// neutral by id, so polarity classes are balanced and easy to reason
    /// about in tests.
    pub fn new(size: usize) -> Result<Self> {
        if size < MIN_VOCAB_SIZE {
            return Err(Error::InvalidConfig(format!(
                "vocab size {size} below minimum {MIN_VOCAB_SIZE}"
            )));
        }
        let mask_id = size - 1;
        let eos_id = size - 2;
        let polarity = (0..size)
            .map(|id| {
                if id >= eos_id {
                    Polarity::Neutral
                } else {
                    match id % 3 {
                        0 => Polarity::Positive,
                        1 => Polarity::Negative,
                        _ => Polarity::Neutral,
                    }
                }
            })
            .collect();
        Ok(Self { size, mask_id, eos_id, polarity })
    }

    pub fn polarity(&self, id: TokenId) -> Polarity {
        self.polarity[id]
    }

    pub fn is_reserved(&self, id: TokenId) -> bool {
        id == self.mask_id || id == self.eos_id
    }

    /// Number of tokens the mask predictor can emit (everything but mask).
    pub fn predictable(&self) -> usize {
        self.size - 1
    }

    /// Ordinary (non-reserved) token ids.
    pub fn ordinary(&self) -> impl Iterator<Item = TokenId> + '_ {
        (0..self.size).filter(|&id| !self.is_reserved(id))
    }
}

/// The condition `c` supplied to the conditional branch of the predictor.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Condition {
    Keywords {
        keywords: BTreeSet<TokenId>,
    },
    LengthWindow {
        lo_fraction: f64,
        hi_fraction: f64,
        source: Vec<TokenId>,
    },
    TargetPolarity {
        polarity: Polarity,
        source: Vec<TokenId>,
    },
}

impl Condition {
    pub fn keywords(keywords: BTreeSet<TokenId>) -> Result<Self> {
        if keywords.is_empty() {
            return Err(Error::InvalidInput("keyword set must be nonempty".into()));
        }
        Ok(Condition::Keywords { keywords })
    }

    pub fn length_window(lo: f64, hi: f64, source: Vec<TokenId>) -> Result<Self> {
        if !(lo > 0.0 && lo <= hi && hi <= 1.0) {
            return Err(Error::InvalidInput(format!(
                "length window must satisfy 0 < lo <= hi <= 1, got ({lo}, {hi})"
            )));
        }
        Ok(Condition::LengthWindow { lo_fraction: lo, hi_fraction: hi, source })
    }

    pub fn target_polarity(polarity: Polarity, source: Vec<TokenId>) -> Result<Self> {
        if polarity == Polarity::Neutral {
            return Err(Error::InvalidInput("target polarity must be positive or negative".into()));
        }
        Ok(Condition::TargetPolarity { polarity, source })
    }

    pub fn source(&self) -> Option<&[TokenId]> {
        match self {
            Condition::Keywords { .. } => None,
            Condition::LengthWindow { source, .. } | Condition::TargetPolarity { source, .. } => {
                Some(source)
            }
        }
    }
}

/// Inclusive output-length window `[ceil(lo*src), floor(hi*src)]` in tokens.
///
/// Computed with a tiny guard so that e.g. `0.4 * 20` lands on 8 rather than
/// 9 despite floating-point representation of the fractions.
pub fn length_window_bounds(src_len: usize, lo_fraction: f64, hi_fraction: f64) -> (usize, usize) {
    let guard = 1e-9;
    let lo = (lo_fraction * src_len as f64 - guard).ceil().max(0.0) as usize;
    let hi = (hi_fraction * src_len as f64 + guard).floor().max(0.0) as usize;
    (lo, hi)
}

/// Seeded synthetic mask predictor: unconditional next-token structure from
/// a smoothed bigram/unigram mixture, conditional structure from additive
/// logit boosts.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ToyModel {
    pub vocab: Vocabulary,
    /// Row-stochastic successor table; `bigram[(prev, next)]`. Mass only on
    /// non-mask successors.
    pub bigram: Array2<f64>,
    /// Start / no-context distribution over non-mask tokens.
    pub unigram: Array1<f64>,
    /// Mixture weight of the bigram branch when a left neighbor is known.
    pub mix_alpha: f64,
    /// Additive conditional logit boost.
    pub boost_delta: f64,
    pub seed: u64,
}

/// Build a [`ToyModel`] from a seed with default mixing and boost constants.
pub fn build_model(seed: u64, vocab_size: usize) -> Result<ToyModel> {
    ToyModel::build(seed, vocab_size)
}

impl ToyModel {
    pub const DEFAULT_MIX_ALPHA: f64 = 0.7;
    pub const DEFAULT_BOOST_DELTA: f64 = 2.0;

    /// Generate the tables from `seed`: positive weights drawn uniformly,
    /// smoothed additively and normalized. Identical seed and size yield
    /// bit-identical tables.
    pub fn build(seed: u64, vocab_size: usize) -> Result<Self> {
        let vocab = Vocabulary::new(vocab_size)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = vocab.size;
        let mask = vocab.mask_id;

        let mut unigram = Array1::<f64>::zeros(n);
        for id in 0..n {
            if id != mask {
                unigram[id] = rng.gen::<f64>() + UNIGRAM_SMOOTHING;
            }
        }
        let total: f64 = unigram.sum();
        unigram.mapv_inplace(|w| w / total);

        let mut bigram = Array2::<f64>::zeros((n, n));
        for prev in 0..n {
            let mut row_sum = 0.0;
            for next in 0..n {
                if next != mask {
                    let w = rng.gen::<f64>().powi(BIGRAM_SKEW) + BIGRAM_SMOOTHING;
                    bigram[(prev, next)] = w;
                    row_sum += w;
                }
            }
            for next in 0..n {
                bigram[(prev, next)] /= row_sum;
            }
        }

        Ok(Self {
            vocab,
            bigram,
            unigram,
            mix_alpha: Self::DEFAULT_MIX_ALPHA,
            boost_delta: Self::DEFAULT_BOOST_DELTA,
            seed,
        })
    }

    pub fn with_mix_alpha(mut self, mix_alpha: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&mix_alpha) {
            return Err(Error::InvalidConfig(format!("mix_alpha {mix_alpha} outside [0, 1]")));
        }
        self.mix_alpha = mix_alpha;
        Ok(self)
    }

    pub fn with_boost_delta(mut self, boost_delta: f64) -> Result<Self> {
        if boost_delta < 0.0 {
            return Err(Error::InvalidConfig(format!("boost_delta {boost_delta} negative")));
        }
        self.boost_delta = boost_delta;
        Ok(self)
    }

    fn check_masked(&self, state: &DiffusionState, position: usize) -> Result<()> {
        if position >= state.tokens.len() {
            return Err(Error::ContractViolation(format!(
                "position {position} out of bounds for length {}",
                state.tokens.len()
            )));
        }
        if !state.masked[position] {
            return Err(Error::ContractViolation(format!(
                "logits requested at unmasked position {position}"
            )));
        }
        Ok(())
    }

    /// Unconditional token log-probabilities at a masked position.
    ///
    /// With an unmasked left neighbor the distribution is the
    /// `mix_alpha * bigram[left] + (1 - mix_alpha) * unigram` mixture;
    /// otherwise (sequence start or masked neighbor) it falls back to the
    /// unigram. The mask token's logit is `-inf`.
    pub fn uncond_logits(&self, state: &DiffusionState, position: usize) -> Result<Array1<f64>> {
        self.check_masked(state, position)?;
        let left = if position == 0 || state.masked[position - 1] {
            None
        } else {
            Some(state.tokens[position - 1])
        };
        let n = self.vocab.size;
        let mut logits = Array1::<f64>::zeros(n);
        for id in 0..n {
            if id == self.vocab.mask_id {
                logits[id] = f64::NEG_INFINITY;
                continue;
            }
            let p = match left {
                Some(prev) => {
                    self.mix_alpha * self.bigram[(prev, id)]
                        + (1.0 - self.mix_alpha) * self.unigram[id]
                }
                None => self.unigram[id],
            };
            logits[id] = p.ln();
        }
        Ok(logits)
    }

    /// Conditional token log-probabilities: unconditional logits plus the
    /// condition's additive boost.
    pub fn cond_logits(
        &self,
        state: &DiffusionState,
        position: usize,
        cond: &Condition,
    ) -> Result<Array1<f64>> {
        let mut logits = self.uncond_logits(state, position)?;
        let delta = self.boost_delta;
        match cond {
            Condition::Keywords { keywords } => {
                let present: BTreeSet<TokenId> = state
                    .tokens
                    .iter()
                    .zip(&state.masked)
                    .filter(|(_, &m)| !m)
                    .map(|(&t, _)| t)
                    .collect();
                for &kw in keywords {
                    if kw < self.vocab.size && !present.contains(&kw) {
                        logits[kw] += delta;
                    }
                }
            }
            Condition::TargetPolarity { polarity, .. } => {
                let opposite = polarity.opposite();
                for id in self.vocab.ordinary() {
                    let p = self.vocab.polarity(id);
                    if p == *polarity {
                        logits[id] += delta;
                    } else if p == opposite {
                        logits[id] -= delta;
                    }
                }
            }
            Condition::LengthWindow { lo_fraction, hi_fraction, source } => {
                let (lo, hi) = length_window_bounds(source.len(), *lo_fraction, *hi_fraction);
                // An eos at relative position r yields an output of r tokens.
                let rel = position - state.gen_range.0;
                if rel >= lo && rel <= hi {
                    logits[self.vocab.eos_id] += delta;
                } else {
                    logits[self.vocab.eos_id] -= delta;
                }
            }
        }
        Ok(logits)
    }

    /// Fluency reference: exp of the mean negative log-likelihood of the
    /// sequence under the unconditional chain (unigram start, bigram
    /// continuation), truncated at the first eos inclusive.
    pub fn sequence_perplexity(&self, tokens: &[TokenId]) -> Result<f64> {
        if tokens.is_empty() {
            return Err(Error::InvalidInput("perplexity of empty sequence".into()));
        }
        if tokens.iter().any(|&t| t == self.vocab.mask_id) {
            return Err(Error::InvalidInput("perplexity input contains mask tokens".into()));
        }
        let end = tokens
            .iter()
            .position(|&t| t == self.vocab.eos_id)
            .map(|i| i + 1)
            .unwrap_or(tokens.len());
        let seq = &tokens[..end];
        let mut nll = -self.unigram[seq[0]].ln();
        for w in seq.windows(2) {
            nll -= self.bigram[(w[0], w[1])].ln();
        }
        Ok((nll / seq.len() as f64).exp())
    }

    /// Chain-sample a sequence of ordinary tokens (no mask, no eos), for use
    /// as task sources.
    pub fn sample_source(&self, len: usize, rng: &mut ChaCha8Rng) -> Vec<TokenId> {
        let mut out = Vec::with_capacity(len);
        for i in 0..len {
            let prev = if i == 0 { None } else { Some(out[i - 1]) };
            out.push(self.sample_ordinary(prev, rng));
        }
        out
    }

    fn sample_ordinary(&self, prev: Option<TokenId>, rng: &mut ChaCha8Rng) -> TokenId {
        let weights: Vec<(TokenId, f64)> = self
            .vocab
            .ordinary()
            .map(|id| {
                let p = match prev {
                    Some(prev) => self.bigram[(prev, id)],
                    None => self.unigram[id],
                };
                (id, p)
            })
            .collect();
        let total: f64 = weights.iter().map(|(_, p)| p).sum();
        let mut u = rng.gen::<f64>() * total;
        for (id, p) in &weights {
            u -= p;
            if u <= 0.0 {
                return *id;
            }
        }
        weights.last().expect("nonempty vocab").0
    }

    /// Serialize to the versioned table file format (JSON).
    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_table_string()?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let file: ModelFile = serde_json::from_str(&text)?;
        if file.format != MODEL_FORMAT {
            return Err(Error::InvalidInput(format!(
                "unexpected model file format {:?}",
                file.format
            )));
        }
        if file.version != MODEL_FORMAT_VERSION {
            return Err(Error::InvalidInput(format!(
                "unsupported model file version {}",
                file.version
            )));
        }
        Ok(file.model)
    }

    /// The canonical serialized form (used for byte-equality checks).
    pub fn to_table_string(&self) -> Result<String> {
        let file = ModelFile {
            format: MODEL_FORMAT.to_string(),
            version: MODEL_FORMAT_VERSION,
            model: self.clone(),
        };
        Ok(serde_json::to_string(&file)?)
    }
}

const MODEL_FORMAT: &str = "toy-dlm-tables";
const MODEL_FORMAT_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct ModelFile {
    format: String,
    version: u32,
    model: ToyModel,
}
