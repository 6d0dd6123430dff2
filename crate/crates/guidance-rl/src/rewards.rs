//! Task-specific terminal rewards.
//!
//! Every task scores only the completed output: a controllability term, a
//! fluency term derived from the reference perplexity, and (where weighted)
//! a semantic-preservation term, combined linearly. Controllability and
//! semantic terms are evaluated on the tokens before the first eos; the
//! fluency term uses the chain truncated at the first eos inclusive.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::toy_dlm::{length_window_bounds, Condition, Polarity, TokenId, ToyModel, Vocabulary};
use crate::{Error, Result};

/// Logistic sharpness of the toy sentiment classifier.
const SENTIMENT_SHARPNESS: f64 = 6.0;

/// The four controlled-generation tasks.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TaskKind {
    Keyword,
    LengthControl,
    NegToPos,
    PosToNeg,
}

impl TaskKind {
    pub const ALL: [TaskKind; 4] =
        [TaskKind::Keyword, TaskKind::LengthControl, TaskKind::NegToPos, TaskKind::PosToNeg];

    pub fn name(self) -> &'static str {
        match self {
            TaskKind::Keyword => "keyword",
            TaskKind::LengthControl => "length_control",
            TaskKind::NegToPos => "neg_to_pos",
            TaskKind::PosToNeg => "pos_to_neg",
        }
    }
}

/// Linear combination weights plus the perplexity cap.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RewardWeights {
    pub lambda_ctrl: f64,
    pub lambda_ppl: f64,
    pub lambda_semantic: f64,
    pub ppl_max: f64,
}

impl RewardWeights {
    /// Per-task defaults: keyword (0.5, 0.5, 0, 120), length control
    /// (0.45, 0.45, 0.10, 500), neg->pos (0.6, 0.3, 0.1, 300) and pos->neg
    /// (0.3, 0.6, 0.1, 300) — the harder transfer direction weights fluency
    /// higher.
    pub fn for_task(task: TaskKind) -> Self {
        match task {
            TaskKind::Keyword => Self {
                lambda_ctrl: 0.5,
                lambda_ppl: 0.5,
                lambda_semantic: 0.0,
                ppl_max: 120.0,
            },
            TaskKind::LengthControl => Self {
                lambda_ctrl: 0.45,
                lambda_ppl: 0.45,
                lambda_semantic: 0.10,
                ppl_max: 500.0,
            },
            TaskKind::NegToPos => Self {
                lambda_ctrl: 0.6,
                lambda_ppl: 0.3,
                lambda_semantic: 0.1,
                ppl_max: 300.0,
            },
            TaskKind::PosToNeg => Self {
                lambda_ctrl: 0.3,
                lambda_ppl: 0.6,
                lambda_semantic: 0.1,
                ppl_max: 300.0,
            },
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.lambda_ctrl < 0.0 || self.lambda_ppl < 0.0 || self.lambda_semantic < 0.0 {
            return Err(Error::InvalidConfig("reward weights must be non-negative".into()));
        }
        if self.lambda_ctrl + self.lambda_ppl + self.lambda_semantic <= 0.0 {
            return Err(Error::InvalidConfig("at least one reward weight must be > 0".into()));
        }
        if self.ppl_max <= 1.0 {
            return Err(Error::InvalidConfig(format!("ppl_max {} must be > 1", self.ppl_max)));
        }
        Ok(())
    }
}

/// Component rewards and their weighted total.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RewardBreakdown {
    pub r_ctrl: f64,
    pub r_ppl: f64,
    pub r_semantic: f64,
    pub total: f64,
}

/// Fluency reward: `1 - clip((ppl - 1) / (ppl_max - 1), 0, 1)`.
pub fn ppl_reward(ppl: f64, ppl_max: f64) -> Result<f64> {
    if !(ppl >= 1.0) {
        return Err(Error::InvalidInput(format!("perplexity {ppl} below 1")));
    }
    if ppl_max <= 1.0 {
        return Err(Error::InvalidInput(format!("ppl_max {ppl_max} must be > 1")));
    }
    Ok(1.0 - ((ppl - 1.0) / (ppl_max - 1.0)).clamp(0.0, 1.0))
}

/// Strict binary keyword coverage: 1.0 iff every required id appears among
/// `tokens`. An empty requirement is vacuously satisfied.
pub fn keyword_reward(tokens: &[TokenId], keywords: &BTreeSet<TokenId>) -> f64 {
    let present: BTreeSet<TokenId> = tokens.iter().copied().collect();
    if keywords.iter().all(|kw| present.contains(kw)) {
        1.0
    } else {
        0.0
    }
}

/// Length-window reward: 1.0 inside `[ceil(lo*src), floor(hi*src)]`, linear
/// decay with slope `1/src_len` outside, floored at 0.
pub fn length_reward(out_len: usize, src_len: usize, window: (f64, f64)) -> f64 {
    let (lo, hi) = length_window_bounds(src_len, window.0, window.1);
    if out_len >= lo && out_len <= hi {
        return 1.0;
    }
    let nearest = if out_len < lo { lo } else { hi };
    let dist = out_len.abs_diff(nearest) as f64 / src_len as f64;
    (1.0 - dist).max(0.0)
}

/// Jaccard similarity of the distinct ordinary-token supports of output and
/// source; stands in for an embedding similarity.
pub fn semantic_reward(vocab: &Vocabulary, output: &[TokenId], source: &[TokenId]) -> f64 {
    let distinct = |tokens: &[TokenId]| -> BTreeSet<TokenId> {
        tokens.iter().copied().filter(|&t| !vocab.is_reserved(t)).collect()
    };
    let a = distinct(output);
    let b = distinct(source);
    let union = a.union(&b).count();
    if union == 0 {
        return 1.0;
    }
    a.intersection(&b).count() as f64 / union as f64
}

/// Toy sentiment classifier: logistic squash of the signed difference
/// between target- and opposite-polarity fractions (among polarity-labeled
/// tokens). 0.5 when no polarity-labeled tokens are present.
pub fn sentiment_score(vocab: &Vocabulary, tokens: &[TokenId], target: Polarity) -> f64 {
    let opposite = target.opposite();
    let mut n_target = 0usize;
    let mut n_opposite = 0usize;
    for &t in tokens {
        if vocab.is_reserved(t) {
            continue;
        }
        let p = vocab.polarity(t);
        if p == target {
            n_target += 1;
        } else if p == opposite {
            n_opposite += 1;
        }
    }
    let labeled = n_target + n_opposite;
    if labeled == 0 {
        return 0.5;
    }
    let diff = (n_target as f64 - n_opposite as f64) / labeled as f64;
    logistic(SENTIMENT_SHARPNESS * diff)
}

fn logistic(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Output tokens before the first eos.
pub fn effective_output<'a>(vocab: &Vocabulary, tokens: &'a [TokenId]) -> &'a [TokenId] {
    match tokens.iter().position(|&t| t == vocab.eos_id) {
        Some(i) => &tokens[..i],
        None => tokens,
    }
}

/// Terminal reward of a completed episode.
///
/// Dispatches the controllability term by task, derives the fluency term
/// from the reference perplexity, adds the semantic term where weighted, and
/// combines with `weights`.
pub fn terminal_reward(
    model: &ToyModel,
    task: TaskKind,
    tokens: &[TokenId],
    cond: &Condition,
    weights: &RewardWeights,
) -> Result<RewardBreakdown> {
    if tokens.iter().any(|&t| t == model.vocab.mask_id) {
        return Err(Error::ContractViolation(
            "terminal reward requested on a partially masked sequence".into(),
        ));
    }
    weights.validate().map_err(|e| Error::ContractViolation(e.to_string()))?;
    let output = effective_output(&model.vocab, tokens);

    let r_ctrl = match (task, cond) {
        (TaskKind::Keyword, Condition::Keywords { keywords }) => keyword_reward(output, keywords),
        (TaskKind::LengthControl, Condition::LengthWindow { lo_fraction, hi_fraction, source }) => {
            length_reward(output.len(), source.len(), (*lo_fraction, *hi_fraction))
        }
        (TaskKind::NegToPos, Condition::TargetPolarity { polarity, .. })
        | (TaskKind::PosToNeg, Condition::TargetPolarity { polarity, .. }) => {
            sentiment_score(&model.vocab, output, *polarity)
        }
        _ => {
            return Err(Error::ContractViolation(format!(
                "condition does not match task {:?}",
                task
            )))
        }
    };

    let ppl = model.sequence_perplexity(tokens)?;
    let r_ppl = ppl_reward(ppl, weights.ppl_max)?;

    let r_semantic = if weights.lambda_semantic > 0.0 {
        match cond.source() {
            Some(source) => semantic_reward(&model.vocab, output, source),
            None => 0.0,
        }
    } else {
        0.0
    };

    let total = weights.lambda_ctrl * r_ctrl
        + weights.lambda_ppl * r_ppl
        + weights.lambda_semantic * r_semantic;
    Ok(RewardBreakdown { r_ctrl, r_ppl, r_semantic, total })
}
