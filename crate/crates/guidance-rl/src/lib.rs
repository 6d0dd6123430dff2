//! Learned dynamic classifier-free-guidance (CFG) schedules for a discrete
//! masked-diffusion text sampler.
//!
//! The crate is organized around a small, fully seeded synthetic language
//! model so that every quantity in the pipeline is cheap to compute and easy
//! to verify:
//!
//! - [`toy_dlm`] — seeded bigram/unigram mask predictor with conditional and
//!   unconditional logits, plus a reference fluency (perplexity) model.
//! - [`sampler`] — forward masking process and the reverse diffusion loop
//!   with CFG-combined logits, greedy decoding and low-confidence remasking.
//! - [`schedules`] — the seven heuristic guidance curves and a grid-search
//!   baseline over schedule candidates.
//! - [`rewards`] — task-specific terminal rewards (keyword coverage, length
//!   window, sentiment transfer) combined with a fluency term.
//! - [`env`] — the MDP wrapper: state featurization, the 13-value discrete
//!   action set, action repetition and episode rollouts.
//! - [`ppo`] — from-scratch actor-critic optimization: MLPs with layer
//!   normalization, exact backpropagation, GAE and clipped surrogate updates.
//! - [`aggregate`] — Monte Carlo distillation of a trained policy into
//!   deterministic schedules (mean and frequency-weighted mean trajectories).
//! - [`harness`] — experiment configuration, training/sweep/eval/ablation
//!   commands and report files.
//!
//! See the `examples/` directory for runnable entry points covering each of
//! these capabilities, and `guidance-rl --help` for the CLI.

pub mod aggregate;
pub mod env;
pub mod error;
pub mod harness;
pub mod ppo;
pub mod rewards;
pub mod sampler;
pub mod schedules;
pub mod toy_dlm;

pub use error::{Error, Result};
