//! Uniform abstraction over frozen language models: tokenization,
//! prompt-injected forward passes, greedy generation, and perplexity
//! scoring. Ships deterministic stub models so every training and
//! gradient contract is checkable without pretrained weights.

mod rule;
mod tiny;
mod tokenizer;

pub use rule::{GenRule, RuleLm};
pub use tiny::{TinyLm, TinyLmConfig};
pub use tokenizer::{Vocab, BOS, EOS, UNK};

use ndarray::Array2;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::metrics::FluencyModel;
use crate::prompt::{PromptGrad, PromptParams};

#[derive(Debug, Error)]
pub enum BackendError {
    #[error("tokenization failed: {0}")]
    Tokenization(String),
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("context overflow: need {needed} positions, model allows {max}")]
    ContextOverflow { needed: usize, max: usize },
    #[error("empty text")]
    EmptyText,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Family {
    EncoderDecoder,
    DecoderOnly,
}

/// Token ids plus per-token `(start, end)` character offsets into the
/// source text. Offsets are half-open, non-overlapping, and increasing.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct TokenSeq {
    pub ids: Vec<u32>,
    pub offsets: Vec<(usize, usize)>,
}

impl TokenSeq {
    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }
}

/// Static description of a frozen backend.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BackendDescriptor {
    pub family: Family,
    pub num_layers: usize,
    pub d_model: usize,
    pub vocab_size: usize,
    pub max_context: usize,
    /// Digest over all base parameters; stable across forward/backward
    /// passes, proving the base stays frozen.
    pub frozen_fingerprint: String,
}

#[derive(Debug, Clone, Copy)]
pub struct DecodeConfig {
    /// Maximum number of generated tokens.
    pub max_len: usize,
}

impl Default for DecodeConfig {
    fn default() -> Self {
        Self { max_len: 64 }
    }
}

#[derive(Debug, Clone)]
pub struct ForwardOutput {
    /// Mean per-token negative log-likelihood of the target.
    pub loss: f64,
    /// Per-target-position vocabulary logits, `[target_len × vocab]`.
    pub logits: Array2<f64>,
}

/// A frozen language model with prompt injection.
///
/// One instance serializes its own forward/generate calls from the caller's
/// point of view; instances are immutable after construction and safe to
/// share across threads.
pub trait LmBackend: Send + Sync {
    fn descriptor(&self) -> &BackendDescriptor;

    fn encode(&self, text: &str) -> Result<TokenSeq, BackendError>;

    fn decode(&self, ids: &[u32]) -> String;

    /// Embedding row for a token, if this backend has an embedding table.
    fn token_embedding(&self, id: u32) -> Option<Vec<f32>>;

    /// Loss and logits of `target` conditioned on the prompt and `input`.
    /// Base parameters are never touched.
    fn forward_with_prompt(
        &self,
        prompt: Option<&PromptParams>,
        input: &TokenSeq,
        target: &TokenSeq,
    ) -> Result<ForwardOutput, BackendError>;

    /// Loss plus gradient with respect to the prompt parameters only.
    fn grad_with_prompt(
        &self,
        prompt: &PromptParams,
        input: &TokenSeq,
        target: &TokenSeq,
    ) -> Result<(f64, PromptGrad), BackendError>;

    /// Greedy decoding; bit-identical output for identical inputs.
    fn generate(
        &self,
        prompt: Option<&PromptParams>,
        input: &TokenSeq,
        cfg: &DecodeConfig,
    ) -> Result<String, BackendError>;

    /// exp(mean per-token negative log-likelihood); at least 1.
    fn score_perplexity(&self, text: &str) -> Result<f64, BackendError>;

    /// Recomputes the base-parameter digest from live weights; equality with
    /// `descriptor().frozen_fingerprint` proves the base was not mutated.
    fn recompute_fingerprint(&self) -> String;
}

impl<T: LmBackend + ?Sized> FluencyModel for T {
    fn token_perplexity(&self, text: &str) -> Result<f64, String> {
        self.score_perplexity(text).map_err(|e| e.to_string())
    }
}
