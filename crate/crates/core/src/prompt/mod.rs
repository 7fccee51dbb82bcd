//! Learnable-prompt variants and the training loop that optimizes only the
//! prompt against a frozen backend, plus checkpoint persistence.

mod checkpoint;
mod optim;
mod params;
mod train;

pub use checkpoint::{persist, restore, restore_for_backend, CheckpointError};
pub use optim::{Optimizer, OptimizerKind};
pub use params::{PrefixParams, PromptGrad, PromptMethod, PromptParams, ReparamMlp, SoftPrompt};
pub use train::{
    history_to_jsonl, tune, tune_with_eval, Checkpoint, History, HistoryEntry, TrainExample,
    TuneError, CHECKPOINT_FORMAT_VERSION,
};

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::lm::{BackendError, LmBackend};

#[derive(Debug, Error)]
pub enum PromptError {
    #[error("verbalizer word {0:?} does not tokenize to a known token")]
    UnknownVerbalizerWord(String),
    #[error("{0} verbalizer words exceed prompt length {1}")]
    VerbalizerTooLong(usize, usize),
    #[error("backend without an embedding table cannot seed class-label rows")]
    NoEmbeddingTable,
    #[error(transparent)]
    Backend(#[from] BackendError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Duration {
    Steps(usize),
    Epochs(usize),
}

/// Optimization settings for one tuning run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TuneConfig {
    pub method: PromptMethod,
    pub optimizer: OptimizerKind,
    pub lr: f64,
    pub duration: Duration,
    pub warmup_steps: usize,
    pub batch_size: usize,
    pub grad_accum: usize,
    pub seed: u64,
    pub prompt_len: usize,
    /// Reparameterize prefixes through an MLP during training.
    pub reparam: bool,
    /// Hidden width of the reparameterization MLP; defaults to d_model.
    pub reparam_hidden: Option<usize>,
    pub log_every: usize,
    /// Global-norm gradient clip.
    pub grad_clip: f64,
    pub weight_decay: f64,
    /// Range of the uniform initialization for non-verbalizer rows.
    pub init_range: f64,
}

impl TuneConfig {
    /// Classification defaults: soft prompts, aggressive factored-optimizer
    /// schedule, 2000 steps with 100 warmup at effective batch 32.
    pub fn task1_defaults() -> Self {
        TuneConfig {
            method: PromptMethod::Soft,
            optimizer: OptimizerKind::Adafactor,
            lr: 0.3,
            duration: Duration::Steps(2000),
            warmup_steps: 100,
            batch_size: 8,
            grad_accum: 4,
            seed: 0,
            prompt_len: 20,
            reparam: false,
            reparam_hidden: None,
            log_every: 1,
            grad_clip: 1.0,
            weight_decay: 0.0,
            init_range: 0.5,
        }
    }

    /// Generation-task defaults: per-layer prefixes, 5 epochs at lr 5e-5.
    pub fn task23_defaults() -> Self {
        TuneConfig {
            method: PromptMethod::Prefix,
            optimizer: OptimizerKind::AdamW,
            lr: 5e-5,
            duration: Duration::Epochs(5),
            warmup_steps: 0,
            batch_size: 8,
            grad_accum: 1,
            seed: 0,
            prompt_len: 20,
            reparam: true,
            reparam_hidden: None,
            log_every: 1,
            grad_clip: 1.0,
            weight_decay: 0.0,
            init_range: 0.5,
        }
    }

    /// Total optimizer steps for a dataset of `n` examples.
    pub fn total_steps(&self, n: usize) -> usize {
        let per_step = (self.batch_size * self.grad_accum).max(1);
        match self.duration {
            Duration::Steps(s) => s,
            Duration::Epochs(e) => e * n.div_ceil(per_step),
        }
    }
}

/// Builds seeded, reproducible prompt parameters shaped for `backend`.
///
/// For soft prompts with verbalizer words, the leading rows start at the
/// backend embeddings of those words.
pub fn init_prompt(
    cfg: &TuneConfig,
    backend: &dyn LmBackend,
    verbalizer_words: Option<&[String]>,
) -> Result<PromptParams, PromptError> {
    let desc = backend.descriptor();
    let d = desc.d_model;
    let p = cfg.prompt_len;
    let mut rng = ChaCha20Rng::seed_from_u64(cfg.seed);

    match cfg.method {
        PromptMethod::Soft => {
            let mut embeddings = Array2::from_shape_fn((p, d), |_| {
                rng.gen_range(-cfg.init_range..cfg.init_range) as f32
            });
            if let Some(words) = verbalizer_words {
                if words.len() > p {
                    return Err(PromptError::VerbalizerTooLong(words.len(), p));
                }
                for (row, word) in words.iter().enumerate() {
                    let seq = backend.encode(word)?;
                    let first = seq
                        .ids
                        .first()
                        .copied()
                        .filter(|&id| id != crate::lm::UNK)
                        .ok_or_else(|| PromptError::UnknownVerbalizerWord(word.clone()))?;
                    let emb = backend
                        .token_embedding(first)
                        .ok_or(PromptError::NoEmbeddingTable)?;
                    for (col, v) in emb.iter().enumerate() {
                        embeddings[[row, col]] = *v;
                    }
                }
            }
            Ok(PromptParams::Soft(SoftPrompt { embeddings }))
        }
        PromptMethod::Prefix => {
            let layers = desc.num_layers;
            let kv_len = layers * 2 * p * d;
            if !cfg.reparam {
                let mut kv = vec![0.0f32; kv_len];
                for v in &mut kv {
                    *v = rng.gen_range(-cfg.init_range..cfg.init_range) as f32;
                }
                return Ok(PromptParams::Prefix(PrefixParams {
                    num_layers: layers,
                    prefix_len: p,
                    d_model: d,
                    kv,
                    reparam: None,
                }));
            }
            let hidden = cfg.reparam_hidden.unwrap_or(d);
            let out_width = layers * 2 * d;
            let scale1 = (1.0 / d as f64).sqrt();
            let scale2 = (1.0 / hidden as f64).sqrt();
            let mlp = ReparamMlp {
                base: Array2::from_shape_fn((p, d), |_| {
                    rng.gen_range(-cfg.init_range..cfg.init_range) as f32
                }),
                w1: Array2::from_shape_fn((d, hidden), |_| rng.gen_range(-scale1..scale1) as f32),
                b1: Array2::zeros((1, hidden)),
                w2: Array2::from_shape_fn((hidden, out_width), |_| {
                    rng.gen_range(-scale2..scale2) as f32
                }),
                b2: Array2::zeros((1, out_width)),
            };
            Ok(PromptParams::Prefix(PrefixParams {
                num_layers: layers,
                prefix_len: p,
                d_model: d,
                kv: vec![0.0; kv_len],
                reparam: Some(mlp),
            }))
        }
    }
}
