//! The tuning loop: seeded batching over (input, target) pairs, gradient
//! accumulation, clipping, scheduled optimizer steps, and history logging.
//! Only prompt parameters ever change; the backend stays frozen.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::optim::{clip_global_norm, lr_at, Optimizer};
use super::{PromptParams, TuneConfig};
use crate::lm::{BackendError, LmBackend, TokenSeq};

#[derive(Debug, Error)]
pub enum TuneError {
    #[error("empty dataset")]
    EmptyDataset,
    #[error("non-finite loss {loss} at step {step}")]
    Divergence { step: usize, loss: f64 },
    #[error(transparent)]
    Backend(#[from] BackendError),
}

/// One training pair; classification targets are verbalizer words,
/// generation targets are the rewritten text.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainExample {
    pub input: String,
    pub target: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct HistoryEntry {
    pub step: usize,
    pub loss: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub metric: Option<f64>,
}

pub type History = Vec<HistoryEntry>;

/// Final prompt state of a run plus everything needed to validate a later
/// load against the same backend.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub params: PromptParams,
    pub tune_config: TuneConfig,
    pub backend_fingerprint: String,
    pub format_version: u32,
}

pub const CHECKPOINT_FORMAT_VERSION: u32 = 1;

pub fn tune(
    prompt: PromptParams,
    data: &[TrainExample],
    backend: &dyn LmBackend,
    cfg: &TuneConfig,
) -> Result<(Checkpoint, History), TuneError> {
    tune_with_eval(prompt, data, backend, cfg, None)
}

/// As [`tune`], with an optional evaluation hook sampled every
/// `eval.0` steps; its value lands in the history's `metric` field.
pub fn tune_with_eval(
    mut prompt: PromptParams,
    data: &[TrainExample],
    backend: &dyn LmBackend,
    cfg: &TuneConfig,
    mut eval: Option<(usize, &mut dyn FnMut(usize, &PromptParams) -> f64)>,
) -> Result<(Checkpoint, History), TuneError> {
    if data.is_empty() {
        return Err(TuneError::EmptyDataset);
    }

    let encoded: Vec<(TokenSeq, TokenSeq)> = data
        .iter()
        .map(|ex| Ok((backend.encode(&ex.input)?, backend.encode(&ex.target)?)))
        .collect::<Result<_, BackendError>>()?;

    let total_steps = cfg.total_steps(data.len());
    let per_step = (cfg.batch_size * cfg.grad_accum).max(1);
    let mut history = History::new();

    let mut flat = prompt.trainable_flat();
    let mut optimizer = Optimizer::new(cfg.optimizer, &prompt.leaf_shapes());

    let mut rng = ChaCha20Rng::seed_from_u64(cfg.seed);
    let mut order: Vec<usize> = (0..encoded.len()).collect();
    order.shuffle(&mut rng);
    let mut cursor = 0usize;

    for step in 0..total_steps {
        let mut grad_sum = vec![0.0f64; flat.len()];
        let mut loss_sum = 0.0;
        for _ in 0..per_step {
            if cursor == order.len() {
                order.shuffle(&mut rng);
                cursor = 0;
            }
            let (input, target) = &encoded[order[cursor]];
            cursor += 1;
            let (loss, grad) = backend.grad_with_prompt(&prompt, input, target)?;
            loss_sum += loss;
            for (acc, g) in grad_sum.iter_mut().zip(grad.to_flat()) {
                *acc += g;
            }
        }
        let batch_loss = loss_sum / per_step as f64;
        if !batch_loss.is_finite() {
            return Err(TuneError::Divergence {
                step,
                loss: batch_loss,
            });
        }
        for g in &mut grad_sum {
            *g /= per_step as f64;
        }
        clip_global_norm(&mut grad_sum, cfg.grad_clip);
        let lr = lr_at(cfg.lr, step, total_steps, cfg.warmup_steps);
        optimizer.step(&mut flat, &grad_sum, lr, cfg.weight_decay);
        prompt.set_trainable_flat(&flat);

        let done = step + 1;
        if done % cfg.log_every.max(1) == 0 || done == total_steps {
            let metric = match &mut eval {
                Some((every, hook)) if done % (*every).max(1) == 0 || done == total_steps => {
                    Some(hook(done, &prompt))
                }
                _ => None,
            };
            history.push(HistoryEntry {
                step: done,
                loss: batch_loss,
                metric,
            });
        }
    }

    let checkpoint = Checkpoint {
        params: prompt.finalize(),
        tune_config: cfg.clone(),
        backend_fingerprint: backend.descriptor().frozen_fingerprint.clone(),
        format_version: CHECKPOINT_FORMAT_VERSION,
    };
    Ok((checkpoint, history))
}

/// Serializes history as JSON lines.
pub fn history_to_jsonl(history: &History) -> String {
    history
        .iter()
        .map(|entry| serde_json::to_string(entry).expect("serializable entry"))
        .collect::<Vec<_>>()
        .join("\n")
}
