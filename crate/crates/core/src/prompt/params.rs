//! Trainable prompt state: soft-token embedding matrices and per-layer
//! key/value prefix activations, with an optional reparameterization MLP
//! used only during training.

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::lm::{BackendDescriptor, BackendError};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PromptMethod {
    Soft,
    Prefix,
}

impl std::fmt::Display for PromptMethod {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            PromptMethod::Soft => write!(f, "soft"),
            PromptMethod::Prefix => write!(f, "prefix"),
        }
    }
}

/// Virtual-token embeddings prepended to the input embedding sequence.
#[derive(Debug, Clone, PartialEq)]
pub struct SoftPrompt {
    /// `[prompt_len × d_model]`
    pub embeddings: Array2<f32>,
}

/// Two-layer MLP producing the prefix activations from a smaller base
/// matrix during training; discarded once training finishes.
#[derive(Debug, Clone, PartialEq)]
pub struct ReparamMlp {
    /// `[prefix_len × d_model]`
    pub base: Array2<f32>,
    /// `[d_model × hidden]`
    pub w1: Array2<f32>,
    /// `[1 × hidden]`
    pub b1: Array2<f32>,
    /// `[hidden × num_layers·2·d_model]`
    pub w2: Array2<f32>,
    /// `[1 × num_layers·2·d_model]`
    pub b2: Array2<f32>,
}

impl ReparamMlp {
    /// Materializes the prefix tensor, returned in `[layer][kv][pos][dim]`
    /// order. Matches the graph the backends build during training.
    pub fn materialize_kv(&self, num_layers: usize, prefix_len: usize, d_model: usize) -> Vec<f32> {
        let base = self.base.mapv(|v| v as f64);
        let w1 = self.w1.mapv(|v| v as f64);
        let b1 = self.b1.mapv(|v| v as f64);
        let w2 = self.w2.mapv(|v| v as f64);
        let b2 = self.b2.mapv(|v| v as f64);
        let hidden = (base.dot(&w1) + &b1).mapv(f64::tanh);
        let out = hidden.dot(&w2) + &b2; // [prefix_len × L·2·d]
        let mut kv = vec![0.0f32; num_layers * 2 * prefix_len * d_model];
        for layer in 0..num_layers {
            for half in 0..2 {
                for pos in 0..prefix_len {
                    for dim in 0..d_model {
                        let col = (layer * 2 + half) * d_model + dim;
                        kv[((layer * 2 + half) * prefix_len + pos) * d_model + dim] =
                            out[[pos, col]] as f32;
                    }
                }
            }
        }
        kv
    }
}

/// Per-layer key/value prefix activations.
#[derive(Debug, Clone, PartialEq)]
pub struct PrefixParams {
    pub num_layers: usize,
    pub prefix_len: usize,
    pub d_model: usize,
    /// Flattened `[layer][kv][pos][dim]`; the stored form after training.
    pub kv: Vec<f32>,
    /// Present only during training with reparameterization.
    pub reparam: Option<ReparamMlp>,
}

impl PrefixParams {
    pub fn kv_index(&self, layer: usize, half: usize, pos: usize, dim: usize) -> usize {
        ((layer * 2 + half) * self.prefix_len + pos) * self.d_model + dim
    }

    /// The `[prefix_len × d_model]` activation block for one (layer, k|v).
    pub fn kv_matrix(&self, layer: usize, half: usize) -> Array2<f64> {
        Array2::from_shape_fn((self.prefix_len, self.d_model), |(pos, dim)| {
            self.kv[self.kv_index(layer, half, pos, dim)] as f64
        })
    }
}

/// Trainable prompt state for either tuning variant.
#[derive(Debug, Clone, PartialEq)]
pub enum PromptParams {
    Soft(SoftPrompt),
    Prefix(PrefixParams),
}

/// Gradients with the same structure as the trainable leaves of
/// [`PromptParams`].
#[derive(Debug, Clone)]
pub enum PromptGrad {
    Soft(Array2<f64>),
    /// Same flattened layout as [`PrefixParams::kv`].
    Prefix(Vec<f64>),
    PrefixReparam {
        base: Array2<f64>,
        w1: Array2<f64>,
        b1: Array2<f64>,
        w2: Array2<f64>,
        b2: Array2<f64>,
    },
}

impl PromptParams {
    pub fn method(&self) -> PromptMethod {
        match self {
            PromptParams::Soft(_) => PromptMethod::Soft,
            PromptParams::Prefix(_) => PromptMethod::Prefix,
        }
    }

    pub fn prompt_len(&self) -> usize {
        match self {
            PromptParams::Soft(s) => s.embeddings.nrows(),
            PromptParams::Prefix(p) => p.prefix_len,
        }
    }

    /// Shape of the stored (finalized) tensor.
    pub fn shape(&self) -> Vec<usize> {
        match self {
            PromptParams::Soft(s) => vec![s.embeddings.nrows(), s.embeddings.ncols()],
            PromptParams::Prefix(p) => vec![p.num_layers, 2, p.prefix_len, p.d_model],
        }
    }

    pub fn validate_for(&self, desc: &BackendDescriptor) -> Result<(), BackendError> {
        match self {
            PromptParams::Soft(s) => {
                if s.embeddings.ncols() != desc.d_model {
                    return Err(BackendError::ShapeMismatch(format!(
                        "soft prompt width {} does not match d_model {}",
                        s.embeddings.ncols(),
                        desc.d_model
                    )));
                }
            }
            PromptParams::Prefix(p) => {
                if p.d_model != desc.d_model {
                    return Err(BackendError::ShapeMismatch(format!(
                        "prefix width {} does not match d_model {}",
                        p.d_model, desc.d_model
                    )));
                }
                if p.num_layers != desc.num_layers {
                    return Err(BackendError::ShapeMismatch(format!(
                        "prefix has {} layers, backend has {}",
                        p.num_layers, desc.num_layers
                    )));
                }
                if p.kv.len() != p.num_layers * 2 * p.prefix_len * p.d_model {
                    return Err(BackendError::ShapeMismatch(format!(
                        "prefix tensor holds {} values, shape implies {}",
                        p.kv.len(),
                        p.num_layers * 2 * p.prefix_len * p.d_model
                    )));
                }
                if let Some(mlp) = &p.reparam {
                    let out_width = p.num_layers * 2 * p.d_model;
                    if mlp.w2.ncols() != out_width || mlp.b2.ncols() != out_width {
                        return Err(BackendError::ShapeMismatch(format!(
                            "reparameterization output width {} does not match {}",
                            mlp.w2.ncols(),
                            out_width
                        )));
                    }
                }
            }
        }
        Ok(())
    }

    /// Drops the reparameterization and stores the flattened prefix tensor
    /// directly. Identity for soft prompts and direct prefixes.
    pub fn finalize(&self) -> PromptParams {
        match self {
            PromptParams::Prefix(p) if p.reparam.is_some() => {
                let mlp = p.reparam.as_ref().unwrap();
                PromptParams::Prefix(PrefixParams {
                    num_layers: p.num_layers,
                    prefix_len: p.prefix_len,
                    d_model: p.d_model,
                    kv: mlp.materialize_kv(p.num_layers, p.prefix_len, p.d_model),
                    reparam: None,
                })
            }
            other => other.clone(),
        }
    }

    /// Row-major float32 payload of the finalized tensor.
    pub fn payload_f32(&self) -> Vec<f32> {
        match self.finalize() {
            PromptParams::Soft(s) => s.embeddings.iter().copied().collect(),
            PromptParams::Prefix(p) => p.kv,
        }
    }

    /// All trainable values flattened to f64, leaf by leaf.
    pub fn trainable_flat(&self) -> Vec<f64> {
        match self {
            PromptParams::Soft(s) => s.embeddings.iter().map(|&v| v as f64).collect(),
            PromptParams::Prefix(p) => match &p.reparam {
                None => p.kv.iter().map(|&v| v as f64).collect(),
                Some(mlp) => {
                    let mut flat = Vec::new();
                    for m in [&mlp.base, &mlp.w1, &mlp.b1, &mlp.w2, &mlp.b2] {
                        flat.extend(m.iter().map(|&v| v as f64));
                    }
                    flat
                }
            },
        }
    }

    /// Writes flattened values back; the inverse of [`trainable_flat`].
    ///
    /// [`trainable_flat`]: PromptParams::trainable_flat
    pub fn set_trainable_flat(&mut self, flat: &[f64]) {
        match self {
            PromptParams::Soft(s) => {
                for (dst, &src) in s.embeddings.iter_mut().zip(flat) {
                    *dst = src as f32;
                }
            }
            PromptParams::Prefix(p) => match &mut p.reparam {
                None => {
                    for (dst, &src) in p.kv.iter_mut().zip(flat) {
                        *dst = src as f32;
                    }
                }
                Some(mlp) => {
                    let mut offset = 0;
                    for m in [
                        &mut mlp.base,
                        &mut mlp.w1,
                        &mut mlp.b1,
                        &mut mlp.w2,
                        &mut mlp.b2,
                    ] {
                        for dst in m.iter_mut() {
                            *dst = flat[offset] as f32;
                            offset += 1;
                        }
                    }
                }
            },
        }
    }

    /// (rows, cols) of each trainable leaf, in `trainable_flat` order; used
    /// by factored optimizers.
    pub fn leaf_shapes(&self) -> Vec<(usize, usize)> {
        match self {
            PromptParams::Soft(s) => vec![(s.embeddings.nrows(), s.embeddings.ncols())],
            PromptParams::Prefix(p) => match &p.reparam {
                None => vec![(p.num_layers * 2 * p.prefix_len, p.d_model)],
                Some(mlp) => [&mlp.base, &mlp.w1, &mlp.b1, &mlp.w2, &mlp.b2]
                    .iter()
                    .map(|m| (m.nrows(), m.ncols()))
                    .collect(),
            },
        }
    }
}

impl PromptGrad {
    /// Flattened gradient matching [`PromptParams::trainable_flat`] order.
    pub fn to_flat(&self) -> Vec<f64> {
        match self {
            PromptGrad::Soft(g) => g.iter().copied().collect(),
            PromptGrad::Prefix(g) => g.clone(),
            PromptGrad::PrefixReparam { base, w1, b1, w2, b2 } => {
                let mut flat = Vec::new();
                for m in [base, w1, b1, w2, b2] {
                    flat.extend(m.iter().copied());
                }
                flat
            }
        }
    }
}
