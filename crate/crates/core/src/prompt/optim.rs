//! Prompt optimizers: a factored second-moment method in the Adafactor
//! style and decoupled-weight-decay Adam. Both operate on the flattened
//! trainable vector, with leaf shapes guiding the factoring.

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OptimizerKind {
    Adafactor,
    AdamW,
}

const ADAFACTOR_EPS: f64 = 1e-30;
const ADAFACTOR_CLIP: f64 = 1.0;
const ADAM_BETA1: f64 = 0.9;
const ADAM_BETA2: f64 = 0.999;
const ADAM_EPS: f64 = 1e-8;

enum LeafState {
    /// Row/column second-moment factors for matrix leaves.
    Factored { row: Vec<f64>, col: Vec<f64> },
    /// Unfactored second moment for vector leaves.
    Full { v: Vec<f64> },
    Adam { m: Vec<f64>, v: Vec<f64> },
}

pub struct Optimizer {
    kind: OptimizerKind,
    shapes: Vec<(usize, usize)>,
    leaves: Vec<LeafState>,
    step: usize,
}

impl Optimizer {
    pub fn new(kind: OptimizerKind, leaf_shapes: &[(usize, usize)]) -> Self {
        let leaves = leaf_shapes
            .iter()
            .map(|&(rows, cols)| match kind {
                OptimizerKind::AdamW => LeafState::Adam {
                    m: vec![0.0; rows * cols],
                    v: vec![0.0; rows * cols],
                },
                OptimizerKind::Adafactor => {
                    if rows > 1 && cols > 1 {
                        LeafState::Factored {
                            row: vec![0.0; rows],
                            col: vec![0.0; cols],
                        }
                    } else {
                        LeafState::Full {
                            v: vec![0.0; rows * cols],
                        }
                    }
                }
            })
            .collect();
        Optimizer {
            kind,
            shapes: leaf_shapes.to_vec(),
            leaves,
            step: 0,
        }
    }

    /// One update over the flattened parameter vector.
    pub fn step(&mut self, params: &mut [f64], grads: &[f64], lr: f64, weight_decay: f64) {
        debug_assert_eq!(params.len(), grads.len());
        self.step += 1;
        let t = self.step as f64;
        let mut offset = 0;
        for (leaf, &(rows, cols)) in self.leaves.iter_mut().zip(&self.shapes) {
            let len = rows * cols;
            let p = &mut params[offset..offset + len];
            let g = &grads[offset..offset + len];
            match (self.kind, leaf) {
                (OptimizerKind::AdamW, LeafState::Adam { m, v }) => {
                    for i in 0..len {
                        m[i] = ADAM_BETA1 * m[i] + (1.0 - ADAM_BETA1) * g[i];
                        v[i] = ADAM_BETA2 * v[i] + (1.0 - ADAM_BETA2) * g[i] * g[i];
                        let m_hat = m[i] / (1.0 - ADAM_BETA1.powf(t));
                        let v_hat = v[i] / (1.0 - ADAM_BETA2.powf(t));
                        p[i] -= lr * (m_hat / (v_hat.sqrt() + ADAM_EPS) + weight_decay * p[i]);
                    }
                }
                (OptimizerKind::Adafactor, LeafState::Factored { row, col }) => {
                    let beta = 1.0 - t.powf(-0.8);
                    for r in 0..rows {
                        let mean: f64 = (0..cols)
                            .map(|c| g[r * cols + c].powi(2) + ADAFACTOR_EPS)
                            .sum::<f64>()
                            / cols as f64;
                        row[r] = beta * row[r] + (1.0 - beta) * mean;
                    }
                    for c in 0..cols {
                        let mean: f64 = (0..rows)
                            .map(|r| g[r * cols + c].powi(2) + ADAFACTOR_EPS)
                            .sum::<f64>()
                            / rows as f64;
                        col[c] = beta * col[c] + (1.0 - beta) * mean;
                    }
                    let row_mean = row.iter().sum::<f64>() / rows as f64;
                    let mut update = vec![0.0; len];
                    for r in 0..rows {
                        for c in 0..cols {
                            let v = (row[r] * col[c] / row_mean).max(ADAFACTOR_EPS);
                            update[r * cols + c] = g[r * cols + c] / v.sqrt();
                        }
                    }
                    Self::rms_clip_and_apply(p, &update, lr, weight_decay);
                }
                (OptimizerKind::Adafactor, LeafState::Full { v }) => {
                    let beta = 1.0 - t.powf(-0.8);
                    let mut update = vec![0.0; len];
                    for i in 0..len {
                        v[i] = beta * v[i] + (1.0 - beta) * (g[i] * g[i] + ADAFACTOR_EPS);
                        update[i] = g[i] / v[i].sqrt();
                    }
                    Self::rms_clip_and_apply(p, &update, lr, weight_decay);
                }
                _ => unreachable!("state matches kind"),
            }
            offset += len;
        }
    }

    fn rms_clip_and_apply(p: &mut [f64], update: &[f64], lr: f64, weight_decay: f64) {
        let rms =
            (update.iter().map(|u| u * u).sum::<f64>() / update.len() as f64).sqrt();
        let denom = (rms / ADAFACTOR_CLIP).max(1.0);
        for i in 0..p.len() {
            p[i] -= lr * (update[i] / denom + weight_decay * p[i]);
        }
    }
}

/// Linear warmup followed by linear decay to zero.
pub fn lr_at(base_lr: f64, step: usize, total: usize, warmup: usize) -> f64 {
    if total == 0 {
        return 0.0;
    }
    if warmup > 0 && step < warmup {
        return base_lr * (step + 1) as f64 / warmup as f64;
    }
    let decay_span = total.saturating_sub(warmup).max(1);
    let remaining = total.saturating_sub(step);
    base_lr * remaining as f64 / decay_span as f64
}

/// Scales the gradient in place so its global norm is at most `max_norm`.
pub fn clip_global_norm(grad: &mut [f64], max_norm: f64) -> f64 {
    let norm = grad.iter().map(|g| g * g).sum::<f64>().sqrt();
    if norm > max_norm && norm > 0.0 {
        let scale = max_norm / norm;
        for g in grad.iter_mut() {
            *g *= scale;
        }
    }
    norm
}

#[cfg(test)]
mod tests {
    use super::*;

    fn quadratic_descends(kind: OptimizerKind, lr: f64) {
        // Minimize ||p - target||² over a 2×3 leaf.
        let target = [1.0, -2.0, 0.5, 3.0, -1.0, 0.0];
        let mut p = vec![0.0; 6];
        let mut opt = Optimizer::new(kind, &[(2, 3)]);
        for _ in 0..500 {
            let g: Vec<f64> = p.iter().zip(&target).map(|(x, t)| 2.0 * (x - t)).collect();
            opt.step(&mut p, &g, lr, 0.0);
        }
        let err: f64 = p
            .iter()
            .zip(&target)
            .map(|(x, t)| (x - t).abs())
            .fold(0.0, f64::max);
        assert!(err < 0.15, "{kind:?} err {err}: {p:?}");
    }

    #[test]
    fn both_optimizers_descend_a_quadratic() {
        quadratic_descends(OptimizerKind::AdamW, 0.05);
        quadratic_descends(OptimizerKind::Adafactor, 0.05);
    }

    #[test]
    fn schedule_warms_up_then_decays_to_zero() {
        let total = 2000;
        let warmup = 100;
        assert!(lr_at(0.3, 0, total, warmup) < 0.3 / 10.0);
        assert!((lr_at(0.3, 99, total, warmup) - 0.3).abs() < 1e-12);
        assert!(lr_at(0.3, 1000, total, warmup) < 0.3);
        assert_eq!(lr_at(0.3, total, total, warmup), 0.0);
    }

    #[test]
    fn clip_caps_global_norm() {
        let mut g = vec![3.0, 4.0];
        let norm = clip_global_norm(&mut g, 1.0);
        assert_eq!(norm, 5.0);
        let new_norm: f64 = g.iter().map(|x| x * x).sum::<f64>().sqrt();
        assert!((new_norm - 1.0).abs() < 1e-12);
    }
}
