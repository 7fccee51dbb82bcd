//! Checkpoint file format: a JSON header line describing method, shape,
//! dtype, backend fingerprint, and tuning config, followed by the raw
//! row-major little-endian float32 payload. A digest over the payload makes
//! any single-byte corruption detectable.

use std::fs;
use std::path::Path;

use ndarray::Array2;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use super::params::{PrefixParams, PromptMethod, PromptParams, SoftPrompt};
use super::train::{Checkpoint, CHECKPOINT_FORMAT_VERSION};
use super::TuneConfig;
use crate::lm::LmBackend;

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("corrupt checkpoint: {0}")]
    Corrupt(String),
    #[error("checkpoint was tuned against fingerprint {expected}, backend has {got}")]
    FingerprintMismatch { expected: String, got: String },
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
}

#[derive(Serialize, Deserialize)]
struct Header {
    format_version: u32,
    method: PromptMethod,
    shape: Vec<usize>,
    dtype: String,
    backend_fingerprint: String,
    tune_config: TuneConfig,
    payload_digest: String,
}

fn payload_bytes(values: &[f32]) -> Vec<u8> {
    let mut bytes = Vec::with_capacity(values.len() * 4);
    for v in values {
        bytes.extend_from_slice(&v.to_le_bytes());
    }
    bytes
}

fn digest_hex(bytes: &[u8]) -> String {
    format!("{:x}", Sha256::digest(bytes))
}

pub fn persist(ckpt: &Checkpoint, path: &Path) -> Result<(), CheckpointError> {
    let params = ckpt.params.finalize();
    let payload = payload_bytes(&params.payload_f32());
    let header = Header {
        format_version: ckpt.format_version,
        method: params.method(),
        shape: params.shape(),
        dtype: "float32".to_string(),
        backend_fingerprint: ckpt.backend_fingerprint.clone(),
        tune_config: ckpt.tune_config.clone(),
        payload_digest: digest_hex(&payload),
    };
    let mut bytes = serde_json::to_vec(&header).expect("serializable header");
    bytes.push(b'\n');
    bytes.extend_from_slice(&payload);
    fs::write(path, bytes)?;
    Ok(())
}

pub fn restore(path: &Path) -> Result<Checkpoint, CheckpointError> {
    let bytes = fs::read(path)?;
    let newline = bytes
        .iter()
        .position(|&b| b == b'\n')
        .ok_or_else(|| CheckpointError::Corrupt("missing header terminator".into()))?;
    let header: Header = serde_json::from_slice(&bytes[..newline])
        .map_err(|e| CheckpointError::Corrupt(format!("bad header: {e}")))?;
    if header.dtype != "float32" {
        return Err(CheckpointError::Corrupt(format!(
            "unsupported dtype {:?}",
            header.dtype
        )));
    }
    if header.format_version != CHECKPOINT_FORMAT_VERSION {
        return Err(CheckpointError::Corrupt(format!(
            "unsupported format version {}",
            header.format_version
        )));
    }
    let payload = &bytes[newline + 1..];
    let expected_len: usize = header.shape.iter().product::<usize>() * 4;
    if payload.len() != expected_len {
        return Err(CheckpointError::Corrupt(format!(
            "payload holds {} bytes, shape implies {expected_len}",
            payload.len()
        )));
    }
    if digest_hex(payload) != header.payload_digest {
        return Err(CheckpointError::Corrupt("payload digest mismatch".into()));
    }

    let values: Vec<f32> = payload
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect();
    let params = match header.method {
        PromptMethod::Soft => {
            let [rows, cols] = header.shape[..] else {
                return Err(CheckpointError::Corrupt(format!(
                    "soft prompt shape {:?} is not 2-dimensional",
                    header.shape
                )));
            };
            let embeddings = Array2::from_shape_vec((rows, cols), values)
                .map_err(|e| CheckpointError::Corrupt(e.to_string()))?;
            PromptParams::Soft(SoftPrompt { embeddings })
        }
        PromptMethod::Prefix => {
            let [layers, two, len, d] = header.shape[..] else {
                return Err(CheckpointError::Corrupt(format!(
                    "prefix shape {:?} is not 4-dimensional",
                    header.shape
                )));
            };
            if two != 2 {
                return Err(CheckpointError::Corrupt(
                    "prefix shape axis 1 must be 2 (key/value)".into(),
                ));
            }
            PromptParams::Prefix(PrefixParams {
                num_layers: layers,
                prefix_len: len,
                d_model: d,
                kv: values,
                reparam: None,
            })
        }
    };
    Ok(Checkpoint {
        params,
        tune_config: header.tune_config,
        backend_fingerprint: header.backend_fingerprint,
        format_version: header.format_version,
    })
}

/// Restores and validates against a live backend. Shape compatibility is
/// always enforced; fingerprint equality only in strict mode.
pub fn restore_for_backend(
    path: &Path,
    backend: &dyn LmBackend,
    strict: bool,
) -> Result<Checkpoint, CheckpointError> {
    let ckpt = restore(path)?;
    ckpt.params
        .validate_for(backend.descriptor())
        .map_err(|e| CheckpointError::ShapeMismatch(e.to_string()))?;
    let live = &backend.descriptor().frozen_fingerprint;
    if strict && ckpt.backend_fingerprint != *live {
        return Err(CheckpointError::FingerprintMismatch {
            expected: ckpt.backend_fingerprint.clone(),
            got: live.clone(),
        });
    }
    Ok(ckpt)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lm::{Family, TinyLm, TinyLmConfig};
    use crate::prompt::{init_prompt, PromptMethod};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha20Rng;

    fn sample_checkpoint(seed: u64, method: PromptMethod) -> Checkpoint {
        let lm = TinyLm::seeded_default(Family::DecoderOnly, seed);
        let mut cfg = match method {
            PromptMethod::Soft => TuneConfig::task1_defaults(),
            PromptMethod::Prefix => TuneConfig::task23_defaults(),
        };
        cfg.seed = seed;
        cfg.reparam = false;
        let params = init_prompt(&cfg, &lm, None).unwrap();
        Checkpoint {
            params,
            tune_config: cfg,
            backend_fingerprint: lm.descriptor().frozen_fingerprint.clone(),
            format_version: CHECKPOINT_FORMAT_VERSION,
        }
    }

    #[test]
    fn round_trip_is_bit_identical() {
        let dir = tempfile::tempdir().unwrap();
        for (i, method) in [PromptMethod::Soft, PromptMethod::Prefix]
            .into_iter()
            .enumerate()
        {
            let ckpt = sample_checkpoint(40 + i as u64, method);
            let path = dir.path().join(format!("{i}.ckpt"));
            persist(&ckpt, &path).unwrap();
            let back = restore(&path).unwrap();
            assert_eq!(back, ckpt);
        }
    }

    #[test]
    fn truncation_is_detected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.ckpt");
        let ckpt = sample_checkpoint(50, PromptMethod::Soft);
        persist(&ckpt, &path).unwrap();
        let bytes = std::fs::read(&path).unwrap();
        std::fs::write(&path, &bytes[..bytes.len() - 3]).unwrap();
        assert!(matches!(restore(&path), Err(CheckpointError::Corrupt(_))));
    }

    #[test]
    fn any_single_byte_payload_corruption_is_detected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.ckpt");
        let ckpt = sample_checkpoint(51, PromptMethod::Soft);
        persist(&ckpt, &path).unwrap();
        let clean = std::fs::read(&path).unwrap();
        let header_end = clean.iter().position(|&b| b == b'\n').unwrap();
        let mut rng = ChaCha20Rng::seed_from_u64(1);
        for _ in 0..20 {
            let mut bytes = clean.clone();
            let idx = rng.gen_range(header_end + 1..bytes.len());
            bytes[idx] ^= 0x40;
            std::fs::write(&path, &bytes).unwrap();
            assert!(
                matches!(restore(&path), Err(CheckpointError::Corrupt(_))),
                "corruption at byte {idx} went unnoticed"
            );
        }
    }

    #[test]
    fn wrong_backend_width_fails_shape_check() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("w.ckpt");
        let ckpt = sample_checkpoint(52, PromptMethod::Soft);
        persist(&ckpt, &path).unwrap();
        let mut other_cfg = TinyLmConfig::new(Family::DecoderOnly, 52);
        other_cfg.d_model = 16;
        let other = TinyLm::new(other_cfg);
        assert!(matches!(
            restore_for_backend(&path, &other, false),
            Err(CheckpointError::ShapeMismatch(_))
        ));
    }

    #[test]
    fn strict_mode_requires_matching_fingerprint() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("f.ckpt");
        let ckpt = sample_checkpoint(53, PromptMethod::Soft);
        persist(&ckpt, &path).unwrap();
        let other = TinyLm::seeded_default(Family::DecoderOnly, 99);
        assert!(matches!(
            restore_for_backend(&path, &other, true),
            Err(CheckpointError::FingerprintMismatch { .. })
        ));
        assert!(restore_for_backend(&path, &other, false).is_ok());
    }
}
