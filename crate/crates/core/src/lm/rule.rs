//! Rule-driven stub backends: deterministic, table-configurable models
//! that make pipeline contracts checkable without any weights.
//!
//! A rule maps input text to the exact output the "model" is certain of;
//! scoring assigns probability one along that output, so a matching target
//! has loss exactly zero. Prompt parameters are accepted and ignored.

use std::collections::{BTreeMap, HashMap};
use std::sync::Mutex;

use ndarray::Array2;
use sha2::{Digest, Sha256};

use super::{BackendDescriptor, BackendError, DecodeConfig, Family, ForwardOutput, LmBackend, TokenSeq};
use crate::prompt::{PromptGrad, PromptParams};

const MISMATCH_LOGIT: f64 = -1e9;

/// What the stub is rigged to do.
#[derive(Debug, Clone)]
pub enum GenRule {
    /// Reproduces the input verbatim.
    Echo,
    /// Uniform distribution over a fixed vocabulary; echoes on generation.
    Uniform { vocab_size: usize },
    /// Drops every occurrence of the listed words.
    DeleteWords(Vec<String>),
    /// Answers `yes` when the input contains `marker`, else `no`, with a
    /// mild two-way logit margin so scores stay strictly inside (0, 1).
    MarkerAnswer {
        marker: String,
        yes: String,
        no: String,
    },
    /// Exact input-to-output lookup; echoes on a miss.
    FixedMap(BTreeMap<String, String>),
    /// Word-to-word transition table followed from the last input word.
    Chain(BTreeMap<String, String>),
}

struct Interner {
    words: Vec<String>,
    index: HashMap<String, u32>,
}

impl Interner {
    fn new() -> Self {
        let mut interner = Interner {
            words: Vec::new(),
            index: HashMap::new(),
        };
        for special in ["<bos>", "<eos>", "<unk>"] {
            interner.intern(special);
        }
        interner
    }

    fn intern(&mut self, word: &str) -> u32 {
        if let Some(&id) = self.index.get(word) {
            return id;
        }
        let id = self.words.len() as u32;
        self.words.push(word.to_string());
        self.index.insert(word.to_string(), id);
        id
    }
}

const EOS: u32 = 1;

pub struct RuleLm {
    rule: GenRule,
    interner: Mutex<Interner>,
    descriptor: BackendDescriptor,
}

impl RuleLm {
    pub fn new(rule: GenRule) -> Self {
        let vocab_size = match &rule {
            GenRule::Uniform { vocab_size } => *vocab_size,
            _ => 1 << 16,
        };
        let fingerprint = {
            let mut hasher = Sha256::new();
            hasher.update(format!("{rule:?}").as_bytes());
            format!("{:x}", hasher.finalize())
        };
        RuleLm {
            rule,
            interner: Mutex::new(Interner::new()),
            descriptor: BackendDescriptor {
                family: Family::DecoderOnly,
                num_layers: 1,
                d_model: 8,
                vocab_size,
                max_context: 1 << 20,
                frozen_fingerprint: fingerprint,
            },
        }
    }

    pub fn echo() -> Self {
        Self::new(GenRule::Echo)
    }

    pub fn uniform(vocab_size: usize) -> Self {
        Self::new(GenRule::Uniform { vocab_size })
    }

    pub fn deleting<I, S>(words: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: AsRef<str>,
    {
        Self::new(GenRule::DeleteWords(
            words.into_iter().map(|w| w.as_ref().to_string()).collect(),
        ))
    }

    pub fn marker_answer(marker: &str, yes: &str, no: &str) -> Self {
        Self::new(GenRule::MarkerAnswer {
            marker: marker.to_string(),
            yes: yes.to_string(),
            no: no.to_string(),
        })
    }

    /// The text this rule is certain to produce for `input`.
    pub fn apply(&self, input: &str) -> String {
        match &self.rule {
            GenRule::Echo | GenRule::Uniform { .. } => input.to_string(),
            GenRule::DeleteWords(words) => input
                .split_whitespace()
                .filter(|token| !words.iter().any(|w| w == token))
                .collect::<Vec<_>>()
                .join(" "),
            GenRule::MarkerAnswer { marker, yes, no } => {
                if input.contains(marker.as_str()) {
                    yes.clone()
                } else {
                    no.clone()
                }
            }
            GenRule::FixedMap(map) => map.get(input).cloned().unwrap_or_else(|| input.to_string()),
            GenRule::Chain(map) => {
                let mut out = Vec::new();
                let mut cursor = input.split_whitespace().last().map(str::to_string);
                while let Some(ref word) = cursor {
                    match map.get(word) {
                        Some(next) if out.len() < 32 => {
                            out.push(next.clone());
                            cursor = Some(next.clone());
                        }
                        _ => break,
                    }
                }
                out.join(" ")
            }
        }
    }

    fn intern_text(&self, text: &str) -> Vec<u32> {
        let mut interner = self.interner.lock().unwrap();
        text.split_whitespace()
            .map(|w| interner.intern(w))
            .collect()
    }
}

impl LmBackend for RuleLm {
    fn descriptor(&self) -> &BackendDescriptor {
        &self.descriptor
    }

    fn encode(&self, text: &str) -> Result<TokenSeq, BackendError> {
        let mut seq = TokenSeq::default();
        let chars: Vec<char> = text.chars().collect();
        let mut word = String::new();
        let mut start = 0;
        for (pos, &ch) in chars.iter().chain(std::iter::once(&' ')).enumerate() {
            if ch.is_whitespace() {
                if !word.is_empty() {
                    seq.ids.extend(self.intern_text(&word));
                    seq.offsets.push((start, pos));
                    word.clear();
                }
            } else {
                if word.is_empty() {
                    start = pos;
                }
                word.push(ch);
            }
        }
        Ok(seq)
    }

    fn decode(&self, ids: &[u32]) -> String {
        let interner = self.interner.lock().unwrap();
        ids.iter()
            .filter(|&&id| id > 2)
            .map(|&id| {
                interner
                    .words
                    .get(id as usize)
                    .map(String::as_str)
                    .unwrap_or("<unk>")
                    .to_string()
            })
            .collect::<Vec<_>>()
            .join(" ")
    }

    fn token_embedding(&self, _id: u32) -> Option<Vec<f32>> {
        None
    }

    fn forward_with_prompt(
        &self,
        _prompt: Option<&PromptParams>,
        input: &TokenSeq,
        target: &TokenSeq,
    ) -> Result<ForwardOutput, BackendError> {
        if target.is_empty() {
            return Err(BackendError::EmptyText);
        }
        let m = target.len();

        if let GenRule::Uniform { vocab_size } = self.rule {
            let loss = (vocab_size as f64).ln();
            return Ok(ForwardOutput {
                loss,
                logits: Array2::zeros((m, vocab_size)),
            });
        }

        let expected_ids = {
            let text = self.decode(&input.ids);
            let expected = self.apply(&text);
            self.intern_text(&expected)
        };
        let (yes_no_ids, margin) = match &self.rule {
            GenRule::MarkerAnswer { yes, no, .. } => {
                let mut interner = self.interner.lock().unwrap();
                let yes_id = interner.intern(yes);
                let no_id = interner.intern(no);
                (Some((yes_id, no_id)), 1.0)
            }
            _ => (None, 0.0),
        };

        let vocab = self.interner.lock().unwrap().words.len();
        let mut logits = Array2::from_elem((m, vocab), MISMATCH_LOGIT);
        for (row, _) in target.ids.iter().enumerate() {
            let expected = expected_ids.get(row).copied().unwrap_or(EOS);
            if row == 0 {
                if let Some((yes_id, no_id)) = yes_no_ids {
                    let (hi, lo) = if expected == yes_id {
                        (yes_id, no_id)
                    } else {
                        (no_id, yes_id)
                    };
                    logits[[row, hi as usize]] = margin;
                    logits[[row, lo as usize]] = -margin;
                    continue;
                }
            }
            logits[[row, expected as usize]] = 0.0;
        }

        let mut total = 0.0;
        for (row, &t) in target.ids.iter().enumerate() {
            let row_vals = logits.row(row);
            let max = row_vals.fold(f64::NEG_INFINITY, |a, &b| a.max(b));
            let lse = max + row_vals.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
            total += lse - row_vals[t as usize];
        }
        Ok(ForwardOutput {
            loss: total / m as f64,
            logits,
        })
    }

    fn grad_with_prompt(
        &self,
        prompt: &PromptParams,
        input: &TokenSeq,
        target: &TokenSeq,
    ) -> Result<(f64, PromptGrad), BackendError> {
        let out = self.forward_with_prompt(Some(prompt), input, target)?;
        // The rules never read the prompt, so its gradient is zero.
        let grad = match prompt {
            PromptParams::Soft(s) => PromptGrad::Soft(Array2::zeros(s.embeddings.dim())),
            PromptParams::Prefix(p) => PromptGrad::Prefix(vec![0.0; p.kv.len()]),
        };
        Ok((out.loss, grad))
    }

    fn generate(
        &self,
        _prompt: Option<&PromptParams>,
        input: &TokenSeq,
        cfg: &DecodeConfig,
    ) -> Result<String, BackendError> {
        let text = self.decode(&input.ids);
        let out = self.apply(&text);
        let tokens: Vec<&str> = out.split_whitespace().take(cfg.max_len).collect();
        Ok(tokens.join(" "))
    }

    fn score_perplexity(&self, text: &str) -> Result<f64, BackendError> {
        if text.split_whitespace().next().is_none() {
            return Err(BackendError::EmptyText);
        }
        match self.rule {
            GenRule::Uniform { vocab_size } => Ok(vocab_size as f64),
            _ => Ok(1.0),
        }
    }

    fn recompute_fingerprint(&self) -> String {
        let mut hasher = Sha256::new();
        hasher.update(format!("{:?}", self.rule).as_bytes());
        format!("{:x}", hasher.finalize())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn echo_generates_input_verbatim() {
        let lm = RuleLm::echo();
        let input = lm.encode("keep hiring imbeciles like this jerk").unwrap();
        let out = lm.generate(None, &input, &DecodeConfig::default()).unwrap();
        assert_eq!(out, "keep hiring imbeciles like this jerk");
        let empty = lm.generate(None, &input, &DecodeConfig { max_len: 0 }).unwrap();
        assert_eq!(empty, "");
    }

    #[test]
    fn perfect_predictor_has_zero_loss() {
        let lm = RuleLm::echo();
        let input = lm.encode("a dog").unwrap();
        let target = lm.encode("a dog").unwrap();
        let out = lm.forward_with_prompt(None, &input, &target).unwrap();
        assert_eq!(out.loss, 0.0);
    }

    #[test]
    fn mismatched_target_is_heavily_penalized() {
        let lm = RuleLm::echo();
        let input = lm.encode("a dog").unwrap();
        let target = lm.encode("a cat").unwrap();
        let out = lm.forward_with_prompt(None, &input, &target).unwrap();
        assert!(out.loss > 1e6);
    }

    #[test]
    fn uniform_perplexity_equals_vocab_size() {
        let lm = RuleLm::uniform(5000);
        let ppl = lm.score_perplexity("any text at all").unwrap();
        assert!((ppl - 5000.0).abs() < 1e-9);
        let input = lm.encode("x").unwrap();
        let target = lm.encode("y z").unwrap();
        let out = lm.forward_with_prompt(None, &input, &target).unwrap();
        assert!((out.loss - 5000.0_f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn delete_rule_removes_words() {
        let lm = RuleLm::deleting(["jerk"]);
        let input = lm.encode("this jerk is here").unwrap();
        let out = lm.generate(None, &input, &DecodeConfig::default()).unwrap();
        assert_eq!(out, "this is here");
    }

    #[test]
    fn marker_rule_prefers_yes_only_with_marker() {
        let lm = RuleLm::marker_answer("TOXMARK", "Yes", "No");
        let with = lm.encode("x TOXMARK y").unwrap();
        let without = lm.encode("hello there").unwrap();
        let yes = lm.encode("Yes").unwrap();
        let no = lm.encode("No").unwrap();
        let loss_yes_with = lm.forward_with_prompt(None, &with, &yes).unwrap().loss;
        let loss_no_with = lm.forward_with_prompt(None, &with, &no).unwrap().loss;
        assert!(loss_yes_with < loss_no_with);
        let loss_yes_without = lm.forward_with_prompt(None, &without, &yes).unwrap().loss;
        let loss_no_without = lm.forward_with_prompt(None, &without, &no).unwrap().loss;
        assert!(loss_no_without < loss_yes_without);
    }

    #[test]
    fn chain_rule_follows_transitions() {
        let mut map = BTreeMap::new();
        map.insert("a".to_string(), "b".to_string());
        map.insert("b".to_string(), "c".to_string());
        let lm = RuleLm::new(GenRule::Chain(map));
        let input = lm.encode("start a").unwrap();
        let out = lm.generate(None, &input, &DecodeConfig::default()).unwrap();
        assert_eq!(out, "b c");
    }

    #[test]
    fn fingerprint_is_stable() {
        let lm = RuleLm::echo();
        assert_eq!(
            lm.recompute_fingerprint(),
            lm.descriptor().frozen_fingerprint
        );
    }
}
