//! The three task heads built on the prompt engine and a frozen backend:
//! verbalizer classification (with a fixed manual-template baseline),
//! generate-then-subtract span detection, and detoxification generation.
//! All pipelines are read-only over prompt and backend state.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::lm::{BackendError, DecodeConfig, LmBackend, TokenSeq};
use crate::metrics::Label;
use crate::prompt::PromptParams;
use crate::span::{subtract_spans, SpanSet};

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error(transparent)]
    Backend(#[from] BackendError),
    #[error("bad template: {0}")]
    Template(String),
    #[error("bad verbalizer: {0}")]
    Verbalizer(String),
}

/// Maps the binary labels to the words scored at the answer position.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Verbalizer {
    pub toxic_word: String,
    pub nontoxic_word: String,
}

impl Default for Verbalizer {
    fn default() -> Self {
        Verbalizer {
            toxic_word: "Yes".to_string(),
            nontoxic_word: "No".to_string(),
        }
    }
}

impl Verbalizer {
    pub fn new(toxic_word: &str, nontoxic_word: &str) -> Result<Self, PipelineError> {
        if toxic_word == nontoxic_word {
            return Err(PipelineError::Verbalizer(
                "label words must be distinct".into(),
            ));
        }
        if toxic_word.is_empty() || nontoxic_word.is_empty() {
            return Err(PipelineError::Verbalizer("label words must be non-empty".into()));
        }
        Ok(Verbalizer {
            toxic_word: toxic_word.to_string(),
            nontoxic_word: nontoxic_word.to_string(),
        })
    }

    pub fn words(&self) -> [&str; 2] {
        [&self.toxic_word, &self.nontoxic_word]
    }
}

pub const INPUT_SLOT: &str = "[INPUT]";
pub const MASK_SLOT: &str = "[MASK]";

/// Fixed template with `[INPUT]` and `[MASK]` slots, each exactly once.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ManualTemplate {
    template: String,
}

/// The fixed toxicity question used as the no-tuning baseline.
pub const DEFAULT_TOXICITY_TEMPLATE: &str = "[INPUT]\nQuestion: Does the above text contain \
     rude, disrespectful, or unreasonable language?\nAnswer:[MASK]";

impl ManualTemplate {
    pub fn new(template: &str) -> Result<Self, PipelineError> {
        for slot in [INPUT_SLOT, MASK_SLOT] {
            if template.matches(slot).count() != 1 {
                return Err(PipelineError::Template(format!(
                    "template must contain {slot} exactly once"
                )));
            }
        }
        Ok(ManualTemplate {
            template: template.to_string(),
        })
    }

    pub fn default_toxicity() -> Self {
        Self::new(DEFAULT_TOXICITY_TEMPLATE).expect("valid built-in template")
    }

    /// Full prompt string with the input substituted; the mask slot stays.
    pub fn render(&self, input: &str) -> String {
        self.template.replace(INPUT_SLOT, input)
    }

    /// Everything before the mask slot, input substituted; this is what gets
    /// encoded, with the answer scored at the mask position.
    pub fn render_prefix(&self, input: &str) -> String {
        let rendered = self.render(input);
        rendered
            .split(MASK_SLOT)
            .next()
            .unwrap_or(&rendered)
            .to_string()
    }
}

/// Sequence log-likelihood of `word` continuing `input` under the prompt.
fn word_score(
    backend: &dyn LmBackend,
    prompt: Option<&PromptParams>,
    input: &TokenSeq,
    word: &str,
) -> Result<f64, PipelineError> {
    let target = backend.encode(word)?;
    if target.is_empty() {
        return Err(PipelineError::Verbalizer(format!(
            "label word {word:?} tokenizes to nothing"
        )));
    }
    let out = backend.forward_with_prompt(prompt, input, &target)?;
    Ok(-out.loss * target.len() as f64)
}

fn two_way_label(score_toxic: f64, score_nontoxic: f64) -> (Label, f64) {
    // Softmax over exactly the two verbalizer scores.
    let max = score_toxic.max(score_nontoxic);
    let et = (score_toxic - max).exp();
    let en = (score_nontoxic - max).exp();
    let p_toxic = et / (et + en);
    (Label::from_bool(p_toxic > 0.5), p_toxic)
}

/// Labels `text` by the argmax of the two verbalizer-word likelihoods at
/// the answer position; the score is the normalized toxic probability.
pub fn classify(
    prompt: &PromptParams,
    backend: &dyn LmBackend,
    verbalizer: &Verbalizer,
    text: &str,
) -> Result<(Label, f64), PipelineError> {
    let input = backend.encode(text)?;
    let s_toxic = word_score(backend, Some(prompt), &input, &verbalizer.toxic_word)?;
    let s_nontoxic = word_score(backend, Some(prompt), &input, &verbalizer.nontoxic_word)?;
    Ok(two_way_label(s_toxic, s_nontoxic))
}

/// As [`classify`], but with no learned parameters: the template text is
/// encoded and the mask position scored.
pub fn manual_classify(
    template: &ManualTemplate,
    backend: &dyn LmBackend,
    verbalizer: &Verbalizer,
    text: &str,
) -> Result<(Label, f64), PipelineError> {
    let input = backend.encode(&template.render_prefix(text))?;
    let s_toxic = word_score(backend, None, &input, &verbalizer.toxic_word)?;
    let s_nontoxic = word_score(backend, None, &input, &verbalizer.nontoxic_word)?;
    Ok(two_way_label(s_toxic, s_nontoxic))
}

/// Generates a span-free rewrite and aligns it against the original,
/// returning the removed character offsets.
pub fn detect_spans(
    prompt: &PromptParams,
    backend: &dyn LmBackend,
    text: &str,
) -> Result<SpanSet, PipelineError> {
    let input = backend.encode(text)?;
    let cfg = DecodeConfig {
        max_len: input.len() + 8,
    };
    let generated = backend.generate(Some(prompt), &input, &cfg)?;
    Ok(subtract_spans(text, &generated))
}

/// Generates the detoxified paraphrase; deterministic under greedy decoding.
pub fn detoxify(
    prompt: &PromptParams,
    backend: &dyn LmBackend,
    text: &str,
) -> Result<String, PipelineError> {
    let input = backend.encode(text)?;
    let cfg = DecodeConfig {
        max_len: input.len() + 16,
    };
    Ok(backend.generate(Some(prompt), &input, &cfg)?)
}

/// One line of the batch classification prediction format.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ClfPrediction {
    pub text: String,
    pub pred_label: Label,
    pub score: f64,
}

/// One line of the batch span prediction format.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SpanPrediction {
    pub text: String,
    pub offsets: Vec<usize>,
}

/// One line of the batch detoxification prediction format.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DetoxPrediction {
    pub text: String,
    pub detox: String,
}
