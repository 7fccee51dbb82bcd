//! Prompt-tuning toolkit for adapting frozen language models to three
//! toxicity tasks: classification, toxic span detection, and detoxification.
//!
//! The crate is organized around a frozen-backend contract: language models
//! expose tokenization, prompt-injected forward passes, generation, and
//! perplexity scoring, while training only ever updates prompt parameters.

pub mod lm;
pub mod metrics;
pub mod pipelines;
pub mod prompt;
pub mod tensor;
pub mod span;

pub use metrics::{ClfReport, DetoxReport, Label, MetricsReport};
pub use span::{remove_spans, span_offsets_to_intervals, subtract_spans, trim_spans, SpanSet};
