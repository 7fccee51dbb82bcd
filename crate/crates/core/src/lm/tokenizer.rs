//! Whitespace tokenizer with character offsets over a word vocabulary.
//!
//! Normalization contract: decoding joins tokens with single spaces, so
//! `decode(encode(x)) == x` exactly for single-spaced, in-vocabulary text.

use std::collections::HashMap;

use super::{BackendError, TokenSeq};

pub const BOS: u32 = 0;
pub const EOS: u32 = 1;
pub const UNK: u32 = 2;

pub const BOS_TOKEN: &str = "<bos>";
pub const EOS_TOKEN: &str = "<eos>";
pub const UNK_TOKEN: &str = "<unk>";

/// Closed word vocabulary with reserved special tokens.
#[derive(Debug, Clone)]
pub struct Vocab {
    words: Vec<String>,
    index: HashMap<String, u32>,
}

impl Vocab {
    pub fn new<I, S>(words: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: AsRef<str>,
    {
        let mut vocab = Vocab {
            words: Vec::new(),
            index: HashMap::new(),
        };
        for special in [BOS_TOKEN, EOS_TOKEN, UNK_TOKEN] {
            vocab.push(special);
        }
        for word in words {
            vocab.push(word.as_ref());
        }
        vocab
    }

    fn push(&mut self, word: &str) {
        if !self.index.contains_key(word) {
            self.index.insert(word.to_string(), self.words.len() as u32);
            self.words.push(word.to_string());
        }
    }

    pub fn len(&self) -> usize {
        self.words.len()
    }

    pub fn is_empty(&self) -> bool {
        self.words.is_empty()
    }

    pub fn id_of(&self, word: &str) -> Option<u32> {
        self.index.get(word).copied()
    }

    pub fn word_of(&self, id: u32) -> Option<&str> {
        self.words.get(id as usize).map(String::as_str)
    }

    pub fn words(&self) -> &[String] {
        &self.words
    }

    /// Splits on whitespace; each token carries half-open character offsets
    /// into the source, covering every non-whitespace character exactly once.
    ///
    /// Out-of-vocabulary words map to `<unk>` unless `strict`, in which case
    /// they fail tokenization.
    pub fn encode(&self, text: &str, strict: bool) -> Result<TokenSeq, BackendError> {
        let mut seq = TokenSeq::default();
        let mut word = String::new();
        let mut start = 0usize;
        let chars: Vec<char> = text.chars().collect();
        for (pos, &ch) in chars.iter().chain(std::iter::once(&' ')).enumerate() {
            if ch.is_whitespace() {
                if !word.is_empty() {
                    let id = match self.id_of(&word) {
                        Some(id) => id,
                        None if strict => {
                            return Err(BackendError::Tokenization(format!(
                                "word {word:?} not in vocabulary"
                            )))
                        }
                        None => UNK,
                    };
                    seq.ids.push(id);
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

    /// Joins tokens with single spaces, skipping structural specials.
    pub fn decode(&self, ids: &[u32]) -> String {
        ids.iter()
            .filter(|&&id| id != BOS && id != EOS)
            .map(|&id| self.word_of(id).unwrap_or(UNK_TOKEN))
            .collect::<Vec<_>>()
            .join(" ")
    }
}
