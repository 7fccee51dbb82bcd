//! Text-embedding adapters used for semantic-similarity reporting.
//!
//! Real embedding models are environment-dependent plug-ins; the hashing
//! embedders below are deterministic stand-ins with the same interface.

/// Maps text to a fixed-width vector.
pub trait TextEmbedder: Send + Sync {
    fn name(&self) -> &str;
    fn embed(&self, text: &str) -> Vec<f64>;
}

/// Cosine similarity; pairs of zero vectors count as identical.
pub fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb: f64 = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    if na == 0.0 && nb == 0.0 {
        1.0
    } else if na == 0.0 || nb == 0.0 {
        0.0
    } else {
        dot / (na * nb)
    }
}

fn fnv1a(bytes: &[u8], seed: u64) -> u64 {
    let mut hash = 0xcbf29ce484222325u64 ^ seed;
    for &b in bytes {
        hash ^= b as u64;
        hash = hash.wrapping_mul(0x100000001b3);
    }
    hash
}

/// Signed feature hashing over whitespace tokens.
pub struct TokenHashEmbedder {
    dims: usize,
    seed: u64,
}

impl TokenHashEmbedder {
    pub fn new(dims: usize, seed: u64) -> Self {
        Self { dims, seed }
    }
}

impl Default for TokenHashEmbedder {
    fn default() -> Self {
        Self::new(64, 0x77)
    }
}

impl TextEmbedder for TokenHashEmbedder {
    fn name(&self) -> &str {
        "token-hash"
    }

    fn embed(&self, text: &str) -> Vec<f64> {
        let mut v = vec![0.0; self.dims];
        for token in text.split_whitespace() {
            let h = fnv1a(token.as_bytes(), self.seed);
            let idx = (h % self.dims as u64) as usize;
            let sign = if (h >> 63) == 0 { 1.0 } else { -1.0 };
            v[idx] += sign;
        }
        v
    }
}

/// Signed feature hashing over character trigrams, closer in spirit to
/// contextual string embeddings than token hashing.
pub struct CharTrigramEmbedder {
    dims: usize,
    seed: u64,
}

impl CharTrigramEmbedder {
    pub fn new(dims: usize, seed: u64) -> Self {
        Self { dims, seed }
    }
}

impl Default for CharTrigramEmbedder {
    fn default() -> Self {
        Self::new(96, 0xf1)
    }
}

impl TextEmbedder for CharTrigramEmbedder {
    fn name(&self) -> &str {
        "char-trigram-hash"
    }

    fn embed(&self, text: &str) -> Vec<f64> {
        let chars: Vec<char> = text.chars().collect();
        let mut v = vec![0.0; self.dims];
        for window in chars.windows(3.min(chars.len().max(1))) {
            let gram: String = window.iter().collect();
            let h = fnv1a(gram.as_bytes(), self.seed);
            let idx = (h % self.dims as u64) as usize;
            let sign = if (h >> 63) == 0 { 1.0 } else { -1.0 };
            v[idx] += sign;
        }
        v
    }
}

/// Mean pairwise cosine similarity under one embedder.
pub fn mean_similarity<A, B>(embedder: &dyn TextEmbedder, left: &[A], right: &[B]) -> f64
where
    A: AsRef<str>,
    B: AsRef<str>,
{
    if left.is_empty() {
        return 0.0;
    }
    let total: f64 = left
        .iter()
        .zip(right)
        .map(|(a, b)| cosine(&embedder.embed(a.as_ref()), &embedder.embed(b.as_ref())))
        .sum();
    total / left.len() as f64
}
