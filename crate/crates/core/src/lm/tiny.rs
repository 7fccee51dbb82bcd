//! A tiny frozen transformer with seeded random weights.
//!
//! Small enough to run in tests, real enough to train prompts against:
//! single-head attention blocks with tanh mixing, tied input/output
//! embeddings, and exact gradients for both prompt variants via the
//! autodiff tape. Weights are generated from a seed at construction and
//! never change afterwards.

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use sha2::{Digest, Sha256};

use super::tokenizer::{Vocab, BOS, EOS};
use super::{BackendDescriptor, BackendError, DecodeConfig, Family, ForwardOutput, LmBackend, TokenSeq};
use crate::prompt::{PromptGrad, PromptParams};
use crate::tensor::{NodeId, Tape};

#[derive(Debug, Clone)]
pub struct TinyLmConfig {
    pub family: Family,
    pub vocab_words: Vec<String>,
    pub d_model: usize,
    pub num_layers: usize,
    pub max_context: usize,
    pub seed: u64,
    /// Reject out-of-vocabulary words instead of mapping them to `<unk>`.
    pub strict_vocab: bool,
}

impl TinyLmConfig {
    pub fn new(family: Family, seed: u64) -> Self {
        Self {
            family,
            vocab_words: default_words(),
            d_model: 24,
            num_layers: 2,
            max_context: 160,
            seed,
            strict_vocab: false,
        }
    }

    pub fn with_words<I, S>(mut self, words: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: AsRef<str>,
    {
        self.vocab_words
            .extend(words.into_iter().map(|w| w.as_ref().to_string()));
        self
    }
}

fn default_words() -> Vec<String> {
    [
        "Yes", "No", "TOXMARK", "the", "a", "dog", "cat", "you", "are", "is", "and", "it",
        "this", "that", "keep", "hiring", "like", "will", "end", "up", "good", "bad", "nice",
        "day", "sun", "rain", "walk", "run", "talk", "see", "go", "stop", "here", "there",
        "one", "two", "three", "red", "blue", "green",
    ]
    .iter()
    .map(|s| s.to_string())
    .collect()
}

struct AttnWeights {
    wq: Array2<f64>,
    wk: Array2<f64>,
    wv: Array2<f64>,
}

struct BlockWeights {
    attn: AttnWeights,
    cross: Option<AttnWeights>,
}

pub struct TinyLm {
    cfg: TinyLmConfig,
    vocab: Vocab,
    embed: Array2<f64>,
    enc_blocks: Vec<BlockWeights>,
    dec_blocks: Vec<BlockWeights>,
    descriptor: BackendDescriptor,
}

fn uniform(rng: &mut ChaCha20Rng, rows: usize, cols: usize, range: f64) -> Array2<f64> {
    Array2::from_shape_fn((rows, cols), |_| rng.gen_range(-range..range))
}

impl TinyLm {
    pub fn new(cfg: TinyLmConfig) -> Self {
        let vocab = Vocab::new(&cfg.vocab_words);
        let d = cfg.d_model;
        let mut rng = ChaCha20Rng::seed_from_u64(cfg.seed);
        let embed = uniform(&mut rng, vocab.len(), d, 1.0);
        let proj_range = 1.0 / (d as f64).sqrt();

        let make_attn = |rng: &mut ChaCha20Rng| AttnWeights {
            wq: uniform(rng, d, d, proj_range),
            wk: uniform(rng, d, d, proj_range),
            wv: uniform(rng, d, d, proj_range),
        };
        let make_block = |rng: &mut ChaCha20Rng, with_cross: bool| BlockWeights {
            attn: make_attn(rng),
            cross: with_cross.then(|| make_attn(rng)),
        };

        let enc_blocks = match cfg.family {
            Family::EncoderDecoder => (0..cfg.num_layers)
                .map(|_| make_block(&mut rng, false))
                .collect(),
            Family::DecoderOnly => Vec::new(),
        };
        let dec_blocks = (0..cfg.num_layers)
            .map(|_| make_block(&mut rng, cfg.family == Family::EncoderDecoder))
            .collect();

        let mut lm = TinyLm {
            descriptor: BackendDescriptor {
                family: cfg.family,
                num_layers: cfg.num_layers,
                d_model: d,
                vocab_size: vocab.len(),
                max_context: cfg.max_context,
                frozen_fingerprint: String::new(),
            },
            cfg,
            vocab,
            embed,
            enc_blocks,
            dec_blocks,
        };
        lm.descriptor.frozen_fingerprint = lm.recompute_fingerprint();
        lm
    }

    pub fn seeded_default(family: Family, seed: u64) -> Self {
        Self::new(TinyLmConfig::new(family, seed))
    }

    pub fn vocab(&self) -> &Vocab {
        &self.vocab
    }

    fn embedding_rows(&self, ids: &[u32]) -> Array2<f64> {
        let d = self.cfg.d_model;
        Array2::from_shape_fn((ids.len(), d), |(row, col)| {
            self.embed[[ids[row] as usize, col]]
        })
    }

    fn check_context(&self, needed: usize) -> Result<(), BackendError> {
        if needed > self.cfg.max_context {
            return Err(BackendError::ContextOverflow {
                needed,
                max: self.cfg.max_context,
            });
        }
        Ok(())
    }
}

/// Handles to the trainable prompt leaves inside one graph.
#[derive(Default)]
struct PromptNodes {
    soft: Option<NodeId>,
    /// Per layer: (key activations, value activations), each `[p × d]`.
    prefix: Vec<(NodeId, NodeId)>,
    /// Direct-prefix leaves in `[layer][kv]` order.
    direct_leaves: Vec<NodeId>,
    /// base, w1, b1, w2, b2.
    reparam_leaves: Option<[NodeId; 5]>,
    prefix_len: usize,
}

enum GraphMode<'a> {
    /// Teacher-forced loss over the full target.
    Loss { target: &'a [u32] },
    /// Next-token logits after `generated`.
    Gen { generated: &'a [u32] },
}

struct Graph {
    tape: Tape,
    loss: Option<NodeId>,
    /// Logits rows aligned with target positions (Loss mode).
    target_logits: Option<NodeId>,
    /// Vocabulary logits for the next token (Gen mode).
    next_logits: Option<Vec<f64>>,
    nodes: PromptNodes,
}

impl TinyLm {
    fn inject_prompt(
        &self,
        tape: &mut Tape,
        prompt: Option<&PromptParams>,
    ) -> Result<PromptNodes, BackendError> {
        let mut nodes = PromptNodes::default();
        let Some(prompt) = prompt else {
            return Ok(nodes);
        };
        prompt.validate_for(&self.descriptor)?;
        match prompt {
            PromptParams::Soft(soft) => {
                nodes.soft = Some(tape.leaf(soft.embeddings.mapv(|v| v as f64)));
                nodes.prefix_len = 0;
            }
            PromptParams::Prefix(prefix) => {
                nodes.prefix_len = prefix.prefix_len;
                match &prefix.reparam {
                    None => {
                        for layer in 0..prefix.num_layers {
                            let k = tape.leaf(prefix.kv_matrix(layer, 0));
                            let v = tape.leaf(prefix.kv_matrix(layer, 1));
                            nodes.direct_leaves.push(k);
                            nodes.direct_leaves.push(v);
                            nodes.prefix.push((k, v));
                        }
                    }
                    Some(mlp) => {
                        let base = tape.leaf(mlp.base.mapv(|v| v as f64));
                        let w1 = tape.leaf(mlp.w1.mapv(|v| v as f64));
                        let b1 = tape.leaf(mlp.b1.mapv(|v| v as f64));
                        let w2 = tape.leaf(mlp.w2.mapv(|v| v as f64));
                        let b2 = tape.leaf(mlp.b2.mapv(|v| v as f64));
                        nodes.reparam_leaves = Some([base, w1, b1, w2, b2]);
                        let pre = tape.matmul(base, w1);
                        let pre = tape.add_row(pre, b1);
                        let hidden = tape.tanh(pre);
                        let out = tape.matmul(hidden, w2);
                        let out = tape.add_row(out, b2);
                        let d = prefix.d_model;
                        for layer in 0..prefix.num_layers {
                            let k = tape.slice_cols(out, (layer * 2) * d, d);
                            let v = tape.slice_cols(out, (layer * 2 + 1) * d, d);
                            nodes.prefix.push((k, v));
                        }
                    }
                }
            }
        }
        Ok(nodes)
    }

    fn attention(
        &self,
        tape: &mut Tape,
        x_q: NodeId,
        x_kv: NodeId,
        weights: &AttnWeights,
        prefix: Option<(NodeId, NodeId)>,
        causal: bool,
    ) -> NodeId {
        let d = self.cfg.d_model;
        let wq = tape.constant(weights.wq.clone());
        let wk = tape.constant(weights.wk.clone());
        let wv = tape.constant(weights.wv.clone());
        let q = tape.matmul(x_q, wq);
        let mut k = tape.matmul(x_kv, wk);
        let mut v = tape.matmul(x_kv, wv);
        let mut prefix_len = 0;
        if let Some((pk, pv)) = prefix {
            prefix_len = tape.value(pk).nrows();
            k = tape.concat_rows(&[pk, k]);
            v = tape.concat_rows(&[pv, v]);
        }
        let scores = tape.matmul_bt(q, k);
        let mut scores = tape.scale(scores, 1.0 / (d as f64).sqrt());
        if causal {
            let n_q = tape.value(q).nrows();
            let n_cols = tape.value(k).nrows();
            let mask = Array2::from_shape_fn((n_q, n_cols), |(i, j)| {
                if j >= prefix_len && (j - prefix_len) > i {
                    -1e30
                } else {
                    0.0
                }
            });
            let mask = tape.constant(mask);
            scores = tape.add(scores, mask);
        }
        let attn = tape.softmax_rows(scores);
        tape.matmul(attn, v)
    }

    fn run_stack(
        &self,
        tape: &mut Tape,
        mut h: NodeId,
        blocks: &[BlockWeights],
        prompt: &PromptNodes,
        causal: bool,
        encoder_out: Option<NodeId>,
    ) -> NodeId {
        // Residual attention blocks: h ← h + attn(h) [+ cross(h, enc)].
        // No saturating mix, so value vectors act additively on the logits
        // and prompt parameters can steer them directly.
        for (layer, block) in blocks.iter().enumerate() {
            let prefix = prompt.prefix.get(layer).copied();
            let self_ctx = self.attention(tape, h, h, &block.attn, prefix, causal);
            let mut mixed = tape.add(h, self_ctx);
            if let (Some(enc), Some(cross)) = (encoder_out, &block.cross) {
                let cross_ctx = self.attention(tape, h, enc, cross, None, false);
                mixed = tape.add(mixed, cross_ctx);
            }
            h = mixed;
        }
        h
    }

    fn build_graph(
        &self,
        prompt: Option<&PromptParams>,
        input: &TokenSeq,
        mode: GraphMode<'_>,
    ) -> Result<Graph, BackendError> {
        let mut tape = Tape::new();
        let nodes = self.inject_prompt(&mut tape, prompt)?;
        let soft_len = nodes.soft.map(|s| tape.value(s).nrows()).unwrap_or(0);
        let embed_const = tape.constant(self.embed.clone());
        let bos_rows = self.embedding_rows(&[BOS]);

        match self.cfg.family {
            Family::DecoderOnly => {
                let seq: Vec<u32> = match &mode {
                    GraphMode::Loss { target } => {
                        input.ids.iter().chain(target.iter()).copied().collect()
                    }
                    GraphMode::Gen { generated } => {
                        input.ids.iter().chain(generated.iter()).copied().collect()
                    }
                };
                let rows = 1 + soft_len + seq.len();
                self.check_context(rows + nodes.prefix_len)?;

                let bos = tape.constant(bos_rows);
                let mut parts = vec![bos];
                if let Some(soft) = nodes.soft {
                    parts.push(soft);
                }
                if !seq.is_empty() {
                    let emb = tape.constant(self.embedding_rows(&seq));
                    parts.push(emb);
                }
                let x = tape.concat_rows(&parts);
                let h = self.run_stack(&mut tape, x, &self.dec_blocks, &nodes, true, None);
                let logits = tape.matmul_bt(h, embed_const);

                match mode {
                    GraphMode::Loss { target } => {
                        let m = target.len();
                        let start = soft_len + input.ids.len();
                        let target_logits = tape.slice_rows(logits, start, m);
                        let loss = tape.cross_entropy_mean(
                            target_logits,
                            target.iter().map(|&t| t as usize).collect(),
                        );
                        Ok(Graph {
                            tape,
                            loss: Some(loss),
                            target_logits: Some(target_logits),
                            next_logits: None,
                            nodes,
                        })
                    }
                    GraphMode::Gen { .. } => {
                        let last = tape.value(logits).nrows() - 1;
                        let next = tape.value(logits).row(last).to_vec();
                        Ok(Graph {
                            tape,
                            loss: None,
                            target_logits: None,
                            next_logits: Some(next),
                            nodes,
                        })
                    }
                }
            }
            Family::EncoderDecoder => {
                let enc_rows = 1 + soft_len + input.ids.len();
                self.check_context(enc_rows + nodes.prefix_len)?;

                let bos = tape.constant(bos_rows.clone());
                let mut parts = vec![bos];
                if let Some(soft) = nodes.soft {
                    parts.push(soft);
                }
                if !input.ids.is_empty() {
                    let emb = tape.constant(self.embedding_rows(&input.ids));
                    parts.push(emb);
                }
                let enc_x = tape.concat_rows(&parts);
                let enc_h =
                    self.run_stack(&mut tape, enc_x, &self.enc_blocks, &nodes, false, None);

                let dec_ids: Vec<u32> = match &mode {
                    GraphMode::Loss { target } => std::iter::once(BOS)
                        .chain(target[..target.len() - 1].iter().copied())
                        .collect(),
                    GraphMode::Gen { generated } => std::iter::once(BOS)
                        .chain(generated.iter().copied())
                        .collect(),
                };
                self.check_context(dec_ids.len() + nodes.prefix_len)?;
                let dec_x = tape.constant(self.embedding_rows(&dec_ids));
                let dec_h = self.run_stack(
                    &mut tape,
                    dec_x,
                    &self.dec_blocks,
                    &nodes,
                    true,
                    Some(enc_h),
                );
                let logits = tape.matmul_bt(dec_h, embed_const);

                match mode {
                    GraphMode::Loss { target } => {
                        let loss = tape.cross_entropy_mean(
                            logits,
                            target.iter().map(|&t| t as usize).collect(),
                        );
                        Ok(Graph {
                            tape,
                            loss: Some(loss),
                            target_logits: Some(logits),
                            next_logits: None,
                            nodes,
                        })
                    }
                    GraphMode::Gen { .. } => {
                        let last = tape.value(logits).nrows() - 1;
                        let next = tape.value(logits).row(last).to_vec();
                        Ok(Graph {
                            tape,
                            loss: None,
                            target_logits: None,
                            next_logits: Some(next),
                            nodes,
                        })
                    }
                }
            }
        }
    }

    fn extract_grad(&self, graph: &Graph, prompt: &PromptParams) -> PromptGrad {
        let tape = &graph.tape;
        match prompt {
            PromptParams::Soft(soft) => {
                let g = graph
                    .nodes
                    .soft
                    .and_then(|id| tape.grad(id).cloned())
                    .unwrap_or_else(|| Array2::zeros(soft.embeddings.dim()));
                PromptGrad::Soft(g)
            }
            PromptParams::Prefix(prefix) => match &prefix.reparam {
                None => {
                    let mut flat = vec![0.0; prefix.kv.len()];
                    for layer in 0..prefix.num_layers {
                        for half in 0..2 {
                            let leaf = graph.nodes.direct_leaves[layer * 2 + half];
                            if let Some(g) = tape.grad(leaf) {
                                for pos in 0..prefix.prefix_len {
                                    for dim in 0..prefix.d_model {
                                        flat[prefix.kv_index(layer, half, pos, dim)] =
                                            g[[pos, dim]];
                                    }
                                }
                            }
                        }
                    }
                    PromptGrad::Prefix(flat)
                }
                Some(mlp) => {
                    let leaves = graph.nodes.reparam_leaves.expect("reparam leaves");
                    let shapes = [
                        mlp.base.dim(),
                        mlp.w1.dim(),
                        mlp.b1.dim(),
                        mlp.w2.dim(),
                        mlp.b2.dim(),
                    ];
                    let mut grads: Vec<Array2<f64>> = Vec::new();
                    for (leaf, dim) in leaves.iter().zip(shapes) {
                        grads.push(
                            tape.grad(*leaf)
                                .cloned()
                                .unwrap_or_else(|| Array2::zeros(dim)),
                        );
                    }
                    let b2 = grads.pop().unwrap();
                    let w2 = grads.pop().unwrap();
                    let b1 = grads.pop().unwrap();
                    let w1 = grads.pop().unwrap();
                    let base = grads.pop().unwrap();
                    PromptGrad::PrefixReparam { base, w1, b1, w2, b2 }
                }
            },
        }
    }
}

impl LmBackend for TinyLm {
    fn descriptor(&self) -> &BackendDescriptor {
        &self.descriptor
    }

    fn encode(&self, text: &str) -> Result<TokenSeq, BackendError> {
        self.vocab.encode(text, self.cfg.strict_vocab)
    }

    fn decode(&self, ids: &[u32]) -> String {
        self.vocab.decode(ids)
    }

    fn token_embedding(&self, id: u32) -> Option<Vec<f32>> {
        if (id as usize) < self.embed.nrows() {
            Some(self.embed.row(id as usize).iter().map(|&v| v as f32).collect())
        } else {
            None
        }
    }

    fn forward_with_prompt(
        &self,
        prompt: Option<&PromptParams>,
        input: &TokenSeq,
        target: &TokenSeq,
    ) -> Result<ForwardOutput, BackendError> {
        if target.is_empty() {
            return Err(BackendError::EmptyText);
        }
        let graph = self.build_graph(prompt, input, GraphMode::Loss { target: &target.ids })?;
        let loss = graph.tape.value(graph.loss.unwrap())[[0, 0]];
        let logits = graph.tape.value(graph.target_logits.unwrap()).clone();
        Ok(ForwardOutput { loss, logits })
    }

    fn grad_with_prompt(
        &self,
        prompt: &PromptParams,
        input: &TokenSeq,
        target: &TokenSeq,
    ) -> Result<(f64, PromptGrad), BackendError> {
        if target.is_empty() {
            return Err(BackendError::EmptyText);
        }
        let mut graph =
            self.build_graph(Some(prompt), input, GraphMode::Loss { target: &target.ids })?;
        let loss_id = graph.loss.unwrap();
        let loss = graph.tape.value(loss_id)[[0, 0]];
        graph.tape.backward(loss_id);
        Ok((loss, self.extract_grad(&graph, prompt)))
    }

    fn generate(
        &self,
        prompt: Option<&PromptParams>,
        input: &TokenSeq,
        cfg: &DecodeConfig,
    ) -> Result<String, BackendError> {
        let mut generated: Vec<u32> = Vec::new();
        for _ in 0..cfg.max_len {
            let graph =
                self.build_graph(prompt, input, GraphMode::Gen { generated: &generated })?;
            let logits = graph.next_logits.unwrap();
            let next = logits
                .iter()
                .enumerate()
                .max_by(|(_, a), (_, b)| a.partial_cmp(b).expect("finite logits"))
                .map(|(idx, _)| idx as u32)
                .unwrap();
            if next == EOS {
                break;
            }
            generated.push(next);
        }
        Ok(self.decode(&generated))
    }

    fn score_perplexity(&self, text: &str) -> Result<f64, BackendError> {
        let tokens = self.encode(text)?;
        if tokens.is_empty() {
            return Err(BackendError::EmptyText);
        }
        let out = self.forward_with_prompt(None, &TokenSeq::default(), &tokens)?;
        Ok(out.loss.exp())
    }

    fn recompute_fingerprint(&self) -> String {
        let mut hasher = Sha256::new();
        hasher.update([match self.cfg.family {
            Family::EncoderDecoder => 1u8,
            Family::DecoderOnly => 2u8,
        }]);
        for dim in [self.cfg.d_model, self.cfg.num_layers, self.vocab.len()] {
            hasher.update((dim as u64).to_le_bytes());
        }
        for word in self.vocab.words() {
            hasher.update(word.as_bytes());
            hasher.update([0]);
        }
        let feed = |m: &Array2<f64>| {
            let mut h2 = Sha256::new();
            for v in m.iter() {
                h2.update(v.to_le_bytes());
            }
            h2.finalize()
        };
        hasher.update(feed(&self.embed));
        for block in self.enc_blocks.iter().chain(&self.dec_blocks) {
            for m in [&block.attn.wq, &block.attn.wk, &block.attn.wv] {
                hasher.update(feed(m));
            }
            if let Some(cross) = &block.cross {
                for m in [&cross.wq, &cross.wk, &cross.wv] {
                    hasher.update(feed(m));
                }
            }
        }
        format!("{:x}", hasher.finalize())
    }
}
