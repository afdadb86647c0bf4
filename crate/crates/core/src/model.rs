//! Toy transformer decoder with cyclic parameter sharing.
//!
//! The network unrolls to `N = groups * n_unique` *virtual* layers, but only
//! `n_unique` weight sets exist: virtual layer `l` uses unique layer
//! `l % n_unique`, so each group of `n_unique` consecutive virtual layers
//! applies the same unique layers in the same order. A single tied
//! classifier (the embedding transpose, behind one shared final layer norm)
//! is applied at every group exit, which is what lets a token's
//! classification be read off before it has finished the full depth.
//!
//! All arithmetic is f32 with fixed reduction order (see [`crate::tensor`]),
//! so a forward pass is a pure function of its inputs down to the bit.

use std::ops::Range;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kvcache::KvCache;
use crate::tensor::{self, Tensor2D};

/// Token identifier. `-1` is the pipeline's "no token" sentinel and is never
/// a real vocabulary id.
pub type TokenId = i32;

/// Per-group classifier outputs for one pipeline stage. `None` marks a
/// stage slot that held no token (a bubble), rather than a zero-filled row.
pub type GroupExitLogits = Vec<Option<Vec<f32>>>;

/// Byte-level vocabulary: 256 byte values plus bos/eos/pad.
pub const BYTE_VOCAB_SIZE: usize = 259;
pub const BYTE_BOS: TokenId = 256;
pub const BYTE_EOS: TokenId = 257;
pub const BYTE_PAD: TokenId = 258;

/// Epsilon for every layer norm in the model.
pub const LN_EPS: f32 = 1e-5;

/// Shape and sharing geometry of a decoder plus its decoding limits.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ShareConfig {
    /// Number of unique decoder layers (the weights that actually exist).
    pub n_unique: usize,
    /// Number of times the unique layers are cycled (pipeline depth).
    pub groups: usize,
    pub d_model: usize,
    pub n_heads: usize,
    pub d_head: usize,
    pub d_ffn: usize,
    pub vocab_size: usize,
    /// Maximum number of generated tokens per decode.
    pub max_decode_length: usize,
    pub bos_id: TokenId,
    pub eos_id: TokenId,
    pub pad_id: TokenId,
}

impl ShareConfig {
    /// Byte-level config with conventional derived dims (`d_head =
    /// d_model / n_heads`, `d_ffn = 4 * d_model`).
    pub fn byte_level(
        n_unique: usize,
        groups: usize,
        d_model: usize,
        n_heads: usize,
        max_decode_length: usize,
    ) -> Result<Self> {
        if n_heads == 0 || !d_model.is_multiple_of(n_heads) {
            return Err(Error::InvalidConfig(format!(
                "d_model {d_model} not divisible by n_heads {n_heads}"
            )));
        }
        let cfg = Self {
            n_unique,
            groups,
            d_model,
            n_heads,
            d_head: d_model / n_heads,
            d_ffn: 4 * d_model,
            vocab_size: BYTE_VOCAB_SIZE,
            max_decode_length,
            bos_id: BYTE_BOS,
            eos_id: BYTE_EOS,
            pad_id: BYTE_PAD,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    /// Total virtual layers `N = groups * n_unique`.
    pub fn total_layers(&self) -> usize {
        self.groups * self.n_unique
    }

    /// Unique-layer index backing virtual layer `l` (the cyclic mapping).
    pub fn unique_index(&self, l: usize) -> usize {
        l % self.n_unique
    }

    /// Virtual-layer range making up group `g`.
    pub fn group_layers(&self, g: usize) -> Range<usize> {
        g * self.n_unique..(g + 1) * self.n_unique
    }

    pub fn token_in_vocab(&self, t: TokenId) -> bool {
        t >= 0 && (t as usize) < self.vocab_size
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_unique == 0
            || self.groups == 0
            || self.d_model == 0
            || self.n_heads == 0
            || self.d_head == 0
            || self.d_ffn == 0
            || self.vocab_size == 0
            || self.max_decode_length == 0
        {
            return Err(Error::InvalidConfig("all counts must be nonzero".into()));
        }
        if self.n_heads * self.d_head != self.d_model {
            return Err(Error::InvalidConfig(format!(
                "n_heads {} * d_head {} != d_model {}",
                self.n_heads, self.d_head, self.d_model
            )));
        }
        let ids = [self.bos_id, self.eos_id, self.pad_id];
        for id in ids {
            if !self.token_in_vocab(id) {
                return Err(Error::InvalidConfig(format!(
                    "control token {id} outside vocab of {}",
                    self.vocab_size
                )));
            }
        }
        if ids[0] == ids[1] || ids[0] == ids[2] || ids[1] == ids[2] {
            return Err(Error::InvalidConfig("control tokens must be distinct".into()));
        }
        Ok(())
    }
}

/// One unique decoder layer: pre-norm attention block + pre-norm FFN block.
#[derive(Debug, Clone, PartialEq)]
pub struct DecoderLayerWeights {
    /// Attention projections, each `d_model x d_model` (input rows).
    pub wq: Tensor2D,
    pub wk: Tensor2D,
    pub wv: Tensor2D,
    pub wo: Tensor2D,
    /// FFN matrices: `d_model x d_ffn` in, `d_ffn x d_model` out.
    pub w_in: Tensor2D,
    pub w_out: Tensor2D,
    pub ln_attn_gain: Vec<f32>,
    pub ln_attn_bias: Vec<f32>,
    pub ln_ffn_gain: Vec<f32>,
    pub ln_ffn_bias: Vec<f32>,
}

impl DecoderLayerWeights {
    fn check_shapes(&self, cfg: &ShareConfig) -> Result<()> {
        let d = cfg.d_model;
        let square = [&self.wq, &self.wk, &self.wv, &self.wo];
        if square.iter().any(|m| m.rows() != d || m.cols() != d) {
            return Err(Error::ModelMismatch(format!(
                "attention projections must be {d}x{d}"
            )));
        }
        if self.w_in.rows() != d || self.w_in.cols() != cfg.d_ffn {
            return Err(Error::ModelMismatch(format!(
                "w_in must be {d}x{}",
                cfg.d_ffn
            )));
        }
        if self.w_out.rows() != cfg.d_ffn || self.w_out.cols() != d {
            return Err(Error::ModelMismatch(format!(
                "w_out must be {}x{d}",
                cfg.d_ffn
            )));
        }
        let norms = [
            &self.ln_attn_gain,
            &self.ln_attn_bias,
            &self.ln_ffn_gain,
            &self.ln_ffn_bias,
        ];
        if norms.iter().any(|v| v.len() != d) {
            return Err(Error::ModelMismatch(format!("layer-norm params must be len {d}")));
        }
        Ok(())
    }
}

/// A concrete decoder: `n_unique` weight sets cycled `groups` times, with a
/// tied embedding/classifier and one shared final layer norm.
#[derive(Debug, Clone)]
pub struct NeuralModel {
    config: ShareConfig,
    layers: Vec<DecoderLayerWeights>,
    /// `vocab_size x d_model`; also the classifier via its transpose.
    embedding: Tensor2D,
    final_gain: Vec<f32>,
    final_bias: Vec<f32>,
    /// Generation seed, if this model came from [`NeuralModel::generate`].
    seed: Option<u64>,
}

impl NeuralModel {
    /// Assemble a model from explicit parts, validating every shape.
    pub fn from_parts(
        config: ShareConfig,
        layers: Vec<DecoderLayerWeights>,
        embedding: Tensor2D,
        final_gain: Vec<f32>,
        final_bias: Vec<f32>,
        seed: Option<u64>,
    ) -> Result<Self> {
        config.validate()?;
        if layers.len() != config.n_unique {
            return Err(Error::ModelMismatch(format!(
                "expected {} unique layers, got {}",
                config.n_unique,
                layers.len()
            )));
        }
        for layer in &layers {
            layer.check_shapes(&config)?;
        }
        if embedding.rows() != config.vocab_size || embedding.cols() != config.d_model {
            return Err(Error::ModelMismatch(format!(
                "embedding must be {}x{}",
                config.vocab_size, config.d_model
            )));
        }
        if final_gain.len() != config.d_model || final_bias.len() != config.d_model {
            return Err(Error::ModelMismatch(format!(
                "final layer-norm params must be len {}",
                config.d_model
            )));
        }
        Ok(Self { config, layers, embedding, final_gain, final_bias, seed })
    }

    /// Deterministic random model: projection weights uniform in
    /// `[-s, s)` with `s = 1/sqrt(d_model)`, layer norms initialized to
    /// identity. Same seed and config always produce identical weights.
    pub fn generate(config: ShareConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let s = 1.0 / (config.d_model as f32).sqrt();
        let mut sample = |rows: usize, cols: usize| -> Tensor2D {
            let data: Vec<f32> = (0..rows * cols).map(|_| rng.gen_range(-s..s)).collect();
            Tensor2D::new(rows, cols, data).expect("generated shape is consistent")
        };
        let d = config.d_model;
        // Sampling order is frozen; it defines the seed's meaning.
        let embedding = sample(config.vocab_size, d);
        let layers: Vec<DecoderLayerWeights> = (0..config.n_unique)
            .map(|_| DecoderLayerWeights {
                wq: sample(d, d),
                wk: sample(d, d),
                wv: sample(d, d),
                wo: sample(d, d),
                w_in: sample(d, config.d_ffn),
                w_out: sample(config.d_ffn, d),
                ln_attn_gain: vec![1.0; d],
                ln_attn_bias: vec![0.0; d],
                ln_ffn_gain: vec![1.0; d],
                ln_ffn_bias: vec![0.0; d],
            })
            .collect();
        Self::from_parts(config, layers, embedding, vec![1.0; d], vec![0.0; d], Some(seed))
    }

    pub fn config(&self) -> &ShareConfig {
        &self.config
    }

    pub fn layers(&self) -> &[DecoderLayerWeights] {
        &self.layers
    }

    pub fn embedding(&self) -> &Tensor2D {
        &self.embedding
    }

    pub fn final_norm(&self) -> (&[f32], &[f32]) {
        (&self.final_gain, &self.final_bias)
    }

    pub fn seed(&self) -> Option<u64> {
        self.seed
    }

    /// Weights backing virtual layer `l` (unique layer `l % n_unique`).
    pub fn virtual_layer_weights(&self, l: usize) -> Result<&DecoderLayerWeights> {
        let n = self.config.total_layers();
        if l >= n {
            return Err(Error::LayerOutOfRange(l, n));
        }
        Ok(&self.layers[self.config.unique_index(l)])
    }

    /// Embedding row for `token`.
    pub fn embed(&self, token: TokenId) -> Result<Vec<f32>> {
        if !self.config.token_in_vocab(token) {
            return Err(Error::TokenOutOfRange(token as i64, self.config.vocab_size));
        }
        Ok(self.embedding.row(token as usize).to_vec())
    }

    /// One pre-norm residual block: attention (writing this position's K/V
    /// at virtual layer `l`, then attending over positions `0..=position`
    /// there) followed by the FFN.
    pub fn forward_virtual_layer(
        &self,
        hidden: &[f32],
        l: usize,
        position: usize,
        cache: &mut KvCache,
    ) -> Result<Vec<f32>> {
        let lw = self.virtual_layer_weights(l)?;
        let cfg = &self.config;

        let normed = tensor::layer_norm(hidden, &lw.ln_attn_gain, &lw.ln_attn_bias, LN_EPS)?;
        let q = tensor::matvec(&normed, &lw.wq)?;
        let k = tensor::matvec(&normed, &lw.wk)?;
        let v = tensor::matvec(&normed, &lw.wv)?;
        cache.write(l, position, k, v)?;

        let entries = cache.read_range(l, position as i64)?;
        let scale = 1.0 / (cfg.d_head as f32).sqrt();
        let mut attn = vec![0.0f32; cfg.d_model];
        for h in 0..cfg.n_heads {
            let lo = h * cfg.d_head;
            let hi = lo + cfg.d_head;
            let qh = &q[lo..hi];
            let mut scores = Vec::with_capacity(entries.len());
            for e in entries {
                let kh = &e.k[lo..hi];
                let mut dot = 0.0f32;
                for i in 0..cfg.d_head {
                    dot += qh[i] * kh[i];
                }
                scores.push(dot * scale);
            }
            let weights = tensor::softmax(&scores)?;
            for (w, e) in weights.iter().zip(entries) {
                let vh = &e.v[lo..hi];
                for i in 0..cfg.d_head {
                    attn[lo + i] += w * vh[i];
                }
            }
        }
        let attn_proj = tensor::matvec(&attn, &lw.wo)?;
        let mut hidden: Vec<f32> = hidden.iter().zip(&attn_proj).map(|(a, b)| a + b).collect();

        let normed = tensor::layer_norm(&hidden, &lw.ln_ffn_gain, &lw.ln_ffn_bias, LN_EPS)?;
        let mid = tensor::gelu(&tensor::matvec(&normed, &lw.w_in)?);
        let ffn = tensor::matvec(&mid, &lw.w_out)?;
        for (h, f) in hidden.iter_mut().zip(&ffn) {
            *h += f;
        }
        Ok(hidden)
    }

    /// Shared final layer norm + tied classifier (embedding transpose).
    pub fn exit_logits(&self, hidden: &[f32]) -> Result<Vec<f32>> {
        let normed = tensor::layer_norm(hidden, &self.final_gain, &self.final_bias, LN_EPS)?;
        let mut logits = Vec::with_capacity(self.config.vocab_size);
        for t in 0..self.config.vocab_size {
            let row = self.embedding.row(t);
            let mut dot = 0.0f32;
            for i in 0..self.config.d_model {
                dot += normed[i] * row[i];
            }
            logits.push(dot);
        }
        Ok(logits)
    }

    /// Pass `hidden` through the `n_unique` virtual layers of group
    /// `group_idx` and read the classifier at the exit.
    pub fn forward_group(
        &self,
        hidden: &[f32],
        group_idx: usize,
        position: usize,
        cache: &mut KvCache,
    ) -> Result<(Vec<f32>, Vec<f32>)> {
        if group_idx >= self.config.groups {
            return Err(Error::LayerOutOfRange(
                group_idx * self.config.n_unique,
                self.config.total_layers(),
            ));
        }
        let mut hidden = hidden.to_vec();
        for l in self.config.group_layers(group_idx) {
            hidden = self.forward_virtual_layer(&hidden, l, position, cache)?;
        }
        let logits = self.exit_logits(&hidden)?;
        Ok((hidden, logits))
    }

    /// Full-depth forward: all `N` virtual layers, classifier once at the
    /// end. Equals the chain of `groups` forward_group calls bit-exactly
    /// (the group exits only add classifier reads, which have no side
    /// effects).
    pub fn forward_full(
        &self,
        hidden: &[f32],
        position: usize,
        cache: &mut KvCache,
    ) -> Result<(Vec<f32>, Vec<f32>)> {
        let mut hidden = hidden.to_vec();
        for l in 0..self.config.total_layers() {
            hidden = self.forward_virtual_layer(&hidden, l, position, cache)?;
        }
        let logits = self.exit_logits(&hidden)?;
        Ok((hidden, logits))
    }
}

/// Argmax over logits; ties break toward the lowest token id.
pub fn classify(logits: &[f32]) -> TokenId {
    let mut best = 0usize;
    for (i, &x) in logits.iter().enumerate() {
        if x > logits[best] {
            best = i;
        }
    }
    best as TokenId
}

/// Per-group loss weights `w_i = i / sum(1..=groups)` for `i = 1..=groups`:
/// nondecreasing, summing to 1, weighting deeper exits more.
pub fn linear_weights(groups: usize) -> Result<Vec<f64>> {
    if groups == 0 {
        return Err(Error::EmptyInput("linear_weights: zero groups"));
    }
    let total = (groups * (groups + 1) / 2) as f64;
    Ok((1..=groups).map(|i| i as f64 / total).collect())
}

/// Weighted sum of per-group-exit losses (a dot product).
pub fn weighted_loss(per_group_losses: &[f64], weights: &[f64]) -> Result<f64> {
    if per_group_losses.len() != weights.len() {
        return Err(Error::ShapeMismatch {
            op: "weighted_loss",
            detail: format!("{} losses vs {} weights", per_group_losses.len(), weights.len()),
        });
    }
    if weights.iter().any(|&w| w < 0.0) {
        return Err(Error::InvalidConfig("loss weights must be nonnegative".into()));
    }
    Ok(per_group_losses.iter().zip(weights).map(|(l, w)| l * w).sum())
}

/// Byte-level tokenization: each byte is its own token id.
pub fn tokenize_bytes(text: &[u8]) -> Vec<TokenId> {
    text.iter().map(|&b| b as TokenId).collect()
}

/// Inverse of [`tokenize_bytes`]; non-byte ids (bos/eos/pad) are dropped.
pub fn detokenize_bytes(tokens: &[TokenId]) -> Vec<u8> {
    tokens
        .iter()
        .filter(|&&t| (0..256).contains(&t))
        .map(|&t| t as u8)
        .collect()
}
