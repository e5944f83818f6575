//! Encoder-only transformer classifier over byte tokens.
//!
//! Token, position and segment embeddings feed a stack of post-norm
//! blocks (self-attention then feed-forward, each followed by a residual
//! add and layer norm). The final hidden state at the CLS position goes
//! straight into a linear head.

mod checkpoint;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::tensor::{Float, Graph, Tensor, TensorError, Var};
use crate::tokenizer::{TokenSequence, UNIQUE_BYTES, VOCAB_SIZE};

pub use checkpoint::{Checkpoint, CheckpointError, FORMAT_VERSION};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ModelError {
    #[error("invalid model config: {0}")]
    InvalidConfig(String),
    #[error("sequence capacity {capacity} exceeds max_position_embeddings {max}")]
    SequenceTooLong { capacity: usize, max: usize },
    #[error("batch sequences must share one capacity")]
    RaggedBatch,
    #[error("empty batch")]
    EmptyBatch,
    #[error("parameter set does not match the config: {0}")]
    ParameterMismatch(String),
    #[error(transparent)]
    Tensor(#[from] TensorError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    #[default]
    Gelu,
    Relu,
}

impl std::str::FromStr for Activation {
    type Err = ModelError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "gelu" => Ok(Activation::Gelu),
            "relu" => Ok(Activation::Relu),
            other => Err(ModelError::InvalidConfig(format!("unknown activation {other:?}"))),
        }
    }
}

impl std::fmt::Display for Activation {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Activation::Gelu => "gelu",
            Activation::Relu => "relu",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelConfig {
    pub unique_bytes: usize,
    pub hidden_size: usize,
    pub num_hidden_layers: usize,
    pub num_attention_heads: usize,
    pub intermediate_size: usize,
    pub max_position_embeddings: usize,
    pub num_labels: usize,
    pub dropout_p: f64,
    pub activation: Activation,
    pub layer_norm_eps: f64,
    pub seed: u64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self::paper(2)
    }
}

impl ModelConfig {
    /// Full-size configuration: 12 layers of width 768 over 1460 positions.
    pub fn paper(num_labels: usize) -> Self {
        Self {
            unique_bytes: UNIQUE_BYTES,
            hidden_size: 768,
            num_hidden_layers: 12,
            num_attention_heads: 12,
            intermediate_size: 3072,
            max_position_embeddings: 1460,
            num_labels,
            dropout_p: 0.0,
            activation: Activation::Gelu,
            layer_norm_eps: 1e-12,
            seed: 0,
        }
    }

    /// Small configuration that trains on a CPU in minutes.
    pub fn desk(num_labels: usize) -> Self {
        Self {
            hidden_size: 64,
            num_hidden_layers: 2,
            num_attention_heads: 2,
            intermediate_size: 128,
            max_position_embeddings: 128,
            ..Self::paper(num_labels)
        }
    }

    pub fn preset(name: &str, num_labels: usize) -> Result<Self, ModelError> {
        match name {
            "paper" => Ok(Self::paper(num_labels)),
            "desk" => Ok(Self::desk(num_labels)),
            other => Err(ModelError::InvalidConfig(format!("unknown preset {other:?}"))),
        }
    }

    pub fn vocab_size(&self) -> usize {
        self.unique_bytes + 2
    }

    pub fn head_dim(&self) -> usize {
        self.hidden_size / self.num_attention_heads
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        let bad = |m: String| Err(ModelError::InvalidConfig(m));
        if self.unique_bytes != UNIQUE_BYTES {
            return bad(format!("unique_bytes must be {UNIQUE_BYTES}, got {}", self.unique_bytes));
        }
        if self.hidden_size == 0 || self.num_attention_heads == 0 || self.num_hidden_layers == 0 {
            return bad("hidden_size, num_attention_heads and num_hidden_layers must be positive".into());
        }
        if self.hidden_size % self.num_attention_heads != 0 {
            return bad(format!(
                "hidden_size {} is not divisible by num_attention_heads {}",
                self.hidden_size, self.num_attention_heads
            ));
        }
        if self.intermediate_size == 0 {
            return bad("intermediate_size must be positive".into());
        }
        if self.max_position_embeddings < 2 {
            return bad("max_position_embeddings must be at least 2".into());
        }
        if !(2..=3).contains(&self.num_labels) {
            return bad(format!("num_labels must be 2 or 3, got {}", self.num_labels));
        }
        if !(0.0..1.0).contains(&self.dropout_p) {
            return bad(format!("dropout_p must lie in [0, 1), got {}", self.dropout_p));
        }
        if !(self.layer_norm_eps > 0.0) {
            return bad("layer_norm_eps must be positive".into());
        }
        Ok(())
    }

    /// Parameter names and shapes in canonical (checkpoint) order.
    pub fn layout(&self) -> Vec<(String, Vec<usize>)> {
        let (h, i, k) = (self.hidden_size, self.intermediate_size, self.num_labels);
        let mut out = vec![
            ("embeddings.token".to_string(), vec![self.vocab_size(), h]),
            ("embeddings.position".to_string(), vec![self.max_position_embeddings, h]),
            ("embeddings.segment".to_string(), vec![2, h]),
        ];
        for l in 0..self.num_hidden_layers {
            let p = format!("blocks.{l}");
            for proj in ["query", "key", "value", "output"] {
                out.push((format!("{p}.attention.{proj}.weight"), vec![h, h]));
                out.push((format!("{p}.attention.{proj}.bias"), vec![h]));
            }
            out.push((format!("{p}.attention_norm.gain"), vec![h]));
            out.push((format!("{p}.attention_norm.bias"), vec![h]));
            out.push((format!("{p}.ffn.up.weight"), vec![h, i]));
            out.push((format!("{p}.ffn.up.bias"), vec![i]));
            out.push((format!("{p}.ffn.down.weight"), vec![i, h]));
            out.push((format!("{p}.ffn.down.bias"), vec![h]));
            out.push((format!("{p}.ffn_norm.gain"), vec![h]));
            out.push((format!("{p}.ffn_norm.bias"), vec![h]));
        }
        out.push(("head.weight".to_string(), vec![h, k]));
        out.push(("head.bias".to_string(), vec![k]));
        out
    }

    /// Closed-form parameter count.
    pub fn parameter_count(&self) -> usize {
        let (h, i, k) = (self.hidden_size, self.intermediate_size, self.num_labels);
        let embeddings = (self.vocab_size() + self.max_position_embeddings + 2) * h;
        let attention = 4 * (h * h + h);
        let ffn = h * i + i + i * h + h;
        let norms = 2 * 2 * h;
        embeddings + self.num_hidden_layers * (attention + ffn + norms) + h * k + k
    }
}

/// Named parameter tensors in [`ModelConfig::layout`] order.
#[derive(Debug, Clone, PartialEq)]
pub struct Parameters<T> {
    pub entries: Vec<(String, Tensor<T>)>,
}

impl<T: Float> Parameters<T> {
    pub fn get(&self, name: &str) -> Option<&Tensor<T>> {
        self.entries.iter().find(|(n, _)| n == name).map(|(_, t)| t)
    }

    pub fn count(&self) -> usize {
        self.entries.iter().map(|(_, t)| t.len()).sum()
    }

    pub fn cast<U: Float>(&self) -> Parameters<U> {
        Parameters { entries: self.entries.iter().map(|(n, t)| (n.clone(), t.cast())).collect() }
    }

    /// Checks names and shapes against a config.
    pub fn check(&self, config: &ModelConfig) -> Result<(), ModelError> {
        let layout = config.layout();
        if layout.len() != self.entries.len() {
            return Err(ModelError::ParameterMismatch(format!(
                "expected {} tensors, found {}",
                layout.len(),
                self.entries.len()
            )));
        }
        for ((name, shape), (n, t)) in layout.iter().zip(&self.entries) {
            if name != n || shape.as_slice() != t.shape() {
                return Err(ModelError::ParameterMismatch(format!(
                    "expected {name} {shape:?}, found {n} {:?}",
                    t.shape()
                )));
            }
        }
        Ok(())
    }
}

const INIT_STD: f64 = 0.02;

/// Weights ~ Normal(0, 0.02), biases 0, layer-norm gains 1. Draws happen in
/// layout order from one ChaCha8 stream seeded by `seed`.
pub fn init(config: &ModelConfig, seed: u64) -> Result<Parameters<f32>, ModelError> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let normal = Normal::new(0.0f64, INIT_STD).expect("valid std");
    let entries = config
        .layout()
        .into_iter()
        .map(|(name, shape)| {
            let n: usize = shape.iter().product();
            let data: Vec<f32> = if name.ends_with(".gain") {
                vec![1.0; n]
            } else if name.ends_with(".bias") {
                vec![0.0; n]
            } else {
                (0..n).map(|_| normal.sample(&mut rng) as f32).collect()
            };
            let t = Tensor::new(&shape, data).expect("layout shape");
            (name, t)
        })
        .collect();
    Ok(Parameters { entries })
}

/// Parameters placed on a graph, addressable by layout position.
pub struct Bound {
    vars: Vec<Var>,
    layers: usize,
}

const EMB_TOKEN: usize = 0;
const EMB_POSITION: usize = 1;
const EMB_SEGMENT: usize = 2;
const PER_BLOCK: usize = 16;

impl Bound {
    /// Wraps vars already on a graph, in layout order.
    pub fn from_vars(vars: Vec<Var>, layers: usize) -> Self {
        assert_eq!(vars.len(), 5 + layers * PER_BLOCK, "vars do not match the layout");
        Self { vars, layers }
    }

    pub fn vars(&self) -> &[Var] {
        &self.vars
    }

    fn block(&self, l: usize, offset: usize) -> Var {
        self.vars[3 + l * PER_BLOCK + offset]
    }

    fn head(&self) -> (Var, Var) {
        let base = 3 + self.layers * PER_BLOCK;
        (self.vars[base], self.vars[base + 1])
    }
}

/// Adds every parameter to `g`, trainable when `trainable` is set.
pub fn bind<T: Float>(g: &mut Graph<T>, params: &Parameters<T>, trainable: bool) -> Bound {
    let vars = params
        .entries
        .iter()
        .map(|(_, t)| if trainable { g.param(t.clone()) } else { g.constant(t.clone()) })
        .collect::<Vec<_>>();
    let layers = (vars.len() - 5) / PER_BLOCK;
    Bound { vars, layers }
}

/// Graph nodes produced by one forward pass.
pub struct ForwardOutput {
    /// `[batch, num_labels]`.
    pub logits: Var,
    /// Per layer, `[batch, heads, len, len]` post-softmax weights.
    pub attention: Vec<Var>,
}

/// Optional dropout stream; `None` means inference.
#[derive(Debug, Clone, Copy)]
pub struct Dropout {
    pub p: f64,
    pub seed: u64,
}

fn check_batch(config: &ModelConfig, batch: &[TokenSequence]) -> Result<usize, ModelError> {
    let first = batch.first().ok_or(ModelError::EmptyBatch)?;
    let len = first.capacity();
    if batch.iter().any(|s| s.capacity() != len || s.mask.len() != len) {
        return Err(ModelError::RaggedBatch);
    }
    if len > config.max_position_embeddings {
        return Err(ModelError::SequenceTooLong { capacity: len, max: config.max_position_embeddings });
    }
    if len == 0 {
        return Err(ModelError::EmptyBatch);
    }
    Ok(len)
}

/// Builds the forward pass for `batch` on `g`.
pub fn forward<T: Float>(
    g: &mut Graph<T>,
    p: &Bound,
    config: &ModelConfig,
    batch: &[TokenSequence],
    dropout: Option<Dropout>,
) -> Result<ForwardOutput, ModelError> {
    let len = check_batch(config, batch)?;
    let b = batch.len();
    let (h, heads) = (config.hidden_size, config.num_attention_heads);
    let dh = config.head_dim();
    let eps = T::lit(config.layer_norm_eps);
    let mut drop_counter = 0u64;
    let mut drop = |g: &mut Graph<T>, x: Var| match dropout {
        Some(d) if d.p > 0.0 => {
            drop_counter += 1;
            g.dropout(x, d.p, d.seed.wrapping_mul(0x9E37_79B9_7F4A_7C15).wrapping_add(drop_counter))
        }
        _ => x,
    };

    let ids: Vec<usize> = batch.iter().flat_map(|s| s.ids.iter().map(|&i| i as usize)).collect();
    let tok = g.embedding(p.vars[EMB_TOKEN], &ids, &[b, len])?;
    let positions: Vec<usize> = (0..len).collect();
    let pos = g.embedding(p.vars[EMB_POSITION], &positions, &[len])?;
    let seg = g.embedding(p.vars[EMB_SEGMENT], &[0], &[])?;
    let x = g.add(tok, pos)?;
    let x = g.add(x, seg)?;
    let mut x = drop(g, x);

    // key-side padding mask broadcast to [b, heads, len(query), len(key)]
    let mut key_mask = Vec::with_capacity(b * heads * len * len);
    for s in batch {
        for _ in 0..heads * len {
            key_mask.extend(s.mask.iter().map(|&m| m == 0));
        }
    }
    let inv_sqrt = T::lit(1.0 / (dh as f64).sqrt());

    let mut attention = Vec::with_capacity(config.num_hidden_layers);
    for l in 0..config.num_hidden_layers {
        let proj = |g: &mut Graph<T>, x: Var, w: usize| -> Result<Var, ModelError> {
            let y = g.matmul(x, p.block(l, w))?;
            Ok(g.add(y, p.block(l, w + 1))?)
        };
        let split_heads = |g: &mut Graph<T>, x: Var| -> Result<Var, ModelError> {
            let y = g.reshape(x, &[b, len, heads, dh])?;
            Ok(g.transpose(y, 1, 2)?)
        };
        let q = proj(g, x, 0)?;
        let q = split_heads(g, q)?;
        let k = proj(g, x, 2)?;
        let k = split_heads(g, k)?;
        let v = proj(g, x, 4)?;
        let v = split_heads(g, v)?;

        let kt = g.transpose(k, 2, 3)?;
        let scores = g.matmul(q, kt)?;
        let scores = g.scale(scores, inv_sqrt);
        let scores = g.masked_fill(scores, &key_mask, T::neg_infinity())?;
        let weights = g.softmax(scores);
        attention.push(weights);

        let ctx = g.matmul(weights, v)?;
        let ctx = g.transpose(ctx, 1, 2)?;
        let ctx = g.reshape(ctx, &[b, len, h])?;
        let attn_out = proj(g, ctx, 6)?;
        let attn_out = drop(g, attn_out);
        let res = g.add(x, attn_out)?;
        let x1 = g.layer_norm(res, p.block(l, 8), p.block(l, 9), eps)?;

        let up = proj(g, x1, 10)?;
        let act = match config.activation {
            Activation::Gelu => g.gelu(up),
            Activation::Relu => g.relu(up),
        };
        let down = proj(g, act, 12)?;
        let down = drop(g, down);
        let res = g.add(x1, down)?;
        x = g.layer_norm(res, p.block(l, 14), p.block(l, 15), eps)?;
    }

    let cls = g.select(x, 1, 0)?;
    let (hw, hb) = p.head();
    let logits = g.matmul(cls, hw)?;
    let logits = g.add(logits, hb)?;
    Ok(ForwardOutput { logits, attention })
}

/// Index of the largest value; ties go to the lowest index.
pub fn argmax<T: PartialOrd + Copy>(row: &[T]) -> usize {
    let mut best = 0;
    for (i, v) in row.iter().enumerate().skip(1) {
        if *v > row[best] {
            best = i;
        }
    }
    best
}

/// Row-wise argmax of `[batch, num_labels]` logits.
pub fn predict<T: Float>(logits: &Tensor<T>) -> Vec<u32> {
    let k = *logits.shape().last().unwrap_or(&1);
    logits.data().chunks(k.max(1)).map(|row| argmax(row) as u32).collect()
}

/// A config with its parameters, ready for inference.
#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    pub config: ModelConfig,
    pub params: Parameters<f32>,
}

impl Model {
    pub fn new(config: ModelConfig) -> Result<Self, ModelError> {
        let params = init(&config, config.seed)?;
        Ok(Self { config, params })
    }

    pub fn from_parameters(config: ModelConfig, params: Parameters<f32>) -> Result<Self, ModelError> {
        config.validate()?;
        params.check(&config)?;
        Ok(Self { config, params })
    }

    /// `[batch, num_labels]` logits. Read-only, so safe to call from
    /// several threads at once.
    pub fn logits(&self, batch: &[TokenSequence]) -> Result<Tensor<f32>, ModelError> {
        let mut g = Graph::new();
        let bound = bind(&mut g, &self.params, false);
        let out = forward(&mut g, &bound, &self.config, batch, None)?;
        Ok(g.value(out.logits).clone())
    }

    /// Tokenizes payloads at the model's position limit and returns logits.
    pub fn logits_for_payloads<P: AsRef<[u8]>>(&self, payloads: &[P]) -> Result<Tensor<f32>, ModelError> {
        let batch = crate::tokenizer::encode_batch(payloads, self.config.max_position_embeddings);
        self.logits(&batch)
    }

    pub fn predict(&self, batch: &[TokenSequence]) -> Result<Vec<u32>, ModelError> {
        Ok(predict(&self.logits(batch)?))
    }
}

const _: () = assert!(VOCAB_SIZE == UNIQUE_BYTES + 2);
