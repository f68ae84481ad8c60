//! The transformer: configuration, weights, and the exact forward pass.
//!
//! Layout conventions:
//! - every per-head projection (query, key, value) is a `head_dim × model_dim`
//!   matrix; head `j`'s value output lands in coordinates
//!   `j·head_dim .. (j+1)·head_dim` of the residual stream,
//! - residual connections are always on,
//! - layer norm (pre-norm, plus a final norm before the readout) is applied
//!   only when `use_layer_norm` is set,
//! - the scalar output is a linear readout of the last position.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;
use serde::{Deserialize, Serialize};

use crate::math::{self, axpy, dot};
use crate::tensor::Matrix;
use crate::{Error, Result};

pub const LAYER_NORM_EPS: f64 = 1e-5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TransformerConfig {
    pub n_layers: usize,
    pub n_heads: usize,
    pub head_dim: usize,
    pub model_dim: usize,
    pub vocab_size: usize,
    pub context_len: usize,
    pub use_layer_norm: bool,
    pub use_positional: bool,
}

impl TransformerConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: &str| Err(Error::InvalidConfig(msg.into()));
        if self.n_heads == 0 || self.head_dim == 0 || self.model_dim == 0 {
            return bad("heads, head_dim and model_dim must be positive");
        }
        if self.model_dim != self.head_dim * self.n_heads {
            return Err(Error::InvalidConfig(format!(
                "model_dim {} != head_dim {} × n_heads {}",
                self.model_dim, self.head_dim, self.n_heads
            )));
        }
        if self.vocab_size < 2 {
            return bad("vocab_size must be at least 2");
        }
        if self.context_len < 1 {
            return bad("context_len must be at least 1");
        }
        Ok(())
    }
}

/// A token sequence with 1-based token ids.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TokenSequence {
    pub tokens: Vec<usize>,
}

impl TokenSequence {
    pub fn new(tokens: Vec<usize>, vocab_size: usize) -> Result<Self> {
        let seq = TokenSequence { tokens };
        seq.check(vocab_size)?;
        Ok(seq)
    }

    pub fn check(&self, vocab_size: usize) -> Result<()> {
        if self.tokens.is_empty() {
            return Err(Error::Empty("token sequence"));
        }
        if let Some(&t) = self.tokens.iter().find(|&&t| t == 0 || t > vocab_size) {
            return Err(Error::TokenOutOfVocab {
                token: t,
                vocab: vocab_size,
            });
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn last(&self) -> usize {
        *self.tokens.last().expect("non-empty sequence")
    }

    /// Occurrences of `token` in the sequence.
    pub fn count_of(&self, token: usize) -> usize {
        self.tokens.iter().filter(|&&t| t == token).count()
    }

    /// Query Count label: occurrences of the final token.
    pub fn query_count(&self) -> usize {
        self.count_of(self.last())
    }

    /// Most Frequent Element label: occurrences of the modal token.
    pub fn max_count(&self) -> usize {
        let vocab = self.tokens.iter().copied().max().unwrap_or(0);
        let mut hist = vec![0usize; vocab + 1];
        for &t in &self.tokens {
            hist[t] += 1;
        }
        hist.into_iter().max().unwrap_or(0)
    }

    /// `self ++ self`
    pub fn duplicated(&self) -> TokenSequence {
        let mut tokens = self.tokens.clone();
        tokens.extend_from_slice(&self.tokens);
        TokenSequence { tokens }
    }
}

/// One affine layer `W x + b` with `W: out × in`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dense {
    pub weight: Matrix,
    pub bias: Vec<f64>,
}

impl Dense {
    pub fn zeros(input: usize, output: usize) -> Self {
        Dense {
            weight: Matrix::zeros(output, input),
            bias: vec![0.0; output],
        }
    }

    pub fn input_dim(&self) -> usize {
        self.weight.cols
    }

    pub fn output_dim(&self) -> usize {
        self.weight.rows
    }

    fn apply_into(&self, x: &[f64], out: &mut [f64]) {
        self.weight.matvec_into(x, out);
        for (o, b) in out.iter_mut().zip(&self.bias) {
            *o += b;
        }
    }
}

/// A stack of dense layers with ReLU between consecutive layers and no
/// activation after the last. Two layers give the usual `W2·ReLU(W1 x + b1) + b2`.
/// An empty stack is the zero map.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Mlp {
    pub layers: Vec<Dense>,
}

impl Mlp {
    pub fn empty() -> Self {
        Mlp { layers: Vec::new() }
    }

    pub fn two_layer(input: usize, hidden: usize, output: usize) -> Self {
        Mlp {
            layers: vec![Dense::zeros(input, hidden), Dense::zeros(hidden, output)],
        }
    }

    pub fn is_empty(&self) -> bool {
        self.layers.is_empty()
    }

    /// Total number of ReLU units.
    pub fn hidden_width(&self) -> usize {
        match self.layers.split_last() {
            Some((_, hidden)) => hidden.iter().map(Dense::output_dim).sum(),
            None => 0,
        }
    }

    /// Number of weights and biases.
    pub fn param_count(&self) -> usize {
        self.layers
            .iter()
            .map(|l| l.weight.data.len() + l.bias.len())
            .sum()
    }

    pub fn validate(&self, input: usize, output: usize) -> Result<()> {
        if self.layers.is_empty() {
            return Ok(());
        }
        let mut expect = input;
        for l in &self.layers {
            if l.input_dim() != expect {
                return Err(Error::DimensionMismatch {
                    context: "mlp layer input",
                    expected: expect,
                    actual: l.input_dim(),
                });
            }
            if l.bias.len() != l.output_dim() || l.weight.data.len() != l.weight.rows * l.weight.cols
            {
                return Err(Error::DimensionMismatch {
                    context: "mlp bias",
                    expected: l.output_dim(),
                    actual: l.bias.len(),
                });
            }
            expect = l.output_dim();
        }
        if expect != output {
            return Err(Error::DimensionMismatch {
                context: "mlp output",
                expected: output,
                actual: expect,
            });
        }
        Ok(())
    }

    /// Forward pass keeping every layer's pre-activation (the last entry is the output).
    pub(crate) fn forward_trace(&self, x: &[f64]) -> Vec<Vec<f64>> {
        let mut pre = Vec::with_capacity(self.layers.len());
        let mut act: Vec<f64> = x.to_vec();
        for (i, l) in self.layers.iter().enumerate() {
            let mut z = vec![0.0; l.output_dim()];
            l.apply_into(&act, &mut z);
            if i + 1 < self.layers.len() {
                act = z.iter().map(|&v| v.max(0.0)).collect();
            }
            pre.push(z);
        }
        pre
    }
}

/// Evaluate an MLP on one input vector.
pub fn mlp_forward(mlp: &Mlp, x: &[f64]) -> Result<Vec<f64>> {
    let Some(first) = mlp.layers.first() else {
        return Ok(x.iter().map(|_| 0.0).collect());
    };
    if x.len() != first.input_dim() {
        return Err(Error::DimensionMismatch {
            context: "mlp_forward input",
            expected: first.input_dim(),
            actual: x.len(),
        });
    }
    mlp.validate(first.input_dim(), mlp.layers.last().unwrap().output_dim())?;
    Ok(mlp.forward_trace(x).pop().unwrap())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerNorm {
    pub gain: Vec<f64>,
    pub bias: Vec<f64>,
}

impl LayerNorm {
    pub fn identity(dim: usize) -> Self {
        LayerNorm {
            gain: vec![1.0; dim],
            bias: vec![0.0; dim],
        }
    }

    /// Returns `(mean, 1/std)` and writes the normalized output.
    pub(crate) fn apply_into(&self, x: &[f64], out: &mut [f64]) -> (f64, f64) {
        let n = x.len() as f64;
        let mean = x.iter().sum::<f64>() / n;
        let var = x.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
        let rstd = 1.0 / math::sqrt(var + LAYER_NORM_EPS);
        for i in 0..x.len() {
            out[i] = (x[i] - mean) * rstd * self.gain[i] + self.bias[i];
        }
        (mean, rstd)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttentionHead {
    /// `head_dim × model_dim`
    pub query: Matrix,
    /// `head_dim × model_dim`
    pub key: Matrix,
    /// `head_dim × model_dim`; output written to this head's slice.
    pub value: Matrix,
}

impl AttentionHead {
    pub fn zeros(head_dim: usize, model_dim: usize) -> Self {
        AttentionHead {
            query: Matrix::zeros(head_dim, model_dim),
            key: Matrix::zeros(head_dim, model_dim),
            value: Matrix::zeros(head_dim, model_dim),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Layer {
    /// Position `t` attends to `0..=t` when set, to every position otherwise.
    pub causal: bool,
    pub attn_norm: LayerNorm,
    pub heads: Vec<AttentionHead>,
    pub mlp_norm: LayerNorm,
    pub mlp: Mlp,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Readout {
    pub weight: Vec<f64>,
    pub bias: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransformerModel {
    pub config: TransformerConfig,
    /// `vocab_size × model_dim`; row `i` embeds token `i + 1`.
    pub token_embeddings: Matrix,
    /// `context_len × model_dim`; all zero when positions are unused.
    pub positional_embeddings: Matrix,
    pub layers: Vec<Layer>,
    pub final_norm: LayerNorm,
    pub readout: Readout,
}

impl TransformerModel {
    /// All-zero weights (identity norms) with MLPs of the given hidden width.
    /// A width of zero gives MLP-free layers.
    pub fn zeros(config: TransformerConfig, mlp_width: usize) -> Result<Self> {
        config.validate()?;
        let d_model = config.model_dim;
        let layers = (0..config.n_layers)
            .map(|_| Layer {
                causal: true,
                attn_norm: LayerNorm::identity(d_model),
                heads: (0..config.n_heads)
                    .map(|_| AttentionHead::zeros(config.head_dim, d_model))
                    .collect(),
                mlp_norm: LayerNorm::identity(d_model),
                mlp: if mlp_width == 0 {
                    Mlp::empty()
                } else {
                    Mlp::two_layer(d_model, mlp_width, d_model)
                },
            })
            .collect();
        Ok(TransformerModel {
            config,
            token_embeddings: Matrix::zeros(config.vocab_size, d_model),
            positional_embeddings: Matrix::zeros(config.context_len, d_model),
            layers,
            final_norm: LayerNorm::identity(d_model),
            readout: Readout {
                weight: vec![0.0; d_model],
                bias: 0.0,
            },
        })
    }

    /// Checks every shape against the config and that all entries are finite.
    pub fn validate(&self) -> Result<()> {
        let c = &self.config;
        c.validate()?;
        let d_model = c.model_dim;
        let shape = |m: &Matrix, rows: usize, cols: usize, ctx: &'static str| -> Result<()> {
            if m.rows != rows || m.cols != cols || m.data.len() != rows * cols {
                return Err(Error::DimensionMismatch {
                    context: ctx,
                    expected: rows * cols,
                    actual: m.data.len(),
                });
            }
            if !m.is_finite() {
                return Err(Error::NonFinite(ctx));
            }
            Ok(())
        };
        let vector = |v: &[f64], len: usize, ctx: &'static str| -> Result<()> {
            if v.len() != len {
                return Err(Error::DimensionMismatch {
                    context: ctx,
                    expected: len,
                    actual: v.len(),
                });
            }
            if !v.iter().all(|x| x.is_finite()) {
                return Err(Error::NonFinite(ctx));
            }
            Ok(())
        };
        shape(&self.token_embeddings, c.vocab_size, d_model, "token embeddings")?;
        shape(&self.positional_embeddings, c.context_len, d_model, "positional embeddings")?;
        if self.layers.len() != c.n_layers {
            return Err(Error::DimensionMismatch {
                context: "layer count",
                expected: c.n_layers,
                actual: self.layers.len(),
            });
        }
        for layer in &self.layers {
            vector(&layer.attn_norm.gain, d_model, "attention norm gain")?;
            vector(&layer.attn_norm.bias, d_model, "attention norm bias")?;
            vector(&layer.mlp_norm.gain, d_model, "mlp norm gain")?;
            vector(&layer.mlp_norm.bias, d_model, "mlp norm bias")?;
            if layer.heads.len() != c.n_heads {
                return Err(Error::DimensionMismatch {
                    context: "head count",
                    expected: c.n_heads,
                    actual: layer.heads.len(),
                });
            }
            for h in &layer.heads {
                shape(&h.query, c.head_dim, d_model, "query")?;
                shape(&h.key, c.head_dim, d_model, "key")?;
                shape(&h.value, c.head_dim, d_model, "value")?;
            }
            layer.mlp.validate(d_model, d_model)?;
            for l in &layer.mlp.layers {
                if !l.weight.is_finite() || !l.bias.iter().all(|x| x.is_finite()) {
                    return Err(Error::NonFinite("mlp"));
                }
            }
        }
        vector(&self.final_norm.gain, d_model, "final norm gain")?;
        vector(&self.final_norm.bias, d_model, "final norm bias")?;
        vector(&self.readout.weight, d_model, "readout")?;
        if !self.readout.bias.is_finite() {
            return Err(Error::NonFinite("readout bias"));
        }
        Ok(())
    }

    /// A model with the same shapes and every parameter set to zero.
    pub fn zeros_like(&self) -> Self {
        let mut z = self.clone();
        for p in z.params_mut() {
            p.iter_mut().for_each(|v| *v = 0.0);
        }
        z
    }

    /// Every trainable tensor, in a fixed order.
    pub fn params(&self) -> Vec<&[f64]> {
        let mut out: Vec<&[f64]> = vec![&self.token_embeddings.data, &self.positional_embeddings.data];
        for layer in &self.layers {
            out.push(&layer.attn_norm.gain);
            out.push(&layer.attn_norm.bias);
            for h in &layer.heads {
                out.push(&h.query.data);
                out.push(&h.key.data);
                out.push(&h.value.data);
            }
            out.push(&layer.mlp_norm.gain);
            out.push(&layer.mlp_norm.bias);
            for l in &layer.mlp.layers {
                out.push(&l.weight.data);
                out.push(&l.bias);
            }
        }
        out.push(&self.final_norm.gain);
        out.push(&self.final_norm.bias);
        out.push(&self.readout.weight);
        out.push(core::slice::from_ref(&self.readout.bias));
        out
    }

    /// Mutable view of [`Self::params`], same order.
    pub fn params_mut(&mut self) -> Vec<&mut [f64]> {
        let mut out: Vec<&mut [f64]> = vec![
            &mut self.token_embeddings.data,
            &mut self.positional_embeddings.data,
        ];
        for layer in &mut self.layers {
            out.push(&mut layer.attn_norm.gain);
            out.push(&mut layer.attn_norm.bias);
            for h in &mut layer.heads {
                out.push(&mut h.query.data);
                out.push(&mut h.key.data);
                out.push(&mut h.value.data);
            }
            out.push(&mut layer.mlp_norm.gain);
            out.push(&mut layer.mlp_norm.bias);
            for l in &mut layer.mlp.layers {
                out.push(&mut l.weight.data);
                out.push(&mut l.bias);
            }
        }
        out.push(&mut self.final_norm.gain);
        out.push(&mut self.final_norm.bias);
        out.push(&mut self.readout.weight);
        out.push(core::slice::from_mut(&mut self.readout.bias));
        out
    }

    pub fn param_count(&self) -> usize {
        self.params().iter().map(|p| p.len()).sum()
    }

    /// Token plus positional embedding for each position (0-based token ids).
    pub(crate) fn embed(&self, tokens: &[usize]) -> Matrix {
        let d_model = self.config.model_dim;
        let mut x = Matrix::zeros(tokens.len(), d_model);
        for (t, &tok) in tokens.iter().enumerate() {
            let row = x.row_mut(t);
            row.copy_from_slice(self.token_embeddings.row(tok));
            if self.config.use_positional {
                axpy(1.0, self.positional_embeddings.row(t), row);
            }
        }
        x
    }

    /// Validates a sequence against the config and returns 0-based token ids.
    pub(crate) fn prepare(&self, seq: &TokenSequence) -> Result<Vec<usize>> {
        seq.check(self.config.vocab_size)?;
        if seq.len() > self.config.context_len {
            return Err(Error::SequenceTooLong {
                len: seq.len(),
                max: self.config.context_len,
            });
        }
        Ok(seq.tokens.iter().map(|t| t - 1).collect())
    }
}

/// Numerically stable softmax.
pub fn softmax(logits: &[f64]) -> Result<Vec<f64>> {
    if logits.is_empty() {
        return Err(Error::Empty("softmax input"));
    }
    if !logits.iter().all(|v| v.is_finite()) {
        return Err(Error::NonFinite("softmax input"));
    }
    let mut out = logits.to_vec();
    softmax_in_place(&mut out);
    Ok(out)
}

pub(crate) fn softmax_in_place(v: &mut [f64]) {
    let max = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for x in v.iter_mut() {
        *x = math::exp(*x - max);
        sum += *x;
    }
    let inv = 1.0 / sum;
    v.iter_mut().for_each(|x| *x *= inv);
}

/// Attention weights of one head for the query at 0-based index `position`.
/// Only positions `0..=position` are visible when `causal`.
pub fn attention_head_weights(
    head: &AttentionHead,
    embedded: &Matrix,
    position: usize,
    causal: bool,
) -> Result<Vec<f64>> {
    if embedded.cols != head.query.cols {
        return Err(Error::DimensionMismatch {
            context: "attention_head_forward",
            expected: head.query.cols,
            actual: embedded.cols,
        });
    }
    if position >= embedded.rows {
        return Err(Error::InvalidArgument(format!(
            "position {} outside sequence of length {}",
            position, embedded.rows
        )));
    }
    let end = if causal { position + 1 } else { embedded.rows };
    let q = head.query.matvec(embedded.row(position));
    let mut logits: Vec<f64> = (0..end)
        .map(|j| dot(&head.key.matvec(embedded.row(j)), &q))
        .collect();
    if !logits.iter().all(|v| v.is_finite()) {
        return Err(Error::NonFinite("attention logits"));
    }
    softmax_in_place(&mut logits);
    Ok(logits)
}

/// `Σ_j softmax_j((K x_j)·(Q x_pos)) · V x_j` over the visible positions.
pub fn attention_head_forward(
    head: &AttentionHead,
    embedded: &Matrix,
    position: usize,
    causal: bool,
) -> Result<Vec<f64>> {
    let weights = attention_head_weights(head, embedded, position, causal)?;
    let mut out = vec![0.0; head.value.rows];
    for (j, &w) in weights.iter().enumerate() {
        axpy(w, &head.value.matvec(embedded.row(j)), &mut out);
    }
    Ok(out)
}

/// Intermediate values of one layer, kept for inspection and the backward pass.
#[derive(Debug, Clone)]
pub struct LayerCache {
    /// First position whose output was computed; earlier rows pass through.
    pub query_start: usize,
    pub input: Matrix,
    pub attn_in: Matrix,
    pub attn_stats: Vec<(f64, f64)>,
    /// Per head, `len × head_dim` (query rows before `query_start` are zero).
    pub queries: Vec<Matrix>,
    pub keys: Vec<Matrix>,
    pub values: Vec<Matrix>,
    /// Per head, per computed query position, the weights over visible keys.
    pub weights: Vec<Vec<Vec<f64>>>,
    pub mid: Matrix,
    pub mlp_in: Matrix,
    pub mlp_stats: Vec<(f64, f64)>,
    /// Per computed query position, the MLP pre-activations of each dense layer.
    pub mlp_pre: Vec<Vec<Vec<f64>>>,
    pub output: Matrix,
}

/// A full forward pass record.
#[derive(Debug, Clone)]
pub struct ForwardTrace {
    pub tokens: Vec<usize>,
    pub embedded: Matrix,
    pub layers: Vec<LayerCache>,
    pub final_in: Vec<f64>,
    pub final_stats: (f64, f64),
    pub final_out: Vec<f64>,
    pub output: f64,
}

fn layer_forward(layer: &Layer, cfg: &TransformerConfig, x: &Matrix, query_start: usize) -> LayerCache {
    let len = x.rows;
    let d_model = cfg.model_dim;
    let head_dim = cfg.head_dim;

    let mut attn_in = x.clone();
    let mut attn_stats = Vec::new();
    if cfg.use_layer_norm {
        for t in 0..len {
            let s = layer.attn_norm.apply_into(x.row(t), attn_in.row_mut(t));
            attn_stats.push(s);
        }
    }

    let mut mid = x.clone();
    let mut queries = Vec::with_capacity(layer.heads.len());
    let mut keys = Vec::with_capacity(layer.heads.len());
    let mut values = Vec::with_capacity(layer.heads.len());
    let mut weights = Vec::with_capacity(layer.heads.len());
    for (h, head) in layer.heads.iter().enumerate() {
        let mut q = Matrix::zeros(len, head_dim);
        let mut k = Matrix::zeros(len, head_dim);
        let mut v = Matrix::zeros(len, head_dim);
        for t in 0..len {
            head.key.matvec_into(attn_in.row(t), k.row_mut(t));
            head.value.matvec_into(attn_in.row(t), v.row_mut(t));
        }
        let mut head_weights = Vec::with_capacity(len - query_start);
        for t in query_start..len {
            head.query.matvec_into(attn_in.row(t), q.row_mut(t));
            let end = if layer.causal { t + 1 } else { len };
            let qt = q.row(t);
            let mut w: Vec<f64> = (0..end).map(|j| dot(k.row(j), qt)).collect();
            softmax_in_place(&mut w);
            let out = &mut mid.row_mut(t)[h * head_dim..(h + 1) * head_dim];
            for (j, &wj) in w.iter().enumerate() {
                axpy(wj, v.row(j), out);
            }
            head_weights.push(w);
        }
        queries.push(q);
        keys.push(k);
        values.push(v);
        weights.push(head_weights);
    }

    let mut mlp_in = mid.clone();
    let mut mlp_stats = Vec::new();
    let mut output = mid.clone();
    let mut mlp_pre = Vec::new();
    for t in query_start..len {
        if cfg.use_layer_norm {
            let s = layer.mlp_norm.apply_into(mid.row(t), mlp_in.row_mut(t));
            mlp_stats.push(s);
        }
        if !layer.mlp.is_empty() {
            let pre = layer.mlp.forward_trace(mlp_in.row(t));
            axpy(1.0, pre.last().unwrap(), output.row_mut(t));
            mlp_pre.push(pre);
        }
    }
    debug_assert_eq!(output.cols, d_model);
    LayerCache {
        query_start,
        input: x.clone(),
        attn_in,
        attn_stats,
        queries,
        keys,
        values,
        weights,
        mid,
        mlp_in,
        mlp_stats,
        mlp_pre,
        output,
    }
}

/// Runs the model keeping every intermediate. Only the last position is
/// computed in the final layer since nothing downstream reads the others.
pub fn forward_trace(model: &TransformerModel, seq: &TokenSequence) -> Result<ForwardTrace> {
    let tokens = model.prepare(seq)?;
    Ok(forward_trace_ids(model, &tokens))
}

pub(crate) fn forward_trace_ids(model: &TransformerModel, tokens: &[usize]) -> ForwardTrace {
    let cfg = &model.config;
    let len = tokens.len();
    let embedded = model.embed(tokens);
    let mut x = embedded.clone();
    let mut caches = Vec::with_capacity(model.layers.len());
    for (i, layer) in model.layers.iter().enumerate() {
        let query_start = if i + 1 == model.layers.len() { len - 1 } else { 0 };
        let cache = layer_forward(layer, cfg, &x, query_start);
        x = cache.output.clone();
        caches.push(cache);
    }
    let final_in = x.row(len - 1).to_vec();
    let mut final_out = final_in.clone();
    let mut final_stats = (0.0, 1.0);
    if cfg.use_layer_norm {
        final_stats = model.final_norm.apply_into(&final_in, &mut final_out);
    }
    let output = dot(&model.readout.weight, &final_out) + model.readout.bias;
    ForwardTrace {
        tokens: tokens.to_vec(),
        embedded,
        layers: caches,
        final_in,
        final_stats,
        final_out,
        output,
    }
}

/// Scalar prediction at the last position.
pub fn model_forward(model: &TransformerModel, seq: &TokenSequence) -> Result<f64> {
    let trace = forward_trace(model, seq)?;
    if !trace.output.is_finite() {
        return Err(Error::NonFinite("model output"));
    }
    Ok(trace.output)
}

/// Residual stream at the last position after the final layer (before any
/// final norm and readout).
pub fn final_residual(model: &TransformerModel, seq: &TokenSequence) -> Result<Vec<f64>> {
    Ok(forward_trace(model, seq)?.final_in)
}
