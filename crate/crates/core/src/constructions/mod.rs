//! Builders for transformers with hand-set weights that solve the counting
//! tasks exactly, plus the adversarial input against histogram counting with
//! non-orthogonal embeddings.

mod countattend;
mod histogram;
mod max;
mod two_layer;

use alloc::format;
use alloc::vec;
use serde::{Deserialize, Serialize};

pub use countattend::{
    build_inverter_mlp, build_qc_countattend, default_bump_eps, delta_bump, scratch_value,
    MAX_ACCEPTED_INNER,
};
pub use histogram::{build_mfe_histogram, build_qc_histogram, default_gate_scale};
pub use max::build_max_mlp;
pub use two_layer::{build_mfe_two_layer, decode_inverse_count};

pub use crate::embedding::{EmbeddingKind, EmbeddingSet};
use crate::analysis::max_pairwise_inner;
use crate::math::dot;
use crate::model::{TokenSequence, TransformerModel};
use crate::{Error, Result};

/// A built model together with the facts it was built to satisfy.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConstructionReport {
    pub model: TransformerModel,
    /// The one context length the weights are correct for.
    pub certified_n: usize,
    /// Hidden ReLU units across all MLPs of the model.
    pub mlp_width: usize,
    /// Weights and biases across all MLPs of the model.
    pub mlp_params: usize,
    /// Attention sharpness of the counting head (0 when unused).
    pub temperature: f64,
    /// Sharpness of a second-layer max-selecting head (0 when unused).
    pub aux_temperature: f64,
    /// Largest inner product between distinct token embeddings.
    pub max_cross_inner: f64,
    /// Residual coordinate holding the inverse count, when the construction has one.
    pub scratch: Option<usize>,
}

impl ConstructionReport {
    pub(crate) fn new(model: TransformerModel, certified_n: usize) -> Self {
        let mlp_width = model.layers.iter().map(|l| l.mlp.hidden_width()).sum();
        let mlp_params = model.layers.iter().map(|l| l.mlp.param_count()).sum();
        ConstructionReport {
            model,
            certified_n,
            mlp_width,
            mlp_params,
            temperature: 0.0,
            aux_temperature: 0.0,
            max_cross_inner: 0.0,
            scratch: None,
        }
    }
}

/// `v_{x_n} · Σ_j count_j v_j` with unnormalized counts: what histogram
/// counting returns when the embeddings are not orthogonal.
pub fn hist_eval(emb: &EmbeddingSet, seq: &TokenSequence) -> Result<f64> {
    seq.check(emb.len())?;
    let query = emb.of_token(seq.last());
    let mut hist = vec![0.0; emb.dim];
    for &t in &seq.tokens {
        for (h, v) in hist.iter_mut().zip(emb.of_token(t)) {
            *h += v;
        }
    }
    Ok(dot(query, &hist))
}

/// The input that defeats histogram counting: `n/2` copies of one token of the
/// most coherent pair followed by `n/2` copies of the other. Returns the
/// sequence and the guaranteed error `(n/2)·A`.
pub fn adversarial_welch_input(emb: &EmbeddingSet, n: usize) -> Result<(TokenSequence, f64)> {
    if emb.len() < 2 * emb.dim {
        return Err(Error::InvalidArgument(format!(
            "need m >= 2d (m = {}, d = {})",
            emb.len(),
            emb.dim
        )));
    }
    if n < 2 || !n.is_multiple_of(2) {
        return Err(Error::InvalidArgument(format!("n must be even and >= 2, got {}", n)));
    }
    let (a, (i, j)) = max_pairwise_inner(emb)?;
    let mut tokens = vec![i; n / 2];
    tokens.extend(core::iter::repeat_n(j, n / 2));
    Ok((TokenSequence::new(tokens, emb.len())?, (n / 2) as f64 * a))
}
