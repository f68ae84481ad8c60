use alloc::vec;

use super::countattend::checked_inner;
use super::ConstructionReport;
use crate::analysis::required_temperature;
use crate::embedding::EmbeddingSet;
use crate::math;
use crate::model::{
    AttentionHead, Dense, Layer, LayerNorm, Mlp, Readout, TransformerConfig, TransformerModel,
};
use crate::tensor::Matrix;
use crate::{Error, Result};

/// Nearest `k` in `1..=n` to `1/w`, measured as the distance `|w − 1/k|`.
pub fn decode_inverse_count(w: f64, n: usize) -> usize {
    let mut best = (f64::INFINITY, 1);
    for k in 1..=n {
        let gap = math::abs(w - 1.0 / k as f64);
        if gap < best.0 {
            best = (gap, k);
        }
    }
    best.1
}

/// Most-frequent-element with two attention layers. Layer 1 (bidirectional)
/// gives every position `i` the weight `w_i ≈ 1/count(x_i)` on itself, pulled
/// out of the attention pattern by a gate per position. Layer 2 (causal)
/// attends from the last position with logits `−T′·w_j`, so it averages the
/// smallest `w`, about `1/max_count`. The readout is that value; decode it
/// with [`decode_inverse_count`].
///
/// Layout: `[token d][position one-hot n][layer-1 pattern n][1][w][ŵ]`.
pub fn build_mfe_two_layer(
    m: usize,
    d: usize,
    n: usize,
    emb: &EmbeddingSet,
) -> Result<ConstructionReport> {
    if n < 1 {
        return Err(Error::InvalidArgument("need n >= 1".into()));
    }
    let j = checked_inner(emb, m, d)?;
    // Noise in each w_i stays below a quarter of the grid spacing.
    let t1 = required_temperature(2 * n, j)?;
    let nf = n as f64;
    let t2 = math::ceil(4.0 * nf * nf / 3.0 * math::ln(4.0 * nf * nf * nf));

    let pos = d;
    let pattern = d + n;
    let one = d + 2 * n;
    let w = one + 1;
    let w_hat = one + 2;
    let dim = d + 2 * n + 3;
    let config = TransformerConfig {
        n_layers: 2,
        n_heads: 1,
        head_dim: dim,
        model_dim: dim,
        vocab_size: m,
        context_len: n,
        use_layer_norm: false,
        use_positional: true,
    };
    let mut token_embeddings = Matrix::zeros(m, dim);
    for (i, v) in emb.vectors.iter().enumerate() {
        token_embeddings.row_mut(i)[..d].copy_from_slice(v);
    }
    let mut positional_embeddings = Matrix::zeros(n, dim);
    for i in 0..n {
        positional_embeddings.set(i, pos + i, 1.0);
        positional_embeddings.set(i, one, 1.0);
    }

    let mut query = Matrix::zeros(dim, dim);
    let mut key = Matrix::zeros(dim, dim);
    for r in 0..d {
        query.set(r, r, t1);
        key.set(r, r, 1.0);
    }
    let mut value = Matrix::zeros(dim, dim);
    for k in 0..n {
        value.set(pattern + k, pos + k, 1.0);
    }
    let mut first = Dense::zeros(dim, n);
    let mut second = Dense::zeros(n, dim);
    for k in 0..n {
        first.weight.set(k, pattern + k, 1.0);
        first.weight.set(k, pos + k, 1.0);
        first.bias[k] = -1.0;
        second.weight.set(w, k, 1.0);
    }
    let counting = Layer {
        causal: false,
        attn_norm: LayerNorm::identity(dim),
        heads: vec![AttentionHead { query, key, value }],
        mlp_norm: LayerNorm::identity(dim),
        mlp: Mlp {
            layers: vec![first, second],
        },
    };

    let mut query = Matrix::zeros(dim, dim);
    query.set(0, one, -t2);
    let mut key = Matrix::zeros(dim, dim);
    key.set(0, w, 1.0);
    let mut value = Matrix::zeros(dim, dim);
    value.set(w_hat, w, 1.0);
    let selecting = Layer {
        causal: true,
        attn_norm: LayerNorm::identity(dim),
        heads: vec![AttentionHead { query, key, value }],
        mlp_norm: LayerNorm::identity(dim),
        mlp: Mlp::empty(),
    };

    let mut readout = vec![0.0; dim];
    readout[w_hat] = 1.0;
    let model = TransformerModel {
        config,
        token_embeddings,
        positional_embeddings,
        layers: vec![counting, selecting],
        final_norm: LayerNorm::identity(dim),
        readout: Readout {
            weight: readout,
            bias: 0.0,
        },
    };
    model.validate()?;
    let mut report = ConstructionReport::new(model, n);
    report.temperature = t1;
    report.aux_temperature = t2;
    report.max_cross_inner = j;
    report.scratch = Some(w_hat);
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::analysis::random_rademacher_embeddings;
    use crate::model::{model_forward, TokenSequence};
    use alloc::vec::Vec;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn decoded(r: &ConstructionReport, toks: Vec<usize>, m: usize) -> (usize, usize) {
        let s = TokenSequence::new(toks, m).unwrap();
        let y = model_forward(&r.model, &s).unwrap();
        (decode_inverse_count(y, r.certified_n), s.max_count())
    }

    #[test]
    fn decode_snaps_to_grid() {
        assert_eq!(decode_inverse_count(1.0, 5), 1);
        assert_eq!(decode_inverse_count(0.26, 5), 4);
        assert_eq!(decode_inverse_count(0.0, 5), 5);
        assert_eq!(decode_inverse_count(0.34, 5), 3);
    }

    #[test]
    fn small_examples() {
        let emb = EmbeddingSet::one_hot(3, 3).unwrap();
        let r = build_mfe_two_layer(3, 3, 5, &emb).unwrap();
        let (got, want) = decoded(&r, vec![1, 1, 2, 2, 3], 3);
        assert_eq!((got, want), (2, 2));
        let s = TokenSequence::new(vec![3; 5], 3).unwrap();
        let y = model_forward(&r.model, &s).unwrap();
        assert!((y - 0.2).abs() < 1e-12);
        assert_eq!(r.mlp_width, 5);
    }

    #[test]
    fn exhaustive_small() {
        let emb = EmbeddingSet::one_hot(3, 3).unwrap();
        for n in 1..=5 {
            let r = build_mfe_two_layer(3, 3, n, &emb).unwrap();
            let mut seqs: Vec<Vec<usize>> = vec![vec![]];
            for _ in 0..n {
                seqs = seqs
                    .into_iter()
                    .flat_map(|s| {
                        (1..=3).map(move |t| {
                            let mut s = s.clone();
                            s.push(t);
                            s
                        })
                    })
                    .collect();
            }
            for toks in seqs {
                let (got, want) = decoded(&r, toks, 3);
                assert_eq!(got, want);
            }
        }
    }

    #[test]
    fn random_one_hot_and_rademacher() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let emb = EmbeddingSet::one_hot(4, 4).unwrap();
        let r = build_mfe_two_layer(4, 4, 12, &emb).unwrap();
        for _ in 0..200 {
            let toks = (0..12).map(|_| rng.random_range(1..=4)).collect();
            let (got, want) = decoded(&r, toks, 4);
            assert_eq!(got, want);
        }
        let emb = (0..)
            .map(|seed| random_rademacher_embeddings(5, 8, seed).unwrap())
            .find(|e| e.max_cross_inner() < 0.99)
            .unwrap();
        let r = build_mfe_two_layer(5, 8, 16, &emb).unwrap();
        for _ in 0..200 {
            let toks = (0..16).map(|_| rng.random_range(1..=5)).collect();
            let (got, want) = decoded(&r, toks, 5);
            assert_eq!(got, want);
        }
    }
}
