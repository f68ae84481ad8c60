use alloc::format;
use alloc::vec;

use super::ConstructionReport;
use crate::analysis::required_temperature;
use crate::embedding::EmbeddingSet;
use crate::model::{
    AttentionHead, Dense, Layer, LayerNorm, Mlp, Readout, TransformerConfig, TransformerModel,
};
use crate::tensor::Matrix;
use crate::{Error, Result};

/// Largest cross inner product a builder accepts.
pub const MAX_ACCEPTED_INNER: f64 = 1.0 - 1e-6;

/// Bump width used when the caller has no preference.
pub fn default_bump_eps(n: usize) -> f64 {
    1.0 / (4.0 * (n * (n + 1)) as f64)
}

/// Four ReLU units `(first-layer weights, biases, second-layer weights)` for
/// a trapezoid that rises from 0 at `lo` to `height` at `lo + eps`, stays flat
/// up to `hi` and falls back to 0 at `hi + eps`.
pub fn delta_bump(lo: f64, hi: f64, height: f64, eps: f64) -> ([f64; 4], [f64; 4], [f64; 4]) {
    let s = height / eps;
    (
        [1.0; 4],
        [-lo, -(lo + eps), -hi, -(hi + eps)],
        [s, -s, -s, s],
    )
}

/// A `1 → 4n → 1` network that outputs exactly `k` on
/// `[1/(k+½), 1/(k−½) − eps]` for each `k` in `1..=n`. Bump `k` is shifted
/// left by `eps` so neighbouring bumps meet without a gap.
pub fn build_inverter_mlp(n: usize, eps: f64) -> Result<Mlp> {
    if n < 1 {
        return Err(Error::InvalidArgument("inverter needs n >= 1".into()));
    }
    let limit = 1.0 / (2.0 * (n * (n + 1)) as f64);
    if !(eps > 0.0 && eps < limit) {
        return Err(Error::InvalidArgument(format!(
            "bump width must lie in (0, {}), got {}",
            limit, eps
        )));
    }
    let mut first = Dense::zeros(1, 4 * n);
    let mut second = Dense::zeros(4 * n, 1);
    for k in 1..=n {
        let kf = k as f64;
        let lo = 1.0 / (kf + 0.5) - eps;
        let hi = 1.0 / (kf - 0.5) - eps;
        let (w, b, out) = delta_bump(lo, hi, kf, eps);
        for u in 0..4 {
            let r = 4 * (k - 1) + u;
            first.weight.set(r, 0, w[u]);
            first.bias[r] = b[u];
            second.weight.set(0, r, out[u]);
        }
    }
    Ok(Mlp {
        layers: vec![first, second],
    })
}

pub(crate) fn checked_inner(emb: &EmbeddingSet, m: usize, d: usize) -> Result<f64> {
    if emb.len() != m || emb.dim != d {
        return Err(Error::InvalidArgument(format!(
            "embedding set is {} vectors in R^{}, expected {} in R^{}",
            emb.len(),
            emb.dim,
            m,
            d
        )));
    }
    let j = emb.max_cross_inner();
    if j >= MAX_ACCEPTED_INNER {
        return Err(Error::InvalidArgument(format!(
            "max cross inner product {} is too close to 1",
            j
        )));
    }
    Ok(j)
}

/// Query counting by attention: the last position attends with logits
/// `T·v_i·v_{x_n}`, so its weight on itself is about `1/count`, read out
/// through a positional flag and inverted by a `4n`-unit MLP.
///
/// Layout: coordinates `0..d` hold the token embedding, `d` is the flag (1
/// only at position `n`), `d + 1` is the scratch slot receiving the weight.
pub fn build_qc_countattend(
    m: usize,
    d: usize,
    n: usize,
    emb: &EmbeddingSet,
) -> Result<ConstructionReport> {
    if n < 1 {
        return Err(Error::InvalidArgument("need n >= 1".into()));
    }
    let j = checked_inner(emb, m, d)?;
    let temperature = required_temperature(n, j)?;
    let dim = d + 2;
    let (flag, scratch) = (d, d + 1);
    let config = TransformerConfig {
        n_layers: 1,
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
    positional_embeddings.set(n - 1, flag, 1.0);

    let mut query = Matrix::zeros(dim, dim);
    let mut key = Matrix::zeros(dim, dim);
    for r in 0..d {
        query.set(r, r, temperature);
        key.set(r, r, 1.0);
    }
    let mut value = Matrix::zeros(dim, dim);
    value.set(scratch, flag, 1.0);

    let inverter = build_inverter_mlp(n, default_bump_eps(n))?;
    let hidden = inverter.hidden_width();
    let mut first = Dense::zeros(dim, hidden);
    let mut second = Dense::zeros(hidden, dim);
    for r in 0..hidden {
        first.weight.set(r, scratch, inverter.layers[0].weight.get(r, 0));
        first.bias[r] = inverter.layers[0].bias[r];
        second.weight.set(flag, r, inverter.layers[1].weight.get(0, r));
    }
    // The flag itself reads as 1 at the last position; cancel it.
    second.bias[flag] = inverter.layers[1].bias[0] - 1.0;

    let mut readout = vec![0.0; dim];
    readout[flag] = 1.0;
    let model = TransformerModel {
        config,
        token_embeddings,
        positional_embeddings,
        layers: vec![Layer {
            causal: true,
            attn_norm: LayerNorm::identity(dim),
            heads: vec![AttentionHead { query, key, value }],
            mlp_norm: LayerNorm::identity(dim),
            mlp: Mlp {
                layers: vec![first, second],
            },
        }],
        final_norm: LayerNorm::identity(dim),
        readout: Readout {
            weight: readout,
            bias: 0.0,
        },
    };
    model.validate()?;
    let mut report = ConstructionReport::new(model, n);
    report.temperature = temperature;
    report.max_cross_inner = j;
    report.scratch = Some(scratch);
    Ok(report)
}

/// Scratch-slot value at the last position after attention, before the MLP.
pub fn scratch_value(report: &ConstructionReport, seq: &crate::model::TokenSequence) -> Result<f64> {
    let slot = report
        .scratch
        .ok_or_else(|| Error::InvalidArgument("construction has no scratch slot".into()))?;
    let trace = crate::model::forward_trace(&report.model, seq)?;
    let cache = trace.layers.last().ok_or(Error::Empty("model layers"))?;
    Ok(cache.mid.row(seq.len() - 1)[slot])
}

#[cfg(test)]
pub(crate) fn inverter_grid(n: usize) -> Vec<f64> {
    (1..=n).map(|k| 1.0 / k as f64).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::analysis::random_rademacher_embeddings;
    use crate::model::{mlp_forward, model_forward, TokenSequence};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn inv(mlp: &Mlp, x: f64) -> f64 {
        mlp_forward(mlp, &[x]).unwrap()[0]
    }

    #[test]
    fn inverter_examples() {
        let mlp = build_inverter_mlp(7, default_bump_eps(7)).unwrap();
        assert!((inv(&mlp, 1.0 / 7.0) - 7.0).abs() < 1e-9);
        let mlp = build_inverter_mlp(1, default_bump_eps(1)).unwrap();
        assert!((inv(&mlp, 1.0) - 1.0).abs() < 1e-12);
        let mlp = build_inverter_mlp(20, default_bump_eps(20)).unwrap();
        for (k, x) in inverter_grid(20).into_iter().enumerate() {
            assert!((inv(&mlp, x) - (k + 1) as f64).abs() < 1e-9);
        }
    }

    #[test]
    fn inverter_width_and_plateaus() {
        for n in [1usize, 2, 5, 13, 40] {
            let eps = default_bump_eps(n);
            let mlp = build_inverter_mlp(n, eps).unwrap();
            assert_eq!(mlp.hidden_width(), 4 * n);
            for k in 1..=n {
                let kf = k as f64;
                let (a, b) = (1.0 / (kf + 0.5) + eps, 1.0 / (kf - 0.5) - eps);
                for s in 0..=20 {
                    let x = a + (b - a) * s as f64 / 20.0;
                    assert!((inv(&mlp, x) - kf).abs() < 1e-7 * kf, "n={} k={} x={}", n, k, x);
                }
            }
        }
    }

    #[test]
    fn inverter_rejects_wide_bumps() {
        assert!(build_inverter_mlp(3, 1.0 / 24.0).is_err());
        assert!(build_inverter_mlp(3, 0.0).is_err());
        assert!(build_inverter_mlp(0, 0.01).is_err());
        assert!(build_inverter_mlp(3, 1.0 / 25.0).is_ok());
    }

    #[test]
    fn countattend_figure_example() {
        let emb = EmbeddingSet::one_hot(4, 4).unwrap();
        let r = build_qc_countattend(4, 4, 3, &emb).unwrap();
        let s = TokenSequence::new(vec![4, 1, 4], 4).unwrap();
        let w = scratch_value(&r, &s).unwrap();
        assert!((w - 0.5).abs() < 0.5 / 6.0, "{}", w);
        assert!((model_forward(&r.model, &s).unwrap() - 2.0).abs() < 1e-9);
        assert_eq!(r.model.config.model_dim, 6);
        assert_eq!(r.mlp_width, 12);
        assert_eq!(r.temperature, 2.0);
    }

    #[test]
    fn countattend_all_identical() {
        let emb = EmbeddingSet::one_hot(3, 3).unwrap();
        let r = build_qc_countattend(3, 3, 10, &emb).unwrap();
        let s = TokenSequence::new(vec![2; 10], 3).unwrap();
        assert!((scratch_value(&r, &s).unwrap() - 0.1).abs() < 1e-12);
        assert!((model_forward(&r.model, &s).unwrap() - 10.0).abs() < 1e-9);
    }

    #[test]
    fn countattend_rademacher_random() {
        let emb = (0..)
            .map(|seed| random_rademacher_embeddings(6, 4, seed).unwrap())
            .find(|e| e.max_cross_inner() < MAX_ACCEPTED_INNER)
            .unwrap();
        let r = build_qc_countattend(6, 4, 50, &emb).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..500 {
            let toks = (0..50).map(|_| rng.random_range(1..=6)).collect();
            let s = TokenSequence::new(toks, 6).unwrap();
            let c = s.query_count() as f64;
            let w = scratch_value(&r, &s).unwrap();
            assert!(w <= 1.0 / c + 1e-12 && w > 1.0 / (c + 0.5));
            let y = model_forward(&r.model, &s).unwrap();
            assert!((y - c).abs() < 1e-6, "{} vs {}", y, c);
        }
    }

    #[test]
    fn countattend_rejects_parallel_embeddings() {
        let v = vec![vec![1.0, 0.0], vec![1.0, 0.0]];
        let emb = EmbeddingSet::new(crate::embedding::EmbeddingKind::Orthonormal, v).unwrap();
        assert!(build_qc_countattend(2, 2, 4, &emb).is_err());
        let emb = EmbeddingSet::one_hot(2, 2).unwrap();
        assert!(build_qc_countattend(2, 2, 0, &emb).is_err());
        assert!(build_qc_countattend(3, 2, 4, &emb).is_err());
    }
}
