use alloc::format;
use alloc::vec;

use super::{build_max_mlp, ConstructionReport};
use crate::model::{
    AttentionHead, Dense, Layer, LayerNorm, Mlp, Readout, TransformerConfig, TransformerModel,
};
use crate::tensor::Matrix;
use crate::{Error, Result};

/// Gate constant used when the caller has no preference.
pub fn default_gate_scale(n: usize) -> f64 {
    2.0 * (n * n) as f64
}

/// Residual layout shared by both histogram builders: coordinates `0..m`
/// receive the normalized histogram, `m..2m` carry the query one-hot.
fn histogram_shell(m: usize, n: usize, mlp: Mlp, readout: Readout) -> Result<TransformerModel> {
    let dim = 2 * m;
    let config = TransformerConfig {
        n_layers: 1,
        n_heads: 1,
        head_dim: dim,
        model_dim: dim,
        vocab_size: m,
        context_len: n,
        use_layer_norm: false,
        use_positional: false,
    };
    let mut token_embeddings = Matrix::zeros(m, dim);
    let mut value = Matrix::zeros(dim, dim);
    for i in 0..m {
        token_embeddings.set(i, m + i, 1.0);
        value.set(i, m + i, 1.0);
    }
    let model = TransformerModel {
        config,
        token_embeddings,
        positional_embeddings: Matrix::zeros(n, dim),
        layers: vec![Layer {
            causal: true,
            attn_norm: LayerNorm::identity(dim),
            heads: vec![AttentionHead {
                query: Matrix::zeros(dim, dim),
                key: Matrix::identity(dim),
                value,
            }],
            mlp_norm: LayerNorm::identity(dim),
            mlp,
        }],
        final_norm: LayerNorm::identity(dim),
        readout,
    };
    model.validate()?;
    Ok(model)
}

fn check_sizes(m: usize, n: usize) -> Result<()> {
    if m < 2 {
        return Err(Error::InvalidArgument(format!("need m >= 2, got {}", m)));
    }
    if n < 1 {
        return Err(Error::InvalidArgument("need n >= 1".into()));
    }
    Ok(())
}

/// Query counting by histogram: uniform attention averages the one-hot
/// tokens, and gate `i = ReLU(n·u1[i] + B·u2[i] − B)` passes `count_i` only
/// for the query token.
pub fn build_qc_histogram(m: usize, n: usize, gate_scale: f64) -> Result<ConstructionReport> {
    check_sizes(m, n)?;
    if !(gate_scale > n as f64) || !gate_scale.is_finite() {
        return Err(Error::InvalidArgument(format!(
            "gate constant must exceed n = {}, got {}",
            n, gate_scale
        )));
    }
    let dim = 2 * m;
    let mut first = Dense::zeros(dim, m);
    let mut second = Dense::zeros(m, dim);
    for i in 0..m {
        first.weight.set(i, i, n as f64);
        first.weight.set(i, m + i, gate_scale);
        first.bias[i] = -gate_scale;
        second.weight.set(m, i, 1.0);
    }
    // The query one-hot contributes exactly 1 to the readout; cancel it.
    second.bias[m] = -1.0;
    let mut weight = vec![0.0; dim];
    weight[m..].fill(1.0);
    let model = histogram_shell(
        m,
        n,
        Mlp {
            layers: vec![first, second],
        },
        Readout { weight, bias: 0.0 },
    )?;
    let mut report = ConstructionReport::new(model, n);
    report.max_cross_inner = 0.0;
    Ok(report)
}

/// Most-frequent-element by histogram: the MLP scales the histogram by `n`
/// and takes its maximum with a tournament network.
pub fn build_mfe_histogram(m: usize, n: usize) -> Result<ConstructionReport> {
    check_sizes(m, n)?;
    let dim = 2 * m;
    let mut layers = build_max_mlp(m)?.layers;
    let first = &layers[0];
    let mut widened = Dense::zeros(dim, first.output_dim());
    for r in 0..first.output_dim() {
        for c in 0..m {
            widened.weight.set(r, c, n as f64 * first.weight.get(r, c));
        }
    }
    widened.bias.copy_from_slice(&first.bias);
    layers[0] = widened;
    let last = layers.pop().unwrap();
    let mut out = Dense::zeros(last.input_dim(), dim);
    out.weight.row_mut(m).copy_from_slice(last.weight.row(0));
    out.bias[m] = last.bias[0] - 1.0;
    layers.push(out);
    let mut weight = vec![0.0; dim];
    weight[m..].fill(1.0);
    let model = histogram_shell(m, n, Mlp { layers }, Readout { weight, bias: 0.0 })?;
    Ok(ConstructionReport::new(model, n))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{model_forward, TokenSequence};
    use alloc::vec::Vec;

    fn all_sequences(m: usize, n: usize) -> Vec<Vec<usize>> {
        let mut out = vec![vec![]];
        for _ in 0..n {
            out = out
                .into_iter()
                .flat_map(|s| {
                    (1..=m).map(move |t| {
                        let mut s = s.clone();
                        s.push(t);
                        s
                    })
                })
                .collect();
        }
        out
    }

    #[test]
    fn qc_histogram_examples() {
        let r = build_qc_histogram(4, 9, default_gate_scale(9)).unwrap();
        let s = TokenSequence::new(vec![1, 1, 2, 2, 1, 3, 3, 4, 1], 4).unwrap();
        assert!((model_forward(&r.model, &s).unwrap() - 4.0).abs() < 1e-9);
        assert_eq!(r.mlp_width, 4);
        assert_eq!(r.certified_n, 9);

        let r = build_qc_histogram(2, 1, default_gate_scale(1)).unwrap();
        let s = TokenSequence::new(vec![1], 2).unwrap();
        assert!((model_forward(&r.model, &s).unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn qc_histogram_exhaustive() {
        let r = build_qc_histogram(3, 4, default_gate_scale(4)).unwrap();
        let seqs = all_sequences(3, 4);
        assert_eq!(seqs.len(), 81);
        for toks in seqs {
            let s = TokenSequence::new(toks, 3).unwrap();
            let y = model_forward(&r.model, &s).unwrap();
            assert!((y - s.query_count() as f64).abs() < 1e-9, "{:?} -> {}", s.tokens, y);
        }
    }

    #[test]
    fn qc_histogram_rejects_small_gate() {
        assert!(build_qc_histogram(3, 4, 4.0).is_err());
        assert!(build_qc_histogram(3, 4, 4.5).is_ok());
        assert!(build_qc_histogram(1, 4, 40.0).is_err());
    }

    #[test]
    fn mfe_histogram_examples() {
        let r = build_mfe_histogram(3, 5).unwrap();
        let s = TokenSequence::new(vec![1, 1, 2, 2, 3], 3).unwrap();
        assert!((model_forward(&r.model, &s).unwrap() - 2.0).abs() < 1e-9);
        let s = TokenSequence::new(vec![2; 5], 3).unwrap();
        assert!((model_forward(&r.model, &s).unwrap() - 5.0).abs() < 1e-9);
    }

    #[test]
    fn mfe_histogram_exhaustive() {
        let r = build_mfe_histogram(3, 5).unwrap();
        let seqs = all_sequences(3, 5);
        assert_eq!(seqs.len(), 243);
        for toks in seqs {
            let s = TokenSequence::new(toks, 3).unwrap();
            let y = model_forward(&r.model, &s).unwrap();
            assert!((y - s.max_count() as f64).abs() < 1e-9);
        }
    }
}
