//! Reverse-mode gradients of the squared-error loss, written out by hand for
//! the readout, layer norms, MLPs and multi-head attention.

use alloc::vec;
use alloc::vec::Vec;

use crate::math::{axpy, dot};
use crate::model::{forward_trace_ids, Layer, LayerCache, LayerNorm, Mlp, TransformerModel};
use crate::tensor::Matrix;
use crate::{Error, Result, TokenSequence};

fn ln_backward(
    ln: &LayerNorm,
    x: &[f64],
    stats: (f64, f64),
    dy: &[f64],
    grad: &mut LayerNorm,
    dx: &mut [f64],
) {
    let (mean, rstd) = stats;
    let n = x.len() as f64;
    let mut m1 = 0.0;
    let mut m2 = 0.0;
    let mut xhat = vec![0.0; x.len()];
    let mut dxhat = vec![0.0; x.len()];
    for i in 0..x.len() {
        xhat[i] = (x[i] - mean) * rstd;
        dxhat[i] = dy[i] * ln.gain[i];
        grad.gain[i] += dy[i] * xhat[i];
        grad.bias[i] += dy[i];
        m1 += dxhat[i];
        m2 += dxhat[i] * xhat[i];
    }
    m1 /= n;
    m2 /= n;
    for i in 0..x.len() {
        dx[i] += rstd * (dxhat[i] - m1 - xhat[i] * m2);
    }
}

fn mlp_backward(mlp: &Mlp, grad: &mut Mlp, x: &[f64], pre: &[Vec<f64>], dy: &[f64], dx: &mut [f64]) {
    let mut d = dy.to_vec();
    for i in (0..mlp.layers.len()).rev() {
        let relu;
        let input: &[f64] = if i == 0 {
            x
        } else {
            relu = pre[i - 1].iter().map(|&v| v.max(0.0)).collect::<Vec<_>>();
            &relu
        };
        let g = &mut grad.layers[i];
        g.weight.add_outer(1.0, &d, input);
        axpy(1.0, &d, &mut g.bias);
        let mut din = vec![0.0; input.len()];
        mlp.layers[i].weight.matvec_t_acc(&d, &mut din);
        if i == 0 {
            axpy(1.0, &din, dx);
        } else {
            for (v, &p) in din.iter_mut().zip(&pre[i - 1]) {
                if p <= 0.0 {
                    *v = 0.0;
                }
            }
            d = din;
        }
    }
}

fn layer_backward(
    layer: &Layer,
    grad: &mut Layer,
    use_ln: bool,
    head_dim: usize,
    cache: &LayerCache,
    d_out: &Matrix,
) -> Matrix {
    let len = d_out.rows;
    let qs = cache.query_start;

    let mut d_mid = d_out.clone();
    if !layer.mlp.is_empty() {
        for (i, t) in (qs..len).enumerate() {
            let dy = d_out.row(t);
            if dy.iter().all(|&v| v == 0.0) {
                continue;
            }
            let mut d_in = vec![0.0; dy.len()];
            mlp_backward(&layer.mlp, &mut grad.mlp, cache.mlp_in.row(t), &cache.mlp_pre[i], dy, &mut d_in);
            if use_ln {
                let stats = cache.mlp_stats[i];
                ln_backward(&layer.mlp_norm, cache.mid.row(t), stats, &d_in, &mut grad.mlp_norm, d_mid.row_mut(t));
            } else {
                axpy(1.0, &d_in, d_mid.row_mut(t));
            }
        }
    }

    let mut dx = d_mid.clone();
    let mut d_attn_in = Matrix::zeros(len, d_out.cols);
    for (h, head) in layer.heads.iter().enumerate() {
        let (q, k, v) = (&cache.queries[h], &cache.keys[h], &cache.values[h]);
        let mut dq = Matrix::zeros(len, head_dim);
        let mut dk = Matrix::zeros(len, head_dim);
        let mut dv = Matrix::zeros(len, head_dim);
        let mut any = false;
        for (i, t) in (qs..len).enumerate() {
            let d_o = &d_mid.row(t)[h * head_dim..(h + 1) * head_dim];
            if d_o.iter().all(|&x| x == 0.0) {
                continue;
            }
            any = true;
            let w = &cache.weights[h][i];
            let da: Vec<f64> = (0..w.len()).map(|j| dot(d_o, v.row(j))).collect();
            let s: f64 = w.iter().zip(&da).map(|(a, b)| a * b).sum();
            for j in 0..w.len() {
                axpy(w[j], d_o, dv.row_mut(j));
                let ds = w[j] * (da[j] - s);
                axpy(ds, k.row(j), dq.row_mut(t));
                axpy(ds, q.row(t), dk.row_mut(j));
            }
        }
        if !any {
            continue;
        }
        let g = &mut grad.heads[h];
        for t in 0..len {
            let a = cache.attn_in.row(t);
            let out = d_attn_in.row_mut(t);
            g.query.add_outer(1.0, dq.row(t), a);
            g.key.add_outer(1.0, dk.row(t), a);
            g.value.add_outer(1.0, dv.row(t), a);
            head.query.matvec_t_acc(dq.row(t), out);
            head.key.matvec_t_acc(dk.row(t), out);
            head.value.matvec_t_acc(dv.row(t), out);
        }
    }
    for t in 0..len {
        if use_ln {
            let stats = cache.attn_stats[t];
            ln_backward(&layer.attn_norm, cache.input.row(t), stats, d_attn_in.row(t), &mut grad.attn_norm, dx.row_mut(t));
        } else {
            axpy(1.0, d_attn_in.row(t), dx.row_mut(t));
        }
    }
    dx
}

/// Adds `scale · ∂(y − label)²/∂θ` for one example into `grads` and returns
/// the prediction `y`. Tokens are 0-based.
pub(crate) fn accumulate_example(
    model: &TransformerModel,
    tokens: &[usize],
    label: f64,
    scale: f64,
    grads: &mut TransformerModel,
) -> f64 {
    let cfg = &model.config;
    let len = tokens.len();
    let trace = forward_trace_ids(model, tokens);
    let y = trace.output;
    let g = scale * 2.0 * (y - label);

    axpy(g, &trace.final_out, &mut grads.readout.weight);
    grads.readout.bias += g;
    let d_final_out: Vec<f64> = model.readout.weight.iter().map(|w| g * w).collect();
    let mut dx = Matrix::zeros(len, cfg.model_dim);
    if cfg.use_layer_norm {
        ln_backward(
            &model.final_norm,
            &trace.final_in,
            trace.final_stats,
            &d_final_out,
            &mut grads.final_norm,
            dx.row_mut(len - 1),
        );
    } else {
        dx.row_mut(len - 1).copy_from_slice(&d_final_out);
    }
    for (l, layer) in model.layers.iter().enumerate().rev() {
        dx = layer_backward(layer, &mut grads.layers[l], cfg.use_layer_norm, cfg.head_dim, &trace.layers[l], &dx);
    }
    for (t, &tok) in tokens.iter().enumerate() {
        axpy(1.0, dx.row(t), grads.token_embeddings.row_mut(tok));
        if cfg.use_positional {
            axpy(1.0, dx.row(t), grads.positional_embeddings.row_mut(t));
        }
    }
    y
}

/// A labelled example.
pub type Example = (TokenSequence, usize);

/// Mean squared error over the batch and its gradient with respect to every
/// parameter, in the shape of the model.
pub fn loss_and_grads(model: &TransformerModel, batch: &[Example]) -> Result<(f64, TransformerModel)> {
    if batch.is_empty() {
        return Err(Error::Empty("batch"));
    }
    let scale = 1.0 / batch.len() as f64;
    let mut loss = 0.0;
    let mut grads = model.zeros_like();
    for example in batch {
        let (l, g) = example_loss_and_grads(model, example, scale)?;
        loss += l;
        add_grads(&mut grads, &g);
    }
    if !loss.is_finite() {
        return Err(Error::NonFinite("loss"));
    }
    Ok((loss, grads))
}

/// Loss and gradient of one example weighted by `scale`. [`loss_and_grads`]
/// sums these in batch order, so a parallel caller that does the same gets
/// identical results.
pub fn example_loss_and_grads(
    model: &TransformerModel,
    example: &Example,
    scale: f64,
) -> Result<(f64, TransformerModel)> {
    let mut grads = model.zeros_like();
    let ids = model.prepare(&example.0)?;
    let label = example.1 as f64;
    let y = accumulate_example(model, &ids, label, scale, &mut grads);
    Ok((scale * (y - label) * (y - label), grads))
}

/// `acc += other`, tensor by tensor.
pub fn add_grads(acc: &mut TransformerModel, other: &TransformerModel) {
    for (a, b) in acc.params_mut().into_iter().zip(other.params()) {
        axpy(1.0, b, a);
    }
}
