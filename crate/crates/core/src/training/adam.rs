use serde::{Deserialize, Serialize};

use crate::math;
use crate::model::TransformerModel;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// First and second moment estimates, shaped like the model.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub first: TransformerModel,
    pub second: TransformerModel,
    pub step: u64,
}

impl AdamState {
    pub fn new(model: &TransformerModel) -> Self {
        AdamState {
            first: model.zeros_like(),
            second: model.zeros_like(),
            step: 0,
        }
    }
}

fn same_shape(a: &TransformerModel, b: &TransformerModel) -> Result<()> {
    let (pa, pb) = (a.params(), b.params());
    if pa.len() != pb.len() {
        return Err(Error::DimensionMismatch {
            context: "adam tensors",
            expected: pa.len(),
            actual: pb.len(),
        });
    }
    for (x, y) in pa.iter().zip(&pb) {
        if x.len() != y.len() {
            return Err(Error::DimensionMismatch {
                context: "adam tensor",
                expected: x.len(),
                actual: y.len(),
            });
        }
    }
    Ok(())
}

/// One bias-corrected Adam update of `model` in place.
pub fn adam_step(
    model: &mut TransformerModel,
    state: &mut AdamState,
    grads: &TransformerModel,
    step_size: f64,
    cfg: &AdamConfig,
) -> Result<()> {
    same_shape(model, grads)?;
    same_shape(model, &state.first)?;
    state.step += 1;
    let t = state.step as i32;
    let c1 = 1.0 - math::powi(cfg.beta1, t);
    let c2 = 1.0 - math::powi(cfg.beta2, t);
    let params = model.params_mut();
    let firsts = state.first.params_mut();
    let seconds = state.second.params_mut();
    for (((p, m), v), g) in params.into_iter().zip(firsts).zip(seconds).zip(grads.params()) {
        for i in 0..p.len() {
            m[i] = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * g[i];
            v[i] = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * g[i] * g[i];
            let mhat = m[i] / c1;
            let vhat = v[i] / c2;
            p[i] -= step_size * mhat / (math::sqrt(vhat) + cfg.eps);
        }
    }
    Ok(())
}
