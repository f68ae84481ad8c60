//! Token embedding sets: `m` unit vectors in `R^d`.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;
use serde::{Deserialize, Serialize};

use crate::math::{self, dot};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EmbeddingKind {
    OneHot,
    Orthonormal,
    Rademacher,
}

/// `m` unit vectors in `R^d`; vector `i` (0-based) embeds token `i + 1`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingSet {
    pub kind: EmbeddingKind,
    pub dim: usize,
    pub vectors: Vec<Vec<f64>>,
}

pub const UNIT_NORM_TOL: f64 = 1e-9;

impl EmbeddingSet {
    pub fn new(kind: EmbeddingKind, vectors: Vec<Vec<f64>>) -> Result<Self> {
        let dim = vectors.first().map_or(0, Vec::len);
        if vectors.is_empty() || dim == 0 {
            return Err(Error::Empty("embedding set"));
        }
        for (i, v) in vectors.iter().enumerate() {
            if v.len() != dim {
                return Err(Error::DimensionMismatch {
                    context: "embedding vector",
                    expected: dim,
                    actual: v.len(),
                });
            }
            if !v.iter().all(|x| x.is_finite()) {
                return Err(Error::NonFinite("embedding vector"));
            }
            let norm = math::norm(v);
            if math::abs(norm - 1.0) > UNIT_NORM_TOL {
                return Err(Error::InvalidArgument(format!(
                    "embedding {} has norm {}, expected 1",
                    i, norm
                )));
            }
        }
        if kind == EmbeddingKind::OneHot && dim < vectors.len() {
            return Err(Error::InvalidArgument(format!(
                "one-hot embeddings need d >= m (d = {}, m = {})",
                dim,
                vectors.len()
            )));
        }
        Ok(EmbeddingSet { kind, dim, vectors })
    }

    /// Standard basis vectors `e_1..e_m` in `R^d`.
    pub fn one_hot(m: usize, d: usize) -> Result<Self> {
        if d < m {
            return Err(Error::InvalidArgument(format!(
                "one-hot embeddings need d >= m (d = {}, m = {})",
                d, m
            )));
        }
        let vectors = (0..m)
            .map(|i| {
                let mut v = vec![0.0; d];
                v[i] = 1.0;
                v
            })
            .collect();
        Self::new(EmbeddingKind::OneHot, vectors)
    }

    /// Number of vectors (vocabulary size).
    pub fn len(&self) -> usize {
        self.vectors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vectors.is_empty()
    }

    /// Embedding of 1-based token `token`.
    pub fn of_token(&self, token: usize) -> &[f64] {
        &self.vectors[token - 1]
    }

    pub fn inner(&self, i: usize, j: usize) -> f64 {
        dot(&self.vectors[i], &self.vectors[j])
    }

    /// Largest signed inner product between distinct vectors, clamped at 0.
    /// This is the `J` that sets the CountAttend temperature.
    pub fn max_cross_inner(&self) -> f64 {
        let mut best = 0.0f64;
        for i in 0..self.len() {
            for j in i + 1..self.len() {
                best = best.max(self.inner(i, j));
            }
        }
        best
    }
}
