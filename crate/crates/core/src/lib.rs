//! Counting with transformers, at desk scale.
//!
//! This crate holds the pure numeric side of the laboratory: a small dense
//! transformer with an exact double-precision forward pass, builders that
//! emit hand-set weights for the Query Count and Most Frequent Element tasks,
//! analytic oracles for the associated bounds, a hand-derived backward pass
//! with Adam for training from scratch, and a bit-accounted simulation of the
//! set-disjointness reduction.
//!
//! Everything here is `no_std` + `alloc`. File formats, the CLI and parallel
//! sweep drivers live in the companion `countlab` crate.

#![cfg_attr(not(test), no_std)]

extern crate alloc;

pub mod analysis;
pub mod constructions;
pub mod embedding;
mod error;
pub mod math;
pub mod model;
pub mod protocol;
pub mod tensor;
pub mod training;

pub use embedding::{EmbeddingKind, EmbeddingSet};
pub use error::{Error, Result};
pub use model::{TokenSequence, TransformerConfig, TransformerModel};
pub use tensor::Matrix;
