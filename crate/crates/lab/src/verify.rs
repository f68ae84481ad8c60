//! Builds a construction and checks it against brute-force oracles.

use anyhow::{bail, Result};
use countlab_core::analysis::random_rademacher_embeddings;
use countlab_core::constructions::{
    build_mfe_histogram, build_mfe_two_layer, build_qc_countattend, build_qc_histogram,
    decode_inverse_count, default_gate_scale, ConstructionReport, MAX_ACCEPTED_INNER,
};
use countlab_core::model::model_forward;
use countlab_core::{EmbeddingKind, EmbeddingSet, TokenSequence};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

/// Largest exhaustive enumeration accepted.
pub const MAX_EXHAUSTIVE: u128 = 2_000_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum ConstructTask {
    QcHist,
    QcAttend,
    MfeHist,
    #[value(name = "mfe-2layer")]
    #[serde(rename = "mfe-2layer")]
    Mfe2Layer,
}

impl ConstructTask {
    pub fn oracle(&self, seq: &TokenSequence) -> usize {
        match self {
            ConstructTask::QcHist | ConstructTask::QcAttend => seq.query_count(),
            ConstructTask::MfeHist | ConstructTask::Mfe2Layer => seq.max_count(),
        }
    }

    pub fn needs_embeddings(&self) -> bool {
        matches!(self, ConstructTask::QcAttend | ConstructTask::Mfe2Layer)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum EmbeddingChoice {
    Onehot,
    Rademacher,
}

/// Rademacher embeddings from the first seed at or after `seed` whose
/// largest cross inner product the attention builders accept.
pub fn usable_rademacher(m: usize, d: usize, seed: u64) -> Result<(EmbeddingSet, u64)> {
    for s in seed..seed.saturating_add(10_000) {
        let e = random_rademacher_embeddings(m, d, s)?;
        if e.max_cross_inner() < MAX_ACCEPTED_INNER {
            return Ok((e, s));
        }
    }
    bail!("no rademacher draw with distinct directions for m = {}, d = {}", m, d)
}

#[derive(Debug, Clone)]
pub struct BuildRequest {
    pub task: ConstructTask,
    pub m: usize,
    pub d: usize,
    pub n: usize,
    pub embedding: EmbeddingChoice,
    pub seed: u64,
    pub gate_scale: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct Built {
    pub report: ConstructionReport,
    pub embedding_kind: Option<EmbeddingKind>,
    pub embedding_seed: Option<u64>,
}

pub fn build(req: &BuildRequest) -> Result<Built> {
    let mut embedding_kind = None;
    let mut embedding_seed = None;
    let emb = if req.task.needs_embeddings() {
        let e = match req.embedding {
            EmbeddingChoice::Onehot => EmbeddingSet::one_hot(req.m, req.d)?,
            EmbeddingChoice::Rademacher => {
                let (e, s) = usable_rademacher(req.m, req.d, req.seed)?;
                embedding_seed = Some(s);
                e
            }
        };
        embedding_kind = Some(e.kind);
        Some(e)
    } else {
        None
    };
    let report = match req.task {
        ConstructTask::QcHist => build_qc_histogram(
            req.m,
            req.n,
            req.gate_scale.unwrap_or_else(|| default_gate_scale(req.n)),
        )?,
        ConstructTask::MfeHist => build_mfe_histogram(req.m, req.n)?,
        ConstructTask::QcAttend => build_qc_countattend(req.m, req.d, req.n, emb.as_ref().unwrap())?,
        ConstructTask::Mfe2Layer => build_mfe_two_layer(req.m, req.d, req.n, emb.as_ref().unwrap())?,
    };
    Ok(Built {
        report,
        embedding_kind,
        embedding_seed,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VerificationReport {
    pub task: ConstructTask,
    pub m: usize,
    pub d: usize,
    pub n: usize,
    pub exhaustive: bool,
    pub instances: usize,
    pub failures: usize,
    /// Largest `|prediction − oracle|`; for the two-layer model the
    /// prediction is `1/ŵ`.
    pub max_abs_error: f64,
    pub model_dim: usize,
    pub mlp_width: usize,
    pub mlp_params: usize,
    pub temperature: f64,
    pub aux_temperature: f64,
    pub max_cross_inner: f64,
    pub embedding: Option<EmbeddingKind>,
    pub embedding_seed: Option<u64>,
    pub first_failure: Option<Vec<usize>>,
}

impl VerificationReport {
    pub fn passed(&self) -> bool {
        self.failures == 0 && self.instances > 0
    }
}

/// Prediction of the model and the count it decodes to.
pub fn predict(task: ConstructTask, report: &ConstructionReport, seq: &TokenSequence) -> Result<(f64, usize)> {
    let y = model_forward(&report.model, seq)?;
    Ok(match task {
        ConstructTask::Mfe2Layer => (1.0 / y, decode_inverse_count(y, report.certified_n)),
        _ => (y, y.round().max(0.0) as usize),
    })
}

/// Every sequence in `{1..m}^n`, in lexicographic order.
pub fn all_sequences(m: usize, n: usize) -> Result<impl Iterator<Item = Vec<usize>>> {
    let total = (m as u128).checked_pow(n as u32).unwrap_or(u128::MAX);
    if total > MAX_EXHAUSTIVE {
        bail!("exhaustive check over {}^{} sequences is too large", m, n);
    }
    let total = total as usize;
    Ok((0..total).map(move |mut idx| {
        let mut seq = vec![1; n];
        for slot in seq.iter_mut().rev() {
            *slot = idx % m + 1;
            idx /= m;
        }
        seq
    }))
}

/// Checks `built` on every sequence of length `n` (`exhaustive`) or on
/// `random` uniform sequences drawn from `seed`.
pub fn verify(req: &BuildRequest, built: &Built, exhaustive: bool, random: usize, seed: u64) -> Result<VerificationReport> {
    let report = &built.report;
    let mut rep = VerificationReport {
        task: req.task,
        m: req.m,
        d: req.d,
        n: req.n,
        exhaustive,
        instances: 0,
        failures: 0,
        max_abs_error: 0.0,
        model_dim: report.model.config.model_dim,
        mlp_width: report.mlp_width,
        mlp_params: report.mlp_params,
        temperature: report.temperature,
        aux_temperature: report.aux_temperature,
        max_cross_inner: report.max_cross_inner,
        embedding: built.embedding_kind,
        embedding_seed: built.embedding_seed,
        first_failure: None,
    };
    let mut check = |tokens: Vec<usize>| -> Result<()> {
        let seq = TokenSequence::new(tokens, req.m)?;
        let want = req.task.oracle(&seq);
        let (value, got) = predict(req.task, report, &seq)?;
        rep.instances += 1;
        rep.max_abs_error = rep.max_abs_error.max((value - want as f64).abs());
        if got != want {
            rep.failures += 1;
            if rep.first_failure.is_none() {
                rep.first_failure = Some(seq.tokens);
            }
        }
        Ok(())
    };
    if exhaustive {
        for tokens in all_sequences(req.m, req.n)? {
            check(tokens)?;
        }
    } else {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for _ in 0..random {
            let tokens = (0..req.n).map(|_| rng.random_range(1..=req.m)).collect();
            check(tokens)?;
        }
    }
    Ok(rep)
}
