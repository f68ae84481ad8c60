//! Training transformers from scratch on the counting tasks, and the sweep
//! that locates where accuracy collapses as the vocabulary grows.

mod adam;
mod backward;

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

pub use adam::{adam_step, AdamConfig, AdamState};
pub use backward::{add_grads, example_loss_and_grads, loss_and_grads, Example};

use crate::math;
use crate::model::{model_forward, TokenSequence, TransformerConfig, TransformerModel};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Task {
    /// Count of the last token.
    Qc,
    /// Count of the most frequent token.
    Mfe,
}

impl Task {
    pub fn label(&self, seq: &TokenSequence) -> usize {
        match self {
            Task::Qc => seq.query_count(),
            Task::Mfe => seq.max_count(),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Task::Qc => "qc",
            Task::Mfe => "mfe",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TaskSpec {
    pub task: Task,
    pub vocab_size: usize,
    /// Expected occurrences per token; the context holds `c·m` tokens.
    pub expected_count: usize,
    pub seed: u64,
}

impl TaskSpec {
    pub fn new(task: Task, vocab_size: usize) -> Self {
        TaskSpec {
            task,
            vocab_size,
            expected_count: 10,
            seed: 0,
        }
    }

    pub fn context_len(&self) -> usize {
        self.expected_count * self.vocab_size
    }

    pub fn validate(&self) -> Result<()> {
        if self.vocab_size < 2 {
            return Err(Error::InvalidConfig("vocab_size must be at least 2".into()));
        }
        if self.expected_count < 1 {
            return Err(Error::InvalidConfig("expected_count must be positive".into()));
        }
        Ok(())
    }
}

/// Uniform i.i.d. tokens of length `c·m` and the task label.
pub fn sample_task<R: Rng>(spec: &TaskSpec, rng: &mut R) -> (TokenSequence, usize) {
    let tokens = (0..spec.context_len())
        .map(|_| rng.random_range(1..=spec.vocab_size))
        .collect();
    let seq = TokenSequence { tokens };
    let label = spec.task.label(&seq);
    (seq, label)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub layers: usize,
    pub heads: usize,
    pub model_dim: usize,
    /// MLP hidden width as a multiple of `model_dim`.
    pub mlp_ratio: usize,
    pub batch_size: usize,
    pub step_size: f64,
    pub steps: usize,
    pub eval_examples: usize,
    pub use_layer_norm: bool,
    pub seed: u64,
}

impl TrainConfig {
    pub fn new(model_dim: usize) -> Self {
        TrainConfig {
            layers: 2,
            heads: 4,
            model_dim,
            mlp_ratio: 4,
            batch_size: 16,
            step_size: 1e-4,
            steps: 20_000,
            eval_examples: 1600,
            use_layer_norm: true,
            seed: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.layers == 0 || self.heads == 0 || self.model_dim == 0 || self.batch_size == 0 {
            return Err(Error::InvalidConfig("layers, heads, model_dim and batch_size must be positive".into()));
        }
        if !self.model_dim.is_multiple_of(self.heads) {
            return Err(Error::InvalidConfig(format!(
                "model_dim {} is not divisible by {} heads",
                self.model_dim, self.heads
            )));
        }
        if !(self.step_size > 0.0) || !self.step_size.is_finite() {
            return Err(Error::InvalidConfig("step_size must be positive".into()));
        }
        Ok(())
    }

    pub fn model_config(&self, spec: &TaskSpec) -> TransformerConfig {
        TransformerConfig {
            n_layers: self.layers,
            n_heads: self.heads,
            head_dim: self.model_dim / self.heads,
            model_dim: self.model_dim,
            vocab_size: spec.vocab_size,
            context_len: spec.context_len(),
            use_layer_norm: self.use_layer_norm,
            use_positional: true,
        }
    }
}

/// Seed of the batch drawn at `step`, mixed from the run seed.
pub fn batch_seed(seed: u64, step: usize) -> u64 {
    // splitmix64 finalizer
    let mut z = seed ^ (step as u64).wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

pub fn sample_batch(spec: &TaskSpec, size: usize, seed: u64) -> Vec<Example> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..size).map(|_| sample_task(spec, &mut rng)).collect()
}

/// Weights i.i.d. `N(0, 1/D)`, identity norms, zero MLP biases, and a readout
/// bias equal to the mean label of a probe batch.
pub fn init_model(spec: &TaskSpec, cfg: &TrainConfig) -> Result<TransformerModel> {
    spec.validate()?;
    cfg.validate()?;
    let mut model = TransformerModel::zeros(cfg.model_config(spec), cfg.mlp_ratio * cfg.model_dim)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let normal = Normal::new(0.0, 1.0 / math::sqrt(cfg.model_dim as f64))
        .map_err(|_| Error::InvalidConfig("bad init scale".into()))?;
    let mut fill = |xs: &mut [f64]| xs.iter_mut().for_each(|x| *x = normal.sample(&mut rng));
    fill(&mut model.token_embeddings.data);
    fill(&mut model.positional_embeddings.data);
    for layer in &mut model.layers {
        for h in &mut layer.heads {
            fill(&mut h.query.data);
            fill(&mut h.key.data);
            fill(&mut h.value.data);
        }
        for l in &mut layer.mlp.layers {
            fill(&mut l.weight.data);
        }
    }
    fill(&mut model.readout.weight);
    let probe = sample_batch(spec, 64, batch_seed(cfg.seed, usize::MAX));
    model.readout.bias = probe.iter().map(|e| e.1 as f64).sum::<f64>() / probe.len() as f64;
    Ok(model)
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainOutcome {
    pub model: TransformerModel,
    pub loss_curve: Vec<f64>,
}

/// Trains with the sequential batch gradient.
pub fn train(spec: &TaskSpec, cfg: &TrainConfig) -> Result<TrainOutcome> {
    train_with(spec, cfg, &mut |model, batch| loss_and_grads(model, batch), &mut |_, _| {})
}

/// Trains with a caller-supplied batch gradient (e.g. a parallel one that
/// must return the same sums) and a per-step progress hook `(step, loss)`.
pub fn train_with(
    spec: &TaskSpec,
    cfg: &TrainConfig,
    grad_fn: &mut dyn FnMut(&TransformerModel, &[Example]) -> Result<(f64, TransformerModel)>,
    progress: &mut dyn FnMut(usize, f64),
) -> Result<TrainOutcome> {
    let mut model = init_model(spec, cfg)?;
    let mut state = AdamState::new(&model);
    let adam = AdamConfig::default();
    let mut loss_curve = Vec::with_capacity(cfg.steps);
    for step in 0..cfg.steps {
        let seed = batch_seed(cfg.seed, step);
        let batch = sample_batch(spec, cfg.batch_size, seed);
        let (loss, grads) = match grad_fn(&model, &batch) {
            Ok(r) => r,
            Err(Error::NonFinite(_)) => return Err(Error::Divergence { step, batch_seed: seed }),
            Err(e) => return Err(e),
        };
        if !loss.is_finite() {
            return Err(Error::Divergence { step, batch_seed: seed });
        }
        adam_step(&mut model, &mut state, &grads, cfg.step_size, &adam)?;
        loss_curve.push(loss);
        progress(step, loss);
    }
    Ok(TrainOutcome { model, loss_curve })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub accuracy: f64,
    pub mean_abs_error: f64,
    pub examples: usize,
}

/// Accuracy (rounded prediction equals label) and mean absolute error.
pub fn evaluate_detailed<R: Rng>(
    model: &TransformerModel,
    spec: &TaskSpec,
    n_examples: usize,
    rng: &mut R,
) -> Result<EvalReport> {
    if n_examples == 0 {
        return Err(Error::InvalidArgument("evaluation needs at least one example".into()));
    }
    let (mut hits, mut abs_err) = (0usize, 0.0);
    for _ in 0..n_examples {
        let (seq, label) = sample_task(spec, rng);
        let y = model_forward(model, &seq)?;
        if math::round(y) == label as f64 {
            hits += 1;
        }
        abs_err += math::abs(y - label as f64);
    }
    Ok(EvalReport {
        accuracy: hits as f64 / n_examples as f64,
        mean_abs_error: abs_err / n_examples as f64,
        examples: n_examples,
    })
}

pub fn evaluate<R: Rng>(
    model: &TransformerModel,
    spec: &TaskSpec,
    n_examples: usize,
    rng: &mut R,
) -> Result<f64> {
    Ok(evaluate_detailed(model, spec, n_examples, rng)?.accuracy)
}

/// Default vocabulary grid: 8 points evenly spaced over `[4, 4d]`, rounded.
pub fn default_m_grid(d: usize) -> Vec<usize> {
    let hi = 4 * d.max(1);
    let mut grid: Vec<usize> = (0..8)
        .map(|i| math::round(4.0 + i as f64 * (hi - 4) as f64 / 7.0) as usize)
        .collect();
    grid.dedup();
    grid
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "status")]
pub enum CellOutcome {
    Trained { accuracy: f64, mean_abs_error: f64 },
    /// Training diverged; the cell counts as failing.
    Failed { reason: String },
    /// Not run because an earlier vocabulary size already fell below threshold.
    Skipped,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepCell {
    pub d: usize,
    pub m: usize,
    pub seed: u64,
    pub outcome: CellOutcome,
}

impl SweepCell {
    pub fn accuracy(&self) -> Option<f64> {
        match self.outcome {
            CellOutcome::Trained { accuracy, .. } => Some(accuracy),
            CellOutcome::Failed { .. } => Some(0.0),
            CellOutcome::Skipped => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepResult {
    pub task: Task,
    pub threshold: f64,
    pub grid: Vec<SweepCell>,
    /// `(d, m_thr)`; `None` when no tested vocabulary fell below threshold.
    pub thresholds: Vec<(usize, Option<usize>)>,
}

/// First `m` (in order) whose accuracy is below `threshold`.
pub fn threshold_scan(accuracies: &[(usize, f64)], threshold: f64) -> Option<usize> {
    accuracies.iter().find(|(_, a)| *a < threshold).map(|(m, _)| *m)
}

/// Whether `m_thr` is nondecreasing in `d`, with `None` read as infinity.
pub fn thresholds_monotone(thresholds: &[(usize, Option<usize>)]) -> bool {
    let key = |t: Option<usize>| t.unwrap_or(usize::MAX);
    let mut sorted = thresholds.to_vec();
    sorted.sort_by_key(|(d, _)| *d);
    sorted.windows(2).all(|w| key(w[0].1) <= key(w[1].1))
}

/// Seed of cell `index` in a sweep with master seed `seed`.
pub fn cell_seed(seed: u64, index: usize) -> u64 {
    batch_seed(seed ^ 0x5EED_CE11, index)
}

/// Runs `cell(d, m, seed)` over the grid, per `d` in ascending `m`, stopping a
/// row at its first cell below `threshold`. `m_cap(d)` optionally limits the
/// largest `m` trained for a row (cells above it are skipped).
pub fn sweep_mthr(
    task: Task,
    d_values: &[usize],
    m_grid: &dyn Fn(usize) -> Vec<usize>,
    threshold: f64,
    seed: u64,
    m_cap: &dyn Fn(usize, &[(usize, Option<usize>)]) -> Option<usize>,
    cell: &mut dyn FnMut(usize, usize, u64) -> Result<EvalReport>,
) -> Result<SweepResult> {
    let mut grid = Vec::new();
    let mut thresholds = Vec::new();
    let mut index = 0usize;
    for &d in d_values {
        let ms = m_grid(d);
        if ms.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::InvalidArgument("m grid must be strictly ascending".into()));
        }
        let cap = m_cap(d, &thresholds);
        let mut found = None;
        for m in ms {
            let cell_seed = cell_seed(seed, index);
            index += 1;
            let outcome = if found.is_some() || cap.is_some_and(|c| m > c) {
                CellOutcome::Skipped
            } else {
                match cell(d, m, cell_seed) {
                    Ok(r) => CellOutcome::Trained {
                        accuracy: r.accuracy,
                        mean_abs_error: r.mean_abs_error,
                    },
                    Err(e) => CellOutcome::Failed {
                        reason: format!("{}", e),
                    },
                }
            };
            let c = SweepCell {
                d,
                m,
                seed: cell_seed,
                outcome,
            };
            if found.is_none() && c.accuracy().is_some_and(|a| a < threshold) {
                found = Some(m);
            }
            grid.push(c);
        }
        thresholds.push((d, found));
    }
    Ok(SweepResult {
        task,
        threshold,
        grid,
        thresholds,
    })
}

/// Trains and evaluates one sweep cell with the sequential gradient.
pub fn train_cell(task: Task, d: usize, m: usize, seed: u64, template: &TrainConfig) -> Result<EvalReport> {
    let spec = TaskSpec {
        task,
        vocab_size: m,
        expected_count: 10,
        seed,
    };
    let cfg = TrainConfig {
        model_dim: d,
        seed,
        ..*template
    };
    let out = train(&spec, &cfg)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xE7A1);
    evaluate_detailed(&out.model, &spec, cfg.eval_examples, &mut rng)
}
