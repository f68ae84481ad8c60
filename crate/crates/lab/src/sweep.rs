//! Parallel batch gradients and the vocabulary-threshold sweep.

use std::path::Path;

use anyhow::Result;
use countlab_core::training::{
    add_grads, evaluate_detailed, example_loss_and_grads, sweep_mthr, train_with, EvalReport,
    Example, SweepResult, Task, TaskSpec, TrainConfig,
};
use countlab_core::{Error, TransformerModel};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::io::{fmt_f64, write_csv};

/// Same result as the sequential batch gradient, bit for bit: examples are
/// differentiated in parallel and summed in batch order.
pub fn parallel_loss_and_grads(
    model: &TransformerModel,
    batch: &[Example],
) -> countlab_core::Result<(f64, TransformerModel)> {
    if batch.is_empty() {
        return Err(Error::Empty("batch"));
    }
    let scale = 1.0 / batch.len() as f64;
    let parts: Vec<_> = batch
        .par_iter()
        .map(|e| example_loss_and_grads(model, e, scale))
        .collect();
    let mut loss = 0.0;
    let mut grads = model.zeros_like();
    for part in parts {
        let (l, g) = part?;
        loss += l;
        add_grads(&mut grads, &g);
    }
    if !loss.is_finite() {
        return Err(Error::NonFinite("loss"));
    }
    Ok((loss, grads))
}

/// Trains one cell and evaluates it on `cfg.eval_examples` fresh sequences.
pub fn run_cell(task: Task, d: usize, m: usize, seed: u64, template: &TrainConfig, quiet: bool) -> Result<EvalReport> {
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
    let every = (cfg.steps / 10).max(1);
    let out = train_with(&spec, &cfg, &mut |model, batch| parallel_loss_and_grads(model, batch), &mut |step, loss| {
        if !quiet && (step + 1) % every == 0 {
            eprintln!("  {} d={} m={} step {}/{} loss {:.4}", task.name(), d, m, step + 1, cfg.steps, loss);
        }
    })?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xE7A1);
    let report = evaluate_detailed(&out.model, &spec, cfg.eval_examples, &mut rng)?;
    if !quiet {
        eprintln!(
            "{} d={} m={} accuracy {:.4} mean |error| {:.4}",
            task.name(),
            d,
            m,
            report.accuracy,
            report.mean_abs_error
        );
    }
    Ok(report)
}

#[derive(Debug, Clone)]
pub struct SweepPlan {
    pub task: Task,
    pub d_values: Vec<usize>,
    /// Explicit grid shared by every `d`; the default grid per `d` otherwise.
    pub m_values: Option<Vec<usize>>,
    pub threshold: f64,
    pub seed: u64,
    pub template: TrainConfig,
    /// Do not train a row beyond the threshold found for the previous row.
    pub cap_at_previous: bool,
}

pub fn run_sweep(plan: &SweepPlan, quiet: bool) -> Result<SweepResult> {
    let grid = |d: usize| {
        plan.m_values
            .clone()
            .unwrap_or_else(|| countlab_core::training::default_m_grid(d))
    };
    let cap = |_: usize, prev: &[(usize, Option<usize>)]| -> Option<usize> {
        if plan.cap_at_previous {
            prev.last().and_then(|p| p.1)
        } else {
            None
        }
    };
    let mut d_values = plan.d_values.clone();
    d_values.sort_unstable();
    Ok(sweep_mthr(
        plan.task,
        &d_values,
        &grid,
        plan.threshold,
        plan.seed,
        &cap,
        &mut |d, m, seed| {
            run_cell(plan.task, d, m, seed, &plan.template, quiet)
                .map_err(|e| Error::InvalidArgument(e.to_string()))
        },
    )?)
}

pub const RESULTS_HEADER: [&str; 7] = ["task", "d", "m", "n", "steps", "seed", "accuracy"];
pub const THRESHOLDS_HEADER: [&str; 2] = ["d", "m_thr"];
pub const ERRORS_HEADER: [&str; 4] = ["task", "d", "m", "mean_abs_error"];

/// Written value for a missing threshold.
pub const NONE_IN_GRID: &str = "none";

/// Writes the results CSV at `results_path` and the threshold and error
/// tables into `dir`.
pub fn write_sweep_csvs(res: &SweepResult, steps: usize, results_path: &Path, dir: &Path) -> Result<Vec<std::path::PathBuf>> {
    let mut results = Vec::new();
    let mut errors = Vec::new();
    for cell in &res.grid {
        let Some(acc) = cell.accuracy() else { continue };
        results.push(vec![
            res.task.name().to_string(),
            cell.d.to_string(),
            cell.m.to_string(),
            (10 * cell.m).to_string(),
            steps.to_string(),
            cell.seed.to_string(),
            fmt_f64(acc),
        ]);
        if let countlab_core::training::CellOutcome::Trained { mean_abs_error, .. } = cell.outcome {
            errors.push(vec![
                res.task.name().to_string(),
                cell.d.to_string(),
                cell.m.to_string(),
                fmt_f64(mean_abs_error),
            ]);
        }
    }
    let thresholds: Vec<Vec<String>> = res
        .thresholds
        .iter()
        .map(|(d, t)| vec![d.to_string(), t.map_or(NONE_IN_GRID.to_string(), |m| m.to_string())])
        .collect();
    let paths = [
        results_path.to_path_buf(),
        dir.join("thresholds.csv"),
        dir.join("errors.csv"),
    ];
    write_csv(&paths[0], &RESULTS_HEADER, &results)?;
    write_csv(&paths[1], &THRESHOLDS_HEADER, &thresholds)?;
    write_csv(&paths[2], &ERRORS_HEADER, &errors)?;
    Ok(paths.to_vec())
}
