//! The `countlab` command line.

use std::ffi::OsString;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, Result};
use clap::{ArgGroup, Args, Parser, Subcommand, ValueEnum};
use countlab_core::analysis::{
    empirical_inner_tail, hoeffding_bound, lemma1_lower_bound, max_pairwise_inner, min_pieces_inverse,
    random_rademacher_embeddings, required_temperature, welch_lower_bound,
};
use countlab_core::protocol::{
    disjointness_oracle, histogram_protocol_setup, run_protocol, usable_bits, DisjointnessInstance,
    ProtocolTranscript,
};
use countlab_core::training::{thresholds_monotone, Task, TrainConfig};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::io::{fmt_f64, save_model, write_csv, write_json};
use crate::manifest::RunRecord;
use crate::plot::{figure_from_csv, render, PlotKind, SchemaError};
use crate::sweep::{run_sweep, write_sweep_csvs, SweepPlan};
use crate::verify::{build, verify, BuildRequest, ConstructTask, EmbeddingChoice};

pub const EXIT_OK: i32 = 0;
pub const EXIT_VERIFICATION: i32 = 1;
pub const EXIT_USAGE: i32 = 2;

#[derive(Debug, Parser)]
#[command(name = "countlab", version, about = "Counting with small transformers: constructions, bounds, training sweeps")]
pub struct Cli {
    /// Directory for every artifact and the run manifest.
    #[arg(long, env = "COUNTLAB_OUT", default_value = "countlab-out", global = true)]
    pub out_dir: PathBuf,
    /// Suppress progress lines on stderr.
    #[arg(long, global = true)]
    pub quiet: bool,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Build a hand-set model and verify it against the counting oracle.
    Construct(ConstructArgs),
    /// Evaluate an analytic bound and write a CSV.
    Analyze(AnalyzeArgs),
    /// Train models over a (d, m) grid and locate m_thr(d).
    Sweep(SweepArgs),
    /// Simulate the two-party set-disjointness protocol.
    Protocol(ProtocolArgs),
    /// Render an SVG from a CSV produced by another subcommand.
    Plot(PlotArgs),
}

#[derive(Debug, Args)]
pub struct ConstructArgs {
    #[arg(long, value_enum)]
    pub task: ConstructTask,
    #[arg(long)]
    pub m: usize,
    /// Embedding dimension for the attention constructions (default m).
    #[arg(long)]
    pub d: Option<usize>,
    #[arg(long)]
    pub n: usize,
    #[arg(long, value_enum, default_value = "onehot")]
    pub embedding: EmbeddingChoice,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Check every sequence of length n.
    #[arg(long, conflicts_with = "random")]
    pub exhaustive: bool,
    /// Number of random sequences to check.
    #[arg(long, default_value_t = 1000)]
    pub random: usize,
    /// Gate constant of the histogram extraction MLP (default 2n²).
    #[arg(long)]
    pub gate_scale: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Check {
    Welch,
    Hoeffding,
    Pieces,
    Temperature,
}

#[derive(Debug, Args)]
pub struct AnalyzeArgs {
    #[arg(long, value_enum)]
    pub check: Check,
    /// Vocabulary sizes (welch; default 2d).
    #[arg(long, value_delimiter = ',')]
    pub m: Vec<usize>,
    /// Dimensions (welch, hoeffding).
    #[arg(long, value_delimiter = ',')]
    pub d: Vec<usize>,
    /// Context lengths (pieces, temperature).
    #[arg(long, value_delimiter = ',')]
    pub n: Vec<usize>,
    /// Tolerance for pieces.
    #[arg(long, default_value_t = 0.5)]
    pub eps: f64,
    /// Tail thresholds for hoeffding.
    #[arg(long, value_delimiter = ',', default_value = "0.4")]
    pub t: Vec<f64>,
    /// Largest cross inner products for temperature.
    #[arg(long, value_delimiter = ',', default_value = "0")]
    pub j: Vec<f64>,
    #[arg(long, default_value_t = 100_000)]
    pub draws: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Independent embedding draws per (m, d) for welch.
    #[arg(long, default_value_t = 1)]
    pub seeds: u64,
    /// Output CSV (default <out-dir>/<check>.csv).
    #[arg(long)]
    pub csv: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum TaskArg {
    Qc,
    Mfe,
}

impl From<TaskArg> for Task {
    fn from(t: TaskArg) -> Task {
        match t {
            TaskArg::Qc => Task::Qc,
            TaskArg::Mfe => Task::Mfe,
        }
    }
}

#[derive(Debug, Args)]
pub struct SweepArgs {
    #[arg(long, value_enum)]
    pub task: TaskArg,
    #[arg(long, value_delimiter = ',', default_value = "8,16,32")]
    pub d_list: Vec<usize>,
    /// Vocabulary grid shared by every d (default: 8 points over [4, 4d]).
    #[arg(long, value_delimiter = ',')]
    pub m_list: Option<Vec<usize>>,
    #[arg(long, default_value_t = 20_000)]
    pub steps: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 0.8)]
    pub threshold: f64,
    #[arg(long, default_value_t = 1e-4)]
    pub step_size: f64,
    #[arg(long, default_value_t = 16)]
    pub batch_size: usize,
    #[arg(long, default_value_t = 1600)]
    pub eval_examples: usize,
    #[arg(long, default_value_t = 2)]
    pub layers: usize,
    #[arg(long, default_value_t = 4)]
    pub heads: usize,
    #[arg(long, default_value_t = 4)]
    pub mlp_ratio: usize,
    /// Only train a row up to the threshold found for the next smaller d.
    #[arg(long)]
    pub cap_at_previous: bool,
    /// Results CSV; thresholds.csv and errors.csv are written beside it.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Also write thresholds.svg.
    #[arg(long)]
    pub svg: bool,
}

#[derive(Debug, Args)]
#[group(skip)]
#[command(group(ArgGroup::new("instances").required(true).args(["exhaustive", "random"])))]
pub struct ProtocolArgs {
    #[arg(long)]
    pub nbits: usize,
    /// Register widths to simulate.
    #[arg(long, value_delimiter = ',', default_value = "32")]
    pub p: Vec<u32>,
    #[arg(long)]
    pub exhaustive: bool,
    #[arg(long)]
    pub random: Option<usize>,
    /// Vocabulary available to the reduction (default 3·nbits + 1).
    #[arg(long)]
    pub vocab: Option<usize>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Debug, Args)]
pub struct PlotArgs {
    #[arg(long, value_enum)]
    pub kind: PlotKind,
    #[arg(long)]
    pub csv: PathBuf,
    /// Output SVG (default <out-dir>/<kind>.svg).
    #[arg(long)]
    pub out: Option<PathBuf>,
}

/// A bad flag value discovered after parsing.
#[derive(Debug)]
pub struct UsageError(pub String);

impl std::fmt::Display for UsageError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

fn usage(msg: impl Into<String>) -> anyhow::Error {
    anyhow!(UsageError(msg.into()))
}

/// Exit code and a one-line summary.
#[derive(Debug)]
pub struct Outcome {
    pub code: i32,
    pub message: String,
}

impl Outcome {
    fn from_check(passed: bool, message: String) -> Self {
        Outcome {
            code: if passed { EXIT_OK } else { EXIT_VERIFICATION },
            message,
        }
    }
}

fn exit_code_for(err: &anyhow::Error) -> i32 {
    if err.is::<UsageError>() || err.is::<SchemaError>() {
        return EXIT_USAGE;
    }
    match err.downcast_ref::<countlab_core::Error>() {
        Some(countlab_core::Error::InvalidArgument(_)) | Some(countlab_core::Error::InvalidConfig(_)) => EXIT_USAGE,
        _ => EXIT_VERIFICATION,
    }
}

/// Parses `argv`, runs the subcommand, writes the manifest and returns the
/// process exit code.
pub fn dispatch<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let argv: Vec<OsString> = argv.into_iter().map(Into::into).collect();
    let cli = match Cli::try_parse_from(&argv) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
        }
    };
    let name = match &cli.command {
        Command::Construct(_) => "construct",
        Command::Analyze(_) => "analyze",
        Command::Sweep(_) => "sweep",
        Command::Protocol(_) => "protocol",
        Command::Plot(_) => "plot",
    };
    let mut record = RunRecord::new(name, argv.iter().map(|a| a.to_string_lossy().into_owned()).collect());
    let result = std::fs::create_dir_all(&cli.out_dir)
        .map_err(anyhow::Error::from)
        .and_then(|_| run(&cli, &mut record));
    let (code, message) = match result {
        Ok(o) => (o.code, o.message),
        Err(e) => (exit_code_for(&e), format!("error: {:#}", e)),
    };
    if code == EXIT_OK {
        if !cli.quiet {
            eprintln!("{}", message);
        }
    } else {
        eprintln!("{}", message);
    }
    if let Err(e) = record.finish(&cli.out_dir, code, Some(message)) {
        eprintln!("could not write manifest: {:#}", e);
    }
    code
}

fn run(cli: &Cli, record: &mut RunRecord) -> Result<Outcome> {
    match &cli.command {
        Command::Construct(a) => construct(a, &cli.out_dir, record),
        Command::Analyze(a) => analyze(a, &cli.out_dir, record),
        Command::Sweep(a) => sweep(a, &cli.out_dir, cli.quiet, record),
        Command::Protocol(a) => protocol(a, &cli.out_dir, record),
        Command::Plot(a) => plot(a, &cli.out_dir, record),
    }
}

fn construct(a: &ConstructArgs, dir: &Path, record: &mut RunRecord) -> Result<Outcome> {
    record.seed = Some(a.seed);
    let req = BuildRequest {
        task: a.task,
        m: a.m,
        d: a.d.unwrap_or(a.m),
        n: a.n,
        embedding: a.embedding,
        seed: a.seed,
        gate_scale: a.gate_scale,
    };
    let built = build(&req)?;
    let model_path = dir.join("model.json");
    save_model(&model_path, &built.report.model)?;
    record.output(&model_path);
    let rep = verify(&req, &built, a.exhaustive, a.random, a.seed)?;
    let report_path = dir.join("report.json");
    write_json(&report_path, &rep)?;
    record.output(&report_path);
    Ok(Outcome::from_check(
        rep.passed(),
        format!(
            "{}/{} exact, max |error| {:.3e}",
            rep.instances - rep.failures,
            rep.instances,
            rep.max_abs_error
        ),
    ))
}

fn analyze(a: &AnalyzeArgs, dir: &Path, record: &mut RunRecord) -> Result<Outcome> {
    record.seed = Some(a.seed);
    let need = |v: &[usize], flag: &str| {
        if v.is_empty() {
            Err(usage(format!("--check needs --{}", flag)))
        } else {
            Ok(())
        }
    };
    let bool_s = |b: bool| if b { "true" } else { "false" }.to_string();
    let mut all = true;
    let (header, rows): (Vec<&str>, Vec<Vec<String>>) = match a.check {
        Check::Welch => {
            need(&a.d, "d")?;
            if !a.m.is_empty() && a.m.len() != a.d.len() {
                return Err(usage("--m and --d must have the same length"));
            }
            let mut rows = vec![];
            for (i, &d) in a.d.iter().enumerate() {
                let m = a.m.get(i).copied().unwrap_or(2 * d);
                let bound = welch_lower_bound(m, d)?;
                for seed in a.seed..a.seed + a.seeds.max(1) {
                    let emb = random_rademacher_embeddings(m, d, seed)?;
                    let (measured, _) = max_pairwise_inner(&emb)?;
                    let ok = measured >= bound - 1e-12;
                    all &= ok;
                    rows.push(vec![m.to_string(), d.to_string(), seed.to_string(), fmt_f64(bound), fmt_f64(measured), bool_s(ok)]);
                }
            }
            (vec!["m", "d", "seed", "welch_bound", "max_pairwise_inner", "satisfied"], rows)
        }
        Check::Hoeffding => {
            need(&a.d, "d")?;
            let mut rows = vec![];
            for &d in &a.d {
                for &t in &a.t {
                    let bound = hoeffding_bound(d, t)?;
                    let tail = empirical_inner_tail(d, t, a.draws, a.seed)?;
                    let ok = tail <= bound;
                    all &= ok;
                    rows.push(vec![d.to_string(), fmt_f64(t), a.draws.to_string(), a.seed.to_string(), fmt_f64(tail), fmt_f64(bound), bool_s(ok)]);
                }
            }
            (vec!["d", "t", "draws", "seed", "empirical_tail", "hoeffding_bound", "satisfied"], rows)
        }
        Check::Pieces => {
            need(&a.n, "n")?;
            let mut rows = vec![];
            for &n in &a.n {
                let pieces = min_pieces_inverse(n, a.eps)?;
                let lower = lemma1_lower_bound(n);
                let upper = 8 * n;
                let ok = lower <= pieces && pieces <= upper;
                all &= ok;
                rows.push(vec![n.to_string(), fmt_f64(a.eps), pieces.to_string(), lower.to_string(), upper.to_string(), bool_s(ok)]);
            }
            (vec!["n", "eps", "pieces", "lemma1_lower_bound", "upper_bound", "satisfied"], rows)
        }
        Check::Temperature => {
            need(&a.n, "n")?;
            let mut rows = vec![];
            for &n in &a.n {
                for &j in &a.j {
                    let t = required_temperature(n, j)?;
                    rows.push(vec![n.to_string(), fmt_f64(j), fmt_f64(t)]);
                }
            }
            (vec!["n", "max_inner", "temperature"], rows)
        }
    };
    let name = format!("{:?}", a.check).to_lowercase();
    let path = a.csv.clone().unwrap_or_else(|| dir.join(format!("{}.csv", name)));
    write_csv(&path, &header, &rows)?;
    record.output(&path);
    let failed = rows.iter().filter(|r| r.last().is_some_and(|v| v == "false")).count();
    Ok(Outcome::from_check(
        all,
        format!("{}: {} rows, {} unsatisfied, written to {}", name, rows.len(), failed, path.display()),
    ))
}

fn sweep(a: &SweepArgs, dir: &Path, quiet: bool, record: &mut RunRecord) -> Result<Outcome> {
    record.seed = Some(a.seed);
    if a.d_list.is_empty() {
        return Err(usage("--d-list is empty"));
    }
    if let Some(ms) = &a.m_list {
        if ms.windows(2).any(|w| w[0] >= w[1]) || ms.first().is_some_and(|&m| m < 2) {
            return Err(usage("--m-list must be strictly ascending and at least 2"));
        }
    }
    let template = TrainConfig {
        layers: a.layers,
        heads: a.heads,
        mlp_ratio: a.mlp_ratio,
        batch_size: a.batch_size,
        step_size: a.step_size,
        steps: a.steps,
        eval_examples: a.eval_examples,
        seed: a.seed,
        ..TrainConfig::new(a.d_list[0])
    };
    let plan = SweepPlan {
        task: a.task.into(),
        d_values: a.d_list.clone(),
        m_values: a.m_list.clone(),
        threshold: a.threshold,
        seed: a.seed,
        template,
        cap_at_previous: a.cap_at_previous,
    };
    let res = run_sweep(&plan, quiet)?;
    let results = a.out.clone().unwrap_or_else(|| dir.join("results.csv"));
    let side = results.parent().map(Path::to_path_buf).unwrap_or_default();
    let paths = write_sweep_csvs(&res, a.steps, &results, &side)?;
    for p in &paths {
        record.output(p);
    }
    let json = side.join("sweep.json");
    write_json(&json, &res)?;
    record.output(&json);
    if a.svg {
        let svg = side.join("thresholds.svg");
        std::fs::write(&svg, render(&figure_from_csv(&paths[1], PlotKind::Mthr)?))?;
        record.output(&svg);
    }
    let summary: Vec<String> = res
        .thresholds
        .iter()
        .map(|(d, t)| format!("m_thr({}) = {}", d, t.map_or("none".into(), |m| m.to_string())))
        .collect();
    Ok(Outcome {
        code: EXIT_OK,
        message: format!(
            "{}; monotone in d: {}",
            summary.join(", "),
            thresholds_monotone(&res.thresholds)
        ),
    })
}

#[derive(Debug, Serialize)]
struct TranscriptRecord<'a> {
    p: u32,
    a: &'a [u8],
    b: &'a [u8],
    oracle: u8,
    transcript: ProtocolTranscript,
}

fn protocol(a: &ProtocolArgs, dir: &Path, record: &mut RunRecord) -> Result<Outcome> {
    record.seed = Some(a.seed);
    if a.nbits == 0 {
        return Err(usage("--nbits must be positive"));
    }
    let (n_bits, shrunk) = match a.vocab {
        Some(v) => usable_bits(a.nbits, v),
        None => (a.nbits, false),
    };
    if shrunk {
        eprintln!(
            "warning: vocabulary {} is too small for {} bits; using {} bits",
            a.vocab.unwrap_or(0),
            a.nbits,
            n_bits
        );
    }
    if n_bits == 0 {
        return Err(usage("vocabulary too small for even one bit"));
    }
    if a.exhaustive && n_bits > 8 {
        return Err(usage("exhaustive runs are limited to 8 bits"));
    }
    let instances = if a.exhaustive {
        DisjointnessInstance::all(n_bits)
    } else {
        let mut rng = ChaCha8Rng::seed_from_u64(a.seed);
        (0..a.random.unwrap_or(0))
            .map(|_| DisjointnessInstance::random(n_bits, &mut rng))
            .collect()
    };
    if instances.is_empty() {
        return Err(usage("no instances requested"));
    }
    let (heads, emb) = histogram_protocol_setup(n_bits)?;
    let mut transcripts = Vec::new();
    let mut rows = Vec::new();
    let mut all = true;
    for &p in &a.p {
        let (mut agree, mut total_bits) = (0usize, 0usize);
        for inst in &instances {
            let tr = run_protocol(inst, &heads, &emb, p)?;
            let oracle = disjointness_oracle(inst);
            let expected_bits = (emb.dim + 2) * p as usize * heads.len() + 1;
            all &= tr.total_bits == expected_bits;
            total_bits = tr.total_bits;
            if tr.output == oracle {
                agree += 1;
            }
            transcripts.push(TranscriptRecord {
                p,
                a: &inst.a,
                b: &inst.b,
                oracle,
                transcript: tr,
            });
        }
        let rate = agree as f64 / instances.len() as f64;
        all &= agree == instances.len();
        rows.push(vec![
            n_bits.to_string(),
            p.to_string(),
            emb.dim.to_string(),
            heads.len().to_string(),
            total_bits.to_string(),
            fmt_f64(rate),
        ]);
    }
    let json = dir.join("transcripts.json");
    write_json(&json, &transcripts)?;
    record.output(&json);
    let csv = dir.join("protocol.csv");
    write_csv(&csv, &["nbits", "p", "d", "h", "total_bits", "agreement_rate"], &rows)?;
    record.output(&csv);
    let summary: Vec<String> = rows.iter().map(|r| format!("p={}: {}", r[1], r[5])).collect();
    Ok(Outcome::from_check(all, format!("agreement {}", summary.join(", "))))
}

fn plot(a: &PlotArgs, dir: &Path, record: &mut RunRecord) -> Result<Outcome> {
    let fig = figure_from_csv(&a.csv, a.kind)?;
    let name = match a.kind {
        PlotKind::Mthr => "mthr",
        PlotKind::GeminiStyleError => "gemini-style-error",
        PlotKind::Pieces => "pieces",
    };
    let out = a.out.clone().unwrap_or_else(|| dir.join(format!("{}.svg", name)));
    if let Some(parent) = out.parent() {
        std::fs::create_dir_all(parent)?;
    }
    std::fs::write(&out, render(&fig))?;
    record.output(&out);
    Ok(Outcome {
        code: EXIT_OK,
        message: format!("wrote {}", out.display()),
    })
}
