//! Command-line front end: `probe`, `eval`, `correlate` and `synth`.
//!
//! Exit codes: 0 success, 1 input or validation error, 2 numerical failure.
//! Diagnostics go to stderr, summaries to stdout, files to `--out`.

use std::collections::HashMap;
use std::ffi::OsString;
use std::fmt::Write as _;
use std::ops::RangeInclusive;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};

use crate::error::{Error, EXIT_INPUT, EXIT_NUMERICAL, EXIT_OK};
use crate::pipeline::{
    self, emit_report, improvement_cell, read_curves_csv, summarize, worker_pool,
    CorrelationSummary, EvalOptions, ImprovementMatrix, LayerScoreCurve, Report, ReportMetadata,
    TaskFailure, CURVES_CSV,
};
use crate::pooling::PoolingStrategy;
use crate::probes::{probe_all, ProbeReport};
use crate::synth::{self, SynthSpec, SynthTask};
use crate::tensorio::{load_layers, load_manifest, load_scores, ExternalScoreFile, TaskManifest};

const DEFAULT_MANIFEST: &str = "manifest.json";

#[derive(Debug, Parser)]
#[command(name = "layerscope", version, about = "Layer-wise diagnostics for frozen encoder embeddings")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Token entropy and adjacent-layer CKA for every layer of a container.
    Probe(ProbeArgs),
    /// Per-layer frozen-embedding scores and best-intermediate-vs-final changes.
    Eval(EvalArgs),
    /// Correlate frozen curves with externally produced finetuned scores.
    Correlate(CorrelateArgs),
    /// Write a synthetic container.
    Synth(SynthArgs),
}

#[derive(Debug, Args)]
pub struct LayerArgs {
    /// Container directory holding index.json and layer_*.npy.
    pub container: PathBuf,
    /// Inclusive layer range, e.g. `0..3`, or a single layer.
    #[arg(long, value_parser = parse_layers)]
    pub layers: Option<RangeInclusive<usize>>,
    /// Override the pooling strategy (mean or cls).
    #[arg(long)]
    pub pooling: Option<PoolingStrategy>,
    #[arg(long, default_value_t = default_workers(), value_parser = parse_workers)]
    pub workers: usize,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct ProbeArgs {
    #[command(flatten)]
    pub layer: LayerArgs,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[command(flatten)]
    pub layer: LayerArgs,
    /// Task manifest; repeatable. Defaults to CONTAINER/manifest.json.
    #[arg(long = "manifest")]
    pub manifests: Vec<PathBuf>,
    /// Surrogate L2 strength (ridge or logistic).
    #[arg(long, value_parser = parse_lambda)]
    pub lambda: Option<f64>,
    /// Also compute probes and embed them in report.json.
    #[arg(long)]
    pub probes: bool,
}

#[derive(Debug, Args)]
pub struct CorrelateArgs {
    /// curves.csv written by `eval`, or the directory containing it.
    pub curves: PathBuf,
    /// Finetuned score file; repeatable.
    #[arg(long = "scores", required = true)]
    pub scores: Vec<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Preset {
    /// Six layers ending in a rank-2 compression that removes a planted target.
    Compression,
    /// Identical layers with random labels.
    Identity,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum SynthTaskArg {
    Regression,
    Classification,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, value_enum, default_value_t = Preset::Compression)]
    pub preset: Preset,
    #[arg(long, value_enum)]
    pub task: Option<SynthTaskArg>,
    /// Override the preset's molecule count.
    #[arg(long)]
    pub molecules: Option<usize>,
}

fn default_workers() -> usize {
    std::thread::available_parallelism().map_or(1, |n| n.get())
}

fn parse_workers(s: &str) -> Result<usize, String> {
    match s.parse::<usize>() {
        Ok(n) if n >= 1 => Ok(n),
        _ => Err(format!("expected a positive integer, got {s:?}")),
    }
}

fn parse_lambda(s: &str) -> Result<f64, String> {
    match s.parse::<f64>() {
        Ok(v) if v > 0.0 && v.is_finite() => Ok(v),
        _ => Err(format!("expected a finite positive number, got {s:?}")),
    }
}

/// `a..b` (inclusive) or a single index.
pub fn parse_layers(s: &str) -> Result<RangeInclusive<usize>, String> {
    let bad = || format!("expected START..END or N, got {s:?}");
    let (a, b) = match s.split_once("..") {
        Some((a, b)) => (a, b.strip_prefix('=').unwrap_or(b)),
        None => (s, s),
    };
    let a: usize = a.trim().parse().map_err(|_| bad())?;
    let b: usize = b.trim().parse().map_err(|_| bad())?;
    if a > b {
        return Err(format!("empty layer range {s:?}"));
    }
    Ok(a..=b)
}

/// Parses `args` (including the program name), runs, and returns the exit code.
pub fn run_from_args<I, T>(args: I) -> u8
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_INPUT } else { EXIT_OK };
        }
    };
    match run(cli.command) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

pub fn run(command: Command) -> Result<u8, Error> {
    match command {
        Command::Probe(args) => cmd_probe(&args),
        Command::Eval(args) => cmd_eval(&args),
        Command::Correlate(args) => cmd_correlate(&args),
        Command::Synth(args) => cmd_synth(&args),
    }
}

fn print_written(paths: &[PathBuf]) {
    for p in paths {
        eprintln!("wrote {}", p.display());
    }
}

fn probe_table(p: &ProbeReport) -> String {
    let mut s = format!("{:>5}  {:>7}  {:>10}  {:>11}\n", "layer", "depth%", "tme", "cka_to_next");
    for i in 0..p.layers.len() {
        let cka = p.adjacent_cka.get(i).map_or("-".to_string(), |c| format!("{c:.6}"));
        let _ = writeln!(
            s,
            "{:>5}  {:>7.1}  {:>10.6}  {:>11}",
            p.layers[i], p.depth_percent[i], p.tme[i], cka
        );
    }
    s
}

pub fn cmd_probe(args: &ProbeArgs) -> Result<u8, Error> {
    let a = &args.layer;
    let (index, stacks) = load_layers(&a.container, a.layers.clone())?;
    let pooling = a.pooling.unwrap_or(index.pooling_default);
    let pool = worker_pool(a.workers)?;
    let probes = pool.install(|| probe_all(&index.model_name, &stacks, pooling))?;
    print!("{}", probe_table(&probes));

    let mut report = Report::new(ReportMetadata {
        pooling_override: a.pooling,
        ..ReportMetadata::default()
    });
    report.probes = Some(probes);
    print_written(&emit_report(&a.out, &report)?);
    Ok(EXIT_OK)
}

struct Failure {
    source: String,
    error: Error,
}

fn failure_code(failures: &[Failure]) -> u8 {
    if failures.is_empty() {
        EXIT_OK
    } else if failures.iter().all(|f| f.error.is_numerical()) {
        EXIT_NUMERICAL
    } else {
        EXIT_INPUT
    }
}

fn eval_table(curves: &[LayerScoreCurve], cells: &ImprovementMatrix) -> String {
    let w = curves.iter().map(|c| c.task_name.len()).max().unwrap_or(0).max(4);
    let mut s = format!(
        "{:<w$} {:<8} {:>4} {:>8} {:>12} {:>13} {:>9}  {}\n",
        "task", "metric", "best", "best_nf", "final", "best_nf_score", "change%", "winner"
    );
    for c in curves {
        let Some(cell) = cells.cells.iter().find(|x| x.task_name == c.task_name && x.model_name == c.model_name) else {
            continue;
        };
        let _ = writeln!(
            s,
            "{:<w$} {:<8} {:>4} {:>8} {:>12.6} {:>13.6} {:>9.3}  {}",
            c.task_name,
            c.metric.as_str(),
            c.best_layer,
            c.best_nonfinal_layer,
            cell.final_score,
            cell.best_nonfinal_score,
            cell.percent_change,
            cell.winner.as_str()
        );
    }
    let sum = &cells.summary;
    let _ = writeln!(
        s,
        "fraction preferring a non-final layer: {:.3} ({} cells)\nmean percent change: {:.3}",
        sum.fraction_nonfinal, sum.cells, sum.mean_percent_change
    );
    s
}

pub fn cmd_eval(args: &EvalArgs) -> Result<u8, Error> {
    let a = &args.layer;
    let manifest_paths = if args.manifests.is_empty() {
        vec![a.container.join(DEFAULT_MANIFEST)]
    } else {
        args.manifests.clone()
    };
    let (index, stacks) = load_layers(&a.container, a.layers.clone())?;

    let mut failures = Vec::new();
    let mut manifests: Vec<(String, TaskManifest)> = Vec::new();
    for path in &manifest_paths {
        match load_manifest(path) {
            Ok(m) => manifests.push((path.display().to_string(), m)),
            Err(e) => failures.push(Failure {
                source: path.display().to_string(),
                error: e.into(),
            }),
        }
    }

    let options = EvalOptions {
        lambda: args.lambda,
        pooling: a.pooling,
        workers: a.workers,
    };
    let tasks: Vec<TaskManifest> = manifests.iter().map(|(_, m)| m.clone()).collect();
    let results = pipeline::eval_tasks(&index.model_name, &stacks, &tasks, &options)?;

    let mut curves = Vec::new();
    let mut cells = Vec::new();
    for ((source, _), result) in manifests.iter().zip(results) {
        match result.and_then(|c| improvement_cell(&c).map(|cell| (c, cell))) {
            Ok((curve, cell)) => {
                eprintln!("ok     {source}");
                curves.push(curve);
                cells.push(cell);
            }
            Err(e) => failures.push(Failure {
                source: source.clone(),
                error: e.into(),
            }),
        }
    }

    let probes = if args.probes {
        let pooling = a.pooling.unwrap_or(index.pooling_default);
        let pool = worker_pool(a.workers)?;
        match pool.install(|| probe_all(&index.model_name, &stacks, pooling)) {
            Ok(p) => Some(p),
            Err(e) => {
                failures.push(Failure {
                    source: "probes".into(),
                    error: e.into(),
                });
                None
            }
        }
    } else {
        None
    };

    for f in &failures {
        eprintln!("FAILED {}: {}", f.source, f.error);
    }
    if curves.is_empty() {
        eprintln!("error: no task evaluated successfully");
        return Ok(failure_code(&failures).max(EXIT_INPUT));
    }

    let summary = summarize(&cells)?;
    let matrix = ImprovementMatrix { cells, summary };
    print!("{}", eval_table(&curves, &matrix));

    let mut report = Report::new(ReportMetadata {
        pooling_override: a.pooling,
        lambda: args.lambda,
        ..ReportMetadata::default()
    });
    report.probes = probes;
    report.curves = Some(curves);
    report.improvement = Some(matrix);
    report.failures = failures
        .iter()
        .map(|f| TaskFailure {
            source: f.source.clone(),
            error: f.error.to_string(),
        })
        .collect();
    print_written(&emit_report(&a.out, &report)?);
    Ok(failure_code(&failures))
}

fn curves_path(p: &Path) -> PathBuf {
    if p.is_dir() {
        p.join(CURVES_CSV)
    } else {
        p.to_path_buf()
    }
}

pub fn cmd_correlate(args: &CorrelateArgs) -> Result<u8, Error> {
    let curves = read_curves_csv(&curves_path(&args.curves))?;
    let mut scores: HashMap<(String, String), (PathBuf, ExternalScoreFile)> = HashMap::new();
    for path in &args.scores {
        let file = load_scores(path)?;
        let key = (file.model_name.clone(), file.task_name.clone());
        if let Some((first, _)) = scores.get(&key) {
            return Err(Error::Invalid(format!(
                "{} and {} both hold scores for {}/{}",
                first.display(),
                path.display(),
                key.0,
                key.1
            )));
        }
        scores.insert(key, (path.clone(), file));
    }

    let mut pairs = Vec::new();
    let mut unmatched = Vec::new();
    let mut failures = Vec::new();
    let mut used = Vec::new();
    for curve in &curves {
        let key = (curve.model_name.clone(), curve.task_name.clone());
        let label = format!("{}/{}", key.0, key.1);
        match scores.get(&key) {
            None => unmatched.push(label),
            Some((_, file)) => {
                used.push(key);
                match pipeline::correlate(curve, file) {
                    Ok(c) => pairs.push(c),
                    Err(e) => failures.push(Failure {
                        source: label,
                        error: e.into(),
                    }),
                }
            }
        }
    }
    let mut extra: Vec<String> = scores
        .iter()
        .filter(|(k, _)| !used.contains(k))
        .map(|(k, (path, _))| format!("{}/{} ({})", k.0, k.1, path.display()))
        .collect();
    extra.sort();
    unmatched.extend(extra);

    for u in &unmatched {
        eprintln!("unmatched {u}");
    }
    for f in &failures {
        eprintln!("FAILED {}: {}", f.source, f.error);
    }
    if used.is_empty() {
        eprintln!("error: no (model, task) pair matched between curves and score files");
        return Ok(EXIT_INPUT);
    }

    let values: Vec<f64> = pairs.iter().map(|c| c.pearson).collect();
    let median = pipeline::median(&values);
    for c in &pairs {
        println!("{}/{}  pearson {:.6}  ({} layers)", c.model_name, c.task_name, c.pearson, c.n_layers);
    }
    match median {
        Some(m) => println!("median pearson: {m:.6}"),
        None => println!("median pearson: n/a"),
    }

    let mut report = Report::new(ReportMetadata::default());
    report.correlations = Some(CorrelationSummary {
        pairs,
        median,
        unmatched,
    });
    report.failures = failures
        .iter()
        .map(|f| TaskFailure {
            source: f.source.clone(),
            error: f.error.to_string(),
        })
        .collect();
    print_written(&emit_report(&args.out, &report)?);
    Ok(failure_code(&failures))
}

pub fn synth_spec(args: &SynthArgs) -> SynthSpec {
    let mut spec = match args.preset {
        Preset::Compression => SynthSpec::compression(args.seed),
        Preset::Identity => SynthSpec::identity(args.seed),
    };
    match args.task {
        Some(SynthTaskArg::Regression) => spec.task = SynthTask::Regression,
        Some(SynthTaskArg::Classification) => spec.task = SynthTask::Classification,
        None => {}
    }
    if let Some(n) = args.molecules {
        spec.n_molecules = n;
    }
    spec
}

pub fn cmd_synth(args: &SynthArgs) -> Result<u8, Error> {
    let spec = synth_spec(args);
    let out = synth::generate(&spec)?;
    synth::write_synth_container(&args.out, &spec, &out)?;
    println!(
        "{}: {} molecules, {} layers, dim {}, seed {}, task {} ({})",
        spec.model_name,
        spec.n_molecules,
        spec.num_layers,
        spec.dim,
        spec.seed,
        out.manifest.task_name,
        out.manifest.metric
    );
    eprintln!("wrote {}", args.out.display());
    Ok(EXIT_OK)
}
