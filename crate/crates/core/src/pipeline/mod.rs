//! Per-layer frozen-embedding evaluation, improvement matrices and
//! frozen-vs-finetuned correlation.
//!
//! Every (task, layer) pair is an independent job on a bounded rayon pool.
//! Results land in index-addressed slots, so the worker count never changes
//! the output.

mod report;
pub mod svg;

use std::collections::{BTreeMap, HashMap};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::metrics::{self, Direction, Metric, MetricError};
use crate::pooling::{pool, PoolingError, PoolingStrategy};
use crate::surrogate::{self, SurrogateError, SurrogateKind};
use crate::tensorio::{ExternalScoreFile, LayerStack, Split, TaskKind, TaskManifest};

pub use report::{
    emit_report, read_curves_csv, CorrelationSummary, ImprovementMatrix, Report, ReportError,
    ReportMetadata, TaskFailure, CORRELATIONS_CSV, CURVES_CSV, IMPROVEMENT_CSV, PROBES_CSV,
    REPORT_JSON,
};

const MAX_LISTED_IDS: usize = 10;

/// Failure inside one (task, layer) job.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum LayerError {
    #[error(transparent)]
    Pooling(#[from] PoolingError),
    #[error(transparent)]
    Surrogate(#[from] SurrogateError),
    #[error(transparent)]
    Metric(#[from] MetricError),
    #[error("metric is not finite ({0})")]
    NonFiniteScore(f64),
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PipelineError {
    #[error("task {task:?}, layer {layer}: {source}")]
    Layer {
        task: String,
        layer: usize,
        source: LayerError,
    },
    #[error("task {task:?}: {count} manifest molecules missing from the stack: {listed}")]
    MissingMolecules {
        task: String,
        count: usize,
        listed: String,
    },
    #[error("task {task:?}: train too small (need at least 2 molecules, got {got})")]
    TrainTooSmall { task: String, got: usize },
    #[error("task {0:?}: test split is empty")]
    EmptyTest(String),
    #[error("evaluation needs at least 2 layers, got {0}")]
    TooFewLayers(usize),
    #[error("layer {0} lists molecules in a different order than the first layer")]
    MoleculeOrderMismatch(usize),
    #[error("invalid worker count {0}")]
    InvalidWorkers(usize),
    #[error("thread pool: {0}")]
    ThreadPool(String),
    #[error("undefined relative change: final score is 0")]
    UndefinedRelativeChange,
    #[error("non-finite score (final {final_score}, best non-final {best_score})")]
    NonFiniteScore { final_score: f64, best_score: f64 },
    #[error("improvement matrix needs at least one curve")]
    NoCurves,
    #[error("layer count mismatch: {frozen} frozen vs {finetuned} finetuned")]
    LayerCountMismatch { frozen: usize, finetuned: usize },
    #[error("correlation needs at least 2 layers, got {0}")]
    TooFewPoints(usize),
    #[error("constant {0} series")]
    ConstantSeries(&'static str),
}

impl LayerError {
    pub fn is_numerical(&self) -> bool {
        match self {
            LayerError::Surrogate(e) => e.is_numerical(),
            LayerError::Metric(e) => e.is_numerical(),
            LayerError::NonFiniteScore(_) => true,
            LayerError::Pooling(_) => false,
        }
    }
}

impl PipelineError {
    pub fn is_numerical(&self) -> bool {
        match self {
            PipelineError::Layer { source, .. } => source.is_numerical(),
            PipelineError::NonFiniteScore { .. } => true,
            _ => false,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Winner {
    Intermediate,
    Final,
    Tie,
}

impl Winner {
    pub fn as_str(self) -> &'static str {
        match self {
            Winner::Intermediate => "intermediate",
            Winner::Final => "final",
            Winner::Tie => "tie",
        }
    }
}

/// Test-split score of every evaluated layer for one (model, task).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerScoreCurve {
    pub model_name: String,
    pub task_name: String,
    pub metric: Metric,
    pub direction: Direction,
    /// Container layer indices, in evaluation order.
    pub layers: Vec<usize>,
    pub scores: Vec<f64>,
    /// Container index of the best layer; ties go to the smaller index.
    pub best_layer: usize,
    /// Best among all but the last evaluated layer.
    pub best_nonfinal_layer: usize,
}

/// Position of the best score, preferring the earliest on exact ties.
pub fn argbest(scores: &[f64], direction: Direction) -> usize {
    let mut best = 0;
    for (i, &s) in scores.iter().enumerate().skip(1) {
        if direction.is_better(s, scores[best]) {
            best = i;
        }
    }
    best
}

impl LayerScoreCurve {
    /// Builds a curve from parallel layer/score lists. Needs at least 2 layers.
    pub fn new(
        model_name: &str,
        task_name: &str,
        metric: Metric,
        layers: Vec<usize>,
        scores: Vec<f64>,
    ) -> Result<Self, PipelineError> {
        if layers.len() < 2 || layers.len() != scores.len() {
            return Err(PipelineError::TooFewLayers(layers.len().min(scores.len())));
        }
        let direction = metric.direction();
        let best = argbest(&scores, direction);
        let best_nonfinal = argbest(&scores[..scores.len() - 1], direction);
        Ok(Self {
            model_name: model_name.to_string(),
            task_name: task_name.to_string(),
            metric,
            direction,
            best_layer: layers[best],
            best_nonfinal_layer: layers[best_nonfinal],
            layers,
            scores,
        })
    }

    pub fn len(&self) -> usize {
        self.scores.len()
    }

    pub fn is_empty(&self) -> bool {
        self.scores.is_empty()
    }

    pub fn final_score(&self) -> f64 {
        self.scores[self.scores.len() - 1]
    }

    pub fn score_at(&self, layer: usize) -> Option<f64> {
        self.layers.iter().position(|&l| l == layer).map(|i| self.scores[i])
    }

    pub fn best_nonfinal_score(&self) -> f64 {
        self.score_at(self.best_nonfinal_layer).expect("best layer is in the curve")
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EvalOptions {
    /// Surrogate regularization; `None` uses the per-kind default.
    pub lambda: Option<f64>,
    /// Overrides the manifest's pooling strategy.
    pub pooling: Option<PoolingStrategy>,
    pub workers: usize,
}

impl Default for EvalOptions {
    fn default() -> Self {
        Self {
            lambda: None,
            pooling: None,
            workers: 1,
        }
    }
}

pub fn surrogate_kind(kind: TaskKind) -> SurrogateKind {
    match kind {
        TaskKind::Regression => SurrogateKind::Ridge,
        TaskKind::BinaryClassification => SurrogateKind::Logistic,
    }
}

pub fn default_lambda(kind: SurrogateKind) -> f64 {
    match kind {
        SurrogateKind::Ridge => surrogate::DEFAULT_RIDGE_LAMBDA,
        SurrogateKind::Logistic => surrogate::DEFAULT_LOGISTIC_LAMBDA,
    }
}

struct TaskPlan<'a> {
    manifest: &'a TaskManifest,
    kind: SurrogateKind,
    lambda: f64,
    pooling: PoolingStrategy,
    train: Vec<usize>,
    test: Vec<usize>,
    y_train: Vec<f64>,
    y_test: Vec<f64>,
}

fn check_layers(layers: &[LayerStack]) -> Result<(), PipelineError> {
    if layers.len() < 2 {
        return Err(PipelineError::TooFewLayers(layers.len()));
    }
    let reference = layers[0].molecule_ids();
    for stack in &layers[1..] {
        if stack.molecule_ids() != reference {
            return Err(PipelineError::MoleculeOrderMismatch(stack.layer_index()));
        }
    }
    Ok(())
}

fn plan<'a>(
    positions: &HashMap<&str, usize>,
    manifest: &'a TaskManifest,
    options: &EvalOptions,
) -> Result<TaskPlan<'a>, PipelineError> {
    let task = &manifest.task_name;
    let missing: Vec<&str> = manifest
        .split
        .keys()
        .map(String::as_str)
        .filter(|id| !positions.contains_key(id))
        .collect();
    if !missing.is_empty() {
        let mut listed = missing[..missing.len().min(MAX_LISTED_IDS)].join(", ");
        if missing.len() > MAX_LISTED_IDS {
            listed.push_str(", ...");
        }
        return Err(PipelineError::MissingMolecules {
            task: task.clone(),
            count: missing.len(),
            listed,
        });
    }
    let rows = |split| -> (Vec<usize>, Vec<f64>) {
        manifest
            .ids_in(split)
            .map(|id| (positions[id], manifest.labels[id]))
            .unzip()
    };
    let (train, y_train) = rows(Split::Train);
    let (test, y_test) = rows(Split::Test);
    if train.len() < 2 {
        return Err(PipelineError::TrainTooSmall {
            task: task.clone(),
            got: train.len(),
        });
    }
    if test.is_empty() {
        return Err(PipelineError::EmptyTest(task.clone()));
    }
    let kind = surrogate_kind(manifest.task_kind);
    Ok(TaskPlan {
        manifest,
        kind,
        lambda: options.lambda.unwrap_or_else(|| default_lambda(kind)),
        pooling: options.pooling.unwrap_or(manifest.pooling),
        train,
        test,
        y_train,
        y_test,
    })
}

fn eval_layer(stack: &LayerStack, plan: &TaskPlan) -> Result<f64, LayerError> {
    let pooled = pool(stack, plan.pooling)?;
    let x_train = pooled.vectors.select_rows(&plan.train);
    let x_test = pooled.vectors.select_rows(&plan.test);
    let model = surrogate::fit(plan.kind, &x_train, &plan.y_train, plan.lambda)?;
    let pred = surrogate::predict(&model, &x_test)?;
    let value = metrics::evaluate(plan.manifest.metric, &pred, &plan.y_test)?.value;
    if !value.is_finite() {
        return Err(LayerError::NonFiniteScore(value));
    }
    Ok(value)
}

/// A dedicated pool with exactly `workers` threads.
pub fn worker_pool(workers: usize) -> Result<rayon::ThreadPool, PipelineError> {
    if workers == 0 {
        return Err(PipelineError::InvalidWorkers(workers));
    }
    rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .map_err(|e| PipelineError::ThreadPool(e.to_string()))
}

/// Evaluates every manifest against the same layers. The outer error covers
/// problems with the layers or pool; each task then succeeds or fails alone.
pub fn eval_tasks(
    model_name: &str,
    layers: &[LayerStack],
    manifests: &[TaskManifest],
    options: &EvalOptions,
) -> Result<Vec<Result<LayerScoreCurve, PipelineError>>, PipelineError> {
    check_layers(layers)?;
    let pool = worker_pool(options.workers)?;
    let positions: HashMap<&str, usize> = layers[0]
        .molecule_ids()
        .iter()
        .enumerate()
        .map(|(i, id)| (id.as_str(), i))
        .collect();
    let plans: Vec<_> = manifests.iter().map(|m| plan(&positions, m, options)).collect();
    let jobs: Vec<(usize, usize)> = plans
        .iter()
        .enumerate()
        .filter(|(_, p)| p.is_ok())
        .flat_map(|(t, _)| (0..layers.len()).map(move |l| (t, l)))
        .collect();
    let results: Vec<Result<f64, LayerError>> = pool.install(|| {
        jobs.par_iter()
            .map(|&(t, l)| match &plans[t] {
                Ok(plan) => eval_layer(&layers[l], plan),
                Err(_) => unreachable!("jobs only reference planned tasks"),
            })
            .collect()
    });

    let mut results = results.into_iter();
    let layer_ids: Vec<usize> = layers.iter().map(LayerStack::layer_index).collect();
    Ok(plans
        .into_iter()
        .map(|p| {
            let plan = p?;
            let task = &plan.manifest.task_name;
            let mut scores = Vec::with_capacity(layers.len());
            let mut first_error = None;
            for (l, result) in results.by_ref().take(layers.len()).enumerate() {
                match result {
                    Ok(s) => scores.push(s),
                    Err(source) => {
                        first_error.get_or_insert(PipelineError::Layer {
                            task: task.clone(),
                            layer: layer_ids[l],
                            source,
                        });
                    }
                }
            }
            match first_error {
                Some(e) => Err(e),
                None => LayerScoreCurve::new(
                    model_name,
                    task,
                    plan.manifest.metric,
                    layer_ids.clone(),
                    scores,
                ),
            }
        })
        .collect())
}

/// Scores one task on every layer: pool, fit the surrogate on train rows,
/// predict test rows, apply the manifest metric.
pub fn eval_frozen(
    model_name: &str,
    layers: &[LayerStack],
    manifest: &TaskManifest,
    options: &EvalOptions,
) -> Result<LayerScoreCurve, PipelineError> {
    eval_tasks(model_name, layers, std::slice::from_ref(manifest), options)?
        .pop()
        .expect("one result per manifest")
}

/// Signed relative change of the best non-final score over the final one,
/// positive when the intermediate layer is better under `direction`.
pub fn percent_change(
    final_score: f64,
    best_nonfinal_score: f64,
    direction: Direction,
) -> Result<(f64, Winner), PipelineError> {
    if !final_score.is_finite() || !best_nonfinal_score.is_finite() {
        return Err(PipelineError::NonFiniteScore {
            final_score,
            best_score: best_nonfinal_score,
        });
    }
    if final_score == 0.0 {
        return Err(PipelineError::UndefinedRelativeChange);
    }
    let delta = match direction {
        Direction::HigherBetter => best_nonfinal_score - final_score,
        Direction::LowerBetter => final_score - best_nonfinal_score,
    };
    let pct = 100.0 * delta / final_score.abs();
    let winner = if pct > 0.0 {
        Winner::Intermediate
    } else if pct < 0.0 {
        Winner::Final
    } else {
        Winner::Tie
    };
    Ok((pct, winner))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImprovementCell {
    pub model_name: String,
    pub task_name: String,
    pub metric: Metric,
    pub final_score: f64,
    pub best_nonfinal_score: f64,
    pub best_nonfinal_layer: usize,
    pub percent_change: f64,
    pub winner: Winner,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImprovementSummary {
    pub cells: usize,
    /// Fraction of cells whose best non-final layer strictly wins.
    pub fraction_nonfinal: f64,
    pub mean_percent_change: f64,
    pub per_model_mean: BTreeMap<String, f64>,
    pub per_task_mean: BTreeMap<String, f64>,
}

fn grouped_means<'a>(pairs: impl Iterator<Item = (&'a str, f64)>) -> BTreeMap<String, f64> {
    let mut acc: BTreeMap<String, (f64, usize)> = BTreeMap::new();
    for (key, v) in pairs {
        let e = acc.entry(key.to_string()).or_default();
        e.0 += v;
        e.1 += 1;
    }
    acc.into_iter().map(|(k, (s, n))| (k, s / n as f64)).collect()
}

pub fn improvement_cell(curve: &LayerScoreCurve) -> Result<ImprovementCell, PipelineError> {
    let final_score = curve.final_score();
    let best = curve.best_nonfinal_score();
    let (percent_change, winner) = percent_change(final_score, best, curve.direction)?;
    Ok(ImprovementCell {
        model_name: curve.model_name.clone(),
        task_name: curve.task_name.clone(),
        metric: curve.metric,
        final_score,
        best_nonfinal_score: best,
        best_nonfinal_layer: curve.best_nonfinal_layer,
        percent_change,
        winner,
    })
}

pub fn summarize(cells: &[ImprovementCell]) -> Result<ImprovementSummary, PipelineError> {
    if cells.is_empty() {
        return Err(PipelineError::NoCurves);
    }
    let n = cells.len() as f64;
    let wins = cells.iter().filter(|c| c.percent_change > 0.0).count();
    Ok(ImprovementSummary {
        cells: cells.len(),
        fraction_nonfinal: wins as f64 / n,
        mean_percent_change: cells.iter().map(|c| c.percent_change).sum::<f64>() / n,
        per_model_mean: grouped_means(cells.iter().map(|c| (c.model_name.as_str(), c.percent_change))),
        per_task_mean: grouped_means(cells.iter().map(|c| (c.task_name.as_str(), c.percent_change))),
    })
}

/// One cell per curve plus the win fraction and mean change.
pub fn improvement_matrix(
    curves: &[LayerScoreCurve],
) -> Result<(Vec<ImprovementCell>, ImprovementSummary), PipelineError> {
    let cells = curves.iter().map(improvement_cell).collect::<Result<Vec<_>, _>>()?;
    let summary = summarize(&cells)?;
    Ok((cells, summary))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Correlation {
    pub model_name: String,
    pub task_name: String,
    pub pearson: f64,
    pub n_layers: usize,
    /// `(frozen, finetuned)` per layer.
    pub points: Vec<[f64; 2]>,
}

/// Pearson correlation of two per-layer series.
pub fn correlate_series(frozen: &[f64], finetuned: &[f64]) -> Result<f64, PipelineError> {
    if frozen.len() != finetuned.len() {
        return Err(PipelineError::LayerCountMismatch {
            frozen: frozen.len(),
            finetuned: finetuned.len(),
        });
    }
    if frozen.len() < 2 {
        return Err(PipelineError::TooFewPoints(frozen.len()));
    }
    metrics::pearson(frozen, finetuned)
        .map(|m| m.value)
        .map_err(|e| match e {
            MetricError::ZeroVariance("first") => PipelineError::ConstantSeries("frozen"),
            MetricError::ZeroVariance(_) => PipelineError::ConstantSeries("finetuned"),
            _ => PipelineError::ConstantSeries("non-finite"),
        })
}

pub fn correlate(
    frozen: &LayerScoreCurve,
    finetuned: &ExternalScoreFile,
) -> Result<Correlation, PipelineError> {
    let pearson = correlate_series(&frozen.scores, &finetuned.scores)?;
    Ok(Correlation {
        model_name: frozen.model_name.clone(),
        task_name: frozen.task_name.clone(),
        pearson,
        n_layers: frozen.len(),
        points: frozen
            .scores
            .iter()
            .zip(&finetuned.scores)
            .map(|(&a, &b)| [a, b])
            .collect(),
    })
}

/// Middle value; mean of the two middle values for even counts.
pub fn median(values: &[f64]) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let mid = sorted.len() / 2;
    Some(if sorted.len() % 2 == 1 {
        sorted[mid]
    } else {
        (sorted[mid - 1] + sorted[mid]) / 2.0
    })
}
