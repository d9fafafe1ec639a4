use std::collections::HashMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::svg::{self, Series};
use super::{Correlation, ImprovementCell, ImprovementSummary, LayerScoreCurve, PipelineError};
use crate::metrics::{Direction, Metric};
use crate::pooling::PoolingStrategy;
use crate::probes::{depth_percent, ProbeReport, ENTROPY_UNIT};
use crate::tensorio::TensorIoError;

pub const REPORT_JSON: &str = "report.json";
pub const CURVES_CSV: &str = "curves.csv";
pub const IMPROVEMENT_CSV: &str = "improvement.csv";
pub const PROBES_CSV: &str = "probes.csv";
pub const CORRELATIONS_CSV: &str = "correlations.csv";

const CURVES_HEADER: [&str; 7] = ["model", "task", "metric", "direction", "layer", "depth_percent", "score"];
const IMPROVEMENT_HEADER: [&str; 8] = [
    "model",
    "task",
    "metric",
    "final_score",
    "best_nonfinal_score",
    "best_nonfinal_layer",
    "percent_change",
    "winner",
];
const PROBES_HEADER: [&str; 4] = ["layer", "depth_percent", "tme", "cka_to_next"];
const CORRELATIONS_HEADER: [&str; 4] = ["model", "task", "pearson", "n_layers"];

#[derive(Debug, Error)]
pub enum ReportError {
    #[error(transparent)]
    Io(#[from] TensorIoError),
    #[error("{path}: {source}")]
    Csv { path: PathBuf, source: csv::Error },
    #[error("{path}, row {row}: {message}")]
    Malformed { path: PathBuf, row: usize, message: String },
    #[error("{path}: {source}")]
    Curve { path: PathBuf, source: PipelineError },
}

/// Conventions needed to interpret the numbers in a report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportMetadata {
    pub entropy_unit: String,
    pub percent_change: String,
    pub tie_break: String,
    pub depth_percent: String,
    pub validation_split: String,
    pub pooling_override: Option<PoolingStrategy>,
    pub lambda: Option<f64>,
}

impl Default for ReportMetadata {
    fn default() -> Self {
        Self {
            entropy_unit: ENTROPY_UNIT.into(),
            percent_change: "higher-better: 100*(best_nonfinal-final)/|final|; \
                             lower-better: 100*(final-best_nonfinal)/|final|; \
                             positive means the intermediate layer wins"
                .into(),
            tie_break: "smallest layer index".into(),
            depth_percent: "100*i/(n-1) over the n evaluated layers".into(),
            validation_split: "ignored; surrogates fit on train, scored on test".into(),
            pooling_override: None,
            lambda: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImprovementMatrix {
    pub cells: Vec<ImprovementCell>,
    pub summary: ImprovementSummary,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorrelationSummary {
    pub pairs: Vec<Correlation>,
    pub median: Option<f64>,
    /// `model/task` keys present on only one side.
    pub unmatched: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskFailure {
    pub source: String,
    pub error: String,
}

/// Everything one run produced. Sections a subcommand does not compute stay
/// `None` and their files are not written.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub tool: String,
    pub version: String,
    pub metadata: ReportMetadata,
    pub probes: Option<ProbeReport>,
    pub curves: Option<Vec<LayerScoreCurve>>,
    pub improvement: Option<ImprovementMatrix>,
    pub correlations: Option<CorrelationSummary>,
    pub failures: Vec<TaskFailure>,
}

impl Report {
    pub fn new(metadata: ReportMetadata) -> Self {
        Self {
            tool: env!("CARGO_PKG_NAME").into(),
            version: env!("CARGO_PKG_VERSION").into(),
            metadata,
            probes: None,
            curves: None,
            improvement: None,
            correlations: None,
            failures: Vec::new(),
        }
    }

    pub fn load(path: &Path) -> Result<Self, TensorIoError> {
        crate::tensorio::read_json(path)
    }
}

fn num(v: f64) -> String {
    v.to_string()
}

fn write_csv<const N: usize>(
    path: &Path,
    header: [&str; N],
    rows: impl IntoIterator<Item = [String; N]>,
) -> Result<(), ReportError> {
    let csv_err = |source| ReportError::Csv {
        path: path.to_path_buf(),
        source,
    };
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(header).map_err(csv_err)?;
    for row in rows {
        w.write_record(&row).map_err(csv_err)?;
    }
    let bytes = w.into_inner().map_err(|e| csv_err(e.into_error().into()))?;
    fs::write(path, bytes).map_err(|e| TensorIoError::io(path, e))?;
    Ok(())
}

fn write_text(path: &Path, text: &str) -> Result<(), ReportError> {
    fs::write(path, text).map_err(|e| TensorIoError::io(path, e))?;
    Ok(())
}

fn curve_label(c: &LayerScoreCurve) -> String {
    format!("{}/{} ({})", c.model_name, c.task_name, c.metric)
}

fn emit_probes(dir: &Path, p: &ProbeReport, written: &mut Vec<PathBuf>) -> Result<(), ReportError> {
    let path = dir.join(PROBES_CSV);
    let rows = (0..p.layers.len()).map(|i| {
        [
            p.layers[i].to_string(),
            num(p.depth_percent[i]),
            num(p.tme[i]),
            p.adjacent_cka.get(i).map(|&c| num(c)).unwrap_or_default(),
        ]
    });
    write_csv(&path, PROBES_HEADER, rows)?;
    written.push(path);

    let tme: Vec<_> = p.depth_percent.iter().copied().zip(p.tme.iter().copied()).collect();
    let cka: Vec<_> = p.depth_percent.iter().copied().zip(p.adjacent_cka.iter().copied()).collect();
    let tme_label = format!("TME ({})", p.entropy_unit);
    let svg = svg::twin_line_chart(
        &format!("Layer-wise probes: {}", p.model_name),
        "depth (%)",
        (&tme_label, &tme),
        ("CKA to next layer", &cka),
    );
    let path = dir.join("probes.svg");
    write_text(&path, &svg)?;
    written.push(path);
    Ok(())
}

fn emit_curves(dir: &Path, curves: &[LayerScoreCurve], written: &mut Vec<PathBuf>) -> Result<(), ReportError> {
    let path = dir.join(CURVES_CSV);
    let rows = curves.iter().flat_map(|c| {
        let depth = depth_percent(c.len());
        (0..c.len()).map(move |i| {
            [
                c.model_name.clone(),
                c.task_name.clone(),
                c.metric.to_string(),
                c.direction.as_str().to_string(),
                c.layers[i].to_string(),
                num(depth[i]),
                num(c.scores[i]),
            ]
        })
    });
    write_csv(&path, CURVES_HEADER, rows)?;
    written.push(path);

    let series: Vec<Series> = curves
        .iter()
        .map(|c| Series {
            label: curve_label(c),
            points: depth_percent(c.len()).into_iter().zip(c.scores.iter().copied()).collect(),
        })
        .collect();
    let path = dir.join("curves.svg");
    write_text(&path, &svg::line_chart("Frozen-embedding score by layer", "depth (%)", "score", &series))?;
    written.push(path);
    Ok(())
}

fn emit_improvement(dir: &Path, m: &ImprovementMatrix, written: &mut Vec<PathBuf>) -> Result<(), ReportError> {
    let path = dir.join(IMPROVEMENT_CSV);
    let rows = m.cells.iter().map(|c| {
        [
            c.model_name.clone(),
            c.task_name.clone(),
            c.metric.to_string(),
            num(c.final_score),
            num(c.best_nonfinal_score),
            c.best_nonfinal_layer.to_string(),
            num(c.percent_change),
            c.winner.as_str().to_string(),
        ]
    });
    write_csv(&path, IMPROVEMENT_HEADER, rows)?;
    written.push(path);

    let bars: Vec<(String, f64)> = m
        .cells
        .iter()
        .map(|c| (format!("{}/{}", c.model_name, c.task_name), c.percent_change))
        .collect();
    let path = dir.join("improvement.svg");
    write_text(
        &path,
        &svg::bar_chart("Best non-final layer vs final layer", "percent change (%)", &bars),
    )?;
    written.push(path);
    Ok(())
}

fn emit_correlations(dir: &Path, s: &CorrelationSummary, written: &mut Vec<PathBuf>) -> Result<(), ReportError> {
    let path = dir.join(CORRELATIONS_CSV);
    let rows = s.pairs.iter().map(|c| {
        [
            c.model_name.clone(),
            c.task_name.clone(),
            num(c.pearson),
            c.n_layers.to_string(),
        ]
    });
    write_csv(&path, CORRELATIONS_HEADER, rows)?;
    written.push(path);

    let values: Vec<f64> = s.pairs.iter().map(|c| c.pearson).collect();
    let path = dir.join("correlations.svg");
    write_text(
        &path,
        &svg::histogram(
            "Frozen-to-finetuned correlation",
            "Pearson r",
            &values,
            20,
            (-1.0, 1.0),
            s.median,
        ),
    )?;
    written.push(path);

    let series: Vec<Series> = s
        .pairs
        .iter()
        .map(|c| Series {
            label: format!("{}/{}", c.model_name, c.task_name),
            points: c.points.iter().map(|p| (p[0], p[1])).collect(),
        })
        .collect();
    let path = dir.join("correlation_scatter.svg");
    write_text(&path, &svg::scatter("Per-layer scores", "frozen", "finetuned", &series))?;
    written.push(path);
    Ok(())
}

/// Writes `report.json` plus the CSV and SVG files of every present section.
/// Returns the paths written, in order.
pub fn emit_report(out_dir: &Path, report: &Report) -> Result<Vec<PathBuf>, ReportError> {
    fs::create_dir_all(out_dir).map_err(|e| TensorIoError::io(out_dir, e))?;
    let mut written = Vec::new();
    if let Some(p) = &report.probes {
        emit_probes(out_dir, p, &mut written)?;
    }
    if let Some(c) = &report.curves {
        emit_curves(out_dir, c, &mut written)?;
    }
    if let Some(m) = &report.improvement {
        emit_improvement(out_dir, m, &mut written)?;
    }
    if let Some(s) = &report.correlations {
        emit_correlations(out_dir, s, &mut written)?;
    }
    let path = out_dir.join(REPORT_JSON);
    crate::tensorio::write_json(&path, report)?;
    written.push(path);
    Ok(written)
}

#[derive(Deserialize)]
struct CurveRow {
    model: String,
    task: String,
    metric: String,
    direction: String,
    layer: usize,
    #[allow(dead_code)]
    depth_percent: f64,
    score: f64,
}

/// Reloads curves written to `curves.csv`, in file order.
pub fn read_curves_csv(path: &Path) -> Result<Vec<LayerScoreCurve>, ReportError> {
    let csv_err = |source| ReportError::Csv {
        path: path.to_path_buf(),
        source,
    };
    let malformed = |row: usize, message: String| ReportError::Malformed {
        path: path.to_path_buf(),
        row,
        message,
    };
    let mut reader = csv::Reader::from_path(path).map_err(|e| match e.kind() {
        csv::ErrorKind::Io(io) if io.kind() == std::io::ErrorKind::NotFound => {
            ReportError::Io(TensorIoError::MissingFile(path.to_path_buf()))
        }
        _ => csv_err(e),
    })?;

    let mut order: Vec<(String, String, Metric)> = Vec::new();
    let mut index: HashMap<(String, String), usize> = HashMap::new();
    let mut series: Vec<(Vec<usize>, Vec<f64>)> = Vec::new();
    for (i, row) in reader.deserialize::<CurveRow>().enumerate() {
        let row_no = i + 2;
        let row = row.map_err(csv_err)?;
        let metric: Metric = row
            .metric
            .parse()
            .map_err(|e| malformed(row_no, format!("{e}")))?;
        let direction: Direction = row
            .direction
            .parse()
            .map_err(|e| malformed(row_no, format!("{e}")))?;
        if direction != metric.direction() {
            return Err(malformed(
                row_no,
                format!("direction {direction} contradicts metric {metric}"),
            ));
        }
        if !row.score.is_finite() {
            return Err(malformed(row_no, format!("non-finite score {}", row.score)));
        }
        let key = (row.model.clone(), row.task.clone());
        let slot = *index.entry(key).or_insert_with(|| {
            order.push((row.model.clone(), row.task.clone(), metric));
            series.push((Vec::new(), Vec::new()));
            series.len() - 1
        });
        if order[slot].2 != metric {
            return Err(malformed(row_no, format!("metric changes within {}/{}", row.model, row.task)));
        }
        series[slot].0.push(row.layer);
        series[slot].1.push(row.score);
    }
    order
        .into_iter()
        .zip(series)
        .map(|((model, task, metric), (layers, scores))| {
            LayerScoreCurve::new(&model, &task, metric, layers, scores).map_err(|source| ReportError::Curve {
                path: path.to_path_buf(),
                source,
            })
        })
        .collect()
}
