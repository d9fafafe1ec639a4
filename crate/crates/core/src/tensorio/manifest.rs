use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{read_json, write_json, TensorIoError};
use crate::metrics::{Direction, Metric};
use crate::pooling::PoolingStrategy;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TaskKind {
    Regression,
    BinaryClassification,
}

impl TaskKind {
    fn parse(s: &str) -> Option<Self> {
        match s {
            "regression" => Some(TaskKind::Regression),
            "binary-classification" | "classification" => Some(TaskKind::BinaryClassification),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Valid,
    Test,
}

impl Split {
    fn parse(s: &str) -> Option<Self> {
        match s {
            "train" => Some(Split::Train),
            "valid" => Some(Split::Valid),
            "test" => Some(Split::Test),
            _ => None,
        }
    }
}

/// A downstream task: labels, split assignment, and how to score it. The
/// metric direction is derived from the metric and never stored.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TaskManifest {
    pub task_name: String,
    pub task_kind: TaskKind,
    pub metric: Metric,
    pub pooling: PoolingStrategy,
    pub labels: BTreeMap<String, f64>,
    pub split: BTreeMap<String, Split>,
}

#[derive(Deserialize)]
struct RawManifest {
    task_name: String,
    task_kind: String,
    metric: String,
    pooling: String,
    labels: BTreeMap<String, f64>,
    split: BTreeMap<String, String>,
}

impl TaskManifest {
    pub fn metric_direction(&self) -> Direction {
        self.metric.direction()
    }

    /// Checks every invariant a loaded manifest must satisfy.
    pub fn validate(&self) -> Result<(), TensorIoError> {
        if !self.metric.is_task_metric() {
            return Err(TensorIoError::UnknownMetric(self.metric.to_string()));
        }
        if self.metric.needs_binary_labels() && self.task_kind != TaskKind::BinaryClassification {
            return Err(TensorIoError::MetricNeedsClassification {
                metric: self.metric.to_string(),
            });
        }
        for (id, &value) in &self.labels {
            if !value.is_finite() {
                return Err(TensorIoError::NonFiniteLabel(id.clone()));
            }
            if self.task_kind == TaskKind::BinaryClassification && value != 0.0 && value != 1.0 {
                return Err(TensorIoError::NonBinaryLabel {
                    id: id.clone(),
                    value,
                });
            }
            if !self.split.contains_key(id) {
                return Err(TensorIoError::SplitMissingId(id.clone()));
            }
        }
        if let Some(id) = self.split.keys().find(|id| !self.labels.contains_key(*id)) {
            return Err(TensorIoError::LabelsMissingId(id.clone()));
        }
        for (split, name) in [(Split::Train, "train"), (Split::Test, "test")] {
            if !self.split.values().any(|&s| s == split) {
                return Err(TensorIoError::EmptySplit(name));
            }
        }
        Ok(())
    }

    /// Molecule ids assigned to `split`, in sorted id order.
    pub fn ids_in(&self, split: Split) -> impl Iterator<Item = &str> + '_ {
        self.split
            .iter()
            .filter(move |(_, &s)| s == split)
            .map(|(id, _)| id.as_str())
    }

    fn from_raw(raw: RawManifest) -> Result<Self, TensorIoError> {
        let metric: Metric = raw
            .metric
            .parse()
            .map_err(|_| TensorIoError::UnknownMetric(raw.metric.clone()))?;
        let task_kind =
            TaskKind::parse(&raw.task_kind).ok_or(TensorIoError::UnknownTaskKind(raw.task_kind))?;
        let pooling = raw
            .pooling
            .parse()
            .map_err(|_| TensorIoError::UnknownPooling(raw.pooling.clone()))?;
        let split = raw
            .split
            .into_iter()
            .map(|(id, value)| match Split::parse(&value) {
                Some(s) => Ok((id, s)),
                None => Err(TensorIoError::UnknownSplit { id, value }),
            })
            .collect::<Result<_, _>>()?;
        let manifest = TaskManifest {
            task_name: raw.task_name,
            task_kind,
            metric,
            pooling,
            labels: raw.labels,
            split,
        };
        manifest.validate()?;
        Ok(manifest)
    }
}

pub fn load_manifest(path: &Path) -> Result<TaskManifest, TensorIoError> {
    TaskManifest::from_raw(read_json(path)?)
}

pub fn write_manifest(path: &Path, manifest: &TaskManifest) -> Result<(), TensorIoError> {
    write_json(path, manifest)
}
