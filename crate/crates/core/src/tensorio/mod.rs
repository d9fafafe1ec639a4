//! On-disk container: one NPY file of concatenated token rows per layer, an
//! `index.json` describing how to slice them back into molecules, task
//! manifests, and external per-layer score files.

mod container;
mod manifest;
pub mod npy;
mod scores;

use std::io;
use std::path::{Path, PathBuf};

use thiserror::Error;

use crate::linalg::LinalgError;

pub use container::{
    layer_file_name, load_layer_stack, load_layers, read_index, write_container, ContainerIndex,
    LayerStack, INDEX_FILE,
};
pub use manifest::{load_manifest, write_manifest, Split, TaskKind, TaskManifest};
pub use npy::{decode_npy, encode_npy, read_npy, write_npy, NpyDtype};
pub use scores::{load_scores, write_scores, ExternalScoreFile};

#[derive(Debug, Error)]
pub enum TensorIoError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
    #[error("missing file {0}")]
    MissingFile(PathBuf),
    #[error("{path}: invalid JSON: {message}")]
    Json { path: PathBuf, message: String },

    #[error("bad magic: not an NPY file")]
    BadMagic,
    #[error("unsupported NPY version {0}.{1} (only 1.0)")]
    UnsupportedVersion(u8, u8),
    #[error("unsupported NPY dtype {0:?} (only '<f4' and '<f8')")]
    UnsupportedDtype(String),
    #[error("unsupported NPY order: fortran_order=True")]
    FortranOrder,
    #[error("unsupported NPY shape {0:?} (only 1-D or 2-D)")]
    UnsupportedShape(Vec<usize>),
    #[error("malformed NPY header: {0}")]
    MalformedHeader(String),
    #[error("truncated NPY payload: expected {expected} bytes, found {actual}")]
    Truncated { expected: usize, actual: usize },
    #[error("{0} unexpected bytes after NPY payload")]
    TrailingBytes(usize),
    #[error("invalid matrix data: {0}")]
    Matrix(#[from] LinalgError),

    #[error("empty stack: index lists no molecules")]
    EmptyStack,
    #[error("index lists {ids} molecule ids but {counts} token counts")]
    IndexLengthMismatch { ids: usize, counts: usize },
    #[error("row count mismatch: token counts sum to {expected}, {file} has {actual} rows")]
    RowCountMismatch {
        file: PathBuf,
        expected: usize,
        actual: usize,
    },
    #[error("{file} has {actual} columns, index declares dim {expected}")]
    DimMismatch {
        file: PathBuf,
        expected: usize,
        actual: usize,
    },
    #[error("duplicate molecule id {0:?}")]
    DuplicateMoleculeId(String),
    #[error("molecule {0:?} has zero tokens")]
    ZeroTokens(String),
    #[error("layer {layer} out of range (container has {num_layers} layers)")]
    LayerOutOfRange { layer: usize, num_layers: usize },
    #[error("molecule {index} has {actual} columns, expected {expected}")]
    RaggedDim {
        index: usize,
        expected: usize,
        actual: usize,
    },

    #[error("unknown metric {0:?}")]
    UnknownMetric(String),
    #[error("unknown task kind {0:?}")]
    UnknownTaskKind(String),
    #[error("unknown pooling {0:?}")]
    UnknownPooling(String),
    #[error("unknown split {value:?} for molecule {id:?}")]
    UnknownSplit { id: String, value: String },
    #[error("metric {metric} requires a binary-classification task")]
    MetricNeedsClassification { metric: String },
    #[error("non-binary label {value} for molecule {id:?}")]
    NonBinaryLabel { id: String, value: f64 },
    #[error("non-finite label for molecule {0:?}")]
    NonFiniteLabel(String),
    #[error("split missing id {0:?}")]
    SplitMissingId(String),
    #[error("labels missing id {0:?}")]
    LabelsMissingId(String),
    #[error("{0} split is empty")]
    EmptySplit(&'static str),

    #[error("score file has no scores")]
    EmptyScores,
    #[error("invalid layer key {0:?}")]
    InvalidLayerKey(String),
    #[error("gap at layer {0}")]
    ScoreGap(usize),
    #[error("duplicate layer key {0}")]
    DuplicateLayer(usize),
    #[error("non-finite score at layer {0}")]
    NonFiniteScore(usize),
    #[error("invalid score at layer {0}: {1}")]
    InvalidScore(usize, String),
}

impl TensorIoError {
    pub(crate) fn io(path: &Path, source: io::Error) -> Self {
        if source.kind() == io::ErrorKind::NotFound {
            TensorIoError::MissingFile(path.to_path_buf())
        } else {
            TensorIoError::Io {
                path: path.to_path_buf(),
                source,
            }
        }
    }

    pub(crate) fn json(path: &Path, err: serde_json::Error) -> Self {
        TensorIoError::Json {
            path: path.to_path_buf(),
            message: err.to_string(),
        }
    }
}

pub(crate) fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T, TensorIoError> {
    let text = std::fs::read_to_string(path).map_err(|e| TensorIoError::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| TensorIoError::json(path, e))
}

pub(crate) fn write_json<T: serde::Serialize>(path: &Path, value: &T) -> Result<(), TensorIoError> {
    let mut text = serde_json::to_string_pretty(value).map_err(|e| TensorIoError::json(path, e))?;
    text.push('\n');
    std::fs::write(path, text).map_err(|e| TensorIoError::io(path, e))
}
