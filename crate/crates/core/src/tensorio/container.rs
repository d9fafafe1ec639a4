use std::collections::HashSet;
use std::fs;
use std::ops::RangeInclusive;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::npy::{read_npy, write_npy, NpyDtype};
use super::{read_json, write_json, TensorIoError};
use crate::linalg::Matrix;
use crate::pooling::PoolingStrategy;

pub const INDEX_FILE: &str = "index.json";

pub fn layer_file_name(layer: usize) -> String {
    format!("layer_{layer}.npy")
}

/// Contents of `index.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContainerIndex {
    pub molecule_ids: Vec<String>,
    pub token_counts: Vec<usize>,
    pub dim: usize,
    pub num_layers: usize,
    pub model_name: String,
    pub pooling_default: PoolingStrategy,
}

impl ContainerIndex {
    pub fn validate(&self) -> Result<(), TensorIoError> {
        if self.molecule_ids.len() != self.token_counts.len() {
            return Err(TensorIoError::IndexLengthMismatch {
                ids: self.molecule_ids.len(),
                counts: self.token_counts.len(),
            });
        }
        if self.molecule_ids.is_empty() {
            return Err(TensorIoError::EmptyStack);
        }
        check_unique(&self.molecule_ids)?;
        if let Some(i) = self.token_counts.iter().position(|&t| t == 0) {
            return Err(TensorIoError::ZeroTokens(self.molecule_ids[i].clone()));
        }
        Ok(())
    }

    pub fn total_tokens(&self) -> usize {
        self.token_counts.iter().sum()
    }
}

fn check_unique(ids: &[String]) -> Result<(), TensorIoError> {
    let mut seen = HashSet::with_capacity(ids.len());
    for id in ids {
        if !seen.insert(id.as_str()) {
            return Err(TensorIoError::DuplicateMoleculeId(id.clone()));
        }
    }
    Ok(())
}

/// Every molecule's token matrix for one layer, in index order.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerStack {
    layer_index: usize,
    molecule_ids: Vec<String>,
    embeddings: Vec<Matrix>,
    dim: usize,
}

impl LayerStack {
    pub fn new(
        layer_index: usize,
        molecule_ids: Vec<String>,
        embeddings: Vec<Matrix>,
    ) -> Result<Self, TensorIoError> {
        if molecule_ids.len() != embeddings.len() {
            return Err(TensorIoError::IndexLengthMismatch {
                ids: molecule_ids.len(),
                counts: embeddings.len(),
            });
        }
        if molecule_ids.is_empty() {
            return Err(TensorIoError::EmptyStack);
        }
        check_unique(&molecule_ids)?;
        let dim = embeddings[0].cols();
        for (index, (id, h)) in molecule_ids.iter().zip(&embeddings).enumerate() {
            if h.rows() == 0 {
                return Err(TensorIoError::ZeroTokens(id.clone()));
            }
            if h.cols() != dim {
                return Err(TensorIoError::RaggedDim {
                    index,
                    expected: dim,
                    actual: h.cols(),
                });
            }
        }
        Ok(Self {
            layer_index,
            molecule_ids,
            embeddings,
            dim,
        })
    }

    pub fn layer_index(&self) -> usize {
        self.layer_index
    }

    pub fn molecule_ids(&self) -> &[String] {
        &self.molecule_ids
    }

    pub fn embeddings(&self) -> &[Matrix] {
        &self.embeddings
    }

    pub fn token_counts(&self) -> Vec<usize> {
        self.embeddings.iter().map(Matrix::rows).collect()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.molecule_ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.molecule_ids.is_empty()
    }

    /// All token rows stacked in molecule order, as stored on disk.
    pub fn concatenated(&self) -> Matrix {
        let total: usize = self.embeddings.iter().map(Matrix::rows).sum();
        let mut data = Vec::with_capacity(total * self.dim);
        for h in &self.embeddings {
            data.extend_from_slice(h.data());
        }
        Matrix::from_parts(total, self.dim, data)
    }
}

pub fn read_index(dir: &Path) -> Result<ContainerIndex, TensorIoError> {
    let index: ContainerIndex = read_json(&dir.join(INDEX_FILE))?;
    index.validate()?;
    Ok(index)
}

fn slice_layer(
    index: &ContainerIndex,
    layer_index: usize,
    rows: &Matrix,
    file: PathBuf,
) -> Result<LayerStack, TensorIoError> {
    let expected = index.total_tokens();
    if rows.rows() != expected {
        return Err(TensorIoError::RowCountMismatch {
            file,
            expected,
            actual: rows.rows(),
        });
    }
    if rows.cols() != index.dim {
        return Err(TensorIoError::DimMismatch {
            file,
            expected: index.dim,
            actual: rows.cols(),
        });
    }
    let mut start = 0;
    let embeddings = index
        .token_counts
        .iter()
        .map(|&t| {
            let block = rows.row_block(start, start + t);
            start += t;
            block
        })
        .collect();
    LayerStack::new(layer_index, index.molecule_ids.clone(), embeddings)
}

/// Loads `layer_<k>.npy` and slices it into per-molecule token matrices.
pub fn load_layer_stack(dir: &Path, layer_index: usize) -> Result<LayerStack, TensorIoError> {
    let index = read_index(dir)?;
    load_with_index(dir, &index, layer_index)
}

fn load_with_index(
    dir: &Path,
    index: &ContainerIndex,
    layer_index: usize,
) -> Result<LayerStack, TensorIoError> {
    if layer_index >= index.num_layers {
        return Err(TensorIoError::LayerOutOfRange {
            layer: layer_index,
            num_layers: index.num_layers,
        });
    }
    let file = dir.join(layer_file_name(layer_index));
    let rows = read_npy(&file)?;
    slice_layer(index, layer_index, &rows, file)
}

/// Loads the index and the requested layers (all of them when `layers` is
/// `None`).
pub fn load_layers(
    dir: &Path,
    layers: Option<RangeInclusive<usize>>,
) -> Result<(ContainerIndex, Vec<LayerStack>), TensorIoError> {
    let index = read_index(dir)?;
    let range = match layers {
        Some(r) => r,
        None if index.num_layers == 0 => return Ok((index, Vec::new())),
        None => 0..=index.num_layers - 1,
    };
    let stacks = range
        .map(|k| load_with_index(dir, &index, k))
        .collect::<Result<Vec<_>, _>>()?;
    Ok((index, stacks))
}

/// Writes `index.json` plus one NPY per stack. Stacks must share molecule
/// order and appear in layer order starting at 0.
pub fn write_container(
    dir: &Path,
    model_name: &str,
    pooling_default: PoolingStrategy,
    stacks: &[LayerStack],
    dtype: NpyDtype,
) -> Result<ContainerIndex, TensorIoError> {
    let first = stacks.first().ok_or(TensorIoError::EmptyStack)?;
    fs::create_dir_all(dir).map_err(|e| TensorIoError::io(dir, e))?;
    let index = ContainerIndex {
        molecule_ids: first.molecule_ids.clone(),
        token_counts: first.token_counts(),
        dim: first.dim,
        num_layers: stacks.len(),
        model_name: model_name.to_string(),
        pooling_default,
    };
    for (k, stack) in stacks.iter().enumerate() {
        if stack.molecule_ids != index.molecule_ids || stack.token_counts() != index.token_counts {
            return Err(TensorIoError::IndexLengthMismatch {
                ids: index.molecule_ids.len(),
                counts: stack.len(),
            });
        }
        write_npy(&dir.join(layer_file_name(k)), &stack.concatenated(), dtype)?;
    }
    write_json(&dir.join(INDEX_FILE), &index)?;
    Ok(index)
}
