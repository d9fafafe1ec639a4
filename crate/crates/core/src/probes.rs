//! Label-free information-flow probes.
//!
//! * Tokenized-molecule entropy: for each molecule the token Gram matrix
//!   `K = H·Hᵀ` is eigendecomposed, its spectrum normalized to a probability
//!   vector, and the Shannon entropy (in nats) averaged over molecules.
//! * Adjacent-layer linear CKA on pooled molecule vectors:
//!   `‖X̃ᵀỸ‖²_F / (‖X̃ᵀX̃‖_F · ‖ỸᵀỸ‖_F)` with column-centered `X̃`, `Ỹ`.

use std::cmp::Ordering;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::linalg::{self, center_columns, frobenius, frobenius_sq, matmul_tn, LinalgError, Matrix};
use crate::pooling::{pool, PooledMatrix, PoolingError, PoolingStrategy};
use crate::tensorio::LayerStack;

/// Negative eigenvalues are clamped to zero up to this fraction of the
/// largest eigenvalue; anything more negative means the Gram is broken.
pub const NEGATIVE_EIGEN_TOL: f64 = 1e-8;

/// Allowed pre-clip excursion of CKA outside `[0, 1]`.
pub const CKA_RANGE_TOL: f64 = 1e-9;

pub const ENTROPY_UNIT: &str = "nats";

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ProbeError {
    #[error(transparent)]
    Linalg(#[from] LinalgError),
    #[error(transparent)]
    Pooling(#[from] PoolingError),
    #[error("molecule {molecule:?}: eigenvalue {value:e} is below -{NEGATIVE_EIGEN_TOL:e}·λmax ({max:e})")]
    NegativeEigenvalue { molecule: String, value: f64, max: f64 },
    #[error("empty stack")]
    EmptyStack,
    #[error("molecule order differs between {left} and {right}")]
    MoleculeOrderMismatch { left: String, right: String },
    #[error("CKA needs at least 2 molecules, got {0}")]
    TooFewMolecules(usize),
    #[error("constant representations in {0}: every molecule has the same pooled vector")]
    ConstantRepresentations(&'static str),
    #[error("CKA value {0} outside [0, 1] beyond rounding tolerance")]
    CkaOutOfRange(f64),
    #[error("probe_all needs at least 2 layers, got {0}")]
    TooFewLayers(usize),
}

impl ProbeError {
    pub fn is_numerical(&self) -> bool {
        match self {
            ProbeError::Linalg(e) => e.is_numerical(),
            ProbeError::NegativeEigenvalue { .. } | ProbeError::CkaOutOfRange(_) => true,
            _ => false,
        }
    }
}

/// Per-layer probe values for one encoder.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbeReport {
    pub model_name: String,
    pub num_layers: usize,
    /// Container layer indices covered, in order.
    pub layers: Vec<usize>,
    pub num_molecules: usize,
    pub entropy_unit: String,
    pub pooling: PoolingStrategy,
    pub tme: Vec<f64>,
    /// `adjacent_cka[k]` compares layer `layers[k]` with `layers[k + 1]`.
    pub adjacent_cka: Vec<f64>,
    pub depth_percent: Vec<f64>,
}

/// Shannon entropy (nats) of the normalized eigenvalue spectrum of `h·hᵀ`.
pub fn token_entropy(h: &Matrix) -> Result<f64, ProbeError> {
    molecule_entropy("<matrix>", h)
}

/// Entropy of a PSD spectrum. `Err((value, max))` when a negative
/// eigenvalue exceeds the clamping tolerance.
fn spectrum_entropy(values: &[f64]) -> Result<f64, (f64, f64)> {
    let max = values.iter().fold(0.0_f64, |a, &v| a.max(v));
    let mut clamped = Vec::with_capacity(values.len());
    for &v in values {
        if v < 0.0 {
            if v < -NEGATIVE_EIGEN_TOL * max {
                return Err((v, max));
            }
            clamped.push(0.0);
        } else {
            clamped.push(v);
        }
    }
    let total: f64 = clamped.iter().sum();
    if total == 0.0 {
        return Ok(0.0);
    }
    Ok(clamped
        .iter()
        .filter(|&&v| v > 0.0)
        .map(|&v| {
            let p = v / total;
            -p * p.ln()
        })
        .sum())
}

fn molecule_entropy(id: &str, h: &Matrix) -> Result<f64, ProbeError> {
    let spectrum = linalg::sym_eig(&linalg::gram(h)?)?;
    spectrum_entropy(spectrum.values()).map_err(|(value, max)| ProbeError::NegativeEigenvalue {
        molecule: id.to_string(),
        value,
        max,
    })
}

/// Tokenized-molecule entropy: mean per-molecule spectral entropy.
///
/// Molecules are processed in parallel on the current rayon pool; the sum is
/// taken sequentially in stack order.
pub fn tme(stack: &LayerStack) -> Result<f64, ProbeError> {
    if stack.is_empty() {
        return Err(ProbeError::EmptyStack);
    }
    let per_molecule = stack
        .molecule_ids()
        .par_iter()
        .zip(stack.embeddings().par_iter())
        .map(|(id, h)| molecule_entropy(id, h))
        .collect::<Result<Vec<f64>, _>>()?;
    Ok(per_molecule.iter().sum::<f64>() / per_molecule.len() as f64)
}

fn lexicographic(a: &Matrix, b: &Matrix) -> Ordering {
    a.shape().cmp(&b.shape()).then_with(|| {
        a.data()
            .iter()
            .zip(b.data())
            .map(|(x, y)| x.total_cmp(y))
            .find(|o| o.is_ne())
            .unwrap_or(Ordering::Equal)
    })
}

/// Linear CKA between two pooled layers over the same molecules.
pub fn cka_adjacent(x: &PooledMatrix, y: &PooledMatrix) -> Result<f64, ProbeError> {
    if x.molecule_ids != y.molecule_ids {
        return Err(ProbeError::MoleculeOrderMismatch {
            left: "x".into(),
            right: "y".into(),
        });
    }
    cka(&x.vectors, &y.vectors)
}

/// Linear CKA on raw row-aligned matrices.
///
/// The two arguments are put in a canonical order first so that
/// `cka(a, b)` and `cka(b, a)` produce identical bits.
pub fn cka(x: &Matrix, y: &Matrix) -> Result<f64, ProbeError> {
    if x.rows() != y.rows() {
        return Err(ProbeError::Linalg(LinalgError::DimensionMismatch {
            op: "cka",
            left: x.shape(),
            right: y.shape(),
        }));
    }
    if x.rows() < 2 {
        return Err(ProbeError::TooFewMolecules(x.rows()));
    }
    let (a, b, swapped) = match lexicographic(x, y) {
        Ordering::Greater => (y, x, true),
        _ => (x, y, false),
    };
    let ac = center_columns(a);
    let bc = center_columns(b);
    let saa = frobenius(&matmul_tn(&ac, &ac)?);
    let sbb = frobenius(&matmul_tn(&bc, &bc)?);
    let (x_side, y_side) = if swapped { ("y", "x") } else { ("x", "y") };
    if saa == 0.0 {
        return Err(ProbeError::ConstantRepresentations(x_side));
    }
    if sbb == 0.0 {
        return Err(ProbeError::ConstantRepresentations(y_side));
    }
    let sab = frobenius_sq(&matmul_tn(&ac, &bc)?);
    let value = sab / (saa * sbb);
    if !(-CKA_RANGE_TOL..=1.0 + CKA_RANGE_TOL).contains(&value) || !value.is_finite() {
        return Err(ProbeError::CkaOutOfRange(value));
    }
    Ok(value.clamp(0.0, 1.0))
}

/// `100·k/(L−1)` for `k = 0..L`.
pub fn depth_percent(num_layers: usize) -> Vec<f64> {
    match num_layers {
        0 => Vec::new(),
        1 => vec![0.0],
        n => (0..n).map(|k| 100.0 * k as f64 / (n - 1) as f64).collect(),
    }
}

/// TME for every layer and CKA for every consecutive pair.
pub fn probe_all(
    model_name: &str,
    layers: &[LayerStack],
    strategy: PoolingStrategy,
) -> Result<ProbeReport, ProbeError> {
    if layers.len() < 2 {
        return Err(ProbeError::TooFewLayers(layers.len()));
    }
    let reference = layers[0].molecule_ids();
    for stack in &layers[1..] {
        if stack.molecule_ids() != reference {
            return Err(ProbeError::MoleculeOrderMismatch {
                left: format!("layer {}", layers[0].layer_index()),
                right: format!("layer {}", stack.layer_index()),
            });
        }
    }

    let tme_values = layers
        .par_iter()
        .map(tme)
        .collect::<Result<Vec<_>, _>>()?;
    let pooled = layers
        .par_iter()
        .map(|s| pool(s, strategy))
        .collect::<Result<Vec<_>, _>>()?;
    let adjacent = pooled
        .par_windows(2)
        .map(|w| cka_adjacent(&w[0], &w[1]))
        .collect::<Result<Vec<_>, _>>()?;

    Ok(ProbeReport {
        model_name: model_name.to_string(),
        num_layers: layers.len(),
        layers: layers.iter().map(LayerStack::layer_index).collect(),
        num_molecules: reference.len(),
        entropy_unit: ENTROPY_UNIT.to_string(),
        pooling: strategy,
        tme: tme_values,
        adjacent_cka: adjacent,
        depth_percent: depth_percent(layers.len()),
    })
}
