//! Lightweight predictors fitted on frozen pooled embeddings.
//!
//! Features are standardized on the training rows. Regression tasks use
//! ridge regression solved through the normal equations; classification uses
//! L2-regularized logistic regression fitted by Newton/IRLS with step
//! halving. Both are deterministic and need no tuning beyond `lambda`.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::linalg::{cholesky_solve, dot, matmul_tn, LinalgError, Matrix};

pub const DEFAULT_RIDGE_LAMBDA: f64 = 1.0;
pub const DEFAULT_LOGISTIC_LAMBDA: f64 = 1.0;

pub const IRLS_MAX_ITER: usize = 100;
pub const IRLS_GRAD_TOL: f64 = 1e-8;
pub const IRLS_MAX_HALVINGS: usize = 30;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SurrogateError {
    #[error(transparent)]
    Linalg(#[from] LinalgError),
    #[error("need at least 2 training rows, got {0}")]
    TooFewRows(usize),
    #[error("{rows} feature rows but {targets} targets")]
    LengthMismatch { rows: usize, targets: usize },
    #[error("non-finite target at row {0}")]
    NonFiniteTarget(usize),
    #[error("invalid lambda {0}")]
    InvalidLambda(f64),
    #[error("non-binary label {value} at row {row}")]
    NonBinaryLabel { row: usize, value: f64 },
    #[error("training labels contain a single class")]
    SingleClass,
    #[error("IRLS did not converge after {iterations} iterations (gradient ∞-norm {gradient_norm:e})")]
    NoConvergence { iterations: usize, gradient_norm: f64 },
    #[error("model expects {expected} features, got {got}")]
    FeatureMismatch { expected: usize, got: usize },
}

impl SurrogateError {
    pub fn is_numerical(&self) -> bool {
        match self {
            SurrogateError::Linalg(e) => e.is_numerical(),
            SurrogateError::NoConvergence { .. } => true,
            _ => false,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SurrogateKind {
    Ridge,
    Logistic,
}

/// Per-feature affine map learned on training rows.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Standardizer {
    pub mean: Vec<f64>,
    pub scale: Vec<f64>,
}

impl Standardizer {
    pub fn identity(dim: usize) -> Self {
        Self {
            mean: vec![0.0; dim],
            scale: vec![1.0; dim],
        }
    }

    /// Column means and population standard deviations. Constant columns
    /// get scale 1 so weight indices stay aligned with input features.
    pub fn fit(x: &Matrix) -> Self {
        let n = x.rows() as f64;
        let d = x.cols();
        let mut mean = vec![0.0; d];
        for row in x.row_iter() {
            for (m, v) in mean.iter_mut().zip(row) {
                *m += v;
            }
        }
        mean.iter_mut().for_each(|m| *m /= n);
        let mut var = vec![0.0; d];
        for row in x.row_iter() {
            for ((s, v), m) in var.iter_mut().zip(row).zip(&mean) {
                *s += (v - m) * (v - m);
            }
        }
        let scale = var
            .iter()
            .zip(&mean)
            .map(|(s, m)| {
                let sd = (s / n).sqrt();
                if sd == 0.0 || sd <= 1e-12 * m.abs() {
                    1.0
                } else {
                    sd
                }
            })
            .collect();
        Self { mean, scale }
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn transform(&self, x: &Matrix) -> Result<Matrix, SurrogateError> {
        if x.cols() != self.dim() {
            return Err(SurrogateError::FeatureMismatch {
                expected: self.dim(),
                got: x.cols(),
            });
        }
        let mut out = x.clone();
        for i in 0..out.rows() {
            for ((v, m), s) in out.row_mut(i).iter_mut().zip(&self.mean).zip(&self.scale) {
                *v = (*v - m) / s;
            }
        }
        Ok(out)
    }
}

/// How features and targets are prepared before fitting.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Preprocess {
    /// Standardize features on training statistics and fit an intercept.
    Standardize,
    /// Use features as given and fit no intercept.
    Raw,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SurrogateModel {
    pub kind: SurrogateKind,
    pub weights: Vec<f64>,
    pub bias: f64,
    pub lambda: f64,
    pub standardizer: Standardizer,
}

/// Convergence record of a logistic fit.
#[derive(Debug, Clone, PartialEq)]
pub struct IrlsTrace {
    pub iterations: usize,
    pub gradient_norm: f64,
    /// Objective value before the first step and after every accepted step.
    pub losses: Vec<f64>,
}

fn check_xy(x: &Matrix, y: &[f64]) -> Result<(), SurrogateError> {
    if x.rows() != y.len() {
        return Err(SurrogateError::LengthMismatch {
            rows: x.rows(),
            targets: y.len(),
        });
    }
    if y.len() < 2 {
        return Err(SurrogateError::TooFewRows(y.len()));
    }
    if let Some(i) = y.iter().position(|v| !v.is_finite()) {
        return Err(SurrogateError::NonFiniteTarget(i));
    }
    Ok(())
}

fn prepare(x: &Matrix, preprocess: Preprocess) -> Result<(Standardizer, Matrix), SurrogateError> {
    let standardizer = match preprocess {
        Preprocess::Standardize => Standardizer::fit(x),
        Preprocess::Raw => Standardizer::identity(x.cols()),
    };
    let xs = standardizer.transform(x)?;
    Ok((standardizer, xs))
}

pub fn fit_ridge(x: &Matrix, y: &[f64], lambda: f64) -> Result<SurrogateModel, SurrogateError> {
    fit_ridge_with(x, y, lambda, Preprocess::Standardize)
}

/// Solves `(X̃ᵀX̃ + λI) w = X̃ᵀỹ` by Cholesky. With `Standardize`, `ỹ` is the
/// mean-centered target and the bias restores the mean.
pub fn fit_ridge_with(
    x: &Matrix,
    y: &[f64],
    lambda: f64,
    preprocess: Preprocess,
) -> Result<SurrogateModel, SurrogateError> {
    check_xy(x, y)?;
    if !lambda.is_finite() || lambda < 0.0 {
        return Err(SurrogateError::InvalidLambda(lambda));
    }
    let (standardizer, xs) = prepare(x, preprocess)?;
    let bias = match preprocess {
        Preprocess::Standardize => y.iter().sum::<f64>() / y.len() as f64,
        Preprocess::Raw => 0.0,
    };
    let yc = Matrix::column_vector(&y.iter().map(|v| v - bias).collect::<Vec<_>>())?;

    let mut gram = matmul_tn(&xs, &xs)?;
    for i in 0..gram.rows() {
        gram[(i, i)] += lambda;
    }
    let rhs = matmul_tn(&xs, &yc)?;
    let weights = cholesky_solve(&gram, &rhs)?.into_data();
    Ok(SurrogateModel {
        kind: SurrogateKind::Ridge,
        weights,
        bias,
        lambda,
        standardizer,
    })
}

fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// `ln(1 + e^z)` without overflow.
fn softplus(z: f64) -> f64 {
    z.max(0.0) + (-z.abs()).exp().ln_1p()
}

struct LogisticProblem<'a> {
    xs: &'a Matrix,
    y: &'a [f64],
    lambda: f64,
}

impl LogisticProblem<'_> {
    fn n(&self) -> f64 {
        self.y.len() as f64
    }

    fn margins(&self, w: &[f64], b: f64) -> Vec<f64> {
        self.xs.row_iter().map(|r| dot(r, w) + b).collect()
    }

    /// Mean logistic loss plus `(λ/2)‖w‖²`.
    fn loss(&self, w: &[f64], b: f64) -> f64 {
        let data: f64 = self
            .margins(w, b)
            .iter()
            .zip(self.y)
            .map(|(z, y)| softplus(*z) - y * z)
            .sum();
        data / self.n() + 0.5 * self.lambda * dot(w, w)
    }

    /// Gradient `[g_w; g_b]` and the Newton system matrix.
    fn gradient_hessian(&self, w: &[f64], b: f64) -> (Vec<f64>, Matrix) {
        let d = w.len();
        let n = self.n();
        let mut grad = vec![0.0; d + 1];
        let mut hess = Matrix::zeros(d + 1, d + 1);
        for (row, (z, y)) in self.xs.row_iter().zip(self.margins(w, b).iter().zip(self.y)) {
            let p = sigmoid(*z);
            let r = p - y;
            let s = p * (1.0 - p);
            for j in 0..d {
                grad[j] += r * row[j];
                for k in j..d {
                    hess[(j, k)] += s * row[j] * row[k];
                }
                hess[(j, d)] += s * row[j];
            }
            grad[d] += r;
            hess[(d, d)] += s;
        }
        for j in 0..=d {
            grad[j] /= n;
            for k in j..=d {
                let v = hess[(j, k)] / n;
                hess[(j, k)] = v;
                hess[(k, j)] = v;
            }
        }
        for j in 0..d {
            grad[j] += self.lambda * w[j];
            hess[(j, j)] += self.lambda;
        }
        (grad, hess)
    }
}

fn inf_norm(v: &[f64]) -> f64 {
    v.iter().fold(0.0_f64, |a, x| a.max(x.abs()))
}

pub fn fit_logistic(x: &Matrix, y: &[f64], lambda: f64) -> Result<SurrogateModel, SurrogateError> {
    fit_logistic_traced(x, y, lambda, Preprocess::Standardize).map(|(m, _)| m)
}

/// Logistic fit returning the convergence record alongside the model. The
/// bias is never regularized.
pub fn fit_logistic_traced(
    x: &Matrix,
    y: &[f64],
    lambda: f64,
    preprocess: Preprocess,
) -> Result<(SurrogateModel, IrlsTrace), SurrogateError> {
    check_xy(x, y)?;
    if !lambda.is_finite() || lambda <= 0.0 {
        return Err(SurrogateError::InvalidLambda(lambda));
    }
    for (row, &value) in y.iter().enumerate() {
        if value != 0.0 && value != 1.0 {
            return Err(SurrogateError::NonBinaryLabel { row, value });
        }
    }
    let positives = y.iter().filter(|&&v| v == 1.0).count();
    if positives == 0 || positives == y.len() {
        return Err(SurrogateError::SingleClass);
    }

    let (standardizer, xs) = prepare(x, preprocess)?;
    let problem = LogisticProblem {
        xs: &xs,
        y,
        lambda,
    };
    let d = xs.cols();
    let rate = positives as f64 / y.len() as f64;
    let mut w = vec![0.0; d];
    let mut b = (rate / (1.0 - rate)).ln();
    let mut loss = problem.loss(&w, b);
    let mut losses = vec![loss];

    let mut iterations = 0;
    let gradient_norm = loop {
        let (grad, hess) = problem.gradient_hessian(&w, b);
        let norm = inf_norm(&grad);
        if norm <= IRLS_GRAD_TOL || iterations == IRLS_MAX_ITER {
            break norm;
        }
        iterations += 1;
        let step = cholesky_solve(&hess, &Matrix::column_vector(&grad)?)?.into_data();

        let mut t = 1.0;
        let mut accepted = None;
        for _ in 0..=IRLS_MAX_HALVINGS {
            let w_new: Vec<f64> = w.iter().zip(&step).map(|(wi, si)| wi - t * si).collect();
            let b_new = b - t * step[d];
            let l_new = problem.loss(&w_new, b_new);
            if l_new <= loss {
                accepted = Some((w_new, b_new, l_new));
                break;
            }
            t *= 0.5;
        }
        match accepted {
            Some((w_new, b_new, l_new)) => {
                w = w_new;
                b = b_new;
                loss = l_new;
                losses.push(loss);
            }
            // no descent left at machine precision
            None => break norm,
        }
    };

    if gradient_norm > IRLS_GRAD_TOL {
        return Err(SurrogateError::NoConvergence {
            iterations,
            gradient_norm,
        });
    }
    let model = SurrogateModel {
        kind: SurrogateKind::Logistic,
        weights: w,
        bias: b,
        lambda,
        standardizer,
    };
    Ok((
        model,
        IrlsTrace {
            iterations,
            gradient_norm,
            losses,
        },
    ))
}

/// Fits the surrogate matching `kind`.
pub fn fit(
    kind: SurrogateKind,
    x: &Matrix,
    y: &[f64],
    lambda: f64,
) -> Result<SurrogateModel, SurrogateError> {
    match kind {
        SurrogateKind::Ridge => fit_ridge(x, y, lambda),
        SurrogateKind::Logistic => fit_logistic(x, y, lambda),
    }
}

/// Ridge: `x̃·w + b`. Logistic: `sigmoid(x̃·w + b)`.
pub fn predict(model: &SurrogateModel, x: &Matrix) -> Result<Vec<f64>, SurrogateError> {
    let xs = model.standardizer.transform(x)?;
    let linear = xs.row_iter().map(|r| dot(r, &model.weights) + model.bias);
    Ok(match model.kind {
        SurrogateKind::Ridge => linear.collect(),
        SurrogateKind::Logistic => linear.map(sigmoid).collect(),
    })
}
