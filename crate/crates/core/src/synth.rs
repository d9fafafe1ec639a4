//! Seeded synthetic layer stacks with controllable drift, rotation,
//! compression and a planted downstream target.
//!
//! # Random stream
//!
//! All randomness comes from one `xoshiro256++` generator seeded with
//! `seed_from_u64(seed)` (SplitMix64 state expansion), consumed strictly in
//! this order:
//!
//! 1. token count of every molecule: `t_min + next_u64() % (t_max − t_min + 1)`;
//! 2. layer-0 token entries, molecule by molecule, row-major, each `N(0, 1)`;
//! 3. for each transform in order: a `rotation` draws a `d×d` Gaussian matrix
//!    (row-major) that is orthonormalized by modified Gram–Schmidt over its
//!    columns; `noise(σ)` draws one Gaussian per token entry in the same
//!    order as step 2; the other transforms draw nothing;
//! 4. one Gaussian per molecule for the target noise (or the label itself
//!    when no target is planted).
//!
//! Uniforms are `(next_u64() >> 11) · 2⁻⁵³`; Gaussians use the cosine branch
//! of Box–Muller, `sqrt(−2 ln(1 − u₁)) · cos(2π u₂)`, consuming two uniforms
//! each. Splits are assigned round-robin on the molecule index: positions
//! 0–6 of every 10 train, 7 valid, 8–9 test.

use std::collections::BTreeMap;
use std::path::Path;

use rand_core::{RngCore, SeedableRng};
use rand_xoshiro::Xoshiro256PlusPlus;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::linalg::{matmul, Matrix};
use crate::metrics::Metric;
use crate::pooling::{pool_tokens, PoolingStrategy};
use crate::tensorio::{
    write_container, write_manifest, LayerStack, NpyDtype, Split, TaskKind, TaskManifest,
    TensorIoError,
};

pub const MANIFEST_FILE: &str = "manifest.json";
pub const SPEC_FILE: &str = "synth.json";

#[derive(Debug, Error)]
pub enum SynthError {
    #[error("invalid synth spec: {0}")]
    InvalidSpec(String),
    #[error(transparent)]
    Io(#[from] TensorIoError),
}

/// Row-wise map from one layer to the next.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "kind", content = "value")]
pub enum Transform {
    Identity,
    /// Multiply every token by a seeded random orthogonal matrix.
    OrthogonalRotation,
    Scaled(f64),
    /// Keep the first `r` coordinates, zero the rest.
    RankCompress(usize),
    /// Add i.i.d. Gaussian noise with the given standard deviation.
    Noise(f64),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "kind")]
pub enum PlantedTarget {
    None,
    /// Sum of the listed coordinates of the mean-pooled vectors at `layer`,
    /// plus Gaussian noise.
    LinearInLayer {
        layer: usize,
        directions: Vec<usize>,
        noise: f64,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SynthTask {
    /// Continuous target scored by MAE.
    Regression,
    /// Target thresholded at its median, scored by AUROC.
    Classification,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthSpec {
    pub model_name: String,
    pub n_molecules: usize,
    pub token_count_range: (usize, usize),
    pub dim: usize,
    pub num_layers: usize,
    /// `transforms[k]` maps layer `k` to layer `k + 1`.
    pub transforms: Vec<Transform>,
    pub target: PlantedTarget,
    pub task: SynthTask,
    pub seed: u64,
}

impl SynthSpec {
    /// Six layers of mild drift ending in a rank-2 compression that removes
    /// the coordinates carrying a target planted at layer 3.
    pub fn compression(seed: u64) -> Self {
        let dim = 16;
        Self {
            model_name: "synthetic-compression".into(),
            n_molecules: 400,
            token_count_range: (6, 14),
            dim,
            num_layers: 6,
            transforms: vec![
                Transform::Noise(0.3),
                Transform::OrthogonalRotation,
                Transform::Noise(0.3),
                Transform::Noise(0.3),
                Transform::RankCompress(2),
            ],
            target: PlantedTarget::LinearInLayer {
                layer: 3,
                directions: (2..dim).collect(),
                noise: 0.05,
            },
            task: SynthTask::Regression,
            seed,
        }
    }

    /// Every layer equal to layer 0; labels are pure noise.
    pub fn identity(seed: u64) -> Self {
        Self {
            model_name: "synthetic-identity".into(),
            n_molecules: 60,
            token_count_range: (3, 8),
            dim: 6,
            num_layers: 4,
            transforms: vec![Transform::Identity; 3],
            target: PlantedTarget::None,
            task: SynthTask::Regression,
            seed,
        }
    }

    pub fn validate(&self) -> Result<(), SynthError> {
        let bad = |msg: String| Err(SynthError::InvalidSpec(msg));
        if self.n_molecules < 10 {
            return bad(format!("n_molecules must be >= 10, got {}", self.n_molecules));
        }
        let (lo, hi) = self.token_count_range;
        if lo == 0 || lo > hi {
            return bad(format!("token_count_range [{lo}, {hi}] must satisfy 1 <= min <= max"));
        }
        if self.dim == 0 {
            return bad("dim must be positive".into());
        }
        if self.num_layers == 0 || self.transforms.len() != self.num_layers - 1 {
            return bad(format!(
                "{} layers need {} transforms, got {}",
                self.num_layers,
                self.num_layers.saturating_sub(1),
                self.transforms.len()
            ));
        }
        for t in &self.transforms {
            match *t {
                Transform::RankCompress(r) if r > self.dim => {
                    return bad(format!("rank-compress({r}) exceeds dim {}", self.dim));
                }
                Transform::Noise(s) if !s.is_finite() || s < 0.0 => {
                    return bad(format!("noise sigma must be finite and >= 0, got {s}"));
                }
                Transform::Scaled(c) if c == 0.0 || !c.is_finite() => {
                    return bad(format!("scale must be finite and non-zero, got {c}"));
                }
                _ => {}
            }
        }
        if let PlantedTarget::LinearInLayer {
            layer,
            directions,
            noise,
        } = &self.target
        {
            if *layer >= self.num_layers {
                return bad(format!("target layer {layer} >= num_layers {}", self.num_layers));
            }
            if directions.is_empty() {
                return bad("target needs at least one direction".into());
            }
            if let Some(j) = directions.iter().find(|&&j| j >= self.dim) {
                return bad(format!("target direction {j} >= dim {}", self.dim));
            }
            if !noise.is_finite() || *noise < 0.0 {
                return bad(format!("target noise must be finite and >= 0, got {noise}"));
            }
        }
        Ok(())
    }
}

/// Generated layers plus a task manifest over the same molecules.
#[derive(Debug, Clone, PartialEq)]
pub struct SynthOutput {
    pub stacks: Vec<LayerStack>,
    pub manifest: TaskManifest,
}

struct Stream(Xoshiro256PlusPlus);

impl Stream {
    fn new(seed: u64) -> Self {
        Stream(Xoshiro256PlusPlus::seed_from_u64(seed))
    }

    fn uniform(&mut self) -> f64 {
        (self.0.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    fn gaussian(&mut self) -> f64 {
        let u1 = self.uniform();
        let u2 = self.uniform();
        (-2.0 * (1.0 - u1).ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
    }

    fn below(&mut self, n: u64) -> u64 {
        self.0.next_u64() % n
    }
}

/// Modified Gram–Schmidt over the columns of a seeded Gaussian matrix.
fn random_orthogonal(stream: &mut Stream, d: usize) -> Matrix {
    let mut g = Matrix::from_parts(d, d, (0..d * d).map(|_| stream.gaussian()).collect());
    for j in 0..d {
        for k in 0..j {
            let proj: f64 = (0..d).map(|i| g[(i, j)] * g[(i, k)]).sum();
            for i in 0..d {
                g[(i, j)] -= proj * g[(i, k)];
            }
        }
        let norm = (0..d).map(|i| g[(i, j)] * g[(i, j)]).sum::<f64>().sqrt();
        for i in 0..d {
            g[(i, j)] /= norm;
        }
    }
    g
}

fn apply(stream: &mut Stream, transform: Transform, layer: &[Matrix]) -> Vec<Matrix> {
    match transform {
        Transform::Identity => layer.to_vec(),
        Transform::Scaled(c) => layer.iter().map(|h| h.scale(c)).collect(),
        Transform::OrthogonalRotation => {
            let d = layer[0].cols();
            let q = random_orthogonal(stream, d);
            layer
                .iter()
                .map(|h| matmul(h, &q).expect("square rotation"))
                .collect()
        }
        Transform::RankCompress(r) => layer
            .iter()
            .map(|h| {
                let mut out = h.clone();
                for i in 0..out.rows() {
                    out.row_mut(i)[r..].iter_mut().for_each(|v| *v = 0.0);
                }
                out
            })
            .collect(),
        Transform::Noise(sigma) => layer
            .iter()
            .map(|h| {
                let mut out = h.clone();
                for i in 0..out.rows() {
                    for v in out.row_mut(i) {
                        *v += sigma * stream.gaussian();
                    }
                }
                out
            })
            .collect(),
    }
}

pub fn molecule_id(i: usize) -> String {
    format!("mol{i:05}")
}

fn split_of(i: usize) -> Split {
    match i % 10 {
        0..=6 => Split::Train,
        7 => Split::Valid,
        _ => Split::Test,
    }
}

pub fn generate(spec: &SynthSpec) -> Result<SynthOutput, SynthError> {
    spec.validate()?;
    let mut stream = Stream::new(spec.seed);
    let (lo, hi) = spec.token_count_range;
    let d = spec.dim;
    let n = spec.n_molecules;

    let counts: Vec<usize> = (0..n)
        .map(|_| lo + stream.below((hi - lo + 1) as u64) as usize)
        .collect();
    let first: Vec<Matrix> = counts
        .iter()
        .map(|&t| Matrix::from_parts(t, d, (0..t * d).map(|_| stream.gaussian()).collect()))
        .collect();

    let mut layers = vec![first];
    for &t in &spec.transforms {
        let next = apply(&mut stream, t, layers.last().unwrap());
        layers.push(next);
    }

    let raw_target: Vec<f64> = match &spec.target {
        PlantedTarget::None => (0..n).map(|_| stream.gaussian()).collect(),
        PlantedTarget::LinearInLayer {
            layer,
            directions,
            noise,
        } => layers[*layer]
            .iter()
            .map(|h| {
                let pooled = pool_tokens(h, PoolingStrategy::Mean).expect("non-empty tokens");
                let signal: f64 = directions.iter().map(|&j| pooled[j]).sum();
                signal + noise * stream.gaussian()
            })
            .collect(),
    };

    let (task_kind, metric, values) = match spec.task {
        SynthTask::Regression => (TaskKind::Regression, Metric::Mae, raw_target),
        SynthTask::Classification => {
            let mut sorted = raw_target.clone();
            sorted.sort_by(f64::total_cmp);
            let median = sorted[n / 2];
            let labels = raw_target
                .iter()
                .map(|&v| if v >= median { 1.0 } else { 0.0 })
                .collect();
            (TaskKind::BinaryClassification, Metric::Auroc, labels)
        }
    };

    let ids: Vec<String> = (0..n).map(molecule_id).collect();
    let labels: BTreeMap<String, f64> = ids.iter().cloned().zip(values).collect();
    let split: BTreeMap<String, Split> = ids.iter().enumerate().map(|(i, id)| (id.clone(), split_of(i))).collect();
    let manifest = TaskManifest {
        task_name: format!("{}-target", spec.model_name),
        task_kind,
        metric,
        pooling: PoolingStrategy::Mean,
        labels,
        split,
    };
    manifest.validate()?;

    let stacks = layers
        .into_iter()
        .enumerate()
        .map(|(k, emb)| LayerStack::new(k, ids.clone(), emb))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(SynthOutput { stacks, manifest })
}

/// Writes the layers, `index.json`, `manifest.json` and the generating `SynthSpec`
/// (`synth.json`) into `dir`.
pub fn write_synth_container(dir: &Path, spec: &SynthSpec, out: &SynthOutput) -> Result<(), SynthError> {
    write_container(dir, &spec.model_name, PoolingStrategy::Mean, &out.stacks, NpyDtype::F64)?;
    write_manifest(&dir.join(MANIFEST_FILE), &out.manifest)?;
    crate::tensorio::write_json(&dir.join(SPEC_FILE), spec)?;
    Ok(())
}
