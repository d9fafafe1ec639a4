//! Independent reference implementations used as test oracles. Nothing here
//! calls into the crate's numerical code.
#![allow(dead_code)]

use rand_core::{RngCore, SeedableRng};
use rand_xoshiro::Xoshiro256PlusPlus;

use layerscope::linalg::Matrix;

pub type Rows = Vec<Vec<f64>>;

pub struct Rng(Xoshiro256PlusPlus);

impl Rng {
    pub fn new(seed: u64) -> Self {
        Rng(Xoshiro256PlusPlus::seed_from_u64(seed))
    }

    pub fn uniform(&mut self) -> f64 {
        (self.0.next_u64() >> 11) as f64 / (1u64 << 53) as f64
    }

    pub fn range(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.uniform()
    }

    /// Uniform integer in `lo..=hi`.
    pub fn int(&mut self, lo: usize, hi: usize) -> usize {
        lo + (self.0.next_u64() % (hi - lo + 1) as u64) as usize
    }

    pub fn normal(&mut self) -> f64 {
        let u1 = self.uniform();
        let u2 = self.uniform();
        (-2.0 * (1.0 - u1).ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
    }

    pub fn rows(&mut self, n: usize, d: usize) -> Rows {
        (0..n).map(|_| (0..d).map(|_| self.normal()).collect()).collect()
    }
}

pub fn matrix(rows: &Rows) -> Matrix {
    Matrix::from_rows(rows).unwrap()
}

pub fn transpose(a: &Rows) -> Rows {
    let cols = a.first().map_or(0, Vec::len);
    (0..cols).map(|j| a.iter().map(|r| r[j]).collect()).collect()
}

pub fn mul(a: &Rows, b: &Rows) -> Rows {
    a.iter()
        .map(|r| {
            (0..b[0].len())
                .map(|j| r.iter().zip(b).map(|(x, row)| x * row[j]).sum())
                .collect()
        })
        .collect()
}

pub fn mul_vec(a: &Rows, v: &[f64]) -> Vec<f64> {
    a.iter().map(|r| r.iter().zip(v).map(|(x, y)| x * y).sum()).collect()
}

fn minor(m: &Rows, skip_row: usize, skip_col: usize) -> Rows {
    m.iter()
        .enumerate()
        .filter(|(i, _)| *i != skip_row)
        .map(|(_, r)| {
            r.iter()
                .enumerate()
                .filter(|(j, _)| *j != skip_col)
                .map(|(_, v)| *v)
                .collect()
        })
        .collect()
}

/// Laplace expansion along the first row.
pub fn det(m: &Rows) -> f64 {
    match m.len() {
        0 => 1.0,
        1 => m[0][0],
        n => (0..n)
            .map(|j| {
                let sign = if j % 2 == 0 { 1.0 } else { -1.0 };
                sign * m[0][j] * det(&minor(m, 0, j))
            })
            .sum(),
    }
}

/// Adjugate divided by the determinant.
pub fn inverse(m: &Rows) -> Rows {
    let n = m.len();
    let d = det(m);
    (0..n)
        .map(|i| {
            (0..n)
                .map(|j| {
                    let sign = if (i + j) % 2 == 0 { 1.0 } else { -1.0 };
                    sign * det(&minor(m, j, i)) / d
                })
                .collect()
        })
        .collect()
}

pub fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

/// Population-std standardization of every column.
pub fn standardize(x: &Rows) -> Rows {
    let cols = transpose(x);
    let stats: Vec<(f64, f64)> = cols
        .iter()
        .map(|c| {
            let m = mean(c);
            let sd = (c.iter().map(|v| (v - m).powi(2)).sum::<f64>() / c.len() as f64).sqrt();
            (m, sd)
        })
        .collect();
    x.iter()
        .map(|r| r.iter().zip(&stats).map(|(v, (m, s))| (v - m) / s).collect())
        .collect()
}

/// `(XᵀX + λI)⁻¹ Xᵀy` through the cofactor inverse.
pub fn ridge_normal_equations(x: &Rows, y: &[f64], lambda: f64) -> Vec<f64> {
    let xt = transpose(x);
    let mut a = mul(&xt, x);
    for (i, row) in a.iter_mut().enumerate() {
        row[i] += lambda;
    }
    mul_vec(&inverse(&a), &mul_vec(&xt, y))
}

/// `tr(KHLH) / sqrt(tr(KHKH)·tr(LHLH))` with `K = XXᵀ`, `L = YYᵀ`.
pub fn hsic_cka(x: &Rows, y: &Rows) -> f64 {
    let n = x.len();
    let h: Rows = (0..n)
        .map(|i| (0..n).map(|j| if i == j { 1.0 } else { 0.0 } - 1.0 / n as f64).collect())
        .collect();
    let k = mul(&mul(&h, &mul(x, &transpose(x))), &h);
    let l = mul(&mul(&h, &mul(y, &transpose(y))), &h);
    let tr = |a: &Rows, b: &Rows| -> f64 {
        (0..n).map(|i| (0..n).map(|j| a[i][j] * b[j][i]).sum::<f64>()).sum()
    };
    tr(&k, &l) / (tr(&k, &k) * tr(&l, &l)).sqrt()
}

/// Fraction of positive–negative pairs ranked correctly, ties worth half.
pub fn auroc_pairs(scores: &[f64], labels: &[f64]) -> f64 {
    let mut total = 0.0;
    let mut pairs = 0.0;
    for (i, &si) in scores.iter().enumerate() {
        for (j, &sj) in scores.iter().enumerate() {
            if labels[i] == 1.0 && labels[j] == 0.0 {
                pairs += 1.0;
                total += if si > sj {
                    1.0
                } else if si == sj {
                    0.5
                } else {
                    0.0
                };
            }
        }
    }
    total / pairs
}

/// `1 + #smaller + (#equal − 1)/2` by direct counting.
pub fn ranks_by_counting(v: &[f64]) -> Vec<f64> {
    v.iter()
        .map(|&x| {
            let less = v.iter().filter(|&&y| y < x).count() as f64;
            let equal = v.iter().filter(|&&y| y == x).count() as f64;
            1.0 + less + (equal - 1.0) / 2.0
        })
        .collect()
}

pub fn pearson_direct(a: &[f64], b: &[f64]) -> f64 {
    let (ma, mb) = (mean(a), mean(b));
    let cov: f64 = a.iter().zip(b).map(|(x, y)| (x - ma) * (y - mb)).sum();
    let va: f64 = a.iter().map(|x| (x - ma).powi(2)).sum();
    let vb: f64 = b.iter().map(|y| (y - mb).powi(2)).sum();
    cov / (va * vb).sqrt()
}

pub fn golden_section(f: impl Fn(f64) -> f64, mut a: f64, mut b: f64, tol: f64) -> f64 {
    let inv_phi = (5f64.sqrt() - 1.0) / 2.0;
    let mut c = b - inv_phi * (b - a);
    let mut d = a + inv_phi * (b - a);
    while (b - a).abs() > tol {
        if f(c) < f(d) {
            b = d;
        } else {
            a = c;
        }
        c = b - inv_phi * (b - a);
        d = a + inv_phi * (b - a);
    }
    (a + b) / 2.0
}

/// Classical Gram–Schmidt over the columns of a Gaussian matrix.
pub fn random_orthogonal(rng: &mut Rng, d: usize) -> Rows {
    let g = rng.rows(d, d);
    let mut cols: Vec<Vec<f64>> = Vec::new();
    for col in transpose(&g) {
        let mut v = col.clone();
        for q in &cols {
            let proj: f64 = col.iter().zip(q).map(|(a, b)| a * b).sum();
            for (vi, qi) in v.iter_mut().zip(q) {
                *vi -= proj * qi;
            }
        }
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        cols.push(v.into_iter().map(|x| x / norm).collect());
    }
    transpose(&cols)
}

/// Shannon entropy (nats) of a normalized non-negative spectrum.
pub fn spectrum_entropy(values: &[f64]) -> f64 {
    let total: f64 = values.iter().sum();
    values
        .iter()
        .filter(|&&v| v > 0.0)
        .map(|&v| {
            let p = v / total;
            -p * p.ln()
        })
        .sum()
}
