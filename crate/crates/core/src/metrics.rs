//! Task metrics (MAE, Spearman, AUROC, AUCPR) and the Pearson correlation
//! used to compare frozen and finetuned layer curves.
//!
//! Ties are handled exactly: ranks are averaged within tied blocks, AUROC is
//! the tie-corrected Mann–Whitney statistic, and average precision collapses
//! tied scores into a single threshold step.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum Metric {
    Mae,
    Spearman,
    Auroc,
    Aucpr,
    Pearson,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Direction {
    LowerBetter,
    HigherBetter,
}

impl Metric {
    pub fn direction(self) -> Direction {
        match self {
            Metric::Mae => Direction::LowerBetter,
            _ => Direction::HigherBetter,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Metric::Mae => "MAE",
            Metric::Spearman => "SPEARMAN",
            Metric::Auroc => "AUROC",
            Metric::Aucpr => "AUCPR",
            Metric::Pearson => "PEARSON",
        }
    }

    /// Whether a task manifest may declare this metric.
    pub fn is_task_metric(self) -> bool {
        !matches!(self, Metric::Pearson)
    }

    /// Whether the metric is only defined for 0/1 labels.
    pub fn needs_binary_labels(self) -> bool {
        matches!(self, Metric::Auroc | Metric::Aucpr)
    }
}

impl fmt::Display for Metric {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Metric {
    type Err = MetricError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_uppercase().as_str() {
            "MAE" => Ok(Metric::Mae),
            "SPEARMAN" => Ok(Metric::Spearman),
            "AUROC" => Ok(Metric::Auroc),
            "AUCPR" => Ok(Metric::Aucpr),
            "PEARSON" => Ok(Metric::Pearson),
            _ => Err(MetricError::UnknownMetric(s.to_string())),
        }
    }
}

impl Direction {
    pub fn as_str(self) -> &'static str {
        match self {
            Direction::LowerBetter => "lower-better",
            Direction::HigherBetter => "higher-better",
        }
    }

    /// True when `a` is strictly better than `b` under this direction.
    pub fn is_better(self, a: f64, b: f64) -> bool {
        match self {
            Direction::LowerBetter => a < b,
            Direction::HigherBetter => a > b,
        }
    }
}

impl fmt::Display for Direction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Direction {
    type Err = MetricError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "lower-better" => Ok(Direction::LowerBetter),
            "higher-better" => Ok(Direction::HigherBetter),
            _ => Err(MetricError::UnknownDirection(s.to_string())),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricValue {
    pub name: Metric,
    pub value: f64,
    pub direction: Direction,
}

impl MetricValue {
    fn new(name: Metric, value: f64) -> Self {
        Self {
            name,
            value,
            direction: name.direction(),
        }
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MetricError {
    #[error("unknown metric {0:?}")]
    UnknownMetric(String),
    #[error("unknown metric direction {0:?}")]
    UnknownDirection(String),
    #[error("length mismatch: {0} vs {1}")]
    LengthMismatch(usize, usize),
    #[error("{metric} needs at least {needed} values, got {got}")]
    TooFew {
        metric: Metric,
        needed: usize,
        got: usize,
    },
    #[error("non-finite value at position {0}")]
    NonFinite(usize),
    #[error("zero rank variance: {0} input is constant")]
    ZeroRankVariance(&'static str),
    #[error("zero variance: {0} input is constant")]
    ZeroVariance(&'static str),
    #[error("non-binary label {value} at position {index}")]
    NonBinaryLabel { index: usize, value: f64 },
    #[error("labels contain a single class")]
    SingleClass,
    #[error("labels contain no positives")]
    NoPositives,
}

impl MetricError {
    pub fn is_numerical(&self) -> bool {
        matches!(self, MetricError::ZeroRankVariance(_))
    }
}

fn check_pair(metric: Metric, a: &[f64], b: &[f64], needed: usize) -> Result<(), MetricError> {
    if a.len() != b.len() {
        return Err(MetricError::LengthMismatch(a.len(), b.len()));
    }
    if a.len() < needed {
        return Err(MetricError::TooFew {
            metric,
            needed,
            got: a.len(),
        });
    }
    for v in [a, b] {
        if let Some(i) = v.iter().position(|x| !x.is_finite()) {
            return Err(MetricError::NonFinite(i));
        }
    }
    Ok(())
}

fn binary_labels(labels: &[f64]) -> Result<Vec<bool>, MetricError> {
    labels
        .iter()
        .enumerate()
        .map(|(index, &value)| {
            if value == 1.0 {
                Ok(true)
            } else if value == 0.0 {
                Ok(false)
            } else {
                Err(MetricError::NonBinaryLabel { index, value })
            }
        })
        .collect()
}

/// 1-based ranks with tied values sharing the mean of their positions.
pub fn average_ranks(values: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&i, &j| values[i].total_cmp(&values[j]));
    let mut ranks = vec![0.0; values.len()];
    let mut start = 0;
    while start < order.len() {
        let mut end = start + 1;
        while end < order.len() && values[order[end]] == values[order[start]] {
            end += 1;
        }
        // positions start..end hold ranks start+1..=end
        let rank = (start + 1 + end) as f64 / 2.0;
        for &i in &order[start..end] {
            ranks[i] = rank;
        }
        start = end;
    }
    ranks
}

fn correlation(a: &[f64], b: &[f64]) -> Option<f64> {
    let n = a.len() as f64;
    let ma = a.iter().sum::<f64>() / n;
    let mb = b.iter().sum::<f64>() / n;
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        let dx = x - ma;
        let dy = y - mb;
        sab += dx * dy;
        saa += dx * dx;
        sbb += dy * dy;
    }
    if saa == 0.0 || sbb == 0.0 {
        return None;
    }
    Some((sab / (saa * sbb).sqrt()).clamp(-1.0, 1.0))
}

pub fn mae(pred: &[f64], truth: &[f64]) -> Result<MetricValue, MetricError> {
    check_pair(Metric::Mae, pred, truth, 1)?;
    let total: f64 = pred.iter().zip(truth).map(|(p, t)| (p - t).abs()).sum();
    Ok(MetricValue::new(Metric::Mae, total / pred.len() as f64))
}

/// Pearson correlation of average-tie ranks.
pub fn spearman(pred: &[f64], truth: &[f64]) -> Result<MetricValue, MetricError> {
    check_pair(Metric::Spearman, pred, truth, 2)?;
    let rp = average_ranks(pred);
    let rt = average_ranks(truth);
    if rp.iter().all(|&r| r == rp[0]) {
        return Err(MetricError::ZeroRankVariance("prediction"));
    }
    if rt.iter().all(|&r| r == rt[0]) {
        return Err(MetricError::ZeroRankVariance("truth"));
    }
    let value = correlation(&rp, &rt).ok_or(MetricError::ZeroRankVariance("rank"))?;
    Ok(MetricValue::new(Metric::Spearman, value))
}

/// Tie-corrected Mann–Whitney estimate of the area under the ROC curve.
pub fn auroc(scores: &[f64], labels: &[f64]) -> Result<MetricValue, MetricError> {
    check_pair(Metric::Auroc, scores, labels, 2)?;
    let positive = binary_labels(labels)?;
    let n_pos = positive.iter().filter(|&&p| p).count();
    let n_neg = positive.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Err(MetricError::SingleClass);
    }
    let ranks = average_ranks(scores);
    let rank_sum: f64 = ranks
        .iter()
        .zip(&positive)
        .filter(|(_, &p)| p)
        .map(|(r, _)| r)
        .sum();
    let n_pos_f = n_pos as f64;
    let u = rank_sum - n_pos_f * (n_pos_f + 1.0) / 2.0;
    Ok(MetricValue::new(
        Metric::Auroc,
        (u / (n_pos_f * n_neg as f64)).clamp(0.0, 1.0),
    ))
}

/// Average precision: `Σ (R_k − R_{k−1}) · P_k` over distinct score thresholds.
pub fn aucpr(scores: &[f64], labels: &[f64]) -> Result<MetricValue, MetricError> {
    check_pair(Metric::Aucpr, scores, labels, 1)?;
    let positive = binary_labels(labels)?;
    let n_pos = positive.iter().filter(|&&p| p).count();
    if n_pos == 0 {
        return Err(MetricError::NoPositives);
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&i, &j| scores[j].total_cmp(&scores[i]));

    let (mut tp, mut fp) = (0usize, 0usize);
    let mut prev_recall = 0.0;
    let mut ap = 0.0;
    let mut start = 0;
    while start < order.len() {
        let mut end = start;
        while end < order.len() && scores[order[end]] == scores[order[start]] {
            if positive[order[end]] {
                tp += 1;
            } else {
                fp += 1;
            }
            end += 1;
        }
        let recall = tp as f64 / n_pos as f64;
        let precision = tp as f64 / (tp + fp) as f64;
        ap += (recall - prev_recall) * precision;
        prev_recall = recall;
        start = end;
    }
    Ok(MetricValue::new(Metric::Aucpr, ap.clamp(0.0, 1.0)))
}

pub fn pearson(a: &[f64], b: &[f64]) -> Result<MetricValue, MetricError> {
    check_pair(Metric::Pearson, a, b, 2)?;
    let value = correlation(a, b).ok_or_else(|| {
        if a.iter().all(|&x| x == a[0]) {
            MetricError::ZeroVariance("first")
        } else {
            MetricError::ZeroVariance("second")
        }
    })?;
    Ok(MetricValue::new(Metric::Pearson, value))
}

/// Scores `pred` against `truth` with the given metric. For the ranking
/// metrics `truth` holds the 0/1 labels.
pub fn evaluate(metric: Metric, pred: &[f64], truth: &[f64]) -> Result<MetricValue, MetricError> {
    match metric {
        Metric::Mae => mae(pred, truth),
        Metric::Spearman => spearman(pred, truth),
        Metric::Auroc => auroc(pred, truth),
        Metric::Aucpr => aucpr(pred, truth),
        Metric::Pearson => pearson(pred, truth),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn close(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol
    }

    #[test]
    fn mae_examples() {
        assert_eq!(mae(&[1.0, 2.0], &[1.0, 2.0]).unwrap().value, 0.0);
        assert_eq!(mae(&[1.0, 2.0], &[2.0, 4.0]).unwrap().value, 1.5);
        let v = mae(&[2.0, 1.0], &[4.0, 2.0]).unwrap();
        assert_eq!(v.value, 1.5);
        assert_eq!(v.direction, Direction::LowerBetter);
        assert!(matches!(mae(&[], &[]), Err(MetricError::TooFew { .. })));
        assert!(matches!(
            mae(&[1.0], &[1.0, 2.0]),
            Err(MetricError::LengthMismatch(1, 2))
        ));
    }

    #[test]
    fn average_ranks_handles_ties() {
        assert_eq!(average_ranks(&[1.0, 2.0, 2.0, 3.0]), vec![1.0, 2.5, 2.5, 4.0]);
        assert_eq!(average_ranks(&[5.0, 5.0, 5.0]), vec![2.0, 2.0, 2.0]);
    }

    #[test]
    fn spearman_examples() {
        let v = spearman(&[0.1, 0.5, 0.9], &[10.0, 20.0, 300.0]).unwrap();
        assert!(close(v.value, 1.0, 1e-15));
        let v = spearman(&[1.0, 2.0, 2.0, 3.0], &[1.0, 3.0, 2.0, 4.0]).unwrap();
        assert!(close(v.value, 4.5 / 22.5_f64.sqrt(), 1e-12));
        assert!(close(v.value, 0.948683, 1e-6));
        let v = spearman(&[3.0, 2.0, 1.0], &[1.0, 2.0, 3.0]).unwrap();
        assert!(close(v.value, -1.0, 1e-15));
        assert_eq!(
            spearman(&[1.0, 1.0], &[1.0, 2.0]),
            Err(MetricError::ZeroRankVariance("prediction"))
        );
    }

    #[test]
    fn auroc_examples() {
        let v = auroc(&[0.9, 0.3, 0.8, 0.1], &[1.0, 1.0, 0.0, 0.0]).unwrap();
        assert!(close(v.value, 0.75, 1e-15));
        let v = auroc(&[0.1, 0.2, 0.8, 0.9], &[0.0, 0.0, 1.0, 1.0]).unwrap();
        assert_eq!(v.value, 1.0);
        let v = auroc(&[0.4; 5], &[0.0, 1.0, 0.0, 1.0, 1.0]).unwrap();
        assert_eq!(v.value, 0.5);
        assert_eq!(auroc(&[0.1, 0.2], &[1.0, 1.0]), Err(MetricError::SingleClass));
        assert!(matches!(
            auroc(&[0.1, 0.2], &[1.0, 0.5]),
            Err(MetricError::NonBinaryLabel { index: 1, .. })
        ));
    }

    #[test]
    fn aucpr_examples() {
        let v = aucpr(&[0.9, 0.8, 0.7], &[1.0, 0.0, 1.0]).unwrap();
        assert!(close(v.value, 0.5 + 0.5 * 2.0 / 3.0, 1e-15));
        let v = aucpr(&[0.9, 0.8, 0.2, 0.1], &[1.0, 1.0, 0.0, 0.0]).unwrap();
        assert_eq!(v.value, 1.0);
        let v = aucpr(&[0.3, 0.1, 0.7], &[1.0, 1.0, 1.0]).unwrap();
        assert_eq!(v.value, 1.0);
        assert_eq!(aucpr(&[0.3, 0.1], &[0.0, 0.0]), Err(MetricError::NoPositives));
    }

    #[test]
    fn aucpr_tied_block_is_one_step() {
        // one tied block holding everything: precision = prevalence
        let v = aucpr(&[0.5; 4], &[1.0, 0.0, 0.0, 1.0]).unwrap();
        assert_eq!(v.value, 0.5);
        // order of tied items cannot matter
        let a = aucpr(&[0.9, 0.5, 0.5, 0.1], &[1.0, 1.0, 0.0, 0.0]).unwrap();
        let b = aucpr(&[0.9, 0.5, 0.5, 0.1], &[1.0, 0.0, 1.0, 0.0]).unwrap();
        assert_eq!(a.value, b.value);
    }

    #[test]
    fn pearson_examples() {
        let a = [1.0, 2.0, 3.0, 5.0];
        let b: Vec<f64> = a.iter().map(|x| 2.0 * x + 3.0).collect();
        assert!(close(pearson(&a, &b).unwrap().value, 1.0, 1e-15));
        let neg: Vec<f64> = a.iter().map(|x| -x).collect();
        assert!(close(pearson(&a, &neg).unwrap().value, -1.0, 1e-15));
        let v = pearson(&[1.0, 2.0, 3.0], &[1.0, 2.0, 4.0]).unwrap();
        assert!(close(v.value, 3.0 / (2.0 * 14.0 / 3.0_f64).sqrt(), 1e-15));
        assert!(close(v.value, 0.981981, 1e-6));
        assert_eq!(
            pearson(&[1.0, 1.0], &[1.0, 2.0]),
            Err(MetricError::ZeroVariance("first"))
        );
    }

    #[test]
    fn metric_names_round_trip() {
        for m in [Metric::Mae, Metric::Spearman, Metric::Auroc, Metric::Aucpr, Metric::Pearson] {
            assert_eq!(m.as_str().parse::<Metric>().unwrap(), m);
            let json = serde_json::to_string(&m).unwrap();
            assert_eq!(json, format!("\"{}\"", m.as_str()));
        }
        assert!("RMSE".parse::<Metric>().is_err());
    }

    proptest! {
        #[test]
        fn mae_is_permutation_invariant(
            pairs in proptest::collection::vec((-10.0..10.0_f64, -10.0..10.0_f64), 1..12),
            seed in any::<u64>(),
        ) {
            let (p, t): (Vec<f64>, Vec<f64>) = pairs.iter().copied().unzip();
            let mut idx: Vec<usize> = (0..p.len()).collect();
            // deterministic shuffle from the seed
            let mut s = seed;
            for i in (1..idx.len()).rev() {
                s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
                idx.swap(i, (s >> 33) as usize % (i + 1));
            }
            let pp: Vec<f64> = idx.iter().map(|&i| p[i]).collect();
            let tt: Vec<f64> = idx.iter().map(|&i| t[i]).collect();
            let a = mae(&p, &t).unwrap().value;
            let b = mae(&pp, &tt).unwrap().value;
            prop_assert!((a - b).abs() <= 1e-12);
        }

        #[test]
        fn aucpr_invariant_to_increasing_transform(
            scores in proptest::collection::vec(-3.0..3.0_f64, 2..10),
            bits in proptest::collection::vec(any::<bool>(), 10),
        ) {
            let mut labels: Vec<f64> = bits[..scores.len()].iter().map(|&b| b as u8 as f64).collect();
            labels[0] = 1.0;
            let moved: Vec<f64> = scores.iter().map(|s| s.exp() * 3.0 + 1.0).collect();
            let a = aucpr(&scores, &labels).unwrap().value;
            let b = aucpr(&moved, &labels).unwrap().value;
            prop_assert!((a - b).abs() <= 1e-12);
        }
    }
}
