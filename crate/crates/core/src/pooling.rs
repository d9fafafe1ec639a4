//! Collapses a molecule's token matrix into one vector.
//!
//! Graph encoders export their scalar node embeddings as token rows, so node
//! mean pooling is the `Mean` strategy. For `Cls` the exporter must place the
//! CLS token in row 0.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::linalg::Matrix;
use crate::tensorio::LayerStack;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PoolingStrategy {
    Mean,
    Cls,
}

impl PoolingStrategy {
    pub fn as_str(self) -> &'static str {
        match self {
            PoolingStrategy::Mean => "mean",
            PoolingStrategy::Cls => "cls",
        }
    }
}

impl fmt::Display for PoolingStrategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for PoolingStrategy {
    type Err = PoolingError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "mean" => Ok(PoolingStrategy::Mean),
            "cls" => Ok(PoolingStrategy::Cls),
            other => Err(PoolingError::UnknownStrategy(other.to_string())),
        }
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PoolingError {
    #[error("unknown pooling strategy {0:?} (expected mean or cls)")]
    UnknownStrategy(String),
    #[error("molecule {0:?} has an empty token matrix")]
    EmptyTokens(String),
}

/// One pooled vector per molecule, rows in stack order.
#[derive(Debug, Clone, PartialEq)]
pub struct PooledMatrix {
    pub molecule_ids: Vec<String>,
    pub vectors: Matrix,
}

impl PooledMatrix {
    pub fn len(&self) -> usize {
        self.molecule_ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.molecule_ids.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.vectors.cols()
    }
}

/// Pools a single token matrix. `None` when it has no rows.
pub fn pool_tokens(tokens: &Matrix, strategy: PoolingStrategy) -> Option<Vec<f64>> {
    if tokens.rows() == 0 {
        return None;
    }
    Some(match strategy {
        PoolingStrategy::Cls => tokens.row(0).to_vec(),
        PoolingStrategy::Mean => {
            let mut acc = vec![0.0; tokens.cols()];
            for row in tokens.row_iter() {
                for (a, v) in acc.iter_mut().zip(row) {
                    *a += v;
                }
            }
            let t = tokens.rows() as f64;
            acc.iter_mut().for_each(|a| *a /= t);
            acc
        }
    })
}

pub fn pool(stack: &LayerStack, strategy: PoolingStrategy) -> Result<PooledMatrix, PoolingError> {
    let dim = stack.dim();
    let mut data = Vec::with_capacity(stack.len() * dim);
    for (id, tokens) in stack.molecule_ids().iter().zip(stack.embeddings()) {
        let v = pool_tokens(tokens, strategy).ok_or_else(|| PoolingError::EmptyTokens(id.clone()))?;
        data.extend_from_slice(&v);
    }
    Ok(PooledMatrix {
        molecule_ids: stack.molecule_ids().to_vec(),
        vectors: Matrix::from_parts(stack.len(), dim, data),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::matmul;
    use proptest::prelude::*;

    fn m(rows: &[&[f64]]) -> Matrix {
        Matrix::from_rows(rows).unwrap()
    }

    #[test]
    fn pooling_examples() {
        let h = m(&[&[1.0, 2.0], &[3.0, 4.0]]);
        assert_eq!(pool_tokens(&h, PoolingStrategy::Mean).unwrap(), vec![2.0, 3.0]);
        assert_eq!(pool_tokens(&h, PoolingStrategy::Cls).unwrap(), vec![1.0, 2.0]);
        let single = m(&[&[5.0, 6.0]]);
        assert_eq!(pool_tokens(&single, PoolingStrategy::Mean).unwrap(), vec![5.0, 6.0]);
        assert_eq!(pool_tokens(&Matrix::zeros(0, 2), PoolingStrategy::Mean), None);
    }

    #[test]
    fn pool_keeps_stack_order() {
        let stack = LayerStack::new(
            0,
            vec!["b".into(), "a".into()],
            vec![m(&[&[1.0], &[3.0]]), m(&[&[10.0]])],
        )
        .unwrap();
        let pooled = pool(&stack, PoolingStrategy::Mean).unwrap();
        assert_eq!(pooled.molecule_ids, vec!["b".to_string(), "a".to_string()]);
        assert_eq!(pooled.vectors, m(&[&[2.0], &[10.0]]));
    }

    #[test]
    fn strategy_parsing() {
        assert_eq!("cls".parse::<PoolingStrategy>().unwrap(), PoolingStrategy::Cls);
        assert!("max".parse::<PoolingStrategy>().is_err());
    }

    fn arb_tokens() -> impl Strategy<Value = Matrix> {
        (1usize..7, 1usize..4).prop_flat_map(|(t, d)| {
            proptest::collection::vec(-10.0..10.0_f64, t * d)
                .prop_map(move |v| Matrix::new(t, d, v).unwrap())
        })
    }

    proptest! {
        #[test]
        fn mean_ignores_row_order(h in arb_tokens(), rot in 0usize..7) {
            let t = h.rows();
            let order: Vec<usize> = (0..t).map(|i| (i + rot) % t).collect();
            let permuted = h.select_rows(&order);
            let a = pool_tokens(&h, PoolingStrategy::Mean).unwrap();
            let b = pool_tokens(&permuted, PoolingStrategy::Mean).unwrap();
            for (x, y) in a.iter().zip(&b) {
                prop_assert!((x - y).abs() <= 1e-12);
            }
        }

        #[test]
        fn cls_ignores_order_of_later_rows(h in arb_tokens()) {
            let t = h.rows();
            let mut order: Vec<usize> = vec![0];
            order.extend((1..t).rev());
            let permuted = h.select_rows(&order);
            prop_assert_eq!(
                pool_tokens(&h, PoolingStrategy::Cls),
                pool_tokens(&permuted, PoolingStrategy::Cls)
            );
        }

        #[test]
        fn mean_commutes_with_linear_maps(
            h in arb_tokens(),
            a in proptest::collection::vec(-2.0..2.0_f64, 9),
        ) {
            let d = h.cols();
            let map = Matrix::new(d, 3, a[..d * 3].to_vec()).unwrap();
            let lhs = pool_tokens(&matmul(&h, &map).unwrap(), PoolingStrategy::Mean).unwrap();
            let pooled = Matrix::new(1, d, pool_tokens(&h, PoolingStrategy::Mean).unwrap()).unwrap();
            let rhs = matmul(&pooled, &map).unwrap();
            for (x, y) in lhs.iter().zip(rhs.data()) {
                prop_assert!((x - y).abs() <= 1e-12);
            }
        }
    }
}
