//! k-NN imputation with hyperbolic (1/d) weights.
//!
//! Distances use only the query's observed dimensions. The caller decides the
//! space: raw tag values for test-set cleaning, scaled features for the
//! horizon shift of the fault classifier.

use std::cmp::Ordering;
use std::collections::BinaryHeap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ImputeConfig {
    pub k: usize,
}

impl Default for ImputeConfig {
    fn default() -> Self {
        ImputeConfig { k: 5 }
    }
}

/// Completed query plus the neighbors used, nearest first.
#[derive(Debug, Clone, PartialEq)]
pub struct Imputation {
    pub values: Vec<f64>,
    pub neighbors: Vec<usize>,
    pub distances: Vec<f64>,
}

#[derive(PartialEq)]
struct Candidate {
    dist: f64,
    index: usize,
}

impl Eq for Candidate {}

impl Ord for Candidate {
    fn cmp(&self, other: &Self) -> Ordering {
        self.dist
            .total_cmp(&other.dist)
            .then(self.index.cmp(&other.index))
    }
}

impl PartialOrd for Candidate {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

/// Fills the missing entries of `query` from its k nearest reference rows.
///
/// Reference rows must be fully observed. Ties at equal distance go to the
/// lower reference index. When some neighbors sit at distance zero the value
/// is the plain mean over those neighbors.
pub fn knn_impute<R: AsRef<[f64]>>(
    query: &[Option<f64>],
    reference: &[R],
    config: &ImputeConfig,
) -> Result<Imputation> {
    let k = config.k;
    if k == 0 {
        return Err(Error::Config("k must be >= 1".into()));
    }
    let observed: Vec<(usize, f64)> = query
        .iter()
        .enumerate()
        .filter_map(|(j, v)| v.map(|x| (j, x)))
        .collect();
    if observed.is_empty() {
        return Err(Error::CannotImpute("query has no observed dimensions".into()));
    }
    if reference.len() < k {
        return Err(Error::InsufficientData(format!(
            "reference set has {} rows, k = {k}",
            reference.len()
        )));
    }

    let mut heap: BinaryHeap<Candidate> = BinaryHeap::with_capacity(k + 1);
    for (index, row) in reference.iter().enumerate() {
        let row = row.as_ref();
        if row.len() != query.len() {
            return Err(Error::InvalidInput(format!(
                "reference row {index} has {} dims, query has {}",
                row.len(),
                query.len()
            )));
        }
        let dist = observed
            .iter()
            .map(|&(j, x)| (row[j] - x) * (row[j] - x))
            .sum::<f64>()
            .sqrt();
        let cand = Candidate { dist, index };
        if heap.len() < k {
            heap.push(cand);
        } else if cand < *heap.peek().expect("heap holds k items") {
            heap.pop();
            heap.push(cand);
        }
    }
    let nearest = heap.into_sorted_vec();

    let exact: Vec<usize> = nearest
        .iter()
        .filter(|c| c.dist == 0.0)
        .map(|c| c.index)
        .collect();
    let values = query
        .iter()
        .enumerate()
        .map(|(j, v)| match v {
            Some(x) => *x,
            None if !exact.is_empty() => {
                exact.iter().map(|&i| reference[i].as_ref()[j]).sum::<f64>() / exact.len() as f64
            }
            None => {
                let (num, den) = nearest.iter().fold((0.0, 0.0), |(num, den), c| {
                    let w = 1.0 / c.dist;
                    (num + w * reference[c.index].as_ref()[j], den + w)
                });
                num / den
            }
        })
        .collect();
    Ok(Imputation {
        values,
        neighbors: nearest.iter().map(|c| c.index).collect(),
        distances: nearest.iter().map(|c| c.dist).collect(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exact_match_wins() {
        let refs = vec![vec![0.0, 0.0, 10.0], vec![1.0, 1.0, 50.0], vec![2.0, 2.0, 90.0]];
        let out = knn_impute(&[Some(0.0), Some(0.0), None], &refs, &ImputeConfig { k: 2 }).unwrap();
        assert_eq!(out.values, vec![0.0, 0.0, 10.0]);
    }

    #[test]
    fn hyperbolic_weighted_mean() {
        let refs = vec![vec![1.0, 10.0], vec![3.0, 20.0], vec![9.0, 99.0]];
        let out = knn_impute(&[Some(0.0), None], &refs, &ImputeConfig { k: 2 }).unwrap();
        assert!((out.values[1] - 12.5).abs() < 1e-12);
        assert_eq!(out.neighbors, vec![0, 1]);
    }

    #[test]
    fn k1_is_nearest_verbatim() {
        let refs = vec![vec![5.0, 1.0], vec![1.5, 7.25]];
        let out = knn_impute(&[Some(1.0), None], &refs, &ImputeConfig { k: 1 }).unwrap();
        assert_eq!(out.values[1], 7.25);
    }

    #[test]
    fn ties_prefer_lower_index() {
        let refs = vec![vec![1.0, 1.0], vec![-1.0, 2.0], vec![1.0, 3.0]];
        let out = knn_impute(&[Some(0.0), None], &refs, &ImputeConfig { k: 2 }).unwrap();
        assert_eq!(out.neighbors, vec![0, 1]);
    }

    #[test]
    fn errors() {
        let refs = vec![vec![1.0, 1.0]];
        assert!(matches!(
            knn_impute(&[None, None], &refs, &ImputeConfig { k: 1 }),
            Err(Error::CannotImpute(_))
        ));
        assert!(matches!(
            knn_impute(&[Some(1.0), None], &refs, &ImputeConfig { k: 2 }),
            Err(Error::InsufficientData(_))
        ));
    }
}
