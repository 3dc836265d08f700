//! k-nearest-neighbour averaging under the Euclidean norm.

use serde::{Deserialize, Serialize};

use crate::data::Matrix;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KnnModel {
    x: Matrix,
    y: Vec<f64>,
    weights: Vec<f64>,
    k: usize,
}

impl KnnModel {
    pub fn fit(x: &Matrix, y: &[f64], weights: &[f64], k: usize) -> Result<Self> {
        let n = x.nrows();
        if k == 0 {
            return Err(Error::InvalidConfig("k must be at least 1".into()));
        }
        if k > n {
            return Err(Error::KTooLarge { k, n });
        }
        Ok(KnnModel { x: x.clone(), y: y.to_vec(), weights: weights.to_vec(), k })
    }

    /// Indices of the k nearest training points; distance ties go to the
    /// lowest training index.
    pub fn neighbours(&self, query: &[f64]) -> Vec<usize> {
        let mut dist: Vec<(f64, usize)> = self
            .x
            .rows()
            .enumerate()
            .map(|(i, r)| (r.iter().zip(query).map(|(a, b)| (a - b) * (a - b)).sum::<f64>(), i))
            .collect();
        let cmp = |a: &(f64, usize), b: &(f64, usize)| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1));
        if self.k < dist.len() {
            dist.select_nth_unstable_by(self.k - 1, cmp);
            dist.truncate(self.k);
        }
        dist.sort_unstable_by(cmp);
        dist.into_iter().map(|(_, i)| i).collect()
    }

    pub fn predict(&self, query: &[f64]) -> f64 {
        let nb = self.neighbours(query);
        let sw: f64 = nb.iter().map(|&i| self.weights[i]).sum();
        if sw > 0.0 {
            nb.iter().map(|&i| self.weights[i] * self.y[i]).sum::<f64>() / sw
        } else {
            nb.iter().map(|&i| self.y[i]).sum::<f64>() / nb.len() as f64
        }
    }
}
