//! Nadaraya–Watson regression with a Gaussian product kernel.

use serde::{Deserialize, Serialize};

use crate::data::Matrix;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KernelModel {
    x: Matrix,
    y: Vec<f64>,
    weights: Vec<f64>,
    bandwidth: f64,
    fallback: f64,
}

impl KernelModel {
    pub fn fit(x: &Matrix, y: &[f64], weights: &[f64], bandwidth: f64) -> Result<Self> {
        if !(bandwidth > 0.0) || !bandwidth.is_finite() {
            return Err(Error::InvalidConfig(format!("bandwidth must be positive, got {bandwidth}")));
        }
        let sw: f64 = weights.iter().sum();
        let fallback = if sw > 0.0 {
            weights.iter().zip(y).map(|(w, v)| w * v).sum::<f64>() / sw
        } else {
            y.iter().sum::<f64>() / y.len().max(1) as f64
        };
        Ok(KernelModel { x: x.clone(), y: y.to_vec(), weights: weights.to_vec(), bandwidth, fallback })
    }

    /// Kernel-weighted mean; the global mean when every kernel weight underflows.
    pub fn predict(&self, query: &[f64]) -> f64 {
        let inv = 1.0 / (2.0 * self.bandwidth * self.bandwidth);
        let mut num = 0.0;
        let mut den = 0.0;
        for (i, r) in self.x.rows().enumerate() {
            let d2: f64 = r.iter().zip(query).map(|(a, b)| (a - b) * (a - b)).sum();
            let k = (-d2 * inv).exp() * self.weights[i];
            num += k * self.y[i];
            den += k;
        }
        if den > 0.0 && den.is_finite() {
            num / den
        } else {
            self.fallback
        }
    }
}
