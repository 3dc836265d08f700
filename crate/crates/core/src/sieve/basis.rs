use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::data::Matrix;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BasisKind {
    #[default]
    Cosine,
    /// The raw covariates themselves.
    Linear,
}

/// Additive univariate cosine basis `cos(π f u_r)`, `f = 1..k`, over every
/// covariate `r` whose training range is non-degenerate, or the linear basis
/// `w ↦ w` over the same covariates.
///
/// Covariates are mapped to `u = (w − min)/(max − min)` with the training
/// range; queries outside the range are clipped to `[0, 1]`. There is no
/// intercept feature.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SieveBasis {
    #[serde(default)]
    kind: BasisKind,
    frequencies: usize,
    input_dim: usize,
    kept: Vec<usize>,
    mins: Vec<f64>,
    spans: Vec<f64>,
}

impl SieveBasis {
    pub fn fit(x: &Matrix, frequencies: usize) -> Self {
        let d = x.ncols();
        let mut kept = Vec::new();
        let mut mins = Vec::new();
        let mut spans = Vec::new();
        for r in 0..d {
            let (lo, hi) = (0..x.nrows())
                .map(|i| x.get(i, r))
                .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| (lo.min(v), hi.max(v)));
            if hi > lo {
                kept.push(r);
                mins.push(lo);
                spans.push(hi - lo);
            } else if frequencies > 0 {
                log::warn!("covariate w{} has a degenerate range; dropped from the cosine basis", r + 1);
            }
        }
        SieveBasis { kind: BasisKind::Cosine, frequencies, input_dim: d, kept, mins, spans }
    }

    /// Linear basis: one feature per non-degenerate covariate.
    pub fn linear(x: &Matrix) -> Self {
        SieveBasis { kind: BasisKind::Linear, ..Self::fit(x, 1) }
    }

    pub fn kind(&self) -> BasisKind {
        self.kind
    }

    pub fn frequencies(&self) -> usize {
        self.frequencies
    }

    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    /// Covariates that were dropped for having a constant training value.
    pub fn dropped(&self) -> Vec<usize> {
        (0..self.input_dim).filter(|r| !self.kept.contains(r)).collect()
    }

    /// Number of features: kept dimensions × frequencies.
    pub fn dim(&self) -> usize {
        self.kept.len() * self.frequencies
    }

    /// Writes the features of `w` into `out` (length [`dim`](Self::dim)).
    pub fn fill(&self, w: &[f64], out: &mut [f64]) {
        if self.kind == BasisKind::Linear && self.frequencies > 0 {
            for (slot, &r) in self.kept.iter().enumerate() {
                out[slot] = w[r];
            }
            return;
        }
        let k = self.frequencies;
        for (slot, &r) in self.kept.iter().enumerate() {
            let u = ((w[r] - self.mins[slot]) / self.spans[slot]).clamp(0.0, 1.0);
            for f in 1..=k {
                out[slot * k + f - 1] = (PI * f as f64 * u).cos();
            }
        }
    }

    pub fn features(&self, w: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.dim()];
        self.fill(w, &mut out);
        out
    }

    /// Same basis truncated to the first `k` frequencies (linear bases keep
    /// their single feature per covariate unless `k = 0`).
    pub fn truncated(&self, k: usize) -> Self {
        SieveBasis { frequencies: k.min(self.frequencies), ..self.clone() }
    }
}

/// Fits the cosine basis on the covariates of `data`.
pub fn cosine_basis(data: &crate::data::Dataset, frequencies: usize) -> SieveBasis {
    SieveBasis::fit(data.covariates(), frequencies)
}
