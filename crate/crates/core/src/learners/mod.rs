//! Regression learners used for nuisance estimation, second-stage contrast
//! regression and sieve adjustments.

mod boosting;
pub(crate) mod cv;
mod kernel;
mod knn;
mod linear;

use std::fmt;

use serde::{Deserialize, Serialize};

pub use boosting::{BoostParams, BoostedTrees, Tree, MAX_DEPTH};
pub use cv::{cv_criterion, cv_select};
pub use kernel::KernelModel;
pub use knn::KnnModel;
pub use linear::{fit_logistic_offset, fit_wls_offset, LinearFit, FALLBACK_RIDGE};

use crate::data::Matrix;
use crate::error::{Error, Result};
use crate::risk::expit;
use crate::sieve::SieveBasis;

pub const DEFAULT_RIDGE: f64 = 1e-8;
pub const DEFAULT_ROUNDS: usize = 50;
pub const DEFAULT_LEARNING_RATE: f64 = 0.1;
pub const DEFAULT_MIN_LEAF: usize = 5;

/// Design used by the linear learners. Both include an intercept.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "map", rename_all = "snake_case")]
pub enum FeatureMap {
    /// Intercept plus the raw covariates.
    Linear,
    /// Intercept plus an additive cosine basis with `frequencies` terms per
    /// covariate; a cheap additive-model smoother.
    Cosine { frequencies: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LearnerConfig {
    Wls { features: FeatureMap, ridge: f64 },
    Logistic { features: FeatureMap, ridge: f64 },
    Knn { k: usize },
    Kernel { bandwidth: f64 },
    BoostedStumps { rounds: usize, depth: usize, learning_rate: f64, min_leaf: usize },
}

impl LearnerConfig {
    pub fn wls_linear() -> Self {
        LearnerConfig::Wls { features: FeatureMap::Linear, ridge: DEFAULT_RIDGE }
    }

    pub fn wls_cosine(frequencies: usize) -> Self {
        LearnerConfig::Wls { features: FeatureMap::Cosine { frequencies }, ridge: DEFAULT_RIDGE }
    }

    pub fn logistic_linear() -> Self {
        LearnerConfig::Logistic { features: FeatureMap::Linear, ridge: DEFAULT_RIDGE }
    }

    pub fn logistic_cosine(frequencies: usize) -> Self {
        LearnerConfig::Logistic { features: FeatureMap::Cosine { frequencies }, ridge: DEFAULT_RIDGE }
    }

    pub fn knn(k: usize) -> Self {
        LearnerConfig::Knn { k }
    }

    pub fn kernel(bandwidth: f64) -> Self {
        LearnerConfig::Kernel { bandwidth }
    }

    pub fn boosted(depth: usize) -> Self {
        LearnerConfig::BoostedStumps {
            rounds: DEFAULT_ROUNDS,
            depth,
            learning_rate: DEFAULT_LEARNING_RATE,
            min_leaf: DEFAULT_MIN_LEAF,
        }
    }

    /// Boosted trees over a range of depths, sharing the other defaults.
    pub fn boosted_grid(depths: impl IntoIterator<Item = usize>) -> Vec<Self> {
        depths.into_iter().map(Self::boosted).collect()
    }

    pub fn validate(&self) -> Result<()> {
        match *self {
            LearnerConfig::Wls { ridge, .. } | LearnerConfig::Logistic { ridge, .. } => {
                if !(ridge >= 0.0) || !ridge.is_finite() {
                    return Err(Error::InvalidConfig(format!("ridge must be >= 0, got {ridge}")));
                }
                Ok(())
            }
            LearnerConfig::Knn { k: 0 } => Err(Error::InvalidConfig("k must be at least 1".into())),
            LearnerConfig::Knn { .. } => Ok(()),
            LearnerConfig::Kernel { bandwidth } if !(bandwidth > 0.0) || !bandwidth.is_finite() => {
                Err(Error::InvalidConfig(format!("bandwidth must be positive, got {bandwidth}")))
            }
            LearnerConfig::Kernel { .. } => Ok(()),
            LearnerConfig::BoostedStumps { rounds, depth, learning_rate, min_leaf } => {
                BoostParams { rounds, depth, learning_rate, min_leaf }.validate()
            }
        }
    }

    /// Whether predictions use a logit link.
    pub fn is_logistic(&self) -> bool {
        matches!(self, LearnerConfig::Logistic { .. })
    }
}

impl fmt::Display for LearnerConfig {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let fm = |m: &FeatureMap| match m {
            FeatureMap::Linear => "linear".to_string(),
            FeatureMap::Cosine { frequencies } => format!("cosine{frequencies}"),
        };
        match self {
            LearnerConfig::Wls { features, ridge } => write!(f, "wls[{},ridge={ridge:e}]", fm(features)),
            LearnerConfig::Logistic { features, ridge } => write!(f, "logistic[{},ridge={ridge:e}]", fm(features)),
            LearnerConfig::Knn { k } => write!(f, "knn[k={k}]"),
            LearnerConfig::Kernel { bandwidth } => write!(f, "kernel[h={bandwidth}]"),
            LearnerConfig::BoostedStumps { rounds, depth, learning_rate, min_leaf } => {
                write!(f, "boost[depth={depth},rounds={rounds},lr={learning_rate},min_leaf={min_leaf}]")
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Link {
    Identity,
    Logit,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "map", rename_all = "snake_case")]
enum FittedFeatures {
    Linear,
    Cosine { basis: SieveBasis },
}

impl FittedFeatures {
    fn fit(map: FeatureMap, x: &Matrix) -> Self {
        match map {
            FeatureMap::Linear => FittedFeatures::Linear,
            FeatureMap::Cosine { frequencies } => FittedFeatures::Cosine { basis: SieveBasis::fit(x, frequencies) },
        }
    }

    fn width(&self, d: usize) -> usize {
        1 + match self {
            FittedFeatures::Linear => d,
            FittedFeatures::Cosine { basis } => basis.dim(),
        }
    }

    fn fill(&self, w: &[f64], out: &mut [f64]) {
        out[0] = 1.0;
        match self {
            FittedFeatures::Linear => out[1..].copy_from_slice(w),
            FittedFeatures::Cosine { basis } => basis.fill(w, &mut out[1..]),
        }
    }

    fn design(&self, x: &Matrix) -> Matrix {
        let p = self.width(x.ncols());
        let mut data = vec![0.0; x.nrows() * p];
        for (i, chunk) in data.chunks_mut(p).enumerate() {
            self.fill(x.row(i), chunk);
        }
        Matrix::new(x.nrows(), p, data).expect("design shape")
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "model", rename_all = "snake_case")]
enum Model {
    Linear { features: FittedFeatures, fit: LinearFit, link: Link },
    Knn(KnnModel),
    Kernel(KernelModel),
    Boosted(BoostedTrees),
}

/// A fitted regression function. Immutable; predictions are deterministic.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FittedRegressor {
    input_dim: usize,
    config: LearnerConfig,
    model: Model,
}

impl FittedRegressor {
    pub fn fit(config: &LearnerConfig, x: &Matrix, y: &[f64], weights: Option<&[f64]>) -> Result<Self> {
        config.validate()?;
        let n = x.nrows();
        if n == 0 {
            return Err(Error::EmptyData);
        }
        if y.len() != n {
            return Err(Error::InvalidConfig(format!("{n} rows but {} targets", y.len())));
        }
        if let Some(i) = y.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFiniteValue { row: i + 1, column: "target".into() });
        }
        let ones;
        let w = match weights {
            Some(w) => w,
            None => {
                ones = vec![1.0; n];
                &ones
            }
        };
        if w.len() != n || w.iter().any(|v| !(*v >= 0.0) || !v.is_finite()) {
            return Err(Error::InvalidConfig("weights must be finite, non-negative and one per row".into()));
        }
        let model = match *config {
            LearnerConfig::Wls { features, ridge } => {
                let features = FittedFeatures::fit(features, x);
                let design = features.design(x);
                let fit = linear::wls(&design, y, w, &vec![0.0; n], ridge, 1)?;
                Model::Linear { features, fit, link: Link::Identity }
            }
            LearnerConfig::Logistic { features, ridge } => {
                let features = FittedFeatures::fit(features, x);
                let design = features.design(x);
                let fit = linear::logistic(&design, y, w, &vec![0.0; n], ridge, 1)?;
                Model::Linear { features, fit, link: Link::Logit }
            }
            LearnerConfig::Knn { k } => Model::Knn(KnnModel::fit(x, y, w, k)?),
            LearnerConfig::Kernel { bandwidth } => Model::Kernel(KernelModel::fit(x, y, w, bandwidth)?),
            LearnerConfig::BoostedStumps { rounds, depth, learning_rate, min_leaf } => {
                Model::Boosted(BoostedTrees::fit(x, y, w, BoostParams { rounds, depth, learning_rate, min_leaf })?)
            }
        };
        Ok(FittedRegressor { input_dim: x.ncols(), config: config.clone(), model })
    }

    pub fn config(&self) -> &LearnerConfig {
        &self.config
    }

    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    pub fn link(&self) -> Link {
        match &self.model {
            Model::Linear { link, .. } => *link,
            _ => Link::Identity,
        }
    }

    /// Prediction on the link scale (the linear predictor for logistic fits).
    pub fn predict_link(&self, w: &[f64]) -> f64 {
        match &self.model {
            Model::Linear { features, fit, .. } => {
                let mut row = vec![0.0; features.width(self.input_dim)];
                features.fill(w, &mut row);
                fit.linear_predictor(&row)
            }
            Model::Knn(m) => m.predict(w),
            Model::Kernel(m) => m.predict(w),
            Model::Boosted(m) => m.predict(w),
        }
    }

    /// Prediction on the response scale; logistic fits return a probability.
    pub fn predict(&self, w: &[f64]) -> f64 {
        let eta = self.predict_link(w);
        match self.link() {
            Link::Identity => eta,
            Link::Logit => expit(eta),
        }
    }

    pub fn predict_matrix(&self, x: &Matrix) -> Result<Vec<f64>> {
        self.check_dim(x)?;
        Ok(x.rows().map(|r| self.predict(r)).collect())
    }

    pub fn predict_link_matrix(&self, x: &Matrix) -> Result<Vec<f64>> {
        self.check_dim(x)?;
        Ok(x.rows().map(|r| self.predict_link(r)).collect())
    }

    fn check_dim(&self, x: &Matrix) -> Result<()> {
        if x.nrows() > 0 && x.ncols() != self.input_dim {
            return Err(Error::DimensionMismatch { expected: self.input_dim, found: x.ncols() });
        }
        Ok(())
    }

    /// Boosted model internals, when this is a boosted fit.
    pub fn boosted(&self) -> Option<&BoostedTrees> {
        match &self.model {
            Model::Boosted(b) => Some(b),
            _ => None,
        }
    }
}

/// Fits `config` on `(x, y)` with optional non-negative weights.
pub fn fit(config: &LearnerConfig, x: &Matrix, y: &[f64], weights: Option<&[f64]>) -> Result<FittedRegressor> {
    FittedRegressor::fit(config, x, y, weights)
}

/// Nearest-neighbour regressor; predictions average the `k` nearest targets.
pub fn fit_knn(x: &Matrix, y: &[f64], k: usize) -> Result<FittedRegressor> {
    fit(&LearnerConfig::knn(k), x, y, None)
}

/// Gaussian Nadaraya–Watson smoother.
pub fn fit_kernel(x: &Matrix, y: &[f64], bandwidth: f64) -> Result<FittedRegressor> {
    fit(&LearnerConfig::kernel(bandwidth), x, y, None)
}

pub fn fit_boosted_stumps(x: &Matrix, y: &[f64], weights: &[f64], rounds: usize, depth: usize, learning_rate: f64) -> Result<FittedRegressor> {
    let cfg = LearnerConfig::BoostedStumps { rounds, depth, learning_rate, min_leaf: 1 };
    fit(&cfg, x, y, Some(weights))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn toy() -> (Matrix, Vec<f64>) {
        let xs: Vec<f64> = (0..30).map(|i| ((i * 13) % 30) as f64 / 10.0 - 1.5).collect();
        let x = Matrix::new(15, 2, xs).unwrap();
        let y = (0..15).map(|i| (x.get(i, 0) * 2.0).sin() + x.get(i, 1)).collect();
        (x, y)
    }

    #[test]
    fn all_learners_predict_finite() {
        let (x, y) = toy();
        for cfg in [
            LearnerConfig::wls_linear(),
            LearnerConfig::wls_cosine(3),
            LearnerConfig::knn(3),
            LearnerConfig::kernel(0.5),
            LearnerConfig::boosted(3),
        ] {
            let m = fit(&cfg, &x, &y, None).unwrap();
            assert!(m.predict_matrix(&x).unwrap().iter().all(|v| v.is_finite()), "{cfg}");
        }
        // not separable, so the fitted probabilities stay interior
        let yb: Vec<f64> = (0..y.len()).map(|i| f64::from(i % 3 == 0)).collect();
        let m = fit(&LearnerConfig::logistic_linear(), &x, &yb, None).unwrap();
        assert!(m.predict_matrix(&x).unwrap().iter().all(|p| *p > 0.0 && *p < 1.0));
    }

    #[test]
    fn dimension_mismatch() {
        let (x, y) = toy();
        let m = fit(&LearnerConfig::knn(2), &x, &y, None).unwrap();
        let q = Matrix::column(vec![0.0]);
        assert!(matches!(m.predict_matrix(&q), Err(Error::DimensionMismatch { expected: 2, found: 1 })));
        assert!(m.predict_matrix(&Matrix::zeros(0, 0)).unwrap().is_empty());
    }

    #[test]
    fn serde_round_trip_is_exact() {
        let (x, y) = toy();
        for cfg in [LearnerConfig::wls_cosine(4), LearnerConfig::boosted(4), LearnerConfig::kernel(0.3)] {
            let m = fit(&cfg, &x, &y, None).unwrap();
            let back: FittedRegressor = serde_json::from_str(&serde_json::to_string(&m).unwrap()).unwrap();
            for r in x.rows() {
                assert_eq!(m.predict(r).to_bits(), back.predict(r).to_bits());
            }
        }
    }

    fn permute(x: &Matrix, y: &[f64], perm: &[usize]) -> (Matrix, Vec<f64>) {
        (x.select_rows(perm), perm.iter().map(|&i| y[i]).collect())
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]

        #[test]
        fn predictions_invariant_to_row_order(seed in 0u64..1000) {
            use rand::{seq::SliceRandom, SeedableRng};
            // continuous draws, so there are no exact distance ties for k-NN
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed + 7);
            let x = Matrix::new(25, 2, (0..50).map(|_| rand::Rng::random_range(&mut rng, -1.0..1.0)).collect()).unwrap();
            let y: Vec<f64> = x.rows().map(|r| r[0].sin() + r[1]).collect();
            let mut perm: Vec<usize> = (0..x.nrows()).collect();
            perm.shuffle(&mut rand_chacha::ChaCha8Rng::seed_from_u64(seed));
            let (xp, yp) = permute(&x, &y, &perm);
            for cfg in [LearnerConfig::wls_cosine(2), LearnerConfig::kernel(0.7), LearnerConfig::knn(4), LearnerConfig::boosted(2)] {
                let a = fit(&cfg, &x, &y, None).unwrap();
                let b = fit(&cfg, &xp, &yp, None).unwrap();
                for r in x.rows() {
                    prop_assert!((a.predict(r) - b.predict(r)).abs() < 1e-9, "{}", cfg);
                }
            }
        }

        #[test]
        fn boosting_never_increases_training_sse(seed in 0u64..1000, lr in 0.05f64..=1.0, depth in 1usize..=8) {
            use rand::{Rng, SeedableRng};
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let n = 60;
            let x = Matrix::new(n, 2, (0..2 * n).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap();
            let y: Vec<f64> = (0..n).map(|i| x.get(i, 0).signum() + rng.random_range(-0.5..0.5)).collect();
            let w: Vec<f64> = (0..n).map(|_| rng.random_range(0.1..2.0)).collect();
            let m = fit_boosted_stumps(&x, &y, &w, 20, depth, lr).unwrap();
            let sse = m.boosted().unwrap().train_sse();
            for pair in sse.windows(2) {
                prop_assert!(pair[1] <= pair[0] * (1.0 + 1e-12) + 1e-12);
            }
        }
    }
}
