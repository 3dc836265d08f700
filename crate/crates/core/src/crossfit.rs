//! Fold partitions and cross-fitted propensity and outcome regressions.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::{Dataset, Matrix};
use crate::error::{Error, Result};
use crate::learners::{cv_select, FittedRegressor, LearnerConfig};
use crate::parallel::{map_indices, Execution};
use crate::risk::{ContrastFamily, RiskSpec};

pub const DEFAULT_FOLDS: usize = 10;
pub const DEFAULT_ETA: f64 = 0.01;
pub const DEFAULT_CRR_FLOOR: f64 = 1e-3;

/// Assignment of rows to folds. Folds are numbered from 0 internally.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FoldAssignment {
    folds: usize,
    seed: u64,
    fold_of: Vec<usize>,
}

/// Seeded shuffle followed by contiguous blocks; block sizes differ by at
/// most one.
pub fn partition_folds(n: usize, folds: usize, seed: u64) -> Result<FoldAssignment> {
    if folds == 0 || folds > n {
        return Err(Error::BadFoldCount { folds, n });
    }
    let mut perm: Vec<usize> = (0..n).collect();
    perm.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let mut fold_of = vec![0; n];
    let (base, extra) = (n / folds, n % folds);
    let mut pos = 0;
    for j in 0..folds {
        let size = base + usize::from(j < extra);
        for &i in &perm[pos..pos + size] {
            fold_of[i] = j;
        }
        pos += size;
    }
    Ok(FoldAssignment { folds, seed, fold_of })
}

impl FoldAssignment {
    /// Builds an assignment from explicit 0-based fold labels.
    pub fn from_labels(fold_of: Vec<usize>, folds: usize) -> Result<Self> {
        let n = fold_of.len();
        if folds == 0 || folds > n || fold_of.iter().any(|&j| j >= folds) {
            return Err(Error::BadFoldCount { folds, n });
        }
        let out = FoldAssignment { folds, seed: 0, fold_of };
        if (0..folds).any(|j| out.size(j) == 0) {
            return Err(Error::BadFoldCount { folds, n });
        }
        Ok(out)
    }

    pub fn folds(&self) -> usize {
        self.folds
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn len(&self) -> usize {
        self.fold_of.len()
    }

    pub fn is_empty(&self) -> bool {
        self.fold_of.is_empty()
    }

    pub fn fold_of(&self, i: usize) -> usize {
        self.fold_of[i]
    }

    pub fn labels(&self) -> &[usize] {
        &self.fold_of
    }

    pub fn size(&self, j: usize) -> usize {
        self.fold_of.iter().filter(|&&f| f == j).count()
    }

    /// Rows in fold `j`, ascending.
    pub fn members(&self, j: usize) -> Vec<usize> {
        (0..self.len()).filter(|&i| self.fold_of[i] == j).collect()
    }

    /// Rows outside fold `j`, ascending.
    pub fn training(&self, j: usize) -> Vec<usize> {
        (0..self.len()).filter(|&i| self.fold_of[i] != j).collect()
    }

    /// Restriction to `rows`, which keep their labels. Used to cross-fit
    /// inside a training split.
    pub fn restrict(&self, rows: &[usize]) -> Vec<usize> {
        rows.iter().map(|&i| self.fold_of[i]).collect()
    }
}

/// Nuisance values at one observation: `pi1 = π(1|w)`, `mu0`, `mu1`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RowNuisance {
    pub pi1: f64,
    pub mu0: f64,
    pub mu1: f64,
}

impl RowNuisance {
    pub fn pi(&self, a: u8) -> f64 {
        if a == 1 {
            self.pi1
        } else {
            1.0 - self.pi1
        }
    }

    pub fn mu(&self, a: u8) -> f64 {
        if a == 1 {
            self.mu1
        } else {
            self.mu0
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Clamps {
    pub eta: f64,
    /// Bounds for outcome regressions; set in CRR mode.
    pub mu_bounds: Option<(f64, f64)>,
}

impl Clamps {
    pub fn for_spec(spec: &RiskSpec) -> Self {
        let mu_bounds = match spec.family {
            ContrastFamily::Cate => None,
            ContrastFamily::Crr => {
                let hi = spec.outcome_range.map_or(f64::INFINITY, |(_, hi)| hi);
                Some((DEFAULT_CRR_FLOOR, hi.max(DEFAULT_CRR_FLOOR)))
            }
        };
        Clamps { eta: DEFAULT_ETA, mu_bounds }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.eta > 0.0 && self.eta < 0.5) {
            return Err(Error::InvalidConfig(format!("propensity clamp eta must lie in (0, 0.5), got {}", self.eta)));
        }
        if let Some((lo, hi)) = self.mu_bounds {
            if !(lo > 0.0 && lo <= hi) {
                return Err(Error::InvalidConfig(format!("outcome clamp [{lo}, {hi}] must be positive and ordered")));
            }
        }
        Ok(())
    }

    pub fn apply(&self, pi1: f64, mu0: f64, mu1: f64) -> RowNuisance {
        let pi1 = pi1.clamp(self.eta, 1.0 - self.eta);
        let (mu0, mu1) = match self.mu_bounds {
            Some((lo, hi)) => (mu0.clamp(lo, hi), mu1.clamp(lo, hi)),
            None => (mu0, mu1),
        };
        RowNuisance { pi1, mu0, mu1 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FoldModels {
    pub propensity: FittedRegressor,
    pub outcome0: FittedRegressor,
    pub outcome1: FittedRegressor,
}

/// Cross-fitted nuisances with the out-of-fold prediction for every row
/// already evaluated and clamped.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NuisanceEstimates {
    folds: FoldAssignment,
    clamps: Clamps,
    models: Option<Vec<FoldModels>>,
    rows: Vec<RowNuisance>,
}

impl NuisanceEstimates {
    /// Wraps known nuisance values (for example the true ones), clamped.
    pub fn from_row_values(folds: FoldAssignment, clamps: Clamps, rows: &[RowNuisance]) -> Result<Self> {
        if rows.len() != folds.len() {
            return Err(Error::InvalidConfig(format!("{} nuisance rows for {} observations", rows.len(), folds.len())));
        }
        let rows = rows.iter().map(|r| clamps.apply(r.pi1, r.mu0, r.mu1)).collect();
        Ok(NuisanceEstimates { folds, clamps, models: None, rows })
    }

    pub fn folds(&self) -> &FoldAssignment {
        &self.folds
    }

    pub fn clamps(&self) -> Clamps {
        self.clamps
    }

    pub fn rows(&self) -> &[RowNuisance] {
        &self.rows
    }

    pub fn row(&self, i: usize) -> RowNuisance {
        self.rows[i]
    }

    pub fn models(&self) -> Option<&[FoldModels]> {
        self.models.as_deref()
    }

    /// Clamped predictions of the fold-`j` nuisances at `w`; `None` for
    /// nuisances supplied as row values.
    pub fn predict_fold(&self, j: usize, w: &[f64]) -> Option<RowNuisance> {
        let m = &self.models.as_ref()?[j];
        Some(self.clamps.apply(m.propensity.predict(w), m.outcome0.predict(w), m.outcome1.predict(w)))
    }

    /// Same nuisances with different row values (used for misspecification
    /// experiments).
    /// Re-evaluates the fold models at the rows of `data` under different
    /// clamps.
    pub fn with_clamps(&self, data: &Dataset, clamps: Clamps) -> Result<Self> {
        clamps.validate()?;
        let models = self.models.as_ref().ok_or_else(|| Error::Unsupported("re-clamping needs fitted fold models".into()))?;
        if data.n() != self.rows.len() {
            return Err(Error::InvalidConfig(format!("nuisances cover {} rows, data has {}", self.rows.len(), data.n())));
        }
        let rows = (0..data.n())
            .map(|i| {
                let m = &models[self.folds.fold_of(i)];
                let w = data.w(i);
                clamps.apply(m.propensity.predict(w), m.outcome0.predict(w), m.outcome1.predict(w))
            })
            .collect();
        Ok(NuisanceEstimates { folds: self.folds.clone(), clamps, models: self.models.clone(), rows })
    }

    pub fn with_rows(&self, rows: Vec<RowNuisance>) -> Self {
        NuisanceEstimates { rows, models: None, ..self.clone() }
    }
}

fn fit_fold(data: &Dataset, train: &[usize], prop_cfg: &LearnerConfig, out_cfg: &LearnerConfig) -> Result<FoldModels> {
    let x = data.covariates();
    let xt = x.select_rows(train);
    let at: Vec<f64> = train.iter().map(|&i| f64::from(data.a(i))).collect();
    let propensity = FittedRegressor::fit(prop_cfg, &xt, &at, None)?;
    let arm = |a: u8| -> Result<FittedRegressor> {
        let idx: Vec<usize> = train.iter().copied().filter(|&i| data.a(i) == a).collect();
        if idx.is_empty() {
            return Err(Error::InvalidConfig(format!("no training rows with a = {a}")));
        }
        let xa: Matrix = x.select_rows(&idx);
        let ya: Vec<f64> = idx.iter().map(|&i| data.y(i)).collect();
        FittedRegressor::fit(out_cfg, &xa, &ya, None)
    };
    Ok(FoldModels { propensity, outcome0: arm(0)?, outcome1: arm(1)? })
}

/// Cross-fits `π(1|w)` by regressing `A` on `W` and `μ(a, w)` by one
/// regression of `Y` on `W` per arm, each on the rows outside fold `j`.
pub fn fit_nuisances(data: &Dataset, folds: &FoldAssignment, prop_cfg: &LearnerConfig, out_cfg: &LearnerConfig, spec: &RiskSpec) -> Result<NuisanceEstimates> {
    fit_nuisances_with(data, folds, prop_cfg, out_cfg, spec, Execution::default())
}

pub fn fit_nuisances_with(
    data: &Dataset,
    folds: &FoldAssignment,
    prop_cfg: &LearnerConfig,
    out_cfg: &LearnerConfig,
    spec: &RiskSpec,
    exec: Execution,
) -> Result<NuisanceEstimates> {
    if folds.len() != data.n() {
        return Err(Error::InvalidConfig(format!("fold assignment covers {} rows, data has {}", folds.len(), data.n())));
    }
    if out_cfg.is_logistic() {
        if let Some(i) = data.outcome().iter().position(|y| !(0.0..=1.0).contains(y)) {
            return Err(Error::InvalidConfig(format!("row {}: logistic outcome learner needs y in [0, 1]", i + 1)));
        }
    }
    let clamps = Clamps::for_spec(spec);
    let fits = map_indices(folds.folds(), exec, |j| fit_fold(data, &folds.training(j), prop_cfg, out_cfg).map_err(|e| e.in_fold(j + 1)));
    let models = fits.into_iter().collect::<Result<Vec<_>>>()?;
    let rows = (0..data.n())
        .map(|i| {
            let m = &models[folds.fold_of(i)];
            let w = data.w(i);
            clamps.apply(m.propensity.predict(w), m.outcome0.predict(w), m.outcome1.predict(w))
        })
        .collect();
    Ok(NuisanceEstimates { folds: folds.clone(), clamps, models: Some(models), rows })
}

/// Learner libraries for the nuisances; each is reduced to one config by
/// cross-validation on the full sample before cross-fitting.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NuisanceLibrary {
    pub propensity: Vec<LearnerConfig>,
    pub outcome: Vec<LearnerConfig>,
}

impl NuisanceLibrary {
    pub fn single(propensity: LearnerConfig, outcome: LearnerConfig) -> Self {
        NuisanceLibrary { propensity: vec![propensity], outcome: vec![outcome] }
    }

    /// Picks one propensity and one outcome learner. The outcome learner is
    /// scored on both arms pooled, with the arm as an extra covariate.
    pub fn select(&self, data: &Dataset, folds: usize, seed: u64) -> Result<(LearnerConfig, LearnerConfig)> {
        let x = data.covariates();
        let prop = cv_select(&self.propensity, x, &data.treatment_f64(), None, folds, seed)?;
        let out = if self.outcome.len() == 1 {
            self.outcome[0].clone()
        } else {
            // score per arm and sum, so a config must work on both
            let mut total = vec![0.0; self.outcome.len()];
            for a in [0u8, 1] {
                let idx = data.arm_indices(a);
                let xa = x.select_rows(&idx);
                let ya: Vec<f64> = idx.iter().map(|&i| data.y(i)).collect();
                let assignment = partition_folds(idx.len(), folds.min(idx.len()), seed ^ (a as u64 + 1))?;
                let crit = crate::learners::cv_criterion(&self.outcome, &xa, &ya, None, &assignment, Execution::default())?;
                for (t, c) in total.iter_mut().zip(crit) {
                    *t += c * idx.len() as f64;
                }
            }
            let best = crate::learners::cv::argmin_first(&total).ok_or_else(|| Error::InvalidConfig("every outcome learner failed".into()))?;
            self.outcome[best].clone()
        };
        Ok((prop, out))
    }
}
