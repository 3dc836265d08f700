//! Contrast estimators and the fitted [`ContrastModel`].

mod baseline;
mod ep;

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

pub use baseline::{fit_dr_learner, fit_ipw_elearner, fit_r_learner, fit_t_learner};
pub use ep::{cv_ep_criterion, fit_ep_learner, fit_ep_learner_cv, fit_knn_ep_learner, CvEntry, EpOptions};

use crate::crossfit::{FoldAssignment, NuisanceEstimates};
use crate::data::{Dataset, Matrix};
use crate::error::{Error, Result};
use crate::learners::{cv_criterion, cv::argmin_first, FittedRegressor, LearnerConfig, Link};
use crate::parallel::Execution;
use crate::risk::{logit, ContrastFamily, RiskSpec};
use crate::sieve::DebiasMethod;

/// Probabilities are clipped to `[P_EPS, 1 − P_EPS]` before taking a logit.
pub const P_EPS: f64 = 1e-6;
const MODEL_FORMAT: &str = "eplearner-contrast-model";
const MODEL_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    T,
    Dr,
    R,
    IpwE,
    Ep,
    CvEp,
    KnnEp,
}

impl Method {
    pub const ALL: [Method; 7] = [Method::T, Method::Dr, Method::R, Method::IpwE, Method::Ep, Method::CvEp, Method::KnnEp];

    pub fn name(self) -> &'static str {
        match self {
            Method::T => "t",
            Method::Dr => "dr",
            Method::R => "r",
            Method::IpwE => "ipw_e",
            Method::Ep => "ep",
            Method::CvEp => "cv_ep",
            Method::KnnEp => "knn_ep",
        }
    }

    /// Whether the method can estimate `family`.
    pub fn supports(self, family: ContrastFamily) -> bool {
        match self {
            Method::T | Method::Ep | Method::CvEp => true,
            Method::Dr | Method::R | Method::KnnEp => family == ContrastFamily::Cate,
            Method::IpwE => family == ContrastFamily::Crr,
        }
    }

    /// Like [`Method::supports`], with an error explaining the refusal.
    pub fn check_supports(self, family: ContrastFamily) -> Result<()> {
        if self.supports(family) {
            return Ok(());
        }
        Err(match (self, family) {
            (Method::Dr, ContrastFamily::Crr) => Error::Unsupported("DR CRR estimation unsupported (nonconvex loss); use diagnose".into()),
            _ => Error::Unsupported(format!("method {self} does not estimate the {} contrast", family.name())),
        })
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Method::ALL
            .into_iter()
            .find(|m| m.name() == s.to_ascii_lowercase().replace('-', "_"))
            .ok_or_else(|| Error::InvalidConfig(format!("unknown method `{s}` (expected one of t, dr, r, ipw_e, ep, cv_ep, knn_ep)")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
enum Predictor {
    /// θ(w) is the regression's prediction.
    Direct { model: FittedRegressor },
    /// θ(w) is the logit of a fitted probability.
    Probability { model: FittedRegressor },
    /// θ(w) contrasts two arm regressions.
    Arms { mu0: FittedRegressor, mu1: FittedRegressor, floor: Option<(f64, f64)> },
}

/// A fitted contrast `w ↦ θ̂(w)`. Predictions are deterministic.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContrastModel {
    pub method: Method,
    pub family: ContrastFamily,
    predictor: Predictor,
    /// Second-stage learner actually used.
    pub base_learner: String,
    /// Sieve dimension (frequencies per covariate) for EP variants.
    pub k: Option<usize>,
    pub truncation: Option<(f64, f64)>,
    pub score_residual: Option<f64>,
    /// Rows of the DR or EP pseudo-regression with negative weight.
    pub negative_weight_count: usize,
    /// Cross-validation table for CV-EP, one entry per `(k, learner)`.
    pub cv_table: Vec<CvEntry>,
    pub metadata: BTreeMap<String, String>,
}

#[derive(Serialize, Deserialize)]
struct Envelope {
    format: String,
    version: u32,
    model: ContrastModel,
}

impl ContrastModel {
    fn new(method: Method, family: ContrastFamily, predictor: Predictor, base_learner: String) -> Self {
        ContrastModel {
            method,
            family,
            predictor,
            base_learner,
            k: None,
            truncation: None,
            score_residual: None,
            negative_weight_count: 0,
            cv_table: Vec::new(),
            metadata: BTreeMap::new(),
        }
    }

    pub fn input_dim(&self) -> usize {
        match &self.predictor {
            Predictor::Direct { model } | Predictor::Probability { model } => model.input_dim(),
            Predictor::Arms { mu0, .. } => mu0.input_dim(),
        }
    }

    pub fn predict_one(&self, w: &[f64]) -> f64 {
        let raw = match &self.predictor {
            Predictor::Direct { model } => model.predict(w),
            Predictor::Probability { model } => probability_to_contrast(model, w),
            Predictor::Arms { mu0, mu1, floor } => {
                let (m0, m1) = (mu0.predict(w), mu1.predict(w));
                match self.family {
                    ContrastFamily::Cate => m1 - m0,
                    ContrastFamily::Crr => {
                        let (lo, hi) = floor.unwrap_or((f64::MIN_POSITIVE, f64::INFINITY));
                        m1.clamp(lo, hi).ln() - m0.clamp(lo, hi).ln()
                    }
                }
            }
        };
        match self.truncation {
            Some((lo, hi)) => raw.clamp(lo, hi),
            None => raw,
        }
    }

    pub fn predict_contrast(&self, query: &Matrix) -> Result<Vec<f64>> {
        if query.nrows() == 0 {
            return Ok(Vec::new());
        }
        if query.ncols() != self.input_dim() {
            return Err(Error::DimensionMismatch { expected: self.input_dim(), found: query.ncols() });
        }
        Ok(query.rows().map(|r| self.predict_one(r)).collect())
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(&Envelope { format: MODEL_FORMAT.into(), version: MODEL_VERSION, model: self.clone() })?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let env: Envelope = serde_json::from_str(s)?;
        if env.format != MODEL_FORMAT || env.version != MODEL_VERSION {
            return Err(Error::Unsupported(format!("model file format {} v{}", env.format, env.version)));
        }
        validate_decoded(&env.model)?;
        Ok(env.model)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }
}

fn probability_to_contrast(model: &FittedRegressor, w: &[f64]) -> f64 {
    match model.link() {
        Link::Logit => model.predict_link(w),
        Link::Identity => logit(model.predict(w).clamp(P_EPS, 1.0 - P_EPS)),
    }
}

/// Knobs shared by all estimators. `stage2` is a learner grid; with more
/// than one entry the learner is chosen by cross-validation.
#[derive(Debug, Clone, PartialEq)]
pub struct FitOptions {
    pub stage2: Vec<LearnerConfig>,
    /// Outcome learner for the T-learner's arm regressions.
    pub outcome: LearnerConfig,
    pub ep: EpOptions,
    /// Clip CATE predictions to `[−1, 1]` when outcomes are binary.
    pub truncate: bool,
    /// Neighbours for the k-NN EP-learner.
    pub knn_k: usize,
    pub exec: Execution,
}

impl Default for FitOptions {
    fn default() -> Self {
        FitOptions {
            stage2: LearnerConfig::boosted_grid(1..=8),
            outcome: LearnerConfig::wls_cosine(4),
            ep: EpOptions::default(),
            truncate: true,
            knn_k: 3,
            exec: Execution::default(),
        }
    }
}

/// Fits `method` with shared nuisances.
pub fn fit_method(method: Method, data: &Dataset, nuisances: &NuisanceEstimates, spec: &RiskSpec, opts: &FitOptions) -> Result<ContrastModel> {
    method.check_supports(spec.family)?;
    match method {
        Method::T => fit_t_learner(data, &opts.outcome, spec, opts.truncate),
        Method::Dr => fit_dr_learner(data, nuisances, &opts.stage2, opts.truncate),
        Method::R => fit_r_learner(data, nuisances, &opts.stage2, opts.truncate),
        Method::IpwE => fit_ipw_elearner(data, nuisances, &opts.stage2),
        Method::Ep => {
            let k = *opts.ep.k_grid.last().ok_or_else(|| Error::InvalidConfig("k_grid is empty".into()))?;
            fit_ep_learner(data, nuisances, spec, k, &opts.stage2, &opts.ep, opts.truncate, opts.exec)
        }
        Method::CvEp => fit_ep_learner_cv(data, nuisances, spec, &opts.ep.k_grid, &opts.stage2, &opts.ep, opts.truncate, opts.exec),
        Method::KnnEp => {
            let k = *opts.ep.k_grid.last().ok_or_else(|| Error::InvalidConfig("k_grid is empty".into()))?;
            fit_knn_ep_learner(data, nuisances, spec, k, opts.knn_k, &opts.ep)
        }
    }
}

/// Whether every outcome is 0 or 1.
pub(crate) fn binary_outcomes(data: &Dataset) -> bool {
    data.outcome().iter().all(|&y| y == 0.0 || y == 1.0)
}

pub(crate) fn cate_truncation(data: &Dataset, truncate: bool) -> Option<(f64, f64)> {
    (truncate && binary_outcomes(data)).then_some((-1.0, 1.0))
}

/// Fits the stage-2 learner, choosing among `configs` by weighted squared
/// error over `folds` when there is more than one.
pub(crate) fn fit_stage2(
    configs: &[LearnerConfig],
    x: &Matrix,
    target: &[f64],
    weights: Option<&[f64]>,
    folds: &FoldAssignment,
) -> Result<FittedRegressor> {
    let cfg = match configs.len() {
        0 => return Err(Error::InvalidConfig("empty second-stage learner grid".into())),
        1 => &configs[0],
        _ => {
            let crit = cv_criterion(configs, x, target, weights, folds, Execution::default())?;
            &configs[argmin_first(&crit).ok_or_else(|| Error::InvalidConfig("every second-stage learner failed".into()))?]
        }
    };
    FittedRegressor::fit(cfg, x, target, weights)
}

pub(crate) fn validate_decoded(m: &ContrastModel) -> Result<()> {
    if m.method.supports(m.family) {
        Ok(())
    } else {
        Err(Error::Unsupported(format!("method {} with family {}", m.method, m.family.name())))
    }
}

pub(crate) fn debias_method_for(opts: &EpOptions, spec: &RiskSpec) -> DebiasMethod {
    opts.method.unwrap_or_else(|| DebiasMethod::auto(spec))
}
