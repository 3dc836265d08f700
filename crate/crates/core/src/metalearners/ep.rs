use serde::{Deserialize, Serialize};

use crate::crossfit::NuisanceEstimates;
use crate::data::{Dataset, Matrix};
use crate::error::{Error, Result};
use crate::estimators::crr_ep_pseudo;
use crate::learners::{cv::argmin_first, FittedRegressor, LearnerConfig};
use crate::parallel::{map_indices, Execution};
use crate::risk::{ContrastFamily, RiskSpec};
use crate::sieve::{debias_rows, SieveBasis, DebiasMethod, DebiasResult};

use super::{cate_truncation, debias_method_for, probability_to_contrast, ContrastModel, Method, Predictor};

pub const DEFAULT_SIEVE_RIDGE: f64 = 1e-8;
pub const SCORE_WARN: f64 = 1e-4;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpOptions {
    /// Candidate sieve dimensions (cosine frequencies per covariate).
    pub k_grid: Vec<usize>,
    /// Debiasing method; chosen from the risk's outcome range when unset.
    pub method: Option<DebiasMethod>,
    /// Use the halved CATE feature map; defaults to on whenever valid.
    pub simplified: Option<bool>,
    pub ridge: f64,
}

impl Default for EpOptions {
    fn default() -> Self {
        EpOptions { k_grid: (1..=6).collect(), method: None, simplified: None, ridge: DEFAULT_SIEVE_RIDGE }
    }
}

impl EpOptions {
    fn simplified_for(&self, spec: &RiskSpec) -> bool {
        self.simplified.unwrap_or_else(|| spec.supports_simplified_features())
    }
}

/// One cell of the CV-EP criterion table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CvEntry {
    pub k: usize,
    pub learner: String,
    /// `(1/n) Σ_i` one-step loss of the fold-`j(i)`-excluded fit at row `i`.
    pub criterion: f64,
}

struct Stage2Inputs {
    target: Vec<f64>,
    weights: Option<Vec<f64>>,
}

/// Second-stage targets on `rows` from the debiased regression: the
/// pseudo-contrast for the CATE, EP weights and outcomes for the CRR.
fn stage2_inputs(spec: &RiskSpec, deb: &DebiasResult, rows: &[usize]) -> Result<Stage2Inputs> {
    match spec.family {
        ContrastFamily::Cate => Ok(Stage2Inputs { target: rows.iter().map(|&i| deb.mu_star1[i] - deb.mu_star0[i]).collect(), weights: None }),
        ContrastFamily::Crr => {
            let m0: Vec<f64> = rows.iter().map(|&i| deb.mu_star0[i]).collect();
            let m1: Vec<f64> = rows.iter().map(|&i| deb.mu_star1[i]).collect();
            let p = crr_ep_pseudo(&m0, &m1)?;
            Ok(Stage2Inputs { target: p.pseudo_outcome, weights: Some(p.pseudo_weight) })
        }
    }
}

fn predictor_for(family: ContrastFamily, model: FittedRegressor) -> Predictor {
    match family {
        ContrastFamily::Cate => Predictor::Direct { model },
        ContrastFamily::Crr => Predictor::Probability { model },
    }
}

fn contrast_at(family: ContrastFamily, model: &FittedRegressor, w: &[f64], trunc: Option<(f64, f64)>) -> f64 {
    let t = match family {
        ContrastFamily::Cate => model.predict(w),
        ContrastFamily::Crr => probability_to_contrast(model, w),
    };
    trunc.map_or(t, |(lo, hi)| t.clamp(lo, hi))
}

fn check_inputs(data: &Dataset, nuisances: &NuisanceEstimates, spec: &RiskSpec) -> Result<()> {
    if nuisances.rows().len() != data.n() {
        return Err(Error::InvalidConfig(format!("nuisances cover {} rows, data has {}", nuisances.rows().len(), data.n())));
    }
    if spec.family == ContrastFamily::Crr {
        if let Some(i) = data.outcome().iter().position(|y| *y < 0.0) {
            return Err(Error::InvalidConfig(format!("row {}: CRR needs non-negative outcomes", i + 1)));
        }
    }
    Ok(())
}

fn finish(
    method: Method,
    spec: &RiskSpec,
    data: &Dataset,
    deb: &DebiasResult,
    k: usize,
    cfg: &LearnerConfig,
    truncate: bool,
) -> Result<ContrastModel> {
    let all: Vec<usize> = (0..data.n()).collect();
    let inputs = stage2_inputs(spec, deb, &all)?;
    let model = FittedRegressor::fit(cfg, data.covariates(), &inputs.target, inputs.weights.as_deref())?;
    if deb.score_residual > SCORE_WARN {
        log::warn!("score equation residual {:.3e} exceeds {SCORE_WARN:e} at k = {k}", deb.score_residual);
    }
    let mut m = ContrastModel::new(method, spec.family, predictor_for(spec.family, model), cfg.to_string());
    m.k = Some(k);
    m.score_residual = Some(deb.score_residual);
    m.negative_weight_count = inputs.weights.as_ref().map_or(0, |w| w.iter().filter(|x| **x < 0.0).count());
    if spec.family == ContrastFamily::Cate {
        m.truncation = cate_truncation(data, truncate);
    }
    m.metadata.insert("debias_method".into(), deb.method.number().to_string());
    m.metadata.insert("sieve_ridge".into(), format!("{:e}", deb.ridge));
    Ok(m)
}

/// EP-learner at a fixed sieve dimension `k`. With a multi-learner grid the
/// learner is picked by the same cross-validated one-step criterion as
/// [`fit_ep_learner_cv`].
#[allow(clippy::too_many_arguments)]
pub fn fit_ep_learner(
    data: &Dataset,
    nuisances: &NuisanceEstimates,
    spec: &RiskSpec,
    k: usize,
    stage2: &[LearnerConfig],
    opts: &EpOptions,
    truncate: bool,
    exec: Execution,
) -> Result<ContrastModel> {
    check_inputs(data, nuisances, spec)?;
    if stage2.len() > 1 {
        let mut m = fit_ep_learner_cv(data, nuisances, spec, &[k], stage2, opts, truncate, exec)?;
        m.method = Method::Ep;
        return Ok(m);
    }
    let cfg = stage2.first().ok_or_else(|| Error::InvalidConfig("empty second-stage learner grid".into()))?;
    let basis = SieveBasis::fit(data.covariates(), k);
    let all: Vec<usize> = (0..data.n()).collect();
    let deb = debias_rows(data, nuisances, spec, &basis, debias_method_for(opts, spec), opts.simplified_for(spec), opts.ridge, &all)?;
    finish(Method::Ep, spec, data, &deb, k, cfg, truncate)
}

/// Cross-validated EP-learner. For every `k` and fold `j` the sieve
/// adjustment and the second stage are fitted on the rows outside fold `j`;
/// the held-out rows are scored with the one-step loss at the cross-fitted
/// (not debiased) nuisances. The `(k, learner)` pair with the smallest mean
/// loss is refitted on all rows. Ties go to the smaller `k`, then to the
/// earlier learner.
#[allow(clippy::too_many_arguments)]
pub fn fit_ep_learner_cv(
    data: &Dataset,
    nuisances: &NuisanceEstimates,
    spec: &RiskSpec,
    k_grid: &[usize],
    stage2: &[LearnerConfig],
    opts: &EpOptions,
    truncate: bool,
    exec: Execution,
) -> Result<ContrastModel> {
    check_inputs(data, nuisances, spec)?;
    if k_grid.is_empty() {
        return Err(Error::InvalidConfig("k_grid is empty".into()));
    }
    if stage2.is_empty() {
        return Err(Error::InvalidConfig("empty second-stage learner grid".into()));
    }
    let table = cv_ep_criterion(data, nuisances, spec, k_grid, stage2, opts, truncate, exec)?;
    let flat: Vec<f64> = table.iter().map(|e| e.criterion).collect();
    let best = argmin_first(&flat).ok_or_else(|| Error::InvalidConfig("every (k, learner) candidate failed".into()))?;
    let (k, cfg) = (k_grid[best / stage2.len()], &stage2[best % stage2.len()]);
    log::debug!("cv-ep selected k = {k}, learner {cfg}");

    let basis = SieveBasis::fit(data.covariates(), k);
    let all: Vec<usize> = (0..data.n()).collect();
    let deb = debias_rows(data, nuisances, spec, &basis, debias_method_for(opts, spec), opts.simplified_for(spec), opts.ridge, &all)?;
    let mut m = finish(Method::CvEp, spec, data, &deb, k, cfg, truncate)?;
    m.cv_table = table;
    Ok(m)
}

/// The CV-EP criterion for every `(k, learner)` pair, `k`-major.
#[allow(clippy::too_many_arguments)]
pub fn cv_ep_criterion(
    data: &Dataset,
    nuisances: &NuisanceEstimates,
    spec: &RiskSpec,
    k_grid: &[usize],
    stage2: &[LearnerConfig],
    opts: &EpOptions,
    truncate: bool,
    exec: Execution,
) -> Result<Vec<CvEntry>> {
    let folds = nuisances.folds();
    let jf = folds.folds();
    if jf < 2 {
        return Err(Error::BadFoldCount { folds: jf, n: data.n() });
    }
    let method = debias_method_for(opts, spec);
    let simplified = opts.simplified_for(spec);
    let kmax = k_grid.iter().copied().max().unwrap_or(0);
    let basis_full = SieveBasis::fit(data.covariates(), kmax);
    let trunc = if spec.family == ContrastFamily::Cate { cate_truncation(data, truncate) } else { None };

    // held-out one-step loss sums, one vector (per learner) for each (k, fold)
    let cells = map_indices(k_grid.len() * jf, exec, |cell| -> Result<Vec<f64>> {
        let (ki, j) = (cell / jf, cell % jf);
        let train = folds.training(j);
        let held = folds.members(j);
        let basis = basis_full.truncated(k_grid[ki]);
        let deb = debias_rows(data, nuisances, spec, &basis, method, simplified, opts.ridge, &train).map_err(|e| e.in_fold(j + 1))?;
        let inputs = stage2_inputs(spec, &deb, &train)?;
        let xt: Matrix = data.covariates().select_rows(&train);
        Ok(stage2
            .iter()
            .map(|cfg| match FittedRegressor::fit(cfg, &xt, &inputs.target, inputs.weights.as_deref()) {
                Ok(model) => held
                    .iter()
                    .map(|&i| {
                        let theta = contrast_at(spec.family, &model, data.w(i), trunc);
                        let r = nuisances.row(i);
                        let a = data.a(i);
                        spec.loss(theta, r.mu0, r.mu1) + spec.delta(theta, a, data.y(i), r.pi(a), r.mu0, r.mu1)
                    })
                    .sum(),
                Err(e) => {
                    log::warn!("cv-ep: {cfg} failed at k = {}, fold {}: {e}", k_grid[ki], j + 1);
                    f64::INFINITY
                }
            })
            .collect())
    });
    let cells = cells.into_iter().collect::<Result<Vec<_>>>()?;
    let n = data.n() as f64;
    let mut table = Vec::with_capacity(k_grid.len() * stage2.len());
    for (ki, &k) in k_grid.iter().enumerate() {
        for (c, cfg) in stage2.iter().enumerate() {
            let total: f64 = (0..jf).map(|j| cells[ki * jf + j][c]).sum();
            let criterion = if total.is_finite() { total / n } else { f64::INFINITY };
            table.push(CvEntry { k, learner: cfg.to_string(), criterion });
        }
    }
    Ok(table)
}

/// EP debiasing on all rows followed by `neighbours`-nearest-neighbour
/// averaging of the pseudo-contrast `μ*(1, W_i) − μ*(0, W_i)`.
pub fn fit_knn_ep_learner(data: &Dataset, nuisances: &NuisanceEstimates, spec: &RiskSpec, k: usize, neighbours: usize, opts: &EpOptions) -> Result<ContrastModel> {
    if spec.family != ContrastFamily::Cate {
        return Err(Error::Unsupported("the k-NN EP-learner estimates the CATE only".into()));
    }
    check_inputs(data, nuisances, spec)?;
    if neighbours > data.n() {
        return Err(Error::KTooLarge { k: neighbours, n: data.n() });
    }
    let basis = SieveBasis::fit(data.covariates(), k);
    let all: Vec<usize> = (0..data.n()).collect();
    let deb = debias_rows(data, nuisances, spec, &basis, debias_method_for(opts, spec), opts.simplified_for(spec), opts.ridge, &all)?;
    let mut m = finish(Method::KnnEp, spec, data, &deb, k, &LearnerConfig::knn(neighbours), false)?;
    m.truncation = None;
    Ok(m)
}
