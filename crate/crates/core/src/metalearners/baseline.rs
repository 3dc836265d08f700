use crate::crossfit::{Clamps, NuisanceEstimates};
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::estimators::dr_pseudo_outcomes;
use crate::learners::{FittedRegressor, LearnerConfig};
use crate::risk::{ContrastFamily, RiskSpec};

use super::{cate_truncation, fit_stage2, ContrastModel, Method, Predictor};

/// Arm regressions on the full sample; the contrast is their difference
/// (CATE) or log ratio (CRR).
pub fn fit_t_learner(data: &Dataset, out_cfg: &LearnerConfig, spec: &RiskSpec, truncate: bool) -> Result<ContrastModel> {
    let arm = |a: u8| -> Result<FittedRegressor> {
        let idx = data.arm_indices(a);
        if idx.is_empty() {
            return Err(Error::InvalidConfig(format!("no rows with a = {a}")));
        }
        let y: Vec<f64> = idx.iter().map(|&i| data.y(i)).collect();
        FittedRegressor::fit(out_cfg, &data.covariates().select_rows(&idx), &y, None)
    };
    let floor = Clamps::for_spec(spec).mu_bounds;
    let predictor = Predictor::Arms { mu0: arm(0)?, mu1: arm(1)?, floor };
    let mut m = ContrastModel::new(Method::T, spec.family, predictor, out_cfg.to_string());
    if spec.family == ContrastFamily::Cate {
        m.truncation = cate_truncation(data, truncate);
    }
    Ok(m)
}

/// Regression of the doubly robust pseudo-outcome on the covariates.
pub fn fit_dr_learner(data: &Dataset, nuisances: &NuisanceEstimates, stage2: &[LearnerConfig], truncate: bool) -> Result<ContrastModel> {
    let chi = dr_pseudo_outcomes(data, nuisances);
    let model = fit_stage2(stage2, data.covariates(), &chi, None, nuisances.folds())?;
    let mut m = ContrastModel::new(Method::Dr, ContrastFamily::Cate, Predictor::Direct { model: model.clone() }, model.config().to_string());
    m.truncation = cate_truncation(data, truncate);
    Ok(m)
}

/// Residual-on-residual regression with overlap weights `(A − π)²`.
pub fn fit_r_learner(data: &Dataset, nuisances: &NuisanceEstimates, stage2: &[LearnerConfig], truncate: bool) -> Result<ContrastModel> {
    let n = data.n();
    let mut target = Vec::with_capacity(n);
    let mut weights = Vec::with_capacity(n);
    for i in 0..n {
        let r = nuisances.row(i);
        let m = r.pi1 * r.mu1 + (1.0 - r.pi1) * r.mu0;
        let resid_a = f64::from(data.a(i)) - r.pi1;
        target.push((data.y(i) - m) / resid_a);
        weights.push(resid_a * resid_a);
    }
    let model = fit_stage2(stage2, data.covariates(), &target, Some(&weights), nuisances.folds())?;
    let mut m = ContrastModel::new(Method::R, ContrastFamily::Cate, Predictor::Direct { model: model.clone() }, model.config().to_string());
    m.truncation = cate_truncation(data, truncate);
    Ok(m)
}

/// Inverse-probability-weighted CRR: classify `A` with weights
/// `Y / π(A|W)`; the contrast is the fitted log-odds.
pub fn fit_ipw_elearner(data: &Dataset, nuisances: &NuisanceEstimates, stage2: &[LearnerConfig]) -> Result<ContrastModel> {
    if let Some(i) = data.outcome().iter().position(|y| *y < 0.0) {
        return Err(Error::InvalidConfig(format!("row {}: IPW E-learner needs non-negative outcomes", i + 1)));
    }
    let n = data.n();
    let weights: Vec<f64> = (0..n).map(|i| data.y(i) / nuisances.row(i).pi(data.a(i))).collect();
    if weights.iter().all(|w| *w == 0.0) {
        return Err(Error::AllZeroWeights);
    }
    let target = data.treatment_f64();
    let model = fit_stage2(stage2, data.covariates(), &target, Some(&weights), nuisances.folds())?;
    Ok(ContrastModel::new(Method::IpwE, ContrastFamily::Crr, Predictor::Probability { model: model.clone() }, model.config().to_string()))
}
