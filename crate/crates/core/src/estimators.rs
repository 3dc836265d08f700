//! Risk estimates and pseudo-outcome constructions. `theta` arguments hold
//! the candidate contrast evaluated at each row's covariates.

use serde::{Deserialize, Serialize};

use crate::crossfit::{NuisanceEstimates, RowNuisance};
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::risk::{ContrastFamily, RiskSpec};
use crate::sieve::DebiasResult;

/// `μ(1,w) − μ(0,w) + (2a − 1)/π(a|w) · (y − μ(a,w))`.
pub fn dr_pseudo_outcome(a: u8, y: f64, r: RowNuisance) -> f64 {
    let sign = if a == 1 { 1.0 } else { -1.0 };
    r.mu1 - r.mu0 + sign / r.pi(a) * (y - r.mu(a))
}

pub fn dr_pseudo_outcomes(data: &Dataset, nuisances: &NuisanceEstimates) -> Vec<f64> {
    (0..data.n()).map(|i| dr_pseudo_outcome(data.a(i), data.y(i), nuisances.row(i))).collect()
}

fn check_len(data: &Dataset, theta: &[f64]) -> Result<()> {
    if theta.len() != data.n() {
        return Err(Error::DimensionMismatch { expected: data.n(), found: theta.len() });
    }
    Ok(())
}

/// One-step loss `L_μ(θ, W_i) + Δ_{π,μ}(O_i; θ)` of every row.
pub fn onestep_losses(spec: &RiskSpec, data: &Dataset, nuisances: &NuisanceEstimates, theta: &[f64]) -> Result<Vec<f64>> {
    check_len(data, theta)?;
    Ok((0..data.n())
        .map(|i| {
            let r = nuisances.row(i);
            let a = data.a(i);
            spec.loss(theta[i], r.mu0, r.mu1) + spec.delta(theta[i], a, data.y(i), r.pi(a), r.mu0, r.mu1)
        })
        .collect())
}

fn mean(v: impl Iterator<Item = f64>, n: usize) -> f64 {
    v.sum::<f64>() / n as f64
}

/// Plug-in risk `(1/n) Σ L_μ(θ, W_i)` at the cross-fitted `μ`.
pub fn plugin_risk(spec: &RiskSpec, data: &Dataset, nuisances: &NuisanceEstimates, theta: &[f64]) -> Result<f64> {
    check_len(data, theta)?;
    Ok(mean((0..data.n()).map(|i| spec.loss(theta[i], nuisances.row(i).mu0, nuisances.row(i).mu1)), data.n()))
}

/// Mean debiasing term `(1/n) Σ Δ_{π,μ}(O_i; θ)`.
pub fn debias_term(spec: &RiskSpec, data: &Dataset, rows: &[RowNuisance], theta: &[f64]) -> Result<f64> {
    check_len(data, theta)?;
    Ok(mean(
        (0..data.n()).map(|i| {
            let r = rows[i];
            let a = data.a(i);
            spec.delta(theta[i], a, data.y(i), r.pi(a), r.mu0, r.mu1)
        }),
        data.n(),
    ))
}

/// One-step risk: plug-in risk plus the mean debiasing term.
pub fn onestep_risk(spec: &RiskSpec, data: &Dataset, nuisances: &NuisanceEstimates, theta: &[f64]) -> Result<f64> {
    Ok(mean(onestep_losses(spec, data, nuisances, theta)?.into_iter(), data.n()))
}

/// Plug-in risk at the debiased regression `μ*`.
pub fn ep_plugin_risk(spec: &RiskSpec, data: &Dataset, debiased: &DebiasResult, theta: &[f64]) -> Result<f64> {
    check_len(data, theta)?;
    Ok(mean((0..data.n()).map(|i| spec.loss(theta[i], debiased.mu_star0[i], debiased.mu_star1[i])), data.n()))
}

/// Nuisance rows with `μ` replaced by `μ*`.
pub fn debiased_rows(nuisances: &NuisanceEstimates, debiased: &DebiasResult) -> Vec<RowNuisance> {
    nuisances
        .rows()
        .iter()
        .enumerate()
        .map(|(i, r)| RowNuisance { pi1: r.pi1, mu0: debiased.mu_star0[i], mu1: debiased.mu_star1[i] })
        .collect()
}

/// Efficient influence function `L_μ(θ,w) + Δ_{π,μ}(w,a,y;θ) − risk_value`.
pub fn eif(spec: &RiskSpec, a: u8, y: f64, theta: f64, r: RowNuisance, risk_value: f64) -> f64 {
    spec.loss(theta, r.mu0, r.mu1) + spec.delta(theta, a, y, r.pi(a), r.mu0, r.mu1) - risk_value
}

/// Second-stage inputs for a weighted regression of a contrast.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PseudoRegression {
    pub family: ContrastFamily,
    pub pseudo_outcome: Vec<f64>,
    pub pseudo_weight: Vec<f64>,
    pub any_negative_weight: bool,
    pub any_outcome_outside_unit: bool,
    pub negative_weight_count: usize,
    pub outside_unit_count: usize,
    /// Rows dropped because their pseudo-weight is exactly zero. Their
    /// outcome is stored as 0 and their weight as 0.
    pub excluded: Vec<usize>,
}

impl PseudoRegression {
    fn from_parts(family: ContrastFamily, parts: impl Iterator<Item = (f64, f64)>) -> Self {
        let mut out = PseudoRegression {
            family,
            pseudo_outcome: Vec::new(),
            pseudo_weight: Vec::new(),
            any_negative_weight: false,
            any_outcome_outside_unit: false,
            negative_weight_count: 0,
            outside_unit_count: 0,
            excluded: Vec::new(),
        };
        for (i, (num, weight)) in parts.enumerate() {
            if weight == 0.0 {
                out.excluded.push(i);
                out.pseudo_outcome.push(0.0);
                out.pseudo_weight.push(0.0);
                continue;
            }
            let outcome = num / weight;
            out.negative_weight_count += usize::from(weight < 0.0);
            out.outside_unit_count += usize::from(!(0.0..=1.0).contains(&outcome));
            out.pseudo_outcome.push(outcome);
            out.pseudo_weight.push(weight);
        }
        if !out.excluded.is_empty() {
            log::warn!("{} rows with zero pseudo-weight excluded", out.excluded.len());
        }
        out.any_negative_weight = out.negative_weight_count > 0;
        out.any_outcome_outside_unit = out.outside_unit_count > 0;
        out
    }

    pub fn len(&self) -> usize {
        self.pseudo_outcome.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pseudo_outcome.is_empty()
    }
}

/// Arm-wise doubly robust estimates `μ̂_s = μ(s,W) + 1{A=s}/π(s|W)(Y − μ(s,W))`.
pub fn arm_dr_estimates(a: u8, y: f64, r: RowNuisance) -> (f64, f64) {
    let adj = |s: u8| r.mu(s) + if a == s { (y - r.mu(s)) / r.pi(s) } else { 0.0 };
    (adj(0), adj(1))
}

/// Doubly robust CRR weights `μ̂_0 + μ̂_1` and outcomes `μ̂_1 / (μ̂_0 + μ̂_1)`.
/// Weights can be negative and outcomes can leave `[0, 1]`.
pub fn crr_dr_pseudo(data: &Dataset, nuisances: &NuisanceEstimates) -> PseudoRegression {
    PseudoRegression::from_parts(
        ContrastFamily::Crr,
        (0..data.n()).map(|i| {
            let (m0, m1) = arm_dr_estimates(data.a(i), data.y(i), nuisances.row(i));
            (m1, m0 + m1)
        }),
    )
}

/// EP CRR weights `μ*_0 + μ*_1` and outcomes `μ*_1 / (μ*_0 + μ*_1)`.
pub fn crr_ep_pseudo(mu_star0: &[f64], mu_star1: &[f64]) -> Result<PseudoRegression> {
    if mu_star0.len() != mu_star1.len() {
        return Err(Error::DimensionMismatch { expected: mu_star0.len(), found: mu_star1.len() });
    }
    if let Some(i) = mu_star0.iter().chain(mu_star1).position(|m| !(*m > 0.0) || !m.is_finite()) {
        let row = i % mu_star0.len().max(1) + 1;
        return Err(Error::InvalidConfig(format!("row {row}: debiased regression must be positive for the CRR")));
    }
    Ok(PseudoRegression::from_parts(ContrastFamily::Crr, mu_star0.iter().zip(mu_star1).map(|(m0, m1)| (*m1, m0 + m1))))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::crossfit::{partition_folds, Clamps};
    use crate::data::Matrix;
    use crate::risk::softplus;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn row(pi1: f64, mu0: f64, mu1: f64) -> RowNuisance {
        RowNuisance { pi1, mu0, mu1 }
    }

    #[test]
    fn dr_examples() {
        assert!((dr_pseudo_outcome(1, 1.0, row(0.5, 0.2, 0.5)) - 1.3).abs() < 1e-15);
        assert!((dr_pseudo_outcome(0, 0.0, row(0.75, 0.5, 0.5)) - 2.0).abs() < 1e-15);
        assert_eq!(dr_pseudo_outcome(1, 0.7, row(0.3, 0.1, 0.7)), 0.7 - 0.1);
    }

    #[test]
    fn crr_pseudo_examples() {
        let n = 1;
        let d = Dataset::new(Matrix::column(vec![0.0]), vec![1.0], vec![0.0]).unwrap();
        let nu = NuisanceEstimates::from_row_values(partition_folds(n, 1, 0).unwrap(), Clamps { eta: 0.01, mu_bounds: None }, &[row(0.2, 0.5, 0.5)]).unwrap();
        let p = crr_dr_pseudo(&d, &nu);
        assert!((p.pseudo_weight[0] + 1.5).abs() < 1e-15);
        assert!(p.any_negative_weight);
        assert!((p.pseudo_weight[0] * p.pseudo_outcome[0] + 2.0).abs() < 1e-15);

        let e = crr_ep_pseudo(&[0.1, 0.2], &[0.3, 0.2]).unwrap();
        assert!((e.pseudo_weight[0] - 0.4).abs() < 1e-15 && (e.pseudo_outcome[0] - 0.75).abs() < 1e-15);
        assert_eq!(e.pseudo_outcome[1], 0.5);
        assert!(!e.any_negative_weight && !e.any_outcome_outside_unit);
        assert!(crr_ep_pseudo(&[0.0], &[0.1]).is_err());
    }

    #[test]
    fn zero_weight_rows_excluded() {
        let d = Dataset::new(Matrix::column(vec![0.0, 1.0]), vec![1.0, 0.0], vec![0.0, 1.0]).unwrap();
        // row 0: μ̂_1 = 0.5 + (0 − 0.5)/0.5 = −0.5, μ̂_0 = 0.5 → weight 0
        let nu = NuisanceEstimates::from_row_values(partition_folds(2, 1, 0).unwrap(), Clamps { eta: 0.01, mu_bounds: None }, &[row(0.5, 0.5, 0.5), row(0.5, 0.5, 0.5)]).unwrap();
        let p = crr_dr_pseudo(&d, &nu);
        assert_eq!(p.excluded, vec![0]);
        assert_eq!(p.pseudo_weight[0], 0.0);
    }

    fn random_problem(n: usize, seed: u64, binary: bool) -> (Dataset, NuisanceEstimates, Vec<f64>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let w: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
        let a: Vec<f64> = (0..n).map(|_| f64::from(rng.random_bool(0.4))).collect();
        let y: Vec<f64> = (0..n).map(|_| if binary { f64::from(rng.random_bool(0.3)) } else { rng.random_range(-2.0..2.0) }).collect();
        let rows: Vec<RowNuisance> = (0..n).map(|_| row(rng.random_range(0.05..0.95), rng.random_range(0.05..0.9), rng.random_range(0.05..0.9))).collect();
        let theta: Vec<f64> = (0..n).map(|_| rng.random_range(-2.0..2.0)).collect();
        let d = Dataset::new(Matrix::column(w), a, y).unwrap();
        let nu = NuisanceEstimates::from_row_values(partition_folds(n, 5, seed).unwrap(), Clamps { eta: 0.01, mu_bounds: None }, &rows).unwrap();
        (d, nu, theta)
    }

    #[test]
    fn onestep_identities() {
        for seed in 0..5 {
            let (d, nu, theta) = random_problem(300, seed, false);
            let chi = dr_pseudo_outcomes(&d, &nu);
            let ls: f64 = (0..300).map(|i| theta[i] * theta[i] - 2.0 * theta[i] * chi[i]).sum::<f64>() / 300.0;
            assert!((onestep_risk(&RiskSpec::cate(), &d, &nu, &theta).unwrap() - ls).abs() <= 1e-10);

            let (d, nu, theta) = random_problem(300, seed, true);
            let eq6: f64 = (0..300)
                .map(|i| {
                    let (m0, m1) = arm_dr_estimates(d.a(i), d.y(i), nu.row(i));
                    (m0 + m1) * softplus(theta[i]) - m1 * theta[i]
                })
                .sum::<f64>()
                / 300.0;
            assert!((onestep_risk(&RiskSpec::crr(), &d, &nu, &theta).unwrap() - eq6).abs() <= 1e-10);
        }
    }

    #[test]
    fn onestep_equals_plugin_at_zero_residual() {
        let (d, nu, theta) = random_problem(100, 9, false);
        let y: Vec<f64> = (0..100).map(|i| nu.row(i).mu(d.a(i))).collect();
        let d = d.with_outcome(y).unwrap();
        for spec in [RiskSpec::cate(), RiskSpec::crr()] {
            assert_eq!(onestep_risk(&spec, &d, &nu, &theta).unwrap(), plugin_risk(&spec, &d, &nu, &theta).unwrap());
        }
    }

    #[test]
    fn eif_cate_identity() {
        let (d, nu, theta) = random_problem(50, 3, false);
        for i in 0..50 {
            let r = nu.row(i);
            let chi = dr_pseudo_outcome(d.a(i), d.y(i), r);
            let v = eif(&RiskSpec::cate(), d.a(i), d.y(i), theta[i], r, 0.3) + 0.3;
            assert!((v - (theta[i] * theta[i] - 2.0 * theta[i] * chi)).abs() <= 1e-10);
        }
    }

    proptest! {
        #[test]
        fn risks_invariant_to_row_order(seed in 0u64..500) {
            use rand::seq::SliceRandom;
            let (d, nu, theta) = random_problem(40, seed, false);
            let mut perm: Vec<usize> = (0..40).collect();
            perm.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
            let dp = Dataset::new(
                d.covariates().select_rows(&perm),
                perm.iter().map(|&i| f64::from(d.a(i))).collect(),
                perm.iter().map(|&i| d.y(i)).collect(),
            ).unwrap();
            let rows: Vec<RowNuisance> = perm.iter().map(|&i| nu.row(i)).collect();
            let nup = NuisanceEstimates::from_row_values(partition_folds(40, 5, 0).unwrap(), nu.clamps(), &rows).unwrap();
            let tp: Vec<f64> = perm.iter().map(|&i| theta[i]).collect();
            let spec = RiskSpec::cate();
            prop_assert!((onestep_risk(&spec, &d, &nu, &theta).unwrap() - onestep_risk(&spec, &dp, &nup, &tp).unwrap()).abs() < 1e-12);
        }

        #[test]
        fn crr_dr_recomposes(seed in 0u64..500) {
            let (d, nu, _) = random_problem(30, seed, true);
            let p = crr_dr_pseudo(&d, &nu);
            for i in 0..30 {
                if p.excluded.contains(&i) { continue; }
                let (_, m1) = arm_dr_estimates(d.a(i), d.y(i), nu.row(i));
                prop_assert!((p.pseudo_weight[i] * p.pseudo_outcome[i] - m1).abs() <= 1e-12 * (1.0 + m1.abs()));
            }
        }

        #[test]
        fn crr_ep_always_valid(m0 in proptest::collection::vec(1e-3f64..1.0, 1..40), scale in 0.01f64..3.0) {
            let m1: Vec<f64> = m0.iter().map(|v| (v * scale).max(1e-3)).collect();
            let p = crr_ep_pseudo(&m0, &m1).unwrap();
            prop_assert!(p.pseudo_weight.iter().all(|w| *w > 0.0));
            prop_assert!(p.pseudo_outcome.iter().all(|o| *o > 0.0 && *o < 1.0));
            prop_assert!(!p.any_negative_weight && !p.any_outcome_outside_unit);
        }
    }
}
