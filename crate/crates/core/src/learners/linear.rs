//! Weighted least squares and weighted logistic regression, both with offsets
//! and an optional ridge penalty.
//!
//! Both solvers factor the square-root-weighted design (augmented with
//! `sqrt(λ) I` rows when λ > 0) by Householder QR instead of forming the
//! normal equations, which keeps the score equations accurate to near machine
//! precision.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::data::Matrix;
use crate::error::{Error, Result};
use crate::risk::expit;

pub const IRLS_MAX_ITER: usize = 100;
pub const IRLS_DEVIANCE_TOL: f64 = 1e-10;
pub const IRLS_GRADIENT_TOL: f64 = 1e-6;
pub const WORKING_WEIGHT_FLOOR: f64 = 1e-10;
pub const FALLBACK_RIDGE: f64 = 1e-8;
const RANK_TOL: f64 = 1e-11;
/// A linear predictor this large means fitted probabilities are numerically 0
/// or 1: treat it as quasi-separation.
const SEPARATION_ETA: f64 = 30.0;

/// Coefficients of a linear predictor `offset + x·β`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearFit {
    pub beta: Vec<f64>,
    /// Ridge penalty actually used (may differ from the request after the
    /// logistic separation fallback).
    pub ridge: f64,
    pub iterations: usize,
}

impl LinearFit {
    #[inline]
    pub fn linear_predictor(&self, x: &[f64]) -> f64 {
        dot(x, &self.beta)
    }
}

fn check_inputs(x: &Matrix, y: &[f64], weights: &[f64], offset: &[f64], ridge: f64) -> Result<()> {
    let n = x.nrows();
    if n == 0 {
        return Err(Error::EmptyData);
    }
    if y.len() != n || weights.len() != n || offset.len() != n {
        return Err(Error::InvalidConfig(format!(
            "design has {n} rows but y/weights/offset have {}/{}/{}",
            y.len(),
            weights.len(),
            offset.len()
        )));
    }
    if !(ridge >= 0.0) || !ridge.is_finite() {
        return Err(Error::InvalidConfig(format!("ridge penalty must be >= 0, got {ridge}")));
    }
    if weights.iter().any(|w| !(*w >= 0.0) || !w.is_finite()) {
        return Err(Error::InvalidConfig("weights must be finite and non-negative".into()));
    }
    if weights.iter().all(|&w| w == 0.0) {
        return Err(Error::AllZeroWeights);
    }
    Ok(())
}

/// Least-squares solve of `[diag(s) X; sqrt(λ) I] β ≈ [rhs; ridge_rhs]`.
/// Columns before `free` carry no penalty.
fn solve_scaled(x: &Matrix, scale: &[f64], rhs: &[f64], ridge: f64, ridge_rhs: Option<&[f64]>, free: usize) -> Result<Vec<f64>> {
    let n = x.nrows();
    let p = x.ncols();
    if p == 0 {
        return Ok(Vec::new());
    }
    let extra = if ridge > 0.0 { p - free.min(p) } else { 0 };
    let rows = n + extra;
    if rows < p {
        return Err(Error::SingularDesign { rank: rows, cols: p });
    }
    let sr = ridge.sqrt();
    let a = DMatrix::from_fn(rows, p, |i, j| {
        if i < n {
            scale[i] * x.get(i, j)
        } else if i - n + free == j {
            sr
        } else {
            0.0
        }
    });
    let mut b = DVector::from_fn(rows, |i, _| {
        if i < n {
            rhs[i]
        } else {
            ridge_rhs.map_or(0.0, |r| r[i - n + free])
        }
    });
    let qr = a.qr();
    let r = qr.r();
    let max_diag = (0..p).map(|j| r[(j, j)].abs()).fold(0.0, f64::max);
    let rank = (0..p).filter(|&j| r[(j, j)].abs() > RANK_TOL * max_diag.max(f64::MIN_POSITIVE)).count();
    if rank < p {
        return Err(Error::SingularDesign { rank, cols: p });
    }
    qr.q_tr_mul(&mut b);
    let rhs_top = b.rows(0, p).into_owned();
    let sol = r
        .solve_upper_triangular(&rhs_top)
        .ok_or(Error::SingularDesign { rank, cols: p })?;
    Ok(sol.iter().copied().collect())
}

/// β minimising `Σ w_i (y_i − offset_i − x_i·β)² + λ‖β‖²`.
pub fn fit_wls_offset(x: &Matrix, y: &[f64], weights: &[f64], offset: &[f64], ridge: f64) -> Result<LinearFit> {
    wls(x, y, weights, offset, ridge, 0)
}

/// As [`fit_wls_offset`] with the first `free` coefficients unpenalised.
pub(crate) fn wls(x: &Matrix, y: &[f64], weights: &[f64], offset: &[f64], ridge: f64, free: usize) -> Result<LinearFit> {
    check_inputs(x, y, weights, offset, ridge)?;
    let scale: Vec<f64> = weights.iter().map(|w| w.sqrt()).collect();
    let rhs: Vec<f64> = (0..x.nrows()).map(|i| scale[i] * (y[i] - offset[i])).collect();
    let beta = solve_scaled(x, &scale, &rhs, ridge, None, free)?;
    Ok(LinearFit { beta, ridge, iterations: 1 })
}

fn penalized_deviance(y: &[f64], w: &[f64], eta: &[f64], beta: &[f64], ridge: f64, free: usize) -> f64 {
    let mut dev = 0.0;
    for i in 0..y.len() {
        if w[i] == 0.0 {
            continue;
        }
        // -2 × Bernoulli log-likelihood written with log(1+e^η) for stability
        dev += 2.0 * w[i] * (crate::risk::softplus(eta[i]) - y[i] * eta[i]);
    }
    dev + ridge * beta[free.min(beta.len())..].iter().map(|b| b * b).sum::<f64>()
}

fn irls(x: &Matrix, y: &[f64], weights: &[f64], offset: &[f64], ridge: f64, free: usize) -> Result<LinearFit> {
    let n = x.nrows();
    let p = x.ncols();
    let mut beta = vec![0.0; p];
    let mut eta: Vec<f64> = offset.to_vec();
    let mut dev = penalized_deviance(y, weights, &eta, &beta, ridge, free);
    let gradient = |eta: &[f64], beta: &[f64]| -> Vec<f64> {
        let mut g: Vec<f64> = beta.iter().enumerate().map(|(j, b)| if j < free { 0.0 } else { -ridge * b }).collect();
        for i in 0..n {
            let r = weights[i] * (y[i] - expit(eta[i]));
            if r != 0.0 {
                for (gj, xij) in g.iter_mut().zip(x.row(i)) {
                    *gj += r * xij;
                }
            }
        }
        g
    };
    let mut grad = gradient(&eta, &beta);
    let mut gnorm = grad.iter().fold(0.0f64, |m, g| m.max(g.abs()));
    if p == 0 || gnorm < IRLS_GRADIENT_TOL {
        return Ok(LinearFit { beta, ridge, iterations: 0 });
    }
    for iter in 1..=IRLS_MAX_ITER {
        let mut scale = vec![0.0; n];
        let mut rhs = vec![0.0; n];
        for i in 0..n {
            let mu = expit(eta[i]);
            let v = (mu * (1.0 - mu)).max(WORKING_WEIGHT_FLOOR);
            let s = (weights[i] * v).sqrt();
            scale[i] = s;
            rhs[i] = if s > 0.0 { weights[i] * (y[i] - mu) / s } else { 0.0 };
        }
        let ridge_rhs: Vec<f64> = beta.iter().map(|b| -ridge.sqrt() * b).collect();
        let step = solve_scaled(x, &scale, &rhs, ridge, Some(&ridge_rhs), free)?;

        let mut t = 1.0;
        let mut accepted = None;
        for _ in 0..40 {
            let cand: Vec<f64> = beta.iter().zip(&step).map(|(b, s)| b + t * s).collect();
            let cand_eta: Vec<f64> = (0..n).map(|i| offset[i] + dot(x.row(i), &cand)).collect();
            let cand_dev = penalized_deviance(y, weights, &cand_eta, &cand, ridge, free);
            if cand_dev.is_finite() && cand_dev <= dev + 1e-12 * dev.abs().max(1.0) {
                accepted = Some((cand, cand_eta, cand_dev));
                break;
            }
            t *= 0.5;
        }
        let Some((new_beta, new_eta, new_dev)) = accepted else {
            return Err(Error::NoConvergence { iterations: iter, gradient_norm: gnorm });
        };
        let change = (dev - new_dev).abs();
        beta = new_beta;
        eta = new_eta;
        dev = new_dev;
        grad = gradient(&eta, &beta);
        gnorm = grad.iter().fold(0.0f64, |m, g| m.max(g.abs()));
        if change < IRLS_DEVIANCE_TOL * dev.abs().max(1.0) && gnorm < IRLS_GRADIENT_TOL {
            return Ok(LinearFit { beta, ridge, iterations: iter });
        }
    }
    Err(Error::NoConvergence { iterations: IRLS_MAX_ITER, gradient_norm: gnorm })
}

#[inline]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(u, v)| u * v).sum()
}

/// Weighted Bernoulli quasi-likelihood fit with linear predictor
/// `offset + x·β`, by IRLS. Fractional outcomes in `[0, 1]` are allowed.
///
/// With `ridge = 0`, failures to converge and quasi-separated data are refit
/// with a `1e-8` ridge penalty.
pub fn fit_logistic_offset(x: &Matrix, y: &[f64], weights: &[f64], offset: &[f64], ridge: f64) -> Result<LinearFit> {
    logistic(x, y, weights, offset, ridge, 0)
}

/// As [`fit_logistic_offset`] with the first `free` coefficients unpenalised.
pub(crate) fn logistic(x: &Matrix, y: &[f64], weights: &[f64], offset: &[f64], ridge: f64, free: usize) -> Result<LinearFit> {
    check_inputs(x, y, weights, offset, ridge)?;
    if let Some(i) = y.iter().position(|v| !(0.0..=1.0).contains(v)) {
        return Err(Error::InvalidConfig(format!(
            "logistic regression needs outcomes in [0,1]; row {} has {}",
            i + 1,
            y[i]
        )));
    }
    match irls(x, y, weights, offset, ridge, free) {
        Ok(fit) if ridge == 0.0 && separated(x, &fit) => {
            log::debug!("quasi-separation detected, refitting with ridge {FALLBACK_RIDGE}");
            irls(x, y, weights, offset, FALLBACK_RIDGE, free)
        }
        Ok(fit) => Ok(fit),
        Err(Error::NoConvergence { .. } | Error::SingularDesign { .. }) if ridge == 0.0 => {
            log::debug!("IRLS failed without penalty, refitting with ridge {FALLBACK_RIDGE}");
            irls(x, y, weights, offset, FALLBACK_RIDGE, free)
        }
        Err(e) => Err(e),
    }
}

fn separated(x: &Matrix, fit: &LinearFit) -> bool {
    x.rows().any(|r| fit.linear_predictor(r).abs() > SEPARATION_ETA)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::risk::logit;

    fn ones(n: usize) -> Vec<f64> {
        vec![1.0; n]
    }

    #[test]
    fn wls_hand_example() {
        let x = Matrix::column(vec![1.0, 2.0, 3.0]);
        let fit = fit_wls_offset(&x, &[2.0, 4.0, 6.0], &ones(3), &[0.0; 3], 0.0).unwrap();
        assert!((fit.beta[0] - 2.0).abs() < 1e-14);
    }

    #[test]
    fn wls_zero_residual_and_weight_scaling() {
        let x = Matrix::new(4, 2, vec![1.0, 0.5, 1.0, -1.0, 1.0, 2.0, 1.0, 0.0]).unwrap();
        let off = [0.3, -0.2, 1.1, 0.0];
        let fit = fit_wls_offset(&x, &off, &ones(4), &off, 0.0).unwrap();
        assert!(fit.beta.iter().all(|b| b.abs() < 1e-14));

        let y = [1.0, 2.0, -1.0, 0.5];
        let w = [0.5, 2.0, 1.0, 3.0];
        let w7: Vec<f64> = w.iter().map(|v| 7.0 * v).collect();
        let a = fit_wls_offset(&x, &y, &w, &off, 0.0).unwrap();
        let b = fit_wls_offset(&x, &y, &w7, &off, 0.0).unwrap();
        for (u, v) in a.beta.iter().zip(&b.beta) {
            assert!((u - v).abs() < 1e-12);
        }
    }

    #[test]
    fn wls_singular_only_without_ridge() {
        let x = Matrix::new(3, 2, vec![1.0, 2.0, 2.0, 4.0, 3.0, 6.0]).unwrap();
        let y = [1.0, 2.0, 3.0];
        assert!(matches!(fit_wls_offset(&x, &y, &ones(3), &[0.0; 3], 0.0), Err(Error::SingularDesign { .. })));
        assert!(fit_wls_offset(&x, &y, &ones(3), &[0.0; 3], 1e-8).is_ok());
        assert!(matches!(fit_wls_offset(&x, &y, &[0.0; 3], &[0.0; 3], 0.0), Err(Error::AllZeroWeights)));
    }

    #[test]
    fn logistic_offset_absorbs_signal() {
        let x = Matrix::new(5, 2, vec![1.0, 0.1, 1.0, -0.4, 1.0, 0.9, 1.0, 0.3, 1.0, -1.2]).unwrap();
        let off = [0.2, -1.0, 0.7, 1.5, -0.3];
        let y: Vec<f64> = off.iter().map(|&o| expit(o)).collect();
        let fit = fit_logistic_offset(&x, &y, &ones(5), &off, 0.0).unwrap();
        assert!(fit.beta.iter().all(|b| b.abs() < 1e-12), "{:?}", fit.beta);
    }

    #[test]
    fn logistic_intercept_only_matches_logit_mean() {
        let y = [1.0, 0.0, 0.0, 1.0, 1.0, 0.25, 0.0];
        let x = Matrix::column(ones(y.len()));
        let fit = fit_logistic_offset(&x, &y, &ones(y.len()), &vec![0.0; y.len()], 0.0).unwrap();
        let mean = y.iter().sum::<f64>() / y.len() as f64;
        assert!((fit.beta[0] - logit(mean)).abs() < 1e-9);
    }

    #[test]
    fn logistic_separated_is_finite() {
        let xs = [-2.0, -1.0, -0.5, 0.5, 1.0, 2.0];
        let y = [0.0, 0.0, 0.0, 1.0, 1.0, 1.0];
        let x = Matrix::new(6, 2, xs.iter().flat_map(|&v| [1.0, v]).collect()).unwrap();
        let fit = fit_logistic_offset(&x, &y, &ones(6), &[0.0; 6], 0.0).unwrap();
        assert!(fit.beta.iter().all(|b| b.is_finite()));
        assert_eq!(fit.ridge, FALLBACK_RIDGE);
    }

    #[test]
    fn logistic_rejects_out_of_range_outcome() {
        let x = Matrix::column(ones(2));
        assert!(fit_logistic_offset(&x, &[0.5, 1.5], &ones(2), &[0.0; 2], 0.0).is_err());
    }
}
