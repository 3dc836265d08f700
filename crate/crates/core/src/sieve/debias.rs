//! Sieve adjustment of a cross-fitted outcome regression so that the
//! weighted score equation over the cosine span holds exactly.
//!
//! One coefficient vector is fitted on the pooled rows (all folds together).
//! Every row keeps its own out-of-fold `μ_{j(i)}` as the offset.

use serde::{Deserialize, Serialize};

use crate::crossfit::NuisanceEstimates;
use crate::data::{Dataset, Matrix};
use crate::error::{Error, Result};
use crate::learners::{fit_logistic_offset, fit_wls_offset};
use crate::risk::{expit, logit, RiskSpec, Term, TERMS};

use super::SieveBasis;

/// Offsets on the logit scale are computed from `μ` clipped to
/// `[OFFSET_EPS, 1 − OFFSET_EPS]`.
pub const OFFSET_EPS: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DebiasMethod {
    /// Logistic regression with logit offset; outcomes in `[0, 1]`.
    Logistic = 1,
    /// Linear regression with identity offset.
    Linear = 2,
    /// Logistic regression after mapping `[â, b̂]` onto `[0, 1]`.
    BoundPreserving = 3,
}

impl DebiasMethod {
    pub fn number(self) -> u8 {
        self as u8
    }

    pub fn from_number(m: u8) -> Result<Self> {
        match m {
            1 => Ok(DebiasMethod::Logistic),
            2 => Ok(DebiasMethod::Linear),
            3 => Ok(DebiasMethod::BoundPreserving),
            _ => Err(Error::InvalidConfig(format!("debiasing method must be 1, 2 or 3, got {m}"))),
        }
    }

    /// Logistic when the declared outcome range is `[0, 1]`, linear otherwise.
    pub fn auto(spec: &RiskSpec) -> Self {
        match spec.outcome_range {
            Some((lo, hi)) if lo == 0.0 && hi == 1.0 => DebiasMethod::Logistic,
            _ => DebiasMethod::Linear,
        }
    }
}

/// The data-dependent feature map `φ̂(a, w)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DebiasFeatures {
    basis: SieveBasis,
    spec: RiskSpec,
    simplified: bool,
    /// Terms whose `H_m` block is not identically zero.
    blocks: Vec<Term>,
}

impl DebiasFeatures {
    pub fn new(spec: &RiskSpec, basis: &SieveBasis, simplified: bool) -> Result<Self> {
        if simplified && !spec.supports_simplified_features() {
            return Err(Error::Unsupported(format!("simplified sieve features need h1 = h2 ({} risk)", spec.family.name())));
        }
        let blocks = TERMS.iter().copied().filter(|&m| !spec.g_is_constant(m)).collect();
        Ok(DebiasFeatures { basis: basis.clone(), spec: *spec, simplified, blocks })
    }

    pub fn basis(&self) -> &SieveBasis {
        &self.basis
    }

    pub fn simplified(&self) -> bool {
        self.simplified
    }

    pub fn dim(&self) -> usize {
        if self.simplified {
            self.basis.dim()
        } else {
            self.blocks.len() * self.basis.dim()
        }
    }

    /// Writes `φ̂(a, w)` given the initial regression value `mu_a = μ(a, w)`.
    pub fn fill(&self, a: u8, w: &[f64], mu_a: f64, out: &mut [f64]) {
        let q = self.basis.dim();
        self.basis.fill(w, &mut out[..q]);
        if self.simplified {
            let s = TERMS.iter().map(|&m| self.spec.big_h(m, a, mu_a)).sum::<f64>();
            out[..q].iter_mut().for_each(|v| *v *= s);
            return;
        }
        for b in (1..self.blocks.len()).rev() {
            out.copy_within(0..q, b * q);
        }
        for (b, &m) in self.blocks.iter().enumerate() {
            let h = self.spec.big_h(m, a, mu_a);
            out[b * q..(b + 1) * q].iter_mut().for_each(|v| *v *= h);
        }
    }

    pub fn features(&self, a: u8, w: &[f64], mu_a: f64) -> Vec<f64> {
        let mut out = vec![0.0; self.dim()];
        self.fill(a, w, mu_a, &mut out);
        out
    }
}

/// Row `i` of the design: `φ̂_{j(i)}(A_i, W_i)`.
pub fn build_debias_features(data: &Dataset, nuisances: &NuisanceEstimates, spec: &RiskSpec, basis: &SieveBasis, simplified: bool) -> Result<Matrix> {
    let feats = DebiasFeatures::new(spec, basis, simplified)?;
    let rows: Vec<usize> = (0..data.n()).collect();
    Ok(design(data, nuisances, &feats, &rows))
}

fn design(data: &Dataset, nuisances: &NuisanceEstimates, feats: &DebiasFeatures, rows: &[usize]) -> Matrix {
    let p = feats.dim();
    let mut buf = vec![0.0; rows.len() * p];
    if p > 0 {
        for (chunk, &i) in buf.chunks_mut(p).zip(rows) {
            let a = data.a(i);
            feats.fill(a, data.w(i), nuisances.row(i).mu(a), chunk);
        }
    }
    Matrix::new(rows.len(), p, buf).expect("design shape")
}

/// Link used by the sieve regression.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "link", rename_all = "snake_case")]
enum Scale {
    Identity,
    Logit,
    /// Logit of `(x − lo)/(hi − lo)`.
    Bounded { lo: f64, hi: f64 },
}

impl Scale {
    fn to_link(self, mu: f64) -> f64 {
        match self {
            Scale::Identity => mu,
            Scale::Logit => logit(mu.clamp(OFFSET_EPS, 1.0 - OFFSET_EPS)),
            Scale::Bounded { lo, hi } => logit(((mu - lo) / (hi - lo)).clamp(OFFSET_EPS, 1.0 - OFFSET_EPS)),
        }
    }

    fn from_link(self, eta: f64) -> f64 {
        match self {
            Scale::Identity => eta,
            Scale::Logit => expit(eta),
            Scale::Bounded { lo, hi } => lo + (hi - lo) * expit(eta),
        }
    }

    fn target(self, y: f64) -> f64 {
        match self {
            Scale::Bounded { lo, hi } => ((y - lo) / (hi - lo)).clamp(0.0, 1.0),
            _ => y,
        }
    }
}

/// Output of the debiasing step: the coefficients and the adjusted
/// regression `μ*` at both arms of every row.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DebiasResult {
    pub method: DebiasMethod,
    pub beta: Vec<f64>,
    pub ridge: f64,
    /// `μ*_{j(i)}(0, W_i)` for every row of the data.
    pub mu_star0: Vec<f64>,
    pub mu_star1: Vec<f64>,
    /// Max-abs weighted score over the feature coordinates, on the rows used.
    pub score_residual: f64,
    /// `(â, b̂)` for the bound-preserving method.
    pub bounds: Option<(f64, f64)>,
    features: DebiasFeatures,
    scale: Scale,
}

impl DebiasResult {
    pub fn mu_star(&self, i: usize, a: u8) -> f64 {
        if a == 1 {
            self.mu_star1[i]
        } else {
            self.mu_star0[i]
        }
    }

    /// `μ*(a, w)` from an initial value `mu_a = μ(a, w)`.
    pub fn adjust(&self, a: u8, w: &[f64], mu_a: f64) -> f64 {
        if self.beta.is_empty() {
            return mu_a;
        }
        let phi = self.features.features(a, w, mu_a);
        let shift: f64 = phi.iter().zip(&self.beta).map(|(u, v)| u * v).sum();
        self.scale.from_link(self.scale.to_link(mu_a) + shift)
    }

    pub fn features(&self) -> &DebiasFeatures {
        &self.features
    }

    /// Pseudo-contrast inputs `(μ*(0, W_i), μ*(1, W_i))` for row `i`.
    pub fn arms(&self, i: usize) -> (f64, f64) {
        (self.mu_star0[i], self.mu_star1[i])
    }
}

/// Debiases on every row. See [`debias_rows`].
pub fn debias_outcome_regression(
    data: &Dataset,
    nuisances: &NuisanceEstimates,
    spec: &RiskSpec,
    basis: &SieveBasis,
    method: DebiasMethod,
    simplified: bool,
    ridge: f64,
) -> Result<DebiasResult> {
    let rows: Vec<usize> = (0..data.n()).collect();
    debias_rows(data, nuisances, spec, basis, method, simplified, ridge, &rows)
}

/// Fits the sieve adjustment on `rows` only and returns `μ*` for every row
/// of `data`. Rows outside `rows` are adjusted with the same coefficients.
#[allow(clippy::too_many_arguments)]
pub fn debias_rows(
    data: &Dataset,
    nuisances: &NuisanceEstimates,
    spec: &RiskSpec,
    basis: &SieveBasis,
    method: DebiasMethod,
    simplified: bool,
    ridge: f64,
    rows: &[usize],
) -> Result<DebiasResult> {
    if rows.is_empty() {
        return Err(Error::EmptyData);
    }
    let feats = DebiasFeatures::new(spec, basis, simplified)?;
    let y: Vec<f64> = rows.iter().map(|&i| data.y(i)).collect();
    let mu_obs: Vec<f64> = rows.iter().map(|&i| nuisances.row(i).mu(data.a(i))).collect();
    let weights: Vec<f64> = rows.iter().map(|&i| 1.0 / nuisances.row(i).pi(data.a(i))).collect();

    let (scale, bounds) = match method {
        DebiasMethod::Linear => (Scale::Identity, None),
        DebiasMethod::Logistic => {
            if let Some(k) = y.iter().position(|v| !(0.0..=1.0).contains(v)) {
                return Err(Error::MethodOutcomeMismatch {
                    method: 1,
                    reason: format!("row {} has y = {}, outside [0, 1]", rows[k] + 1, y[k]),
                });
            }
            (Scale::Logit, None)
        }
        DebiasMethod::BoundPreserving => {
            let lo = y.iter().chain(&mu_obs).copied().fold(f64::INFINITY, f64::min);
            let hi = y.iter().chain(&mu_obs).copied().fold(f64::NEG_INFINITY, f64::max);
            if !(hi > lo) {
                return Err(Error::MethodOutcomeMismatch { method: 3, reason: "outcomes and regressions are all equal".into() });
            }
            (Scale::Bounded { lo, hi }, Some((lo, hi)))
        }
    };

    let x = design(data, nuisances, &feats, rows);
    let offset: Vec<f64> = mu_obs.iter().map(|&m| scale.to_link(m)).collect();
    let (beta, ridge_used) = if feats.dim() == 0 {
        (Vec::new(), ridge)
    } else {
        let fit = match scale {
            Scale::Identity => fit_wls_offset(&x, &y, &weights, &offset, ridge)?,
            _ => {
                let t: Vec<f64> = y.iter().map(|&v| scale.target(v)).collect();
                fit_logistic_offset(&x, &t, &weights, &offset, ridge)?
            }
        };
        (fit.beta, fit.ridge)
    };

    let mut result = DebiasResult {
        method,
        beta,
        ridge: ridge_used,
        mu_star0: Vec::with_capacity(data.n()),
        mu_star1: Vec::with_capacity(data.n()),
        score_residual: 0.0,
        bounds,
        features: feats,
        scale,
    };
    for i in 0..data.n() {
        let r = nuisances.row(i);
        let w = data.w(i);
        let m0 = result.adjust(0, w, r.mu0);
        let m1 = result.adjust(1, w, r.mu1);
        result.mu_star0.push(m0);
        result.mu_star1.push(m1);
    }
    result.score_residual = score_on_rows(data, nuisances, &result.features, rows, |i, a| result.mu_star(i, a));
    Ok(result)
}

fn score_on_rows(data: &Dataset, nuisances: &NuisanceEstimates, feats: &DebiasFeatures, rows: &[usize], mu_star: impl Fn(usize, u8) -> f64) -> f64 {
    let p = feats.dim();
    if p == 0 {
        return 0.0;
    }
    let mut acc = vec![0.0; p];
    let mut phi = vec![0.0; p];
    for &i in rows {
        let a = data.a(i);
        let r = nuisances.row(i);
        feats.fill(a, data.w(i), r.mu(a), &mut phi);
        let resid = (data.y(i) - mu_star(i, a)) / r.pi(a);
        for (s, f) in acc.iter_mut().zip(&phi) {
            *s += f * resid;
        }
    }
    acc.iter().fold(0.0, |m, s| m.max((s / rows.len() as f64).abs()))
}

/// `max_ψ |(1/n) Σ_i π_{j(i)}(A_i|W_i)⁻¹ φ̂_ψ(A_i, W_i) (Y_i − μ*_{j(i)}(A_i, W_i))|`
/// over the coordinates `ψ` of the feature map. `mu_star` maps `(i, a)` to
/// the adjusted regression.
pub fn check_score_equation(
    data: &Dataset,
    nuisances: &NuisanceEstimates,
    spec: &RiskSpec,
    basis: &SieveBasis,
    simplified: bool,
    mu_star: impl Fn(usize, u8) -> f64,
) -> Result<f64> {
    let feats = DebiasFeatures::new(spec, basis, simplified)?;
    let rows: Vec<usize> = (0..data.n()).collect();
    Ok(score_on_rows(data, nuisances, &feats, &rows, mu_star))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::crossfit::{partition_folds, Clamps, RowNuisance};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn setup(n: usize, binary: bool, seed: u64) -> (Dataset, NuisanceEstimates) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let w: Vec<f64> = (0..2 * n).map(|_| rng.random_range(-1.0..1.0)).collect();
        let mut a = Vec::new();
        let mut y = Vec::new();
        let mut rows = Vec::new();
        for i in 0..n {
            let pi1 = expit(w[2 * i]);
            let ai = rng.random_bool(pi1);
            let m0 = 0.3 + 0.2 * w[2 * i + 1];
            let m1 = m0 + 0.2;
            let mean = if ai { m1 } else { m0 };
            y.push(if binary { f64::from(rng.random_bool(mean)) } else { mean + rng.random_range(-1.0..1.0) });
            a.push(f64::from(ai));
            // deliberately off so there is something to correct
            rows.push(RowNuisance { pi1: 0.5 + 0.3 * (pi1 - 0.5), mu0: m0 + 0.1, mu1: m1 - 0.05 });
        }
        let d = Dataset::new(Matrix::new(n, 2, w).unwrap(), a, y).unwrap();
        let f = partition_folds(n, 5, seed).unwrap();
        let nu = NuisanceEstimates::from_row_values(f, Clamps { eta: 0.01, mu_bounds: None }, &rows).unwrap();
        (d, nu)
    }

    #[test]
    fn simplified_sign_flip() {
        let basis = SieveBasis::fit(&Matrix::new(2, 1, vec![0.0, 1.0]).unwrap(), 2);
        let f = DebiasFeatures::new(&RiskSpec::cate(), &basis, true).unwrap();
        let p = f.features(1, &[0.25], 0.0);
        let m = f.features(0, &[0.25], 0.0);
        assert_eq!(p, basis.features(&[0.25]));
        assert!(p.iter().zip(&m).all(|(u, v)| *u == -*v));
        // general CATE drops the all-zero first block, leaving the same map
        let g = DebiasFeatures::new(&RiskSpec::cate(), &basis, false).unwrap();
        assert_eq!(g.features(0, &[0.25], 3.0), m);
        let c = DebiasFeatures::new(&RiskSpec::crr(), &basis, false).unwrap();
        assert_eq!(c.dim(), 4);
        assert_eq!(c.features(0, &[0.25], 0.4)[2..], [0.0, 0.0]);
        assert!(DebiasFeatures::new(&RiskSpec::crr(), &basis, true).is_err());
    }

    #[test]
    fn empty_basis_is_identity() {
        let (d, nu) = setup(100, false, 1);
        let basis = SieveBasis::fit(d.covariates(), 0);
        let r = debias_outcome_regression(&d, &nu, &RiskSpec::cate(), &basis, DebiasMethod::Linear, true, 0.0).unwrap();
        assert!(r.beta.is_empty());
        assert_eq!(r.score_residual, 0.0);
        for i in 0..100 {
            assert_eq!(r.mu_star(i, 0), nu.row(i).mu0);
        }
    }

    #[test]
    fn score_equation_solved() {
        for (binary, method) in [(false, DebiasMethod::Linear), (true, DebiasMethod::Logistic), (false, DebiasMethod::BoundPreserving)] {
            let (d, nu) = setup(400, binary, 2);
            for k in 1..=6 {
                let basis = SieveBasis::fit(d.covariates(), k);
                for (spec, simplified) in [(RiskSpec::cate(), true), (RiskSpec::crr(), false)] {
                    let r = debias_outcome_regression(&d, &nu, &spec, &basis, method, simplified, 0.0).unwrap();
                    assert!(r.score_residual <= 1e-6, "{method:?} k={k}: {}", r.score_residual);
                    let check = check_score_equation(&d, &nu, &spec, &basis, simplified, |i, a| r.mu_star(i, a)).unwrap();
                    assert_eq!(check, r.score_residual);
                }
            }
        }
    }

    #[test]
    fn undebiased_violates_score() {
        let (d, nu) = setup(2000, false, 3);
        let basis = SieveBasis::fit(d.covariates(), 3);
        let s = check_score_equation(&d, &nu, &RiskSpec::cate(), &basis, true, |i, a| nu.row(i).mu(a)).unwrap();
        assert!(s > 1e-2, "{s}");
    }

    #[test]
    fn bounds_respected() {
        let (d, nu) = setup(300, false, 4);
        let basis = SieveBasis::fit(d.covariates(), 4);
        let r = debias_outcome_regression(&d, &nu, &RiskSpec::cate(), &basis, DebiasMethod::BoundPreserving, true, 1e-8).unwrap();
        let (lo, hi) = r.bounds.unwrap();
        assert!(r.mu_star0.iter().chain(&r.mu_star1).all(|m| *m >= lo && *m <= hi));
        for q in [[-3.0, 3.0], [0.1, 0.2]] {
            for a in [0, 1] {
                let v = r.adjust(a, &q, 0.4);
                assert!(v >= lo && v <= hi);
            }
        }
        let (d, nu) = setup(300, true, 4);
        let r = debias_outcome_regression(&d, &nu, &RiskSpec::cate(), &basis, DebiasMethod::Logistic, true, 0.0).unwrap();
        assert!(r.mu_star0.iter().chain(&r.mu_star1).all(|m| *m > 0.0 && *m < 1.0));
    }

    #[test]
    fn exact_regression_needs_no_adjustment() {
        let (d, nu) = setup(200, false, 5);
        let y: Vec<f64> = (0..200).map(|i| nu.row(i).mu(d.a(i))).collect();
        let d = d.with_outcome(y).unwrap();
        let basis = SieveBasis::fit(d.covariates(), 3);
        let r = debias_outcome_regression(&d, &nu, &RiskSpec::cate(), &basis, DebiasMethod::Linear, true, 0.0).unwrap();
        assert!(r.beta.iter().all(|b| *b == 0.0));
        let r = debias_outcome_regression(&d, &nu, &RiskSpec::cate(), &basis, DebiasMethod::Logistic, true, 0.0).unwrap();
        assert!(r.beta.iter().all(|b| b.abs() <= 1e-8));
    }

    #[test]
    fn logistic_rejects_unbounded_outcomes() {
        let (d, nu) = setup(50, false, 6);
        let basis = SieveBasis::fit(d.covariates(), 1);
        let e = debias_outcome_regression(&d, &nu, &RiskSpec::cate(), &basis, DebiasMethod::Logistic, true, 0.0).unwrap_err();
        assert!(matches!(e, Error::MethodOutcomeMismatch { method: 1, .. }));
    }
}
