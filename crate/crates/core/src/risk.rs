//! Risk functions of the form
//!
//! ```text
//! R(θ) = E[ h1(θ(W)) Σ_a c_{a,1} g1(μ(a,W)) + h2(θ(W)) Σ_a c_{a,2} g2(μ(a,W)) ]
//! ```
//!
//! with analytic first and second derivatives. Two instances exist: the CATE
//! least-squares risk and the log relative-risk (CRR) logistic risk.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Which causal contrast a risk targets.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ContrastFamily {
    /// θ(w) = μ(1,w) − μ(0,w)
    Cate,
    /// θ(w) = log μ(1,w) − log μ(0,w)
    Crr,
}

impl ContrastFamily {
    pub fn name(self) -> &'static str {
        match self {
            ContrastFamily::Cate => "cate",
            ContrastFamily::Crr => "crr",
        }
    }
}

impl std::str::FromStr for ContrastFamily {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "cate" => Ok(ContrastFamily::Cate),
            "crr" => Ok(ContrastFamily::Crr),
            other => Err(Error::InvalidConfig(format!("unknown family `{other}` (expected cate or crr)"))),
        }
    }
}

/// Index of a term in the risk: `m = 1` or `m = 2`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Term {
    First,
    Second,
}

pub const TERMS: [Term; 2] = [Term::First, Term::Second];

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RiskSpec {
    pub family: ContrastFamily,
    /// Caller-declared outcome range; used to pick the debiasing method.
    pub outcome_range: Option<(f64, f64)>,
}

/// Numerically stable `log(1 + e^t)`.
#[inline]
pub fn softplus(t: f64) -> f64 {
    if t > 0.0 {
        t + (-t).exp().ln_1p()
    } else {
        t.exp().ln_1p()
    }
}

#[inline]
pub fn expit(t: f64) -> f64 {
    if t >= 0.0 {
        1.0 / (1.0 + (-t).exp())
    } else {
        let e = t.exp();
        e / (1.0 + e)
    }
}

#[inline]
pub fn logit(p: f64) -> f64 {
    (p / (1.0 - p)).ln()
}

impl RiskSpec {
    pub fn cate() -> Self {
        RiskSpec { family: ContrastFamily::Cate, outcome_range: None }
    }

    pub fn crr() -> Self {
        RiskSpec { family: ContrastFamily::Crr, outcome_range: None }
    }

    pub fn for_family(family: ContrastFamily) -> Self {
        RiskSpec { family, outcome_range: None }
    }

    pub fn with_outcome_range(mut self, lo: f64, hi: f64) -> Self {
        self.outcome_range = Some((lo, hi));
        self
    }

    pub fn h(&self, m: Term, t: f64) -> f64 {
        match (self.family, m) {
            (ContrastFamily::Cate, Term::First) => t * t,
            (ContrastFamily::Cate, Term::Second) => -2.0 * t,
            (ContrastFamily::Crr, Term::First) => softplus(t),
            (ContrastFamily::Crr, Term::Second) => -t,
        }
    }

    pub fn h_dot(&self, m: Term, t: f64) -> f64 {
        match (self.family, m) {
            (ContrastFamily::Cate, Term::First) => 2.0 * t,
            (ContrastFamily::Cate, Term::Second) => -2.0,
            (ContrastFamily::Crr, Term::First) => expit(t),
            (ContrastFamily::Crr, Term::Second) => -1.0,
        }
    }

    pub fn h_ddot(&self, m: Term, t: f64) -> f64 {
        match (self.family, m) {
            (ContrastFamily::Cate, Term::First) => 2.0,
            (ContrastFamily::Cate, Term::Second) => 0.0,
            (ContrastFamily::Crr, Term::First) => {
                let p = expit(t);
                p * (1.0 - p)
            }
            (ContrastFamily::Crr, Term::Second) => 0.0,
        }
    }

    /// `g_m(μ)`. For the CATE risk `g1 ∘ μ = 1`.
    pub fn g(&self, m: Term, mu: f64) -> f64 {
        match (self.family, m) {
            (ContrastFamily::Cate, Term::First) => 1.0,
            _ => mu,
        }
    }

    pub fn g_dot(&self, m: Term, _mu: f64) -> f64 {
        if self.g_is_constant(m) {
            0.0
        } else {
            1.0
        }
    }

    /// True when `g_m` does not depend on μ, so its debiasing block vanishes.
    pub fn g_is_constant(&self, m: Term) -> bool {
        matches!((self.family, m), (ContrastFamily::Cate, Term::First))
    }

    /// True iff both g functions are the identity.
    pub fn identity_g(&self) -> bool {
        self.family == ContrastFamily::Crr
    }

    pub fn c(&self, a: u8, m: Term) -> f64 {
        match (self.family, m, a) {
            (ContrastFamily::Cate, Term::First, 1) => 1.0,
            (ContrastFamily::Cate, Term::First, _) => 0.0,
            (ContrastFamily::Cate, Term::Second, 1) => 1.0,
            (ContrastFamily::Cate, Term::Second, _) => -1.0,
            (ContrastFamily::Crr, Term::First, _) => 1.0,
            (ContrastFamily::Crr, Term::Second, 1) => 1.0,
            (ContrastFamily::Crr, Term::Second, _) => 0.0,
        }
    }

    /// `H_{m,μ}(a,w) = c_{a,m} · ġ_m(μ(a,w))`.
    pub fn big_h(&self, m: Term, a: u8, mu_a: f64) -> f64 {
        self.c(a, m) * self.g_dot(m, mu_a)
    }

    /// `Σ_a c_{a,m} g_m(μ(a,w))`.
    pub fn arm_sum(&self, m: Term, mu0: f64, mu1: f64) -> f64 {
        self.c(0, m) * self.g(m, mu0) + self.c(1, m) * self.g(m, mu1)
    }

    /// Whether the two h-terms move together, which permits the halved
    /// debiasing feature map `(Σ_m H_m) φ(w)`.
    pub fn supports_simplified_features(&self) -> bool {
        self.family == ContrastFamily::Cate
    }

    /// Pointwise loss `L_μ(θ, w)` given `θ(w)` and `μ(0,w), μ(1,w)`.
    pub fn loss(&self, theta: f64, mu0: f64, mu1: f64) -> f64 {
        self.h(Term::First, theta) * self.arm_sum(Term::First, mu0, mu1)
            + self.h(Term::Second, theta) * self.arm_sum(Term::Second, mu0, mu1)
    }

    /// Second derivative of the pointwise loss in θ.
    pub fn loss_ddot(&self, theta: f64, mu0: f64, mu1: f64) -> f64 {
        self.h_ddot(Term::First, theta) * self.arm_sum(Term::First, mu0, mu1)
            + self.h_ddot(Term::Second, theta) * self.arm_sum(Term::Second, mu0, mu1)
    }

    /// Debiasing term `Δ_{π,μ}(w,a,y;θ)` given the propensity of the observed arm.
    pub fn delta(&self, theta: f64, a: u8, y: f64, pi_a: f64, mu0: f64, mu1: f64) -> f64 {
        let mu_a = if a == 1 { mu1 } else { mu0 };
        let weight: f64 = TERMS.iter().map(|&m| self.big_h(m, a, mu_a) * self.h(m, theta)).sum();
        weight * (y - mu_a) / pi_a
    }

    /// Contrast implied by the outcome regression: the pointwise minimiser.
    pub fn contrast(&self, mu0: f64, mu1: f64) -> f64 {
        match self.family {
            ContrastFamily::Cate => mu1 - mu0,
            ContrastFamily::Crr => mu1.ln() - mu0.ln(),
        }
    }
}

/// Evaluates the pointwise loss, failing when the result is not finite.
pub fn evaluate_loss(spec: &RiskSpec, theta: f64, mu0: f64, mu1: f64) -> Result<f64> {
    let v = spec.loss(theta, mu0, mu1);
    if v.is_finite() {
        Ok(v)
    } else {
        Err(Error::NonFiniteLoss)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn cate_examples() {
        let s = RiskSpec::cate();
        for (mu0, mu1) in [(0.0, 1.0), (-3.0, 2.5), (7.0, 7.0)] {
            assert_eq!(evaluate_loss(&s, 0.0, mu0, mu1).unwrap(), 0.0);
        }
        assert_eq!(evaluate_loss(&s, 1.0, 0.0, 1.0).unwrap(), -1.0);
        assert_eq!(evaluate_loss(&s, 2.0, 0.25, 0.75).unwrap(), 2.0);
        for t in [-3.0, 0.0, 4.5] {
            assert_eq!(s.h_ddot(Term::First, t), 2.0);
            assert_eq!(s.h_ddot(Term::Second, t), 0.0);
            assert_eq!(s.loss_ddot(t, 0.3, -1.0), 2.0);
        }
    }

    #[test]
    fn crr_examples() {
        let s = RiskSpec::crr();
        assert_relative_eq!(evaluate_loss(&s, 0.0, 0.5, 0.5).unwrap(), 2f64.ln(), max_relative = 1e-15);
        assert_relative_eq!(evaluate_loss(&s, 0.0, 0.1, 0.3).unwrap(), 0.4 * 2f64.ln(), max_relative = 1e-15);
        assert!((evaluate_loss(&s, 0.0, 0.1, 0.3).unwrap() - 0.27726).abs() < 1e-5);
        // minimiser at μ1 = μ0 is θ = 0: derivative vanishes there
        let d = s.h_dot(Term::First, 0.0) * 1.0 + s.h_dot(Term::Second, 0.0) * 0.5;
        assert_eq!(d, 0.0);
    }

    #[test]
    fn non_finite_loss_is_an_error() {
        let s = RiskSpec::cate();
        assert!(matches!(evaluate_loss(&s, 1e200, 0.0, 1.0), Err(Error::NonFiniteLoss)));
    }

    #[test]
    fn derivatives_match_central_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let h = 1e-5;
        for spec in [RiskSpec::cate(), RiskSpec::crr()] {
            for _ in 0..100 {
                let t: f64 = rng.random_range(-4.0..4.0);
                for m in TERMS {
                    let fd1 = (spec.h(m, t + h) - spec.h(m, t - h)) / (2.0 * h);
                    let fd2 = (spec.h_dot(m, t + h) - spec.h_dot(m, t - h)) / (2.0 * h);
                    let (a1, a2) = (spec.h_dot(m, t), spec.h_ddot(m, t));
                    assert!((fd1 - a1).abs() <= 1e-6 * a1.abs().max(1.0), "h_dot {m:?} at {t}");
                    assert!((fd2 - a2).abs() <= 1e-6 * a2.abs().max(1.0), "h_ddot {m:?} at {t}");
                    let mu: f64 = rng.random_range(0.05..2.0);
                    let gd = (spec.g(m, mu + h) - spec.g(m, mu - h)) / (2.0 * h);
                    assert!((gd - spec.g_dot(m, mu)).abs() <= 1e-6 * gd.abs().max(1.0));
                }
            }
        }
    }

    #[test]
    fn pointwise_minimisers_by_grid_search() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let grid: Vec<f64> = (0..=80_000).map(|i| -4.0 + i as f64 * 1e-4).collect();
        for _ in 0..20 {
            let mu0: f64 = rng.random_range(0.05..1.0);
            let mu1: f64 = rng.random_range(0.05..1.0);
            for spec in [RiskSpec::cate(), RiskSpec::crr()] {
                let best = grid
                    .iter()
                    .copied()
                    .min_by(|a, b| spec.loss(*a, mu0, mu1).total_cmp(&spec.loss(*b, mu0, mu1)))
                    .unwrap();
                assert!((best - spec.contrast(mu0, mu1)).abs() <= 1e-4, "{:?}", spec.family);
            }
        }
    }

    #[test]
    fn crr_curvature_positive_and_matches_formula() {
        let s = RiskSpec::crr();
        let lo = 1e-3;
        for i in 0..50 {
            let t = -5.0 + 0.2 * i as f64;
            for (mu0, mu1) in [(lo, 0.0), (0.2, 0.7), (lo, lo)] {
                let p = expit(t);
                let expected = (mu0 + mu1) * p * (1.0 - p);
                let got = s.loss_ddot(t, mu0, mu1);
                assert_relative_eq!(got, expected, max_relative = 1e-12);
                assert!(got > 0.0);
                // second differences lose about eps/h² to rounding
                let h = 1e-3;
                let fd = (s.loss(t + h, mu0, mu1) - 2.0 * s.loss(t, mu0, mu1) + s.loss(t - h, mu0, mu1)) / (h * h);
                assert!((fd - got).abs() <= 1e-4 * got + 1e-6, "t={t} fd={fd} got={got}");
            }
        }
    }

    #[test]
    fn instance_constants() {
        let c = RiskSpec::cate();
        assert_eq!([c.c(1, Term::First), c.c(0, Term::First), c.c(1, Term::Second), c.c(0, Term::Second)], [1.0, 0.0, 1.0, -1.0]);
        assert!(!c.identity_g());
        let r = RiskSpec::crr();
        assert_eq!([r.c(0, Term::First), r.c(1, Term::First), r.c(0, Term::Second), r.c(1, Term::Second)], [1.0, 1.0, 0.0, 1.0]);
        assert!(r.identity_g());
    }
}
