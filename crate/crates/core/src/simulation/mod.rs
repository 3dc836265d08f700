//! Seeded data-generating processes and the Monte Carlo benchmark.

mod benchmark;

use std::fmt;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal, StudentT};
use serde::{Deserialize, Serialize};

pub use benchmark::{run_benchmark, BenchmarkConfig, BenchmarkResult, BenchmarkRow, LearnerGrid, CSV_HEADER};

use crate::crossfit::{NuisanceLibrary, RowNuisance};
use crate::data::{Dataset, Matrix};
use crate::error::{Error, Result};
use crate::learners::LearnerConfig;
use crate::metalearners::ContrastModel;
use crate::risk::{expit, ContrastFamily, RiskSpec};

pub const MIN_N: usize = 50;
/// Fresh covariate draws used to score a fitted contrast.
pub const DEFAULT_EVAL_POINTS: usize = 10_000;

const HIGH_DIM: usize = 20;
const HIGH_DIM_COV: f64 = 0.4;
const HIGH_DIM_BOUND: f64 = 2.0;
const NOISE_SD: f64 = 2.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scenario {
    /// Three uniform covariates, Gaussian outcome.
    LowDim,
    /// Twenty correlated covariates, Gaussian outcome.
    HighDim,
    /// Three uniform covariates, binary outcome, log relative risk.
    Crr,
    /// One heavy-tailed covariate, binary outcome.
    Intro,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Overlap {
    Moderate,
    Limited,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Complexity {
    Simple,
    Complex,
}

macro_rules! named_enum {
    ($ty:ident, $key:literal, $($var:ident => $name:literal),+) => {
        impl $ty {
            pub fn name(self) -> &'static str {
                match self { $($ty::$var => $name),+ }
            }
        }
        impl fmt::Display for $ty {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str(self.name())
            }
        }
        impl FromStr for $ty {
            type Err = Error;
            fn from_str(s: &str) -> Result<Self> {
                match s.to_ascii_lowercase().as_str() {
                    $($name => Ok($ty::$var),)+
                    _ => Err(Error::InvalidConfig(format!(
                        concat!("unknown ", $key, " `{}` (expected one of {})"),
                        s,
                        [$($name),+].join(", ")
                    ))),
                }
            }
        }
    };
}

named_enum!(Scenario, "scenario", LowDim => "lowdim", HighDim => "highdim", Crr => "crr", Intro => "intro");
named_enum!(Overlap, "overlap", Moderate => "moderate", Limited => "limited");
named_enum!(Complexity, "complexity", Simple => "simple", Complex => "complex");

/// A fully specified data-generating process. Overlap and complexity are
/// ignored where a scenario has a single variant (the intro DGP, and the
/// overlap of the high-dimensional one).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Dgp {
    pub scenario: Scenario,
    pub overlap: Overlap,
    pub complexity: Complexity,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScenarioConfig {
    pub dgp: Dgp,
    pub n: usize,
    pub seed: u64,
}

/// A simulated sample with its true contrast and nuisances at each row.
#[derive(Debug, Clone)]
pub struct Simulated {
    pub data: Dataset,
    pub theta0: Vec<f64>,
    pub oracle: Vec<RowNuisance>,
    /// Rejection-sampler acceptance rate (high-dimensional scenario only).
    pub acceptance: Option<f64>,
}

/// Covariate draws plus the rejection sampler's bookkeeping.
#[derive(Debug, Clone)]
pub struct CovariateDraw {
    pub w: Matrix,
    pub proposals: u64,
    pub accepted: u64,
}

impl CovariateDraw {
    pub fn acceptance(&self) -> f64 {
        self.accepted as f64 / self.proposals.max(1) as f64
    }
}

fn sum(w: &[f64], f: impl Fn(f64) -> f64) -> f64 {
    w.iter().map(|&x| f(x)).sum()
}

impl Dgp {
    pub fn new(scenario: Scenario, overlap: Overlap, complexity: Complexity) -> Self {
        Dgp { scenario, overlap, complexity }
    }

    /// All distinct variants, in a fixed order.
    pub fn all() -> Vec<Dgp> {
        use Complexity::*;
        use Overlap::*;
        let mut v = Vec::new();
        for s in [Scenario::LowDim, Scenario::Crr] {
            for o in [Moderate, Limited] {
                for c in [Simple, Complex] {
                    v.push(Dgp::new(s, o, c));
                }
            }
        }
        v.push(Dgp::new(Scenario::HighDim, Moderate, Simple));
        v.push(Dgp::new(Scenario::HighDim, Moderate, Complex));
        v.push(Dgp::new(Scenario::Intro, Moderate, Simple));
        v
    }

    pub fn dim(&self) -> usize {
        match self.scenario {
            Scenario::LowDim | Scenario::Crr => 3,
            Scenario::HighDim => HIGH_DIM,
            Scenario::Intro => 1,
        }
    }

    pub fn family(&self) -> ContrastFamily {
        match self.scenario {
            Scenario::Crr => ContrastFamily::Crr,
            _ => ContrastFamily::Cate,
        }
    }

    pub fn binary_outcome(&self) -> bool {
        matches!(self.scenario, Scenario::Crr | Scenario::Intro)
    }

    /// Risk specification matching the scenario's contrast and outcome range.
    pub fn spec(&self) -> RiskSpec {
        let spec = match self.family() {
            ContrastFamily::Cate => RiskSpec::cate(),
            ContrastFamily::Crr => RiskSpec::crr(),
        };
        if self.binary_outcome() {
            spec.with_outcome_range(0.0, 1.0)
        } else {
            spec
        }
    }

    pub fn pi1(&self, w: &[f64]) -> f64 {
        match self.scenario {
            Scenario::LowDim | Scenario::Crr => {
                let s: f64 = w.iter().sum();
                match self.overlap {
                    Overlap::Moderate => expit(s / 3.0),
                    Overlap::Limited => expit(s),
                }
            }
            Scenario::HighDim => expit((w[0] + w[4] + w[8] + w[10] + w[18]) / 1.3),
            Scenario::Intro => expit(w[0]),
        }
    }

    /// Control-arm outcome regression `E[Y | A = 0, W = w]`.
    fn mu0(&self, w: &[f64]) -> f64 {
        match self.scenario {
            Scenario::LowDim => sum(w, |x| x / 2.0 + (5.0 * x).sin() + 1.0 / (x + 1.2)),
            Scenario::HighDim => {
                ((4.0 * w[0]).cos() + (4.0 * w[4]).cos() + (4.0 * w[8]).sin() + 1.0 / (1.5 + w[14]) + 1.0 / (1.5 + w[9])) / 5.0
            }
            Scenario::Crr => expit(-1.0 + sum(w, |x| 0.3 * x + (4.0 * x).sin())),
            Scenario::Intro => 0.35 + 0.65 * expit(w[0] - 2.0),
        }
    }

    /// Structural contrast before any clipping of the treated mean.
    fn raw_theta(&self, w: &[f64]) -> f64 {
        let complex = self.complexity == Complexity::Complex;
        match self.scenario {
            Scenario::LowDim if complex => 1.0 + sum(w, |x| x + (5.0 * x).sin()),
            Scenario::LowDim => 1.0 + w.iter().sum::<f64>(),
            Scenario::HighDim if complex => {
                1.0 + ((4.0 * w[0]).sin() + (4.0 * w[4]).sin() + (4.0 * w[8]).cos() + 1.5 * (w[14] * w[14] - w[9] * w[9])) / 5.0
            }
            Scenario::HighDim => 1.0 + (w[0] + w[4] + w[8] + w[14] + w[9]) / 5.0,
            Scenario::Crr if complex => -0.1 + 0.1 * sum(w, |x| x + (4.0 * x).sin()),
            Scenario::Crr => -0.1 + 0.1 * w.iter().sum::<f64>(),
            Scenario::Intro => expit(2.0 * w[0] + 2.0) - expit(w[0] - 2.0) - 0.349,
        }
    }

    /// `E[Y | A = a, W = w]`. Binary-outcome means are clipped to `[0, 1]`.
    pub fn mu(&self, a: u8, w: &[f64]) -> f64 {
        let m0 = self.mu0(w);
        if a == 0 {
            return m0;
        }
        match self.scenario {
            Scenario::LowDim | Scenario::HighDim => m0 + self.raw_theta(w),
            Scenario::Crr => (m0 * self.raw_theta(w).exp()).min(1.0),
            Scenario::Intro => (m0 + self.raw_theta(w)).clamp(0.0, 1.0),
        }
    }

    /// The true contrast: `μ(1,w) − μ(0,w)` or `log μ(1,w) − log μ(0,w)`.
    pub fn theta(&self, w: &[f64]) -> f64 {
        match self.family() {
            ContrastFamily::Cate => self.mu(1, w) - self.mu(0, w),
            ContrastFamily::Crr => self.mu(1, w).ln() - self.mu(0, w).ln(),
        }
    }

    pub fn oracle(&self, w: &[f64]) -> RowNuisance {
        RowNuisance { pi1: self.pi1(w), mu0: self.mu(0, w), mu1: self.mu(1, w) }
    }

    pub fn sample_covariates<R: Rng>(&self, m: usize, rng: &mut R) -> CovariateDraw {
        let d = self.dim();
        match self.scenario {
            Scenario::LowDim | Scenario::Crr => {
                let w = (0..m * d).map(|_| rng.random_range(-1.0..1.0)).collect();
                CovariateDraw { w: Matrix::new(m, d, w).expect("shape"), proposals: m as u64, accepted: m as u64 }
            }
            Scenario::Intro => {
                let t = StudentT::new(5.0).expect("valid degrees of freedom");
                let w = (0..m).map(|_| t.sample(rng)).collect();
                CovariateDraw { w: Matrix::new(m, 1, w).expect("shape"), proposals: m as u64, accepted: m as u64 }
            }
            Scenario::HighDim => {
                let (z, proposals) = truncated_mvn(m, HIGH_DIM, HIGH_DIM_COV, HIGH_DIM_BOUND, rng);
                let w = z.into_iter().map(|x| 2.0 * x).collect();
                CovariateDraw { w: Matrix::new(m, d, w).expect("shape"), proposals, accepted: m as u64 }
            }
        }
    }

    /// Nuisance learner libraries used when the caller does not supply one.
    pub fn default_nuisance_library(&self) -> NuisanceLibrary {
        let propensity = vec![LearnerConfig::logistic_linear(), LearnerConfig::logistic_cosine(2)];
        let outcome = match self.scenario {
            Scenario::LowDim => vec![LearnerConfig::wls_cosine(4), LearnerConfig::wls_cosine(8), LearnerConfig::wls_cosine(12)],
            Scenario::HighDim => vec![LearnerConfig::wls_cosine(1), LearnerConfig::wls_cosine(2), LearnerConfig::wls_cosine(3)],
            Scenario::Crr => vec![LearnerConfig::logistic_cosine(2), LearnerConfig::logistic_cosine(4), LearnerConfig::logistic_cosine(6)],
            // heavy tails squash a min-max scaled basis, so trees join the library
            Scenario::Intro => {
                let mut v = vec![LearnerConfig::logistic_linear(), LearnerConfig::logistic_cosine(4)];
                v.extend(LearnerConfig::boosted_grid([1, 2, 3]));
                v
            }
        };
        NuisanceLibrary { propensity, outcome }
    }
}

impl fmt::Display for Dgp {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}/{}/{}", self.scenario, self.overlap, self.complexity)
    }
}

/// Rejection sampler for a mean-zero equicorrelated normal restricted to
/// `[−bound, bound]^d`. Returns row-major draws and the number of proposals.
fn truncated_mvn<R: Rng>(m: usize, d: usize, cov: f64, bound: f64, rng: &mut R) -> (Vec<f64>, u64) {
    let sigma = DMatrix::from_fn(d, d, |i, j| if i == j { 1.0 } else { cov });
    let l = sigma.cholesky().expect("equicorrelation matrix is positive definite").l();
    let mut out = Vec::with_capacity(m * d);
    let mut proposals = 0u64;
    while out.len() < m * d {
        proposals += 1;
        let e = DVector::from_fn(d, |_, _| StandardNormal.sample(rng));
        let z = &l * e;
        if z.iter().all(|x| x.abs() <= bound) {
            out.extend(z.iter());
        }
    }
    (out, proposals)
}

/// Draws a sample of size `n` from the scenario.
pub fn generate(cfg: &ScenarioConfig) -> Result<Simulated> {
    if cfg.n < MIN_N {
        return Err(Error::InvalidConfig(format!("n = {} is below the minimum of {MIN_N}", cfg.n)));
    }
    let dgp = cfg.dgp;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let draw = dgp.sample_covariates(cfg.n, &mut rng);
    let mut a = Vec::with_capacity(cfg.n);
    let mut y = Vec::with_capacity(cfg.n);
    let mut theta0 = Vec::with_capacity(cfg.n);
    let mut oracle = Vec::with_capacity(cfg.n);
    for w in draw.w.rows() {
        let r = dgp.oracle(w);
        let ai = u8::from(rng.random_bool(r.pi1));
        let mean = r.mu(ai);
        let yi = if dgp.binary_outcome() {
            f64::from(rng.random_bool(mean))
        } else {
            let e: f64 = StandardNormal.sample(&mut rng);
            mean + NOISE_SD * e
        };
        a.push(f64::from(ai));
        y.push(yi);
        theta0.push(dgp.theta(w));
        oracle.push(r);
    }
    let acceptance = (dgp.scenario == Scenario::HighDim).then(|| draw.acceptance());
    Ok(Simulated { data: Dataset::new(draw.w, a, y)?, theta0, oracle, acceptance })
}

/// `(1/m) Σ_j (θ̂(w_j) − θ₀(w_j))²` over the rows of `eval`.
pub fn mse_against_truth(model: &ContrastModel, truth: impl Fn(&[f64]) -> f64, eval: &Matrix) -> Result<f64> {
    let pred = model.predict_contrast(eval)?;
    if pred.is_empty() {
        return Err(Error::EmptyData);
    }
    let sse: f64 = pred.iter().zip(eval.rows()).map(|(p, w)| (p - truth(w)).powi(2)).sum();
    Ok(sse / pred.len() as f64)
}
