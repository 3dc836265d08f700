//! Efficient plug-in (EP) learners for heterogeneous causal contrasts.
//!
//! The crate estimates the conditional average treatment effect (CATE) and the
//! log conditional relative risk (CRR) from observational data `(W, A, Y)` with
//! a binary treatment. Besides the EP-learner it ships the usual competitors
//! (T-, DR-, R- and IPW E-learners), cross-fitted nuisance estimation, a cosine
//! sieve used to debias outcome regressions, and a seeded Monte Carlo harness.
//!
//! Data-parallel loops (folds, sieve dimensions, Monte Carlo cells) run on
//! rayon when the `parallel` feature is enabled and fall back to sequential
//! iteration otherwise. Results never depend on the schedule.

pub mod crossfit;
pub mod data;
pub mod error;
pub mod estimators;
pub mod learners;
pub mod metalearners;
pub mod parallel;
pub mod risk;
pub mod sieve;
pub mod simulation;

pub use crossfit::{fit_nuisances, partition_folds, FoldAssignment, NuisanceEstimates, RowNuisance};
pub use data::{validate_dataset, Dataset, Matrix};
pub use error::{Error, Result};
pub use learners::{FeatureMap, FittedRegressor, LearnerConfig};
pub use metalearners::{ContrastModel, Method};
pub use risk::{ContrastFamily, RiskSpec};
pub use sieve::{DebiasMethod, DebiasResult, SieveBasis};
