//! Cosine sieve and the outcome-regression debiasing step.

mod basis;
mod debias;

pub use basis::{cosine_basis, BasisKind, SieveBasis};
pub use debias::{
    build_debias_features, check_score_equation, debias_outcome_regression, debias_rows, DebiasFeatures, DebiasMethod, DebiasResult,
    OFFSET_EPS,
};
