use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dataset is empty")]
    EmptyData,
    #[error("row {row}: expected {expected} fields, found {found}")]
    RaggedRow { row: usize, expected: usize, found: usize },
    #[error("row {row}: cannot parse `{field}` in column `{column}`")]
    Parse { row: usize, column: String, field: String },
    #[error("row {row}: treatment must be 0 or 1, found {value}")]
    NonBinaryTreatment { row: usize, value: f64 },
    #[error("row {row}: non-finite value in column `{column}`")]
    NonFiniteValue { row: usize, column: String },
    #[error("loss evaluated to a non-finite value")]
    NonFiniteLoss,
    #[error("weighted design matrix is rank deficient (rank {rank} < {cols})")]
    SingularDesign { rank: usize, cols: usize },
    #[error("IRLS did not converge after {iterations} iterations (gradient norm {gradient_norm:e})")]
    NoConvergence { iterations: usize, gradient_norm: f64 },
    #[error("k = {k} neighbours requested but only {n} training points")]
    KTooLarge { k: usize, n: usize },
    #[error("cannot split {n} observations into {folds} folds")]
    BadFoldCount { folds: usize, n: usize },
    #[error("debiasing method {method} is incompatible with the outcomes: {reason}")]
    MethodOutcomeMismatch { method: u8, reason: String },
    #[error("all pseudo-weights are zero")]
    AllZeroWeights,
    #[error("dimension mismatch: expected {expected} covariates, found {found}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("unsupported: {0}")]
    Unsupported(String),
    #[error("fold {fold}: {source}")]
    Fold {
        fold: usize,
        #[source]
        source: Box<Error>,
    },
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
    #[error("serialization error: {0}")]
    Serde(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn in_fold(self, fold: usize) -> Self {
        Error::Fold { fold, source: Box::new(self) }
    }
}
