use thiserror::Error;

/// Errors raised by every layer of the library.
///
/// Variants split into two families: validation failures (bad input, bad
/// configuration, violated preconditions) and numerical failures (singular
/// systems, non-convergence). The CLI maps the first family to exit code 1
/// and the second to exit code 2.
#[derive(Debug, Error)]
pub enum MintError {
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("non-finite value in {0}")]
    NonFinite(String),

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error(
        "feature dimension {dim} must be smaller than the smallest environment size {min_n}"
    )]
    TooManyFeatures { dim: usize, min_n: usize },

    #[error("need at least 2 environments, got {0}")]
    TooFewEnvironments(usize),

    #[error("rank-deficient design: rank {rank} < {cols}, deficient columns {deficient:?}")]
    RankDeficient {
        rank: usize,
        cols: usize,
        deficient: Vec<usize>,
    },

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("parse error at row {row}, column '{column}': {message}")]
    Parse {
        row: usize,
        column: String,
        message: String,
    },

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("{context}: {source}")]
    Context {
        context: String,
        #[source]
        source: Box<MintError>,
    },
}

impl MintError {
    /// True for failures of the numerics rather than of the inputs.
    pub fn is_numerical(&self) -> bool {
        match self {
            MintError::RankDeficient { .. } | MintError::Numerical(_) => true,
            MintError::Context { source, .. } => source.is_numerical(),
            _ => false,
        }
    }

    pub fn context(self, context: impl Into<String>) -> Self {
        MintError::Context {
            context: context.into(),
            source: Box::new(self),
        }
    }
}

pub type Result<T> = std::result::Result<T, MintError>;
