use std::path::PathBuf;

use thiserror::Error;

/// Which side of the matrix a per-line failure refers to.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Axis {
    Row,
    Column,
}

impl std::fmt::Display for Axis {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Axis::Row => f.write_str("row"),
            Axis::Column => f.write_str("column"),
        }
    }
}

#[derive(Debug, Error)]
pub enum DmfError {
    #[error("domain error: {0}")]
    Domain(String),

    #[error("numeric overflow: {0}")]
    NumericOverflow(String),

    #[error("degenerate variance at ({row}, {col})")]
    DegenerateVariance { row: usize, col: usize },

    #[error("degenerate weight at ({row}, {col}): m'(eta) = {value:e}")]
    DegenerateWeight { row: usize, col: usize, value: f64 },

    #[error("{axis} {index} has {positive} positive weights but rank {needed} needs at least that many")]
    Underdetermined {
        axis: Axis,
        index: usize,
        positive: usize,
        needed: usize,
    },

    #[error("weighted least squares is underdetermined: {positive} positive weights for {needed} coefficients")]
    UnderdeterminedSystem { positive: usize, needed: usize },

    #[error("normal equations are singular even after ridge regularization")]
    Singular,

    #[error("initialization failed: column {column} has no positive-weight entries")]
    Init { column: usize },

    #[error("fit diverged at iteration {iteration}: deviance is not finite")]
    Divergence { iteration: usize },

    #[error("rank deficient: {0}")]
    RankDeficient(String),

    #[error("degenerate grouping: {0}")]
    DegenerateGrouping(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("{path}:{line}: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error("missing artifact {0}; run `dmf fit` first")]
    MissingArtifact(PathBuf),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = DmfError> = std::result::Result<T, E>;
