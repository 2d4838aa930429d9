use std::fmt;

use serde::{Deserialize, Serialize};

/// Pipeline stage, used to tag errors raised inside [`crate::check`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    Input,
    Relevance,
    Normalization,
    Selection,
    Claim,
    Nli,
    Aggregation,
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let name = match self {
            Stage::Input => "input",
            Stage::Relevance => "relevance",
            Stage::Normalization => "normalization",
            Stage::Selection => "selection",
            Stage::Claim => "claim",
            Stage::Nli => "nli",
            Stage::Aggregation => "aggregation",
        };
        f.write_str(name)
    }
}

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("field `{0}` is empty")]
    EmptyField(String),

    #[error("malformed claim template: {0}")]
    MalformedTemplate(String),

    #[error("empty input")]
    EmptyInput,

    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter { name: &'static str, reason: String },

    #[error("invalid context indices: {0}")]
    InvalidIndices(String),

    #[error("backend failure{}: {message}", item.map(|i| format!(" on item {i}")).unwrap_or_default())]
    BackendFailure {
        item: Option<usize>,
        message: String,
    },

    #[error("non-finite score at item {item}")]
    NonFiniteScore { item: usize },

    #[error("score {score} at item {item} outside [0, 1]")]
    OutOfRangeScore { item: usize, score: f64 },

    #[error("weights sum to {sum}, expected 1")]
    WeightSumMismatch { sum: f64 },

    #[error("dimension mismatch: {left} vs {right}")]
    DimensionMismatch { left: usize, right: usize },

    #[error("zero vector has no direction")]
    ZeroVector,

    #[error("labels contain a single class")]
    SingleClass,

    #[error("length mismatch: {scores} scores vs {labels} labels")]
    LengthMismatch { scores: usize, labels: usize },

    #[error("parse error on line {line}: {message}")]
    ParseError { line: usize, message: String },

    #[error("validation error on line {line}: field `{field}` {reason}")]
    ValidationError {
        line: usize,
        field: String,
        reason: String,
    },

    #[error("all {0} records failed")]
    AllRecordsFailed(usize),

    #[error("{stage} stage failed: {source}")]
    Stage {
        stage: Stage,
        #[source]
        source: Box<Error>,
    },

    #[error("model asset error: {0}")]
    Model(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn at(self, stage: Stage) -> Error {
        Error::Stage {
            stage,
            source: Box::new(self),
        }
    }

    /// Innermost error, with stage wrappers removed.
    pub fn root(&self) -> &Error {
        match self {
            Error::Stage { source, .. } => source.root(),
            other => other,
        }
    }

    pub fn stage(&self) -> Option<Stage> {
        match self {
            Error::Stage { stage, .. } => Some(*stage),
            _ => None,
        }
    }

    /// True when the root cause came from a backend (transport, model, or contract violation).
    pub fn is_backend(&self) -> bool {
        matches!(
            self.root(),
            Error::BackendFailure { .. }
                | Error::NonFiniteScore { .. }
                | Error::OutOfRangeScore { .. }
                | Error::Model(_)
        )
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
