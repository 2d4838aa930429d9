//! Concrete relevance, NLI, and embedding backends.
//!
//! * [`stub`]: deterministic lookup tables and lexical heuristics, no model assets.
//! * [`remote`]: scoring over HTTP.
//! * [`local`]: in-process inference over an exported ONNX checkpoint (feature `local`).

use std::fmt;

#[cfg(feature = "local")]
pub mod local;
pub mod remote;
pub mod stub;

/// Failure reported by a backend implementation.
#[derive(Debug, Clone, PartialEq)]
pub struct BackendError {
    /// Position of the failing item within the batch, when known.
    pub item: Option<usize>,
    pub message: String,
}

impl BackendError {
    pub fn new(message: impl Into<String>) -> Self {
        Self {
            item: None,
            message: message.into(),
        }
    }

    pub fn for_item(mut self, item: usize) -> Self {
        self.item.get_or_insert(item);
        self
    }
}

impl fmt::Display for BackendError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.item {
            Some(i) => write!(f, "item {i}: {}", self.message),
            None => f.write_str(&self.message),
        }
    }
}

impl std::error::Error for BackendError {}
