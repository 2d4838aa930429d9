//! Query/context relevance scoring and probability normalization.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::backends::BackendError;
use crate::domain::ContextItem;
use crate::error::{Error, Result};

/// A context item with its raw cross-encoder score and, once normalized,
/// its probability.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RelevanceScore {
    pub item: ContextItem,
    pub raw: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub probability: Option<f64>,
}

impl RelevanceScore {
    pub fn item_index(&self) -> usize {
        self.item.index
    }
}

/// Scores how relevant an item is to a query. Raw scores are unbounded
/// reals; `score_batch(q, xs)[i]` must equal `score_pair(q, xs[i])`.
pub trait RelevanceBackend: Send + Sync {
    fn score_pair(&self, query: &str, item: &str) -> Result<f64, BackendError>;

    fn score_batch(&self, query: &str, items: &[&str]) -> Result<Vec<f64>, BackendError> {
        items
            .par_iter()
            .enumerate()
            .map(|(i, item)| self.score_pair(query, item).map_err(|e| e.for_item(i)))
            .collect()
    }
}

impl<T: RelevanceBackend + ?Sized> RelevanceBackend for std::sync::Arc<T> {
    fn score_pair(&self, query: &str, item: &str) -> Result<f64, BackendError> {
        (**self).score_pair(query, item)
    }

    fn score_batch(&self, query: &str, items: &[&str]) -> Result<Vec<f64>, BackendError> {
        (**self).score_batch(query, items)
    }
}

/// Scores every context against the query. Output order matches `contexts`.
pub fn score_contexts(
    backend: &dyn RelevanceBackend,
    query: &str,
    contexts: &[ContextItem],
) -> Result<Vec<RelevanceScore>> {
    if contexts.is_empty() {
        return Err(Error::EmptyInput);
    }
    let texts: Vec<&str> = contexts.iter().map(|c| c.text.as_str()).collect();
    let raws = backend
        .score_batch(query, &texts)
        .map_err(|e| Error::BackendFailure {
            item: e.item.and_then(|i| contexts.get(i)).map(|c| c.index),
            message: e.message,
        })?;
    if raws.len() != contexts.len() {
        return Err(Error::BackendFailure {
            item: None,
            message: format!("expected {} scores, got {}", contexts.len(), raws.len()),
        });
    }

    contexts
        .iter()
        .zip(raws)
        .map(|(item, raw)| {
            if raw.is_finite() {
                Ok(RelevanceScore {
                    item: item.clone(),
                    raw,
                    probability: None,
                })
            } else {
                Err(Error::NonFiniteScore { item: item.index })
            }
        })
        .collect()
}

/// Numerically stable softmax (max-subtracted).
pub fn softmax(raws: &[f64]) -> Vec<f64> {
    let max = raws.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = raws.iter().map(|r| (r - max).exp()).collect();
    let total: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / total).collect()
}

/// Sets `probability` on each score via softmax over the raw scores.
pub fn normalize_scores(mut scores: Vec<RelevanceScore>) -> Result<Vec<RelevanceScore>> {
    if scores.is_empty() {
        return Err(Error::EmptyInput);
    }
    if let Some(bad) = scores.iter().find(|s| !s.raw.is_finite()) {
        return Err(Error::NonFiniteScore {
            item: bad.item.index,
        });
    }
    let raws: Vec<f64> = scores.iter().map(|s| s.raw).collect();
    for (score, p) in scores.iter_mut().zip(softmax(&raws)) {
        score.probability = Some(p);
    }
    Ok(scores)
}
