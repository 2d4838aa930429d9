//! Bi-encoder baseline: sentence-level contexts scored by dot product or
//! cosine similarity against an embedded claim, then the usual TopP
//! selection, NLI scoring, and aggregation.

use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::backends::BackendError;
use crate::domain::{
    build_claim, CheckInput, ContextItem, PipelineConfig, RuleSplitter, SentenceSplitter,
    DEFAULT_CLAIM_TEMPLATE,
};
use crate::error::{Error, Result, Stage};
use crate::factcheck::{
    complete, Aggregation, FactualityReport, NliBackend, RelevanceScorer, StageTimings,
};
use crate::relevancy::RelevanceScore;
use crate::selection::SelectionStrategy;

/// Embeds texts into fixed-dimension vectors.
pub trait EmbeddingBackend: Send + Sync {
    fn embed(&self, texts: &[&str]) -> Result<Vec<Vec<f64>>, BackendError>;
}

impl<T: EmbeddingBackend + ?Sized> EmbeddingBackend for std::sync::Arc<T> {
    fn embed(&self, texts: &[&str]) -> Result<Vec<Vec<f64>>, BackendError> {
        (**self).embed(texts)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Similarity {
    Dot,
    Cosine,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BaselineConfig {
    pub similarity: Similarity,
    pub temporal_ordering: bool,
    pub top_p: f64,
    pub aggregation: Aggregation,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub threshold: Option<f64>,
}

impl Default for BaselineConfig {
    fn default() -> Self {
        Self {
            similarity: Similarity::Cosine,
            temporal_ordering: true,
            top_p: 0.9,
            aggregation: Aggregation::Max,
            threshold: None,
        }
    }
}

impl BaselineConfig {
    /// Dot-product scoring, selection order kept.
    pub fn dot_unordered() -> Self {
        Self {
            similarity: Similarity::Dot,
            temporal_ordering: false,
            ..Default::default()
        }
    }

    /// Dot-product scoring with temporal ordering.
    pub fn dot_ordered() -> Self {
        Self {
            similarity: Similarity::Dot,
            ..Default::default()
        }
    }

    /// Cosine scoring with temporal ordering.
    pub fn cosine_ordered() -> Self {
        Self::default()
    }

    /// The equivalent main-pipeline configuration (TopP, default claim wording).
    pub fn pipeline_config(&self) -> PipelineConfig {
        PipelineConfig {
            selection_strategy: SelectionStrategy::TopP,
            top_p: self.top_p,
            aggregation: self.aggregation,
            threshold: self.threshold,
            temporal_ordering: self.temporal_ordering,
            claim_template: DEFAULT_CLAIM_TEMPLATE.to_string(),
            ..Default::default()
        }
    }
}

pub fn dot_score(u: &[f64], v: &[f64]) -> Result<f64> {
    if u.len() != v.len() {
        return Err(Error::DimensionMismatch {
            left: u.len(),
            right: v.len(),
        });
    }
    Ok(u.iter().zip(v).map(|(a, b)| a * b).sum())
}

pub fn cosine_score(u: &[f64], v: &[f64]) -> Result<f64> {
    let dot = dot_score(u, v)?;
    let nu = dot_score(u, u)?.sqrt();
    let nv = dot_score(v, v)?.sqrt();
    if nu == 0.0 || nv == 0.0 {
        return Err(Error::ZeroVector);
    }
    Ok((dot / (nu * nv)).clamp(-1.0, 1.0))
}

/// Flattens paragraph contexts into sentences, renumbered in document order.
pub fn sentence_contexts(
    contexts: &[ContextItem],
    splitter: &dyn SentenceSplitter,
) -> Vec<ContextItem> {
    let mut ordered: Vec<&ContextItem> = contexts.iter().collect();
    ordered.sort_by_key(|c| c.index);
    ordered
        .into_iter()
        .flat_map(|c| splitter.split(&c.text))
        .enumerate()
        .map(|(index, s)| ContextItem {
            text: s.text,
            index,
        })
        .collect()
}

pub fn baseline_check(
    embed: &dyn EmbeddingBackend,
    nli: &dyn NliBackend,
    input: &CheckInput,
    config: &BaselineConfig,
) -> Result<FactualityReport> {
    baseline_check_with(embed, nli, input, config, &RuleSplitter)
}

pub fn baseline_check_with(
    embed: &dyn EmbeddingBackend,
    nli: &dyn NliBackend,
    input: &CheckInput,
    config: &BaselineConfig,
    splitter: &dyn SentenceSplitter,
) -> Result<FactualityReport> {
    let started = Instant::now();
    let pipeline = config.pipeline_config();
    pipeline.validate().map_err(|e| e.at(Stage::Input))?;
    input.validate().map_err(|e| e.at(Stage::Input))?;

    let sentences = sentence_contexts(&input.contexts, splitter);
    if sentences.is_empty() {
        return Err(Error::EmptyInput.at(Stage::Input));
    }
    let claim = build_claim(&input.query, &input.answer, &pipeline.claim_template)
        .map_err(|e| e.at(Stage::Claim))?;

    let t = Instant::now();
    let scored = similarity_scores(embed, &sentences, &claim.text, config.similarity)
        .map_err(|e| e.at(Stage::Relevance))?;
    let timing = StageTimings {
        relevance_ms: t.elapsed().as_secs_f64() * 1e3,
        ..Default::default()
    };

    let scorer = match config.similarity {
        Similarity::Dot => RelevanceScorer::Dot,
        Similarity::Cosine => RelevanceScorer::Cosine,
    };
    complete(nli, scored, claim, &pipeline, scorer, timing, started)
}

fn similarity_scores(
    embed: &dyn EmbeddingBackend,
    sentences: &[ContextItem],
    claim: &str,
    similarity: Similarity,
) -> Result<Vec<RelevanceScore>> {
    let mut texts: Vec<&str> = sentences.iter().map(|s| s.text.as_str()).collect();
    texts.push(claim);
    let vectors = embed.embed(&texts).map_err(|e| Error::BackendFailure {
        item: e.item,
        message: e.message,
    })?;
    if vectors.len() != texts.len() {
        return Err(Error::BackendFailure {
            item: None,
            message: format!("expected {} embeddings, got {}", texts.len(), vectors.len()),
        });
    }
    let (claim_vec, sentence_vecs) = vectors.split_last().expect("non-empty");
    if claim_vec.is_empty() {
        return Err(Error::BackendFailure {
            item: None,
            message: "zero-dimensional embedding".into(),
        });
    }

    sentences
        .iter()
        .zip(sentence_vecs)
        .map(|(item, v)| {
            if v.iter().chain(claim_vec).any(|x| !x.is_finite()) {
                return Err(Error::NonFiniteScore { item: item.index });
            }
            let raw = match similarity {
                Similarity::Dot => dot_score(v, claim_vec)?,
                Similarity::Cosine => cosine_score(v, claim_vec)?,
            };
            Ok(RelevanceScore {
                item: item.clone(),
                raw,
                probability: None,
            })
        })
        .collect()
}
