//! NLI scoring of the claim against selected sources, aggregation, and the
//! end-to-end check pipeline.

use std::fmt;
use std::str::FromStr;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::backends::BackendError;
use crate::domain::{build_claim, CheckInput, ClaimPrompt, ContextItem, PipelineConfig};
use crate::error::{Error, Result, Stage};
use crate::format::{sig9, sig9_opt};
use crate::relevancy::{normalize_scores, score_contexts, RelevanceBackend, RelevanceScore};
use crate::selection::{
    restore_temporal_order, select_top_k, select_top_p, SelectionParameter, SelectionStrategy,
    SourceSelection,
};

/// Tolerance on the weight sum accepted by [`aggregate`].
pub const WEIGHT_SUM_TOLERANCE: f64 = 1e-6;

/// Judges how well a source supports a claim. Scores lie in [0, 1];
/// backends wrapping logit heads squash internally.
pub trait NliBackend: Send + Sync {
    fn entail(&self, source: &str, claim: &str) -> Result<f64, BackendError>;

    fn entail_batch(&self, sources: &[&str], claim: &str) -> Result<Vec<f64>, BackendError> {
        sources
            .par_iter()
            .enumerate()
            .map(|(i, s)| self.entail(s, claim).map_err(|e| e.for_item(i)))
            .collect()
    }
}

impl<T: NliBackend + ?Sized> NliBackend for std::sync::Arc<T> {
    fn entail(&self, source: &str, claim: &str) -> Result<f64, BackendError> {
        (**self).entail(source, claim)
    }

    fn entail_batch(&self, sources: &[&str], claim: &str) -> Result<Vec<f64>, BackendError> {
        (**self).entail_batch(sources, claim)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Aggregation {
    Min,
    Max,
    #[serde(alias = "mean", alias = "weighted-average")]
    WeightedAverage,
}

impl fmt::Display for Aggregation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Aggregation::Min => "min",
            Aggregation::Max => "max",
            Aggregation::WeightedAverage => "weighted_average",
        })
    }
}

impl FromStr for Aggregation {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().replace('-', "_").as_str() {
            "min" => Ok(Aggregation::Min),
            "max" => Ok(Aggregation::Max),
            "weighted_average" | "mean" | "wavg" => Ok(Aggregation::WeightedAverage),
            _ => Err(format!(
                "unknown aggregation `{s}` (expected min, max or weighted_average)"
            )),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WeightedScore {
    pub weight: f64,
    pub score: f64,
}

impl From<(f64, f64)> for WeightedScore {
    fn from((weight, score): (f64, f64)) -> Self {
        Self { weight, score }
    }
}

/// Scores the claim against every selected source, in selection order.
pub fn score_sources(
    backend: &dyn NliBackend,
    selection: &SourceSelection,
    claim: &ClaimPrompt,
) -> Result<Vec<WeightedScore>> {
    if selection.sources.is_empty() {
        return Err(Error::EmptyInput);
    }
    let texts: Vec<&str> = selection
        .sources
        .iter()
        .map(|s| s.item.text.as_str())
        .collect();
    let scores = backend
        .entail_batch(&texts, &claim.text)
        .map_err(|e| Error::BackendFailure {
            item: e
                .item
                .and_then(|i| selection.sources.get(i))
                .map(|s| s.item.index),
            message: e.message,
        })?;
    if scores.len() != texts.len() {
        return Err(Error::BackendFailure {
            item: None,
            message: format!("expected {} scores, got {}", texts.len(), scores.len()),
        });
    }

    selection
        .sources
        .iter()
        .zip(scores)
        .map(|(source, score)| {
            let item = source.item.index;
            if !score.is_finite() {
                Err(Error::NonFiniteScore { item })
            } else if !(0.0..=1.0).contains(&score) {
                Err(Error::OutOfRangeScore { item, score })
            } else {
                Ok(WeightedScore {
                    weight: source.weight,
                    score,
                })
            }
        })
        .collect()
}

/// Combines per-source scores. Min and Max ignore weights.
pub fn aggregate(scores: &[WeightedScore], method: Aggregation) -> Result<f64> {
    if scores.is_empty() {
        return Err(Error::EmptyInput);
    }
    let weight_sum: f64 = scores.iter().map(|s| s.weight).sum();
    if (weight_sum - 1.0).abs() > WEIGHT_SUM_TOLERANCE {
        return Err(Error::WeightSumMismatch { sum: weight_sum });
    }
    let min = scores.iter().map(|s| s.score).fold(f64::INFINITY, f64::min);
    let max = scores
        .iter()
        .map(|s| s.score)
        .fold(f64::NEG_INFINITY, f64::max);
    Ok(match method {
        Aggregation::Min => min,
        Aggregation::Max => max,
        Aggregation::WeightedAverage => {
            // Summed in sorted order so the result does not depend on source
            // order; clamped so rounding cannot leave [min, max].
            let mut terms: Vec<f64> = scores.iter().map(|s| s.weight * s.score).collect();
            terms.sort_by(f64::total_cmp);
            terms.iter().sum::<f64>().clamp(min, max)
        }
    })
}

/// Inclusive threshold: `score >= threshold` is factual.
pub fn verdict(score: f64, threshold: f64) -> bool {
    score >= threshold
}

/// How relevance scores were produced.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RelevanceScorer {
    CrossEncoder,
    Dot,
    Cosine,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RelevanceEntry {
    pub index: usize,
    #[serde(serialize_with = "sig9")]
    pub raw: f64,
    #[serde(serialize_with = "sig9")]
    pub probability: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SourceScore {
    pub item: ContextItem,
    #[serde(serialize_with = "sig9")]
    pub weight: f64,
    #[serde(serialize_with = "sig9")]
    pub score: f64,
}

/// Wall-clock time per stage, in milliseconds.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct StageTimings {
    #[serde(serialize_with = "sig9")]
    pub relevance_ms: f64,
    #[serde(serialize_with = "sig9")]
    pub selection_ms: f64,
    #[serde(serialize_with = "sig9")]
    pub nli_ms: f64,
    #[serde(serialize_with = "sig9")]
    pub aggregation_ms: f64,
    #[serde(serialize_with = "sig9")]
    pub total_ms: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FactualityReport {
    pub claim: ClaimPrompt,
    pub relevance_scorer: RelevanceScorer,
    /// Every context item's relevance, by original index.
    pub relevance: Vec<RelevanceEntry>,
    pub strategy: SelectionStrategy,
    pub parameter: SelectionParameter,
    pub per_source: Vec<SourceScore>,
    #[serde(serialize_with = "sig9")]
    pub aggregate: f64,
    pub aggregation_method: Aggregation,
    #[serde(
        default,
        serialize_with = "sig9_opt",
        skip_serializing_if = "Option::is_none"
    )]
    pub threshold: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub verdict: Option<bool>,
    pub config_snapshot: PipelineConfig,
    pub timing: StageTimings,
}

impl FactualityReport {
    pub fn selected_indices(&self) -> Vec<usize> {
        self.per_source.iter().map(|s| s.item.index).collect()
    }

    /// Copy with timings zeroed, for comparing runs.
    pub fn without_timing(&self) -> Self {
        Self {
            timing: StageTimings::default(),
            ..self.clone()
        }
    }
}

fn elapsed_ms(since: Instant) -> f64 {
    since.elapsed().as_secs_f64() * 1e3
}

/// Shared tail of the main and baseline pipelines: normalize, select,
/// optionally restore temporal order, score with NLI, aggregate.
pub(crate) fn complete(
    nli: &dyn NliBackend,
    mut scored: Vec<RelevanceScore>,
    claim: ClaimPrompt,
    config: &PipelineConfig,
    scorer: RelevanceScorer,
    mut timing: StageTimings,
    started: Instant,
) -> Result<FactualityReport> {
    let t = Instant::now();
    scored.sort_by_key(|s| s.item.index);
    let scored = normalize_scores(scored).map_err(|e| e.at(Stage::Normalization))?;
    let selection = match config.selection_strategy {
        SelectionStrategy::TopK => select_top_k(&scored, config.top_k),
        SelectionStrategy::TopP => select_top_p(&scored, config.top_p),
    }
    .map_err(|e| e.at(Stage::Selection))?;
    let selection = if config.temporal_ordering {
        restore_temporal_order(selection)
    } else {
        selection
    };
    timing.selection_ms = elapsed_ms(t);

    let t = Instant::now();
    let scores = score_sources(nli, &selection, &claim).map_err(|e| e.at(Stage::Nli))?;
    timing.nli_ms = elapsed_ms(t);

    let t = Instant::now();
    let aggregate_score =
        aggregate(&scores, config.aggregation).map_err(|e| e.at(Stage::Aggregation))?;
    let verdict = config.threshold.map(|th| verdict(aggregate_score, th));
    timing.aggregation_ms = elapsed_ms(t);
    timing.total_ms = elapsed_ms(started);

    Ok(FactualityReport {
        claim,
        relevance_scorer: scorer,
        relevance: scored
            .iter()
            .map(|s| RelevanceEntry {
                index: s.item.index,
                raw: s.raw,
                probability: s.probability.unwrap_or_default(),
            })
            .collect(),
        strategy: selection.strategy,
        parameter: selection.parameter,
        per_source: selection
            .sources
            .into_iter()
            .zip(scores)
            .map(|(source, ws)| SourceScore {
                item: source.item,
                weight: source.weight,
                score: ws.score,
            })
            .collect(),
        aggregate: aggregate_score,
        aggregation_method: config.aggregation,
        threshold: config.threshold,
        verdict,
        config_snapshot: config.clone(),
        timing,
    })
}

/// Runs the full pipeline: relevance scoring, normalization, selection,
/// temporal ordering, claim construction, NLI scoring, aggregation.
///
/// Context list order does not matter; items are processed by index.
pub fn check(
    relevance: &dyn RelevanceBackend,
    nli: &dyn NliBackend,
    input: &CheckInput,
    config: &PipelineConfig,
) -> Result<FactualityReport> {
    let started = Instant::now();
    config.validate().map_err(|e| e.at(Stage::Input))?;
    input.validate().map_err(|e| e.at(Stage::Input))?;

    let claim = build_claim(&input.query, &input.answer, &config.claim_template)
        .map_err(|e| e.at(Stage::Claim))?;

    let mut contexts = input.contexts.clone();
    contexts.sort_by_key(|c| c.index);
    let t = Instant::now();
    let scored =
        score_contexts(relevance, &input.query, &contexts).map_err(|e| e.at(Stage::Relevance))?;
    let timing = StageTimings {
        relevance_ms: elapsed_ms(t),
        ..Default::default()
    };

    complete(
        nli,
        scored,
        claim,
        config,
        RelevanceScorer::CrossEncoder,
        timing,
        started,
    )
}
