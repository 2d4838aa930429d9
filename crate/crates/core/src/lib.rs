//! Factuality scoring for retrieval-augmented generation.
//!
//! Given a query, a generated answer and the context items it was generated
//! from, the pipeline
//!
//! 1. scores each context item's relevance to the query with a cross-encoder
//!    ([`relevancy`]) and softmax-normalizes the scores,
//! 2. selects sources by TopK or TopP and renormalizes their weights
//!    ([`selection`]), optionally restoring document order,
//! 3. scores a claim built from the query and answer against each source with
//!    an NLI model and aggregates the per-source scores ([`factcheck`]).
//!
//! [`baselines`] holds a bi-encoder variant of step 1 and [`evaluation`] the
//! dataset tooling (ROC, AUC, accuracy, threshold tuning).

pub mod backends;
pub mod baselines;
pub mod convert;
pub mod domain;
pub mod error;
pub mod evaluation;
pub mod factcheck;
pub mod format;
pub mod relevancy;
pub mod selection;

pub use backends::BackendError;
pub use baselines::{
    baseline_check, cosine_score, dot_score, BaselineConfig, EmbeddingBackend, Similarity,
};
pub use domain::{
    build_claim, split_sentences, CheckInput, ClaimPrompt, ContextItem, PipelineConfig,
    DEFAULT_CLAIM_TEMPLATE, SHORT_CLAIM_TEMPLATE,
};
pub use error::{Error, Result, Stage};
pub use evaluation::{
    accuracy_at, auc, evaluate, load_dataset, roc_curve, tune_threshold, EvalRecord, EvalReport,
    RocCurve,
};
pub use factcheck::{
    aggregate, check, score_sources, verdict, Aggregation, FactualityReport, NliBackend,
    WeightedScore,
};
pub use relevancy::{normalize_scores, score_contexts, RelevanceBackend, RelevanceScore};
pub use selection::{
    restore_temporal_order, select_top_k, select_top_p, SelectionStrategy, SourceSelection,
};
