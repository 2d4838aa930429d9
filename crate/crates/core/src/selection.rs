//! TopK / TopP source selection over normalized relevance scores.

use std::cmp::Ordering;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::domain::{check_top_p, ContextItem};
use crate::error::{Error, Result};
use crate::relevancy::RelevanceScore;

/// Slack applied to the TopP cumulative-probability test so that a
/// mathematically exact hit (0.6 + 0.3 against 0.9) still stops selection.
pub const TOP_P_TOLERANCE: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum SelectionStrategy {
    #[serde(rename = "topk", alias = "top_k")]
    TopK,
    #[serde(rename = "topp", alias = "top_p")]
    TopP,
}

impl fmt::Display for SelectionStrategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SelectionStrategy::TopK => "topk",
            SelectionStrategy::TopP => "topp",
        })
    }
}

impl FromStr for SelectionStrategy {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().replace(['_', '-'], "").as_str() {
            "topk" => Ok(SelectionStrategy::TopK),
            "topp" => Ok(SelectionStrategy::TopP),
            _ => Err(format!(
                "unknown selection strategy `{s}` (expected topk or topp)"
            )),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SelectionParameter {
    TopK(usize),
    TopP(f64),
}

/// A selected context item and its renormalized weight.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Source {
    pub item: ContextItem,
    pub weight: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SourceSelection {
    pub sources: Vec<Source>,
    pub strategy: SelectionStrategy,
    pub parameter: SelectionParameter,
}

impl SourceSelection {
    pub fn indices(&self) -> Vec<usize> {
        self.sources.iter().map(|s| s.item.index).collect()
    }

    pub fn weights(&self) -> Vec<f64> {
        self.sources.iter().map(|s| s.weight).collect()
    }
}

fn probability(score: &RelevanceScore) -> Result<f64> {
    score.probability.ok_or(Error::InvalidParameter {
        name: "scores",
        reason: "relevance scores must be normalized before selection".into(),
    })
}

/// Scores in decreasing probability; ties go to the lower original index.
fn ranked(scored: &[RelevanceScore]) -> Result<Vec<(&RelevanceScore, f64)>> {
    if scored.is_empty() {
        return Err(Error::EmptyInput);
    }
    let mut ranked = scored
        .iter()
        .map(|s| Ok((s, probability(s)?)))
        .collect::<Result<Vec<_>>>()?;
    ranked.sort_by(|a, b| {
        b.1.partial_cmp(&a.1)
            .unwrap_or(Ordering::Equal)
            .then(a.0.item.index.cmp(&b.0.item.index))
    });
    Ok(ranked)
}

fn renormalize(selected: &[(&RelevanceScore, f64)]) -> Result<Vec<Source>> {
    let total: f64 = selected.iter().map(|(_, p)| p).sum();
    if total.is_nan() || total <= 0.0 {
        return Err(Error::InvalidParameter {
            name: "scores",
            reason: "selected probabilities sum to zero".into(),
        });
    }
    Ok(selected
        .iter()
        .map(|(s, p)| Source {
            item: s.item.clone(),
            weight: p / total,
        })
        .collect())
}

/// Keeps the `k` most probable items.
pub fn select_top_k(scored: &[RelevanceScore], k: usize) -> Result<SourceSelection> {
    if k == 0 {
        return Err(Error::InvalidParameter {
            name: "top_k",
            reason: "must be at least 1".into(),
        });
    }
    let mut ranked = ranked(scored)?;
    ranked.truncate(k);
    Ok(SourceSelection {
        sources: renormalize(&ranked)?,
        strategy: SelectionStrategy::TopK,
        parameter: SelectionParameter::TopK(k),
    })
}

/// Keeps the shortest prefix of the probability-ranked items whose
/// cumulative probability reaches `p`.
pub fn select_top_p(scored: &[RelevanceScore], p: f64) -> Result<SourceSelection> {
    check_top_p(p)?;
    let mut ranked = ranked(scored)?;

    let take = if p >= 1.0 {
        ranked.iter().filter(|(_, prob)| *prob > 0.0).count().max(1)
    } else {
        let mut cumulative = 0.0;
        ranked
            .iter()
            .position(|(_, prob)| {
                cumulative += prob;
                cumulative >= p - TOP_P_TOLERANCE
            })
            .map_or(ranked.len(), |i| i + 1)
    };
    ranked.truncate(take);

    Ok(SourceSelection {
        sources: renormalize(&ranked)?,
        strategy: SelectionStrategy::TopP,
        parameter: SelectionParameter::TopP(p),
    })
}

/// Reorders sources by their original position; weights move with items.
pub fn restore_temporal_order(mut selection: SourceSelection) -> SourceSelection {
    selection.sources.sort_by_key(|s| s.item.index);
    selection
}
