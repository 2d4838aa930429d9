//! Deterministic backends that need no model assets.

use std::collections::{BTreeSet, HashMap};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::BackendError;
use crate::baselines::EmbeddingBackend;
use crate::error::{Error, Result};
use crate::factcheck::NliBackend;
use crate::relevancy::RelevanceBackend;

/// Fixed text-to-score table. Relevance lookups key on the context text,
/// NLI lookups key on the source text.
///
/// On disk this is either a bare JSON object (`{"text": score}`) or
/// `{"entries": {...}, "default": score}`.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct LookupTable {
    pub entries: HashMap<String, f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub default: Option<f64>,
}

#[derive(Deserialize)]
#[serde(untagged)]
enum TableFile {
    Full(LookupTable),
    Bare(HashMap<String, f64>),
}

impl LookupTable {
    pub fn from_pairs<K: Into<String>>(pairs: impl IntoIterator<Item = (K, f64)>) -> Self {
        Self {
            entries: pairs.into_iter().map(|(k, v)| (k.into(), v)).collect(),
            default: None,
        }
    }

    pub fn with_default(mut self, default: f64) -> Self {
        self.default = Some(default);
        self
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(match serde_json::from_str::<TableFile>(text)? {
            TableFile::Full(t) => t,
            TableFile::Bare(entries) => Self {
                entries,
                default: None,
            },
        })
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    pub fn lookup(&self, key: &str) -> Result<f64, BackendError> {
        self.entries
            .get(key.trim())
            .copied()
            .or(self.default)
            .ok_or_else(|| BackendError::new(format!("no table entry for {key:?}")))
    }
}

impl RelevanceBackend for LookupTable {
    fn score_pair(&self, _query: &str, item: &str) -> Result<f64, BackendError> {
        self.lookup(item)
    }
}

impl NliBackend for LookupTable {
    fn entail(&self, source: &str, _claim: &str) -> Result<f64, BackendError> {
        self.lookup(source)
    }
}

const STOPWORDS: &[&str] = &[
    "a", "an", "and", "are", "as", "at", "be", "by", "did", "do", "does", "for", "from", "had",
    "has", "have", "he", "her", "his", "how", "i", "in", "is", "it", "its", "of", "on", "or",
    "she", "that", "the", "their", "there", "they", "this", "to", "was", "were", "what", "when",
    "where", "which", "who", "whom", "why", "will", "with", "you",
    // claim template connectives
    "answer", "question",
];

/// Lowercased alphanumeric tokens with stopwords removed, deduplicated.
pub fn content_tokens(text: &str) -> BTreeSet<String> {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(str::to_lowercase)
        .filter(|t| !STOPWORDS.contains(&t.as_str()))
        .collect()
}

/// Lexical-overlap heuristic.
///
/// As a relevance backend the raw score is the number of content tokens
/// shared by query and item. As an NLI backend the score is the fraction of
/// the claim's content tokens that occur in the source.
#[derive(Debug, Clone, Copy, Default)]
pub struct TokenOverlap;

impl RelevanceBackend for TokenOverlap {
    fn score_pair(&self, query: &str, item: &str) -> Result<f64, BackendError> {
        let q = content_tokens(query);
        Ok(content_tokens(item).intersection(&q).count() as f64)
    }
}

impl NliBackend for TokenOverlap {
    fn entail(&self, source: &str, claim: &str) -> Result<f64, BackendError> {
        let claim = content_tokens(claim);
        if claim.is_empty() {
            return Ok(0.0);
        }
        let source = content_tokens(source);
        Ok(claim.intersection(&source).count() as f64 / claim.len() as f64)
    }
}

/// Hashed bag-of-words embeddings.
#[derive(Debug, Clone, Copy)]
pub struct HashedBagOfWords {
    pub dim: usize,
    pub unit_norm: bool,
}

impl Default for HashedBagOfWords {
    fn default() -> Self {
        Self {
            dim: 64,
            unit_norm: false,
        }
    }
}

impl HashedBagOfWords {
    pub fn new(dim: usize, unit_norm: bool) -> Result<Self> {
        if dim == 0 {
            return Err(Error::InvalidParameter {
                name: "dim",
                reason: "must be at least 1".into(),
            });
        }
        Ok(Self { dim, unit_norm })
    }

    pub fn embed_one(&self, text: &str) -> Vec<f64> {
        let mut v = vec![0.0; self.dim];
        for token in text
            .split(|c: char| !c.is_alphanumeric())
            .filter(|t| !t.is_empty())
        {
            v[(fnv1a(&token.to_lowercase()) % self.dim as u64) as usize] += 1.0;
        }
        if self.unit_norm {
            let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
            if norm > 0.0 {
                v.iter_mut().for_each(|x| *x /= norm);
            }
        }
        v
    }
}

// FNV-1a, 64-bit; stable across platforms and toolchains.
fn fnv1a(s: &str) -> u64 {
    s.bytes().fold(0xcbf2_9ce4_8422_2325, |h, b| {
        (h ^ u64::from(b)).wrapping_mul(0x0100_0000_01b3)
    })
}

impl EmbeddingBackend for HashedBagOfWords {
    fn embed(&self, texts: &[&str]) -> Result<Vec<Vec<f64>>, BackendError> {
        Ok(texts.iter().map(|t| self.embed_one(t)).collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn table_formats() {
        let bare = LookupTable::from_json(r#"{"A": 1.0, "B": -1.0}"#).unwrap();
        assert_eq!(bare.lookup("A").unwrap(), 1.0);
        assert!(bare.lookup("C").is_err());

        let full = LookupTable::from_json(r#"{"entries": {"A": 0.9}, "default": 0.1}"#).unwrap();
        assert_eq!(full.lookup("A").unwrap(), 0.9);
        assert_eq!(full.lookup("zzz").unwrap(), 0.1);
    }

    #[test]
    fn overlap_scores() {
        let rel = TokenOverlap
            .score_pair("capital of France", "Paris is the capital of France")
            .unwrap();
        assert_eq!(rel, 2.0);
        let claim = "The answer to the question Who wrote Hamlet? is Shakespeare.";
        assert_eq!(content_tokens(claim).len(), 3);
        let s = TokenOverlap
            .entail("Shakespeare wrote Hamlet in 1600.", claim)
            .unwrap();
        assert_eq!(s, 1.0);
        assert_eq!(TokenOverlap.entail("Dogs bark.", claim).unwrap(), 0.0);
    }

    #[test]
    fn hashed_embedding_is_deterministic() {
        let e = HashedBagOfWords::default();
        let a = e.embed_one("cats purr loudly");
        assert_eq!(a, e.embed_one("Cats purr, loudly!"));
        assert_eq!(a.len(), 64);
        assert_eq!(a.iter().sum::<f64>(), 3.0);

        let unit = HashedBagOfWords::new(64, true)
            .unwrap()
            .embed_one("cats purr loudly");
        assert!((unit.iter().map(|x| x * x).sum::<f64>() - 1.0).abs() < 1e-12);
        assert!(HashedBagOfWords::new(0, false).is_err());
    }
}
