//! Core value types, claim construction, and sentence splitting.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::factcheck::Aggregation;
use crate::selection::SelectionStrategy;

pub const QUERY_PLACEHOLDER: &str = "{query}";
pub const ANSWER_PLACEHOLDER: &str = "{answer}";

/// Default claim wording.
pub const DEFAULT_CLAIM_TEMPLATE: &str = "The answer to the question {query} is {answer}.";
/// Alternative wording without the article before "question".
pub const SHORT_CLAIM_TEMPLATE: &str = "The answer to question {query} is {answer}.";

/// One retrieved chunk or sentence, with its original position.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ContextItem {
    pub text: String,
    pub index: usize,
}

impl ContextItem {
    pub fn new(text: impl Into<String>, index: usize) -> Result<Self> {
        let text = text.into().trim().to_string();
        if text.is_empty() {
            return Err(Error::EmptyField(format!("contexts[{index}]")));
        }
        Ok(Self { text, index })
    }
}

/// A query, the generated answer to verify, and the context it was generated from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckInput {
    pub query: String,
    pub answer: String,
    pub contexts: Vec<ContextItem>,
}

impl CheckInput {
    /// Builds an input from plain context strings; indices follow list order.
    pub fn new<S: AsRef<str>>(query: &str, answer: &str, contexts: &[S]) -> Result<Self> {
        let items = contexts
            .iter()
            .enumerate()
            .map(|(i, c)| ContextItem::new(c.as_ref(), i))
            .collect::<Result<Vec<_>>>()?;
        Self::from_items(query, answer, items)
    }

    /// Builds an input from pre-indexed items. The list may be in any order
    /// but the indices must be exactly `0..n`.
    pub fn from_items(query: &str, answer: &str, contexts: Vec<ContextItem>) -> Result<Self> {
        let input = Self {
            query: query.trim().to_string(),
            answer: answer.trim().to_string(),
            contexts: contexts
                .into_iter()
                .map(|c| ContextItem::new(c.text, c.index))
                .collect::<Result<_>>()?,
        };
        input.validate()?;
        Ok(input)
    }

    pub fn validate(&self) -> Result<()> {
        if self.query.trim().is_empty() {
            return Err(Error::EmptyField("query".into()));
        }
        if self.answer.trim().is_empty() {
            return Err(Error::EmptyField("answer".into()));
        }
        if self.contexts.is_empty() {
            return Err(Error::EmptyInput);
        }
        let n = self.contexts.len();
        let mut seen = vec![false; n];
        for c in &self.contexts {
            if c.text.trim().is_empty() {
                return Err(Error::EmptyField(format!("contexts[{}]", c.index)));
            }
            match seen.get_mut(c.index) {
                Some(slot) if !*slot => *slot = true,
                Some(_) => {
                    return Err(Error::InvalidIndices(format!(
                        "duplicate index {}",
                        c.index
                    )))
                }
                None => {
                    return Err(Error::InvalidIndices(format!(
                        "index {} out of range for {n} contexts",
                        c.index
                    )))
                }
            }
        }
        Ok(())
    }
}

/// The claim checked against each selected source.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClaimPrompt {
    pub text: String,
    pub template_id: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PipelineConfig {
    pub selection_strategy: SelectionStrategy,
    pub top_k: usize,
    pub top_p: f64,
    pub aggregation: Aggregation,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub threshold: Option<f64>,
    pub temporal_ordering: bool,
    pub claim_template: String,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            selection_strategy: SelectionStrategy::TopP,
            top_k: 5,
            top_p: 0.9,
            aggregation: Aggregation::Max,
            threshold: None,
            temporal_ordering: true,
            claim_template: DEFAULT_CLAIM_TEMPLATE.to_string(),
        }
    }
}

impl PipelineConfig {
    pub fn validate(&self) -> Result<()> {
        if self.top_k == 0 {
            return Err(Error::InvalidParameter {
                name: "top_k",
                reason: "must be at least 1".into(),
            });
        }
        check_top_p(self.top_p)?;
        if let Some(t) = self.threshold {
            if !(0.0..=1.0).contains(&t) {
                return Err(Error::InvalidParameter {
                    name: "threshold",
                    reason: format!("{t} outside [0, 1]"),
                });
            }
        }
        validate_template(&self.claim_template)
    }
}

pub(crate) fn check_top_p(p: f64) -> Result<()> {
    if p > 0.0 && p <= 1.0 {
        Ok(())
    } else {
        Err(Error::InvalidParameter {
            name: "top_p",
            reason: format!("{p} outside (0, 1]"),
        })
    }
}

/// Checks that both placeholders occur exactly once.
pub fn validate_template(template: &str) -> Result<()> {
    for placeholder in [QUERY_PLACEHOLDER, ANSWER_PLACEHOLDER] {
        match template.matches(placeholder).count() {
            1 => {}
            0 => return Err(Error::MalformedTemplate(format!("missing {placeholder}"))),
            n => {
                return Err(Error::MalformedTemplate(format!(
                    "{placeholder} appears {n} times"
                )))
            }
        }
    }
    Ok(())
}

fn template_id(template: &str) -> &'static str {
    match template {
        DEFAULT_CLAIM_TEMPLATE => "default",
        SHORT_CLAIM_TEMPLATE => "short",
        _ => "custom",
    }
}

/// Substitutes query and answer into `template`.
///
/// Substitution is positional, so placeholder-like text inside the query or
/// answer is copied through untouched.
pub fn build_claim(query: &str, answer: &str, template: &str) -> Result<ClaimPrompt> {
    if query.trim().is_empty() {
        return Err(Error::EmptyField("query".into()));
    }
    if answer.trim().is_empty() {
        return Err(Error::EmptyField("answer".into()));
    }
    validate_template(template)?;

    let q_at = template.find(QUERY_PLACEHOLDER).expect("validated");
    let a_at = template.find(ANSWER_PLACEHOLDER).expect("validated");
    let mut parts = [
        (q_at, QUERY_PLACEHOLDER.len(), query),
        (a_at, ANSWER_PLACEHOLDER.len(), answer),
    ];
    parts.sort_by_key(|p| p.0);

    let mut text = String::with_capacity(template.len() + query.len() + answer.len());
    let mut cursor = 0;
    for (at, len, value) in parts {
        text.push_str(&template[cursor..at]);
        text.push_str(value);
        cursor = at + len;
    }
    text.push_str(&template[cursor..]);

    Ok(ClaimPrompt {
        text,
        template_id: template_id(template).to_string(),
    })
}

/// Splits paragraphs into sentence-level context items.
pub trait SentenceSplitter: Send + Sync {
    fn split(&self, paragraph: &str) -> Vec<ContextItem>;
}

/// Terminal punctuation followed by whitespace and an uppercase letter or
/// digit (or end of text) ends a sentence, except after known abbreviations.
#[derive(Debug, Clone, Copy, Default)]
pub struct RuleSplitter;

const ABBREVIATIONS: &[&str] = &["mr.", "mrs.", "ms.", "dr.", "e.g.", "i.e.", "etc.", "vs."];

impl SentenceSplitter for RuleSplitter {
    fn split(&self, paragraph: &str) -> Vec<ContextItem> {
        split_sentences(paragraph)
    }
}

pub fn split_sentences(paragraph: &str) -> Vec<ContextItem> {
    let text = paragraph.trim();
    let mut sentences = Vec::new();
    let mut start = 0;
    let mut chars = text.char_indices().peekable();

    while let Some((i, c)) = chars.next() {
        if !matches!(c, '.' | '!' | '?') {
            continue;
        }
        // Consume the whole run of terminators ("?!", "...").
        let mut end = i + c.len_utf8();
        let mut single_period = c == '.';
        while let Some(&(j, next)) = chars.peek() {
            if matches!(next, '.' | '!' | '?') {
                end = j + next.len_utf8();
                single_period = false;
                chars.next();
            } else {
                break;
            }
        }

        let rest = &text[end..];
        let boundary = match rest.chars().next() {
            None => true,
            Some(w) if w.is_whitespace() => rest
                .trim_start()
                .chars()
                .next()
                .is_none_or(|n| n.is_uppercase() || n.is_ascii_digit()),
            Some(_) => false,
        };
        if !boundary {
            continue;
        }
        if single_period && is_abbreviation(&text[start..end]) {
            continue;
        }

        push_sentence(&mut sentences, &text[start..end]);
        start = end;
    }
    push_sentence(&mut sentences, &text[start..]);
    sentences
}

fn is_abbreviation(segment: &str) -> bool {
    let word = segment
        .rsplit(char::is_whitespace)
        .next()
        .unwrap_or(segment)
        .trim_start_matches(|c: char| !c.is_alphanumeric())
        .to_lowercase();
    ABBREVIATIONS.contains(&word.as_str())
}

fn push_sentence(out: &mut Vec<ContextItem>, raw: &str) {
    let s = raw.trim();
    if !s.is_empty() {
        out.push(ContextItem {
            text: s.to_string(),
            index: out.len(),
        });
    }
}
