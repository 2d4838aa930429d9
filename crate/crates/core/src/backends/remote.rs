//! HTTP scoring backend.
//!
//! Wire protocol: `POST {base}/score` with `{"query": str, "items": [str]}`,
//! answered by `{"scores": [number]}` holding one score per item. Any
//! non-200 status is a backend failure.
//!
//! Used as an NLI backend, the claim travels in `query` and the sources in
//! `items`; the server is expected to score each (source, claim) pair.

use std::time::Duration;

use serde::{Deserialize, Serialize};
use ureq::Agent;

use super::BackendError;
use crate::factcheck::NliBackend;
use crate::relevancy::RelevanceBackend;

#[derive(Debug, Serialize)]
pub struct ScoreRequest<'a> {
    pub query: &'a str,
    pub items: &'a [&'a str],
}

#[derive(Debug, Deserialize)]
pub struct ScoreResponse {
    pub scores: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct RemoteBackend {
    url: String,
    agent: Agent,
    batch_size: usize,
}

impl RemoteBackend {
    /// `base_url` is the server root; requests go to `{base_url}/score`.
    pub fn new(base_url: &str, timeout: Duration) -> Self {
        let agent: Agent = Agent::config_builder()
            .timeout_global(Some(timeout))
            .http_status_as_error(false)
            .build()
            .into();
        Self {
            url: format!("{}/score", base_url.trim_end_matches('/')),
            agent,
            batch_size: 64,
        }
    }

    pub fn with_batch_size(mut self, batch_size: usize) -> Self {
        self.batch_size = batch_size.max(1);
        self
    }

    pub fn url(&self) -> &str {
        &self.url
    }

    fn request(&self, query: &str, items: &[&str]) -> Result<Vec<f64>, BackendError> {
        let mut scores = Vec::with_capacity(items.len());
        for chunk in items.chunks(self.batch_size) {
            let mut resp = self
                .agent
                .post(&self.url)
                .send_json(ScoreRequest {
                    query,
                    items: chunk,
                })
                .map_err(|e| BackendError::new(format!("POST {}: {e}", self.url)))?;
            let status = resp.status();
            if status != 200 {
                let body = resp.body_mut().read_to_string().unwrap_or_default();
                return Err(BackendError::new(format!(
                    "POST {} returned {status}: {}",
                    self.url,
                    body.trim()
                )));
            }
            let parsed: ScoreResponse = resp
                .body_mut()
                .read_json()
                .map_err(|e| BackendError::new(format!("bad response body: {e}")))?;
            if parsed.scores.len() != chunk.len() {
                return Err(BackendError::new(format!(
                    "expected {} scores, got {}",
                    chunk.len(),
                    parsed.scores.len()
                )));
            }
            scores.extend(parsed.scores);
        }
        Ok(scores)
    }
}

impl RelevanceBackend for RemoteBackend {
    fn score_pair(&self, query: &str, item: &str) -> Result<f64, BackendError> {
        Ok(self.request(query, &[item])?[0])
    }

    fn score_batch(&self, query: &str, items: &[&str]) -> Result<Vec<f64>, BackendError> {
        self.request(query, items)
    }
}

impl NliBackend for RemoteBackend {
    fn entail(&self, source: &str, claim: &str) -> Result<f64, BackendError> {
        Ok(self.request(claim, &[source])?[0])
    }

    fn entail_batch(&self, sources: &[&str], claim: &str) -> Result<Vec<f64>, BackendError> {
        self.request(claim, sources)
    }
}
