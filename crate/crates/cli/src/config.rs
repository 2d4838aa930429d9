//! Configuration layering: flags and `PROVENANCE_*` variables (both handled
//! by clap) override the TOML config file, which overrides built-in defaults.

use std::net::SocketAddr;
use std::path::Path;

use anyhow::{bail, Context};
use ragcheck_core::{Aggregation, PipelineConfig, SelectionStrategy};
use serde::{Deserialize, Serialize};

use crate::backend::BackendSpec;

pub const DEFAULT_LISTEN: &str = "127.0.0.1:8080";
pub const DEFAULT_REQUEST_TIMEOUT_MS: u64 = 30_000;
pub const DEFAULT_MAX_CONCURRENT: usize = 16;

/// Partial pipeline settings. Used for config files, flags and per-request
/// overrides in the service.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PipelineOverrides {
    pub selection_strategy: Option<SelectionStrategy>,
    pub top_k: Option<usize>,
    pub top_p: Option<f64>,
    pub aggregation: Option<Aggregation>,
    pub threshold: Option<f64>,
    pub temporal_ordering: Option<bool>,
    pub claim_template: Option<String>,
}

impl PipelineOverrides {
    pub fn apply(&self, config: &mut PipelineConfig) {
        if let Some(v) = self.selection_strategy {
            config.selection_strategy = v;
        }
        if let Some(v) = self.top_k {
            config.top_k = v;
        }
        if let Some(v) = self.top_p {
            config.top_p = v;
        }
        if let Some(v) = self.aggregation {
            config.aggregation = v;
        }
        if let Some(v) = self.threshold {
            config.threshold = Some(v);
        }
        if let Some(v) = self.temporal_ordering {
            config.temporal_ordering = v;
        }
        if let Some(v) = &self.claim_template {
            config.claim_template = v.clone();
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileConfig {
    pub listen: Option<String>,
    pub request_timeout_ms: Option<u64>,
    pub max_concurrent_requests: Option<usize>,
    pub relevance: Option<BackendSpec>,
    pub nli: Option<BackendSpec>,
    #[serde(default)]
    pub pipeline: PipelineOverrides,
}

impl FileConfig {
    /// Reads a TOML file; backend paths are taken relative to its directory.
    pub fn load(path: &Path) -> anyhow::Result<Self> {
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("reading config file {}", path.display()))?;
        let mut config: Self = toml::from_str(&text)
            .with_context(|| format!("parsing config file {}", path.display()))?;
        let base = path.parent().unwrap_or(Path::new("."));
        config.relevance = config.relevance.map(|b| b.rebase(base));
        config.nli = config.nli.map(|b| b.rebase(base));
        Ok(config)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ServiceConfig {
    pub listen: SocketAddr,
    pub relevance: BackendSpec,
    pub nli: BackendSpec,
    pub pipeline: PipelineConfig,
    pub request_timeout_ms: u64,
    pub max_concurrent_requests: usize,
}

impl Default for ServiceConfig {
    fn default() -> Self {
        Self {
            listen: DEFAULT_LISTEN.parse().expect("valid default address"),
            relevance: BackendSpec::default(),
            nli: BackendSpec::default(),
            pipeline: PipelineConfig::default(),
            request_timeout_ms: DEFAULT_REQUEST_TIMEOUT_MS,
            max_concurrent_requests: DEFAULT_MAX_CONCURRENT,
        }
    }
}

impl ServiceConfig {
    pub fn validate(&self) -> anyhow::Result<()> {
        if self.request_timeout_ms == 0 {
            bail!("request_timeout_ms must be positive");
        }
        if self.max_concurrent_requests == 0 {
            bail!("max_concurrent_requests must be positive");
        }
        self.pipeline.validate()?;
        Ok(())
    }
}

/// Settings given on the command line or through the environment.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub listen: Option<SocketAddr>,
    pub request_timeout_ms: Option<u64>,
    pub max_concurrent_requests: Option<usize>,
    pub relevance: Option<BackendSpec>,
    pub nli: Option<BackendSpec>,
    pub pipeline: PipelineOverrides,
}

/// Layers `overrides` over `file` over defaults.
pub fn resolve(file: Option<&FileConfig>, overrides: &Overrides) -> anyhow::Result<ServiceConfig> {
    let mut config = ServiceConfig::default();
    if let Some(file) = file {
        if let Some(listen) = &file.listen {
            config.listen = listen
                .parse()
                .with_context(|| format!("invalid listen address `{listen}`"))?;
        }
        if let Some(v) = file.request_timeout_ms {
            config.request_timeout_ms = v;
        }
        if let Some(v) = file.max_concurrent_requests {
            config.max_concurrent_requests = v;
        }
        if let Some(b) = &file.relevance {
            config.relevance = b.clone();
        }
        if let Some(b) = &file.nli {
            config.nli = b.clone();
        }
        file.pipeline.apply(&mut config.pipeline);
    }

    if let Some(v) = overrides.listen {
        config.listen = v;
    }
    if let Some(v) = overrides.request_timeout_ms {
        config.request_timeout_ms = v;
    }
    if let Some(v) = overrides.max_concurrent_requests {
        config.max_concurrent_requests = v;
    }
    if let Some(b) = &overrides.relevance {
        config.relevance = b.clone();
    }
    if let Some(b) = &overrides.nli {
        config.nli = b.clone();
    }
    overrides.pipeline.apply(&mut config.pipeline);

    config.validate()?;
    Ok(config)
}
