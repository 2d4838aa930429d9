use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::sync::Arc;
use std::time::Duration;

use ragcheck_core::backends::remote::RemoteBackend;
use ragcheck_core::backends::stub::{LookupTable, TokenOverlap};
use ragcheck_core::{NliBackend, RelevanceBackend};
use serde::{Deserialize, Serialize};

const DEFAULT_REMOTE_TIMEOUT_MS: u64 = 30_000;

/// A backend that can serve as either pipeline stage.
pub trait Scorer: RelevanceBackend + NliBackend {}

impl<T: RelevanceBackend + NliBackend> Scorer for T {}

/// Where a backend comes from.
///
/// On the command line: `overlap`, `table:PATH`, `remote:URL` or `local:DIR`.
/// In a config file: a table with a `kind` key (`stub`, `remote`, `local`).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum BackendSpec {
    /// Lookup table when `table` is set, token overlap otherwise.
    Stub {
        #[serde(default, skip_serializing_if = "Option::is_none")]
        table: Option<PathBuf>,
    },
    Remote {
        url: String,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        timeout_ms: Option<u64>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        batch_size: Option<usize>,
    },
    Local {
        model: PathBuf,
    },
}

impl Default for BackendSpec {
    fn default() -> Self {
        Self::Stub { table: None }
    }
}

impl FromStr for BackendSpec {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let (kind, rest) = s.split_once(':').unwrap_or((s, ""));
        match (kind, rest) {
            ("overlap" | "stub", "") => Ok(Self::Stub { table: None }),
            ("table", path) if !path.is_empty() => Ok(Self::Stub {
                table: Some(path.into()),
            }),
            ("remote", url) if !url.is_empty() => Ok(Self::Remote {
                url: url.to_string(),
                timeout_ms: None,
                batch_size: None,
            }),
            ("local", dir) if !dir.is_empty() => Ok(Self::Local { model: dir.into() }),
            _ => Err(format!(
                "invalid backend `{s}` (expected overlap, table:PATH, remote:URL or local:DIR)"
            )),
        }
    }
}

impl fmt::Display for BackendSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Stub { table: None } => f.write_str("overlap"),
            Self::Stub { table: Some(p) } => write!(f, "table:{}", p.display()),
            Self::Remote { url, .. } => write!(f, "remote:{url}"),
            Self::Local { model } => write!(f, "local:{}", model.display()),
        }
    }
}

impl BackendSpec {
    /// Resolves relative paths against `base`.
    pub fn rebase(self, base: &Path) -> Self {
        match self {
            Self::Stub { table: Some(p) } if p.is_relative() => Self::Stub {
                table: Some(base.join(p)),
            },
            Self::Local { model } if model.is_relative() => Self::Local {
                model: base.join(model),
            },
            other => other,
        }
    }

    pub fn build(&self) -> ragcheck_core::Result<Arc<dyn Scorer>> {
        Ok(match self {
            Self::Stub { table: None } => Arc::new(TokenOverlap),
            Self::Stub { table: Some(path) } => Arc::new(LookupTable::load(path)?),
            Self::Remote {
                url,
                timeout_ms,
                batch_size,
            } => {
                let timeout =
                    Duration::from_millis(timeout_ms.unwrap_or(DEFAULT_REMOTE_TIMEOUT_MS));
                let mut backend = RemoteBackend::new(url, timeout);
                if let Some(n) = batch_size {
                    backend = backend.with_batch_size(*n);
                }
                Arc::new(backend)
            }
            #[cfg(feature = "local")]
            Self::Local { model } => Arc::new(
                ragcheck_core::backends::local::LocalCrossEncoder::load(model)?,
            ),
            #[cfg(not(feature = "local"))]
            Self::Local { .. } => {
                return Err(ragcheck_core::Error::Model(
                    "built without the `local` feature".into(),
                ))
            }
        })
    }
}
