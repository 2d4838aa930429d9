//! In-process inference over an exported cross-encoder.
//!
//! An export directory holds `manifest.json` at its root plus the ONNX graph
//! and tokenizer assets it lists. Every listed file is size- and
//! sha256-checked before the model is loaded.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use tokenizers::{Tokenizer, TruncationParams};
use tract_onnx::prelude::*;

use super::BackendError;
use crate::error::{Error, Result};
use crate::factcheck::NliBackend;
use crate::relevancy::{softmax, RelevanceBackend};

pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExportManifest {
    pub model_id: String,
    /// Graph file, relative to the export directory.
    pub graph: String,
    /// Tokenizer assets; the first entry is loaded as a `tokenizer.json`.
    pub tokenizer: Vec<String>,
    pub files: Vec<ManifestFile>,
    pub inputs: Vec<TensorSpec>,
    pub outputs: Vec<TensorSpec>,
    pub score_interpretation: ScoreInterpretation,
    pub max_sequence_length: usize,
    /// Class whose probability is the entailment score, for multi-class heads.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub entailment_class: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManifestFile {
    pub path: String,
    pub size: u64,
    pub sha256: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TensorSpec {
    pub name: String,
    pub shape: Vec<Dim>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Dim {
    Fixed(usize),
    Symbolic(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ScoreInterpretation {
    /// Single unbounded logit.
    RawLogit,
    /// Single value already in [0, 1].
    Probability,
    /// Class logits; softmax, then take `entailment_class`.
    ClassLogits,
}

impl ExportManifest {
    pub fn load(dir: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(dir.join(MANIFEST_FILE))?;
        let manifest: Self = serde_json::from_str(&text)?;
        manifest.validate()?;
        Ok(manifest)
    }

    fn validate(&self) -> Result<()> {
        if self.max_sequence_length == 0 {
            return Err(Error::Model("max_sequence_length must be positive".into()));
        }
        if self.tokenizer.is_empty() {
            return Err(Error::Model("manifest lists no tokenizer assets".into()));
        }
        if self.score_interpretation == ScoreInterpretation::ClassLogits
            && self.entailment_class.is_none()
        {
            return Err(Error::Model(
                "class-logits interpretation needs entailment_class".into(),
            ));
        }
        Ok(())
    }

    /// Checks every listed file against its recorded size and sha256.
    pub fn verify_files(&self, dir: &Path) -> Result<()> {
        for file in &self.files {
            let bytes = std::fs::read(dir.join(&file.path))
                .map_err(|e| Error::Model(format!("{}: {e}", file.path)))?;
            if bytes.len() as u64 != file.size {
                return Err(Error::Model(format!(
                    "{}: size {} does not match manifest size {}",
                    file.path,
                    bytes.len(),
                    file.size
                )));
            }
            let digest = hex::encode(Sha256::digest(&bytes));
            if !digest.eq_ignore_ascii_case(&file.sha256) {
                return Err(Error::Model(format!("{}: checksum mismatch", file.path)));
            }
        }
        Ok(())
    }

    /// Maps the model's output vector to a single score.
    pub fn interpret(&self, outputs: &[f32]) -> Result<f64, BackendError> {
        let outputs: Vec<f64> = outputs.iter().map(|&x| f64::from(x)).collect();
        match self.score_interpretation {
            ScoreInterpretation::RawLogit | ScoreInterpretation::Probability => outputs
                .first()
                .copied()
                .ok_or_else(|| BackendError::new("model produced no output")),
            ScoreInterpretation::ClassLogits => {
                let class = self.entailment_class.unwrap_or_default();
                softmax(&outputs).get(class).copied().ok_or_else(|| {
                    BackendError::new(format!(
                        "entailment class {class} out of range for {} outputs",
                        outputs.len()
                    ))
                })
            }
        }
    }
}

enum Feed {
    Ids,
    Mask,
    TypeIds,
}

/// A cross-encoder loaded from an export directory. Serves as a relevance
/// backend (query, item) or an NLI backend (source, claim).
pub struct LocalCrossEncoder {
    manifest: ExportManifest,
    dir: PathBuf,
    tokenizer: Tokenizer,
    plan: std::sync::Arc<TypedSimplePlan>,
    feeds: Vec<Feed>,
}

impl std::fmt::Debug for LocalCrossEncoder {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("LocalCrossEncoder")
            .field("model_id", &self.manifest.model_id)
            .field("dir", &self.dir)
            .finish_non_exhaustive()
    }
}

fn model_err(e: impl std::fmt::Display) -> Error {
    Error::Model(e.to_string())
}

impl LocalCrossEncoder {
    pub fn load(dir: impl AsRef<Path>) -> Result<Self> {
        let dir = dir.as_ref().to_path_buf();
        let manifest = ExportManifest::load(&dir)?;
        manifest.verify_files(&dir)?;

        let mut tokenizer =
            Tokenizer::from_file(dir.join(&manifest.tokenizer[0])).map_err(model_err)?;
        tokenizer
            .with_truncation(Some(TruncationParams {
                max_length: manifest.max_sequence_length,
                ..Default::default()
            }))
            .map_err(model_err)?;
        tokenizer.with_padding(None);

        let model = tract_onnx::onnx()
            .model_for_path(dir.join(&manifest.graph))
            .map_err(model_err)?;
        let feeds = model
            .input_outlets()
            .map_err(model_err)?
            .iter()
            .map(|o| match model.node(o.node).name.as_str() {
                "input_ids" => Ok(Feed::Ids),
                "attention_mask" => Ok(Feed::Mask),
                "token_type_ids" => Ok(Feed::TypeIds),
                other => Err(Error::Model(format!("unsupported graph input `{other}`"))),
            })
            .collect::<Result<Vec<_>>>()?;
        let plan = model
            .into_optimized()
            .map_err(model_err)?
            .into_runnable()
            .map_err(model_err)?;

        Ok(Self {
            manifest,
            dir,
            tokenizer,
            plan,
            feeds,
        })
    }

    pub fn manifest(&self) -> &ExportManifest {
        &self.manifest
    }

    /// Runs the model on one text pair and returns its raw output vector.
    pub fn forward(&self, first: &str, second: &str) -> Result<Vec<f32>, BackendError> {
        let encoding = self
            .tokenizer
            .encode((first, second), true)
            .map_err(|e| BackendError::new(format!("tokenization failed: {e}")))?;
        if !encoding.get_overflowing().is_empty() {
            tracing::warn!(
                model = %self.manifest.model_id,
                max_len = self.manifest.max_sequence_length,
                "pair truncated"
            );
        }

        let len = encoding.get_ids().len();
        let to_tensor = |values: &[u32]| -> Result<TValue, BackendError> {
            let data: Vec<i64> = values.iter().map(|&v| i64::from(v)).collect();
            tract_ndarray::Array2::from_shape_vec((1, len), data)
                .map(|a| a.into_tensor().into_tvalue())
                .map_err(|e| BackendError::new(e.to_string()))
        };
        let inputs = self
            .feeds
            .iter()
            .map(|f| match f {
                Feed::Ids => to_tensor(encoding.get_ids()),
                Feed::Mask => to_tensor(encoding.get_attention_mask()),
                Feed::TypeIds => to_tensor(encoding.get_type_ids()),
            })
            .collect::<Result<TVec<_>, _>>()?;

        let outputs = self
            .plan
            .run(inputs)
            .map_err(|e| BackendError::new(format!("inference failed: {e}")))?;
        let view = outputs[0]
            .to_plain_array_view::<f32>()
            .map_err(|e| BackendError::new(e.to_string()))?;
        Ok(view.iter().copied().collect())
    }

    /// Score for one pair under the manifest's interpretation.
    pub fn score(&self, first: &str, second: &str) -> Result<f64, BackendError> {
        self.manifest.interpret(&self.forward(first, second)?)
    }
}

impl RelevanceBackend for LocalCrossEncoder {
    fn score_pair(&self, query: &str, item: &str) -> Result<f64, BackendError> {
        self.score(query, item)
    }
}

impl NliBackend for LocalCrossEncoder {
    fn entail(&self, source: &str, claim: &str) -> Result<f64, BackendError> {
        let s = self.score(source, claim)?;
        Ok(match self.manifest.score_interpretation {
            ScoreInterpretation::RawLogit => 1.0 / (1.0 + (-s).exp()),
            _ => s,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn manifest(interp: ScoreInterpretation, class: Option<usize>) -> ExportManifest {
        ExportManifest {
            model_id: "m".into(),
            graph: "model.onnx".into(),
            tokenizer: vec!["tokenizer.json".into()],
            files: vec![],
            inputs: vec![],
            outputs: vec![],
            score_interpretation: interp,
            max_sequence_length: 8,
            entailment_class: class,
        }
    }

    #[test]
    fn interpretations() {
        let raw = manifest(ScoreInterpretation::RawLogit, None);
        assert_eq!(raw.interpret(&[2.5]).unwrap(), 2.5);
        assert!(raw.interpret(&[]).is_err());

        let cls = manifest(ScoreInterpretation::ClassLogits, Some(1));
        let p = cls.interpret(&[0.0, 0.0]).unwrap();
        assert!((p - 0.5).abs() < 1e-12);
        let out_of_range = manifest(ScoreInterpretation::ClassLogits, Some(5));
        assert!(out_of_range.interpret(&[0.0, 0.0]).is_err());
    }

    #[test]
    fn class_logits_need_a_class() {
        assert!(manifest(ScoreInterpretation::ClassLogits, None)
            .validate()
            .is_err());
        assert!(manifest(ScoreInterpretation::Probability, None)
            .validate()
            .is_ok());
    }
}
