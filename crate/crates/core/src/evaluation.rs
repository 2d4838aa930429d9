//! Labeled-dataset evaluation: ingest, ROC/AUC, accuracy, threshold tuning,
//! and run persistence.

use std::cmp::Ordering;
use std::io::{BufRead, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::Value;
use sha2::{Digest, Sha256};

use crate::domain::{split_sentences, CheckInput, PipelineConfig};
use crate::error::{Error, Result};
use crate::factcheck::{verdict, FactualityReport};
use crate::format::{round_sig, sig9, sig9_opt};

/// One labeled (query, answer, sources) triplet. Label 1 is factual,
/// 0 is a hallucination.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EvalRecord {
    pub id: String,
    pub query: String,
    pub answer: String,
    pub sources: Vec<String>,
    pub label: u8,
}

impl EvalRecord {
    pub fn to_input(&self) -> Result<CheckInput> {
        CheckInput::new(&self.query, &self.answer, &self.sources)
    }

    /// Replaces every source paragraph by its sentences.
    pub fn expand_sentences(&mut self) {
        self.sources = self
            .sources
            .iter()
            .flat_map(|s| split_sentences(s))
            .map(|c| c.text)
            .collect();
    }
}

fn invalid(line: usize, field: &str, reason: impl Into<String>) -> Error {
    Error::ValidationError {
        line,
        field: field.to_string(),
        reason: reason.into(),
    }
}

fn text_field(obj: &serde_json::Map<String, Value>, line: usize, field: &str) -> Result<String> {
    match obj.get(field) {
        None | Some(Value::Null) => Err(invalid(line, field, "is missing")),
        Some(Value::String(s)) if !s.trim().is_empty() => Ok(s.trim().to_string()),
        Some(Value::String(_)) => Err(invalid(line, field, "is empty")),
        Some(_) => Err(invalid(line, field, "must be a string")),
    }
}

/// Parses one dataset line. `line` is 1-based and only used in errors.
pub fn parse_record(text: &str, line: usize) -> Result<EvalRecord> {
    let value: Value = serde_json::from_str(text).map_err(|e| Error::ParseError {
        line,
        message: e.to_string(),
    })?;
    let Value::Object(obj) = value else {
        return Err(Error::ParseError {
            line,
            message: "expected a JSON object".into(),
        });
    };

    let id = match obj.get("id") {
        Some(Value::Number(n)) => n.to_string(),
        _ => text_field(&obj, line, "id")?,
    };
    let query = text_field(&obj, line, "query")?;
    let answer = text_field(&obj, line, "answer")?;

    let sources = match obj.get("sources") {
        None | Some(Value::Null) => return Err(invalid(line, "sources", "is missing")),
        Some(Value::Array(items)) => items
            .iter()
            .map(|v| match v {
                Value::String(s) if !s.trim().is_empty() => Ok(s.trim().to_string()),
                _ => Err(invalid(
                    line,
                    "sources",
                    "entries must be non-empty strings",
                )),
            })
            .collect::<Result<Vec<_>>>()?,
        Some(_) => return Err(invalid(line, "sources", "must be a list of strings")),
    };
    if sources.is_empty() {
        return Err(invalid(line, "sources", "is empty"));
    }

    let label = match obj.get("label") {
        None | Some(Value::Null) => return Err(invalid(line, "label", "is missing")),
        Some(v) => match v.as_u64() {
            Some(l @ (0 | 1)) => l as u8,
            _ => return Err(invalid(line, "label", "must be 0 or 1")),
        },
    };

    Ok(EvalRecord {
        id,
        query,
        answer,
        sources,
        label,
    })
}

/// Reads one record per line; blank lines are skipped.
pub fn read_dataset(reader: impl BufRead, expand_sentences: bool) -> Result<Vec<EvalRecord>> {
    let mut records = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let mut record = parse_record(&line, i + 1)?;
        if expand_sentences {
            record.expand_sentences();
        }
        records.push(record);
    }
    Ok(records)
}

pub fn load_dataset(path: impl AsRef<Path>, expand_sentences: bool) -> Result<Vec<EvalRecord>> {
    let file = std::fs::File::open(path)?;
    read_dataset(std::io::BufReader::new(file), expand_sentences)
}

pub fn write_dataset(records: &[EvalRecord], mut out: impl Write) -> Result<()> {
    for r in records {
        serde_json::to_writer(&mut out, r)?;
        out.write_all(b"\n")?;
    }
    Ok(())
}

fn check_lengths(scores: &[f64], labels: &[u8]) -> Result<()> {
    if scores.len() != labels.len() {
        return Err(Error::LengthMismatch {
            scores: scores.len(),
            labels: labels.len(),
        });
    }
    if let Some(i) = scores.iter().position(|s| s.is_nan()) {
        return Err(Error::NonFiniteScore { item: i });
    }
    if labels.iter().any(|&l| l > 1) {
        return Err(Error::InvalidParameter {
            name: "labels",
            reason: "labels must be 0 or 1".into(),
        });
    }
    Ok(())
}

fn class_counts(labels: &[u8]) -> Result<(u64, u64)> {
    let pos = labels.iter().filter(|&&l| l == 1).count() as u64;
    let neg = labels.len() as u64 - pos;
    if pos == 0 || neg == 0 {
        return Err(Error::SingleClass);
    }
    Ok((pos, neg))
}

/// Indices sorted by ascending score, grouped into runs of equal scores.
fn tie_groups(scores: &[f64]) -> Vec<std::ops::Range<usize>> {
    let mut groups = Vec::new();
    let mut start = 0;
    for i in 1..=scores.len() {
        if i == scores.len() || scores[i] != scores[start] {
            groups.push(start..i);
            start = i;
        }
    }
    groups
}

fn sorted_by_score(scores: &[f64], labels: &[u8]) -> (Vec<f64>, Vec<u8>) {
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].partial_cmp(&scores[b]).unwrap_or(Ordering::Equal));
    (
        order.iter().map(|&i| scores[i]).collect(),
        order.iter().map(|&i| labels[i]).collect(),
    )
}

/// Area under the ROC curve via the rank-sum (Mann-Whitney) statistic,
/// with tied scores sharing their average rank.
///
/// Ranks are tracked doubled so the whole computation is exact integer
/// arithmetic until the final division.
pub fn auc(scores: &[f64], labels: &[u8]) -> Result<f64> {
    check_lengths(scores, labels)?;
    let (pos, neg) = class_counts(labels)?;
    let (sorted, sorted_labels) = sorted_by_score(scores, labels);

    let mut doubled_rank_sum: u128 = 0;
    for group in tie_groups(&sorted) {
        let positives = sorted_labels[group.clone()]
            .iter()
            .filter(|&&l| l == 1)
            .count() as u128;
        // Ranks start+1..=end average to (start + 1 + end) / 2.
        doubled_rank_sum += positives * (group.start as u128 + 1 + group.end as u128);
    }
    let pos = pos as u128;
    let numerator = doubled_rank_sum - pos * (pos + 1);
    Ok(numerator as f64 / (2 * pos * neg as u128) as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RocPoint {
    pub false_positive_rate: f64,
    pub true_positive_rate: f64,
    /// Scores at or above this value are predicted factual.
    pub threshold: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RocCurve {
    pub points: Vec<RocPoint>,
}

impl RocCurve {
    /// Trapezoidal area under the curve.
    pub fn area(&self) -> f64 {
        self.points
            .windows(2)
            .map(|w| {
                (w[1].false_positive_rate - w[0].false_positive_rate)
                    * (w[1].true_positive_rate + w[0].true_positive_rate)
                    / 2.0
            })
            .sum()
    }

    /// Writes `fpr,tpr,threshold` rows for external plotting.
    pub fn write_csv(&self, mut out: impl Write) -> Result<()> {
        writeln!(out, "fpr,tpr,threshold")?;
        for p in &self.points {
            writeln!(
                out,
                "{},{},{}",
                round_sig(p.false_positive_rate),
                round_sig(p.true_positive_rate),
                round_sig(p.threshold)
            )?;
        }
        Ok(())
    }
}

/// Sweeps a threshold down through every distinct score. The first point
/// (threshold +inf) is (0, 0); the last is (1, 1).
pub fn roc_curve(scores: &[f64], labels: &[u8]) -> Result<RocCurve> {
    check_lengths(scores, labels)?;
    let (pos, neg) = class_counts(labels)?;
    let (sorted, sorted_labels) = sorted_by_score(scores, labels);

    let mut points = vec![RocPoint {
        false_positive_rate: 0.0,
        true_positive_rate: 0.0,
        threshold: f64::INFINITY,
    }];
    let (mut tp, mut fp) = (0u64, 0u64);
    for group in tie_groups(&sorted).into_iter().rev() {
        let positives = sorted_labels[group.clone()]
            .iter()
            .filter(|&&l| l == 1)
            .count() as u64;
        tp += positives;
        fp += group.len() as u64 - positives;
        points.push(RocPoint {
            false_positive_rate: fp as f64 / neg as f64,
            true_positive_rate: tp as f64 / pos as f64,
            threshold: sorted[group.start],
        });
    }
    Ok(RocCurve { points })
}

/// Fraction of records whose thresholded verdict matches the label.
pub fn accuracy_at(scores: &[f64], labels: &[u8], threshold: f64) -> Result<f64> {
    check_lengths(scores, labels)?;
    if scores.is_empty() {
        return Err(Error::EmptyInput);
    }
    let hits = scores
        .iter()
        .zip(labels)
        .filter(|(&s, &l)| verdict(s, threshold) == (l == 1))
        .count();
    Ok(hits as f64 / scores.len() as f64)
}

fn below(x: f64) -> f64 {
    if x - 1.0 < x {
        x - 1.0
    } else {
        x.next_down()
    }
}

fn above(x: f64) -> f64 {
    if x + 1.0 > x {
        x + 1.0
    } else {
        x.next_up()
    }
}

/// Accuracy-maximizing threshold among: one sentinel below the lowest score,
/// midpoints between adjacent distinct scores, one sentinel above the
/// highest score. Ties go to the smallest threshold.
pub fn tune_threshold(scores: &[f64], labels: &[u8]) -> Result<f64> {
    check_lengths(scores, labels)?;
    let (pos, _) = class_counts(labels)?;
    let (sorted, sorted_labels) = sorted_by_score(scores, labels);
    let groups = tie_groups(&sorted);

    // Below the minimum everything is predicted factual.
    let mut best_threshold = below(sorted[0]);
    let mut correct = pos as i64;
    let mut best_correct = correct;

    for (g, group) in groups.iter().enumerate() {
        // Moving the threshold past this group flips it to "hallucination".
        for &l in &sorted_labels[group.clone()] {
            correct += if l == 1 { -1 } else { 1 };
        }
        let threshold = match groups.get(g + 1) {
            Some(next) => {
                let (lo, hi) = (sorted[group.start], sorted[next.start]);
                let mid = lo + (hi - lo) / 2.0;
                if mid > lo {
                    mid
                } else {
                    hi
                }
            }
            None => above(sorted[group.start]),
        };
        if correct > best_correct {
            best_correct = correct;
            best_threshold = threshold;
        }
    }
    Ok(best_threshold)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecordScore {
    pub id: String,
    #[serde(serialize_with = "sig9")]
    pub score: f64,
    pub label: u8,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExcludedRecord {
    pub id: String,
    pub error: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    /// Content hash of the evaluated records.
    pub dataset_id: String,
    pub n_records: usize,
    #[serde(default, serialize_with = "sig9_opt")]
    pub auc: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub auc_note: Option<String>,
    #[serde(
        default,
        serialize_with = "sig9_opt",
        skip_serializing_if = "Option::is_none"
    )]
    pub threshold: Option<f64>,
    #[serde(
        default,
        serialize_with = "sig9_opt",
        skip_serializing_if = "Option::is_none"
    )]
    pub accuracy_at_threshold: Option<f64>,
    #[serde(
        default,
        serialize_with = "sig9_opt",
        skip_serializing_if = "Option::is_none"
    )]
    pub tuned_threshold: Option<f64>,
    #[serde(
        default,
        serialize_with = "sig9_opt",
        skip_serializing_if = "Option::is_none"
    )]
    pub accuracy_at_tuned_threshold: Option<f64>,
    pub per_record: Vec<RecordScore>,
    #[serde(default)]
    pub excluded: Vec<ExcludedRecord>,
    pub config_snapshot: PipelineConfig,
    pub wall_time_ms: u64,
}

impl EvalReport {
    pub fn scores(&self) -> Vec<f64> {
        self.per_record.iter().map(|r| r.score).collect()
    }

    pub fn labels(&self) -> Vec<u8> {
        self.per_record.iter().map(|r| r.label).collect()
    }

    pub fn roc_curve(&self) -> Result<RocCurve> {
        roc_curve(&self.scores(), &self.labels())
    }
}

fn short_hash(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))[..16].to_string()
}

pub fn dataset_id(records: &[EvalRecord]) -> String {
    let mut buf = Vec::new();
    write_dataset(records, &mut buf).expect("in-memory write");
    short_hash(&buf)
}

/// Key for a run directory: hash of the records and the config.
pub fn run_key(records: &[EvalRecord], config: &PipelineConfig) -> String {
    let mut buf = Vec::new();
    write_dataset(records, &mut buf).expect("in-memory write");
    serde_json::to_writer(&mut buf, config).expect("in-memory write");
    short_hash(&buf)
}

/// Runs `pipeline` over every record (in parallel) and computes metrics
/// over the records that succeeded. Failed records are listed in
/// `excluded` and left out of the metrics.
pub fn evaluate<F>(
    pipeline: F,
    dataset: &[EvalRecord],
    config: &PipelineConfig,
) -> Result<EvalReport>
where
    F: Fn(&CheckInput, &PipelineConfig) -> Result<FactualityReport> + Sync,
{
    if dataset.is_empty() {
        return Err(Error::EmptyInput);
    }
    let started = Instant::now();
    let outcomes: Vec<Result<f64>> = dataset
        .par_iter()
        .map(|record| {
            let input = record.to_input()?;
            pipeline(&input, config).map(|r| r.aggregate)
        })
        .collect();

    let mut per_record = Vec::new();
    let mut excluded = Vec::new();
    for (record, outcome) in dataset.iter().zip(outcomes) {
        match outcome {
            Ok(score) => per_record.push(RecordScore {
                id: record.id.clone(),
                score,
                label: record.label,
            }),
            Err(e) => {
                tracing::warn!(id = %record.id, error = %e, "record excluded");
                excluded.push(ExcludedRecord {
                    id: record.id.clone(),
                    error: e.to_string(),
                });
            }
        }
    }
    if per_record.is_empty() {
        return Err(Error::AllRecordsFailed(dataset.len()));
    }

    let scores: Vec<f64> = per_record.iter().map(|r| r.score).collect();
    let labels: Vec<u8> = per_record.iter().map(|r| r.label).collect();
    let (auc_value, auc_note, tuned) = match auc(&scores, &labels) {
        Ok(a) => (Some(a), None, Some(tune_threshold(&scores, &labels)?)),
        Err(Error::SingleClass) => (
            None,
            Some("single class present; AUC undefined".to_string()),
            None,
        ),
        Err(e) => return Err(e),
    };
    let accuracy = config
        .threshold
        .map(|t| accuracy_at(&scores, &labels, t))
        .transpose()?;
    let tuned_accuracy = tuned
        .map(|t| accuracy_at(&scores, &labels, t))
        .transpose()?;

    Ok(EvalReport {
        dataset_id: dataset_id(dataset),
        n_records: per_record.len(),
        auc: auc_value,
        auc_note,
        threshold: config.threshold,
        accuracy_at_threshold: accuracy,
        tuned_threshold: tuned,
        accuracy_at_tuned_threshold: tuned_accuracy,
        per_record,
        excluded,
        config_snapshot: config.clone(),
        wall_time_ms: started.elapsed().as_millis() as u64,
    })
}

/// Writes `report.json`, `config.json` and, when defined, `roc.csv` into
/// `runs_dir/<run_key>/`. Returns the run directory.
pub fn persist_run(
    report: &EvalReport,
    records: &[EvalRecord],
    runs_dir: impl AsRef<Path>,
) -> Result<PathBuf> {
    let dir = runs_dir
        .as_ref()
        .join(run_key(records, &report.config_snapshot));
    std::fs::create_dir_all(&dir)?;
    std::fs::write(dir.join("report.json"), serde_json::to_vec_pretty(report)?)?;
    std::fs::write(
        dir.join("config.json"),
        serde_json::to_vec_pretty(&report.config_snapshot)?,
    )?;
    if report.auc.is_some() {
        let file = std::fs::File::create(dir.join("roc.csv"))?;
        report
            .roc_curve()?
            .write_csv(std::io::BufWriter::new(file))?;
    }
    Ok(dir)
}
