//! Converters from public benchmark layouts to evaluation triplets.
//!
//! | format        | input                                                           | mapping |
//! |---------------|-----------------------------------------------------------------|---------|
//! | `halubench`   | JSONL rows `{id, passage, question, answer, label: PASS\|FAIL}`  | PASS → 1, FAIL → 0, sources = [passage] |
//! | `halueval-qa` | JSONL rows `{knowledge, question, right_answer, hallucinated_answer}` | two records per row: right (1) and hallucinated (0) |
//! | `true-csv`    | CSV with `grounding, generated_text, label` columns              | sources = [grounding]; query is a fixed prompt |

use std::io::{BufRead, Read};
use std::str::FromStr;

use serde_json::Value;

use crate::error::{Error, Result};
use crate::evaluation::EvalRecord;

/// Query used for corpora that carry no question.
pub const DEFAULT_TRUE_QUERY: &str = "What does the text state?";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SourceFormat {
    HaluBench,
    HaluEvalQa,
    TrueCsv,
}

impl FromStr for SourceFormat {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "halubench" => Ok(Self::HaluBench),
            "halueval-qa" => Ok(Self::HaluEvalQa),
            "true-csv" => Ok(Self::TrueCsv),
            _ => Err(format!(
                "unknown format `{s}` (expected halubench, halueval-qa or true-csv)"
            )),
        }
    }
}

pub fn convert(
    format: SourceFormat,
    input: impl BufRead,
    query: Option<&str>,
) -> Result<Vec<EvalRecord>> {
    match format {
        SourceFormat::HaluBench => halubench(input),
        SourceFormat::HaluEvalQa => halueval_qa(input),
        SourceFormat::TrueCsv => true_csv(input, query.unwrap_or(DEFAULT_TRUE_QUERY)),
    }
}

fn json_lines(
    input: impl BufRead,
) -> impl Iterator<Item = Result<(usize, serde_json::Map<String, Value>)>> {
    input.lines().enumerate().filter_map(|(i, line)| {
        let line = match line {
            Ok(l) => l,
            Err(e) => return Some(Err(e.into())),
        };
        if line.trim().is_empty() {
            return None;
        }
        Some(match serde_json::from_str::<Value>(&line) {
            Ok(Value::Object(obj)) => Ok((i + 1, obj)),
            Ok(_) => Err(Error::ParseError {
                line: i + 1,
                message: "expected a JSON object".into(),
            }),
            Err(e) => Err(Error::ParseError {
                line: i + 1,
                message: e.to_string(),
            }),
        })
    })
}

fn string(obj: &serde_json::Map<String, Value>, line: usize, field: &str) -> Result<String> {
    match obj.get(field) {
        Some(Value::String(s)) if !s.trim().is_empty() => Ok(s.trim().to_string()),
        Some(Value::Number(n)) => Ok(n.to_string()),
        _ => Err(Error::ValidationError {
            line,
            field: field.to_string(),
            reason: "must be a non-empty string".into(),
        }),
    }
}

fn halubench(input: impl BufRead) -> Result<Vec<EvalRecord>> {
    json_lines(input)
        .map(|row| {
            let (line, obj) = row?;
            let label = match string(&obj, line, "label")?.to_ascii_uppercase().as_str() {
                "PASS" => 1,
                "FAIL" => 0,
                other => {
                    return Err(Error::ValidationError {
                        line,
                        field: "label".into(),
                        reason: format!("expected PASS or FAIL, got {other}"),
                    })
                }
            };
            Ok(EvalRecord {
                id: string(&obj, line, "id").unwrap_or_else(|_| format!("halubench-{line}")),
                query: string(&obj, line, "question")?,
                answer: string(&obj, line, "answer")?,
                sources: vec![string(&obj, line, "passage")?],
                label,
            })
        })
        .collect()
}

fn halueval_qa(input: impl BufRead) -> Result<Vec<EvalRecord>> {
    let mut out = Vec::new();
    for row in json_lines(input) {
        let (line, obj) = row?;
        let query = string(&obj, line, "question")?;
        let knowledge = string(&obj, line, "knowledge")?;
        for (suffix, field, label) in [
            ("right", "right_answer", 1),
            ("hallucinated", "hallucinated_answer", 0),
        ] {
            out.push(EvalRecord {
                id: format!("halueval-{line}-{suffix}"),
                query: query.clone(),
                answer: string(&obj, line, field)?,
                sources: vec![knowledge.clone()],
                label,
            });
        }
    }
    Ok(out)
}

fn true_csv(input: impl Read, query: &str) -> Result<Vec<EvalRecord>> {
    let mut reader = csv::Reader::from_reader(input);
    let headers = reader
        .headers()
        .map_err(|e| Error::ParseError {
            line: 1,
            message: e.to_string(),
        })?
        .clone();
    let column = |name: &str| {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| Error::ValidationError {
                line: 1,
                field: name.to_string(),
                reason: "column is missing".into(),
            })
    };
    let (grounding, generated, label_col) = (
        column("grounding")?,
        column("generated_text")?,
        column("label")?,
    );

    reader
        .records()
        .enumerate()
        .map(|(i, row)| {
            let line = i + 2;
            let row = row.map_err(|e| Error::ParseError {
                line,
                message: e.to_string(),
            })?;
            let field = |col: usize, name: &str| {
                row.get(col)
                    .map(str::trim)
                    .filter(|s| !s.is_empty())
                    .map(str::to_string)
                    .ok_or_else(|| Error::ValidationError {
                        line,
                        field: name.to_string(),
                        reason: "is empty".into(),
                    })
            };
            let label = match field(label_col, "label")?.as_str() {
                "1" | "1.0" => 1,
                "0" | "0.0" => 0,
                other => {
                    return Err(Error::ValidationError {
                        line,
                        field: "label".into(),
                        reason: format!("expected 0 or 1, got {other}"),
                    })
                }
            };
            Ok(EvalRecord {
                id: format!("true-{}", i + 1),
                query: query.to_string(),
                answer: field(generated, "generated_text")?,
                sources: vec![field(grounding, "grounding")?],
                label,
            })
        })
        .collect()
}
