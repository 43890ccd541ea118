//! Dataset loading: one record per line, UTF-8.
//!
//! Every loader accepts the canonical `TomSample` field layout. In addition,
//! each benchmark has an import adapter for its raw field names, selected per
//! line by shape, so fixtures exported from the upstream datasets load
//! directly:
//!
//! - hitom: `story`, `question`, `choices` (list or "A. x, B. y" string),
//!   `answer` (container name), `order`, optional `deception`
//! - tomato: `conversation`/`context`, `q`, `a0`..`a3`, `answer` (index),
//!   `order`, optional `taxonomy`
//! - tombench: `STORY`, `QUESTION`, `OPTION-A`..`OPTION-D`, `ANSWER`
//!   (original label), optional `map` (presented -> original), optional
//!   `taxonomy`

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde_json::Value;
use thiserror::Error;

use super::{Benchmark, Taxonomy, TomSample};

#[derive(Debug, Error)]
pub enum BenchmarkError {
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("invariant violation at line {line}: {message}")]
    Invariant { line: usize, message: String },
    #[error("variant unsupported: {0}")]
    VariantUnsupported(String),
}

pub fn load_hitom(path: impl AsRef<Path>) -> Result<Vec<TomSample>, BenchmarkError> {
    load_samples(path, Benchmark::Hitom)
}

pub fn load_tomato(path: impl AsRef<Path>) -> Result<Vec<TomSample>, BenchmarkError> {
    load_samples(path, Benchmark::Tomato)
}

pub fn load_tombench(path: impl AsRef<Path>) -> Result<Vec<TomSample>, BenchmarkError> {
    load_samples(path, Benchmark::Tombench)
}

/// Load a line-delimited dataset for the given benchmark.
pub fn load_samples(
    path: impl AsRef<Path>,
    benchmark: Benchmark,
) -> Result<Vec<TomSample>, BenchmarkError> {
    let text = fs::read_to_string(path)?;
    parse_samples(&text, benchmark)
}

pub fn parse_samples(text: &str, benchmark: Benchmark) -> Result<Vec<TomSample>, BenchmarkError> {
    let mut samples = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line_no = i + 1;
        if line.trim().is_empty() {
            continue;
        }
        let value: Value = serde_json::from_str(line).map_err(|e| BenchmarkError::Parse {
            line: line_no,
            message: e.to_string(),
        })?;
        let sample = sample_from_value(value, benchmark, line_no, samples.len())?;
        sample
            .check_invariants()
            .map_err(|message| BenchmarkError::Invariant {
                line: line_no,
                message,
            })?;
        samples.push(sample);
    }
    Ok(samples)
}

/// Serialize samples back to the canonical line-delimited form.
pub fn write_samples(samples: &[TomSample]) -> String {
    let mut out = String::new();
    for s in samples {
        out.push_str(&serde_json::to_string(s).expect("sample serializes"));
        out.push('\n');
    }
    out
}

fn sample_from_value(
    value: Value,
    benchmark: Benchmark,
    line: usize,
    index: usize,
) -> Result<TomSample, BenchmarkError> {
    let obj = value.as_object().ok_or_else(|| BenchmarkError::Parse {
        line,
        message: "record is not an object".into(),
    })?;
    if obj.contains_key("options") && obj.contains_key("gold_label") {
        let mut sample: TomSample =
            serde_json::from_value(value.clone()).map_err(|e| BenchmarkError::Parse {
                line,
                message: e.to_string(),
            })?;
        if sample.benchmark != benchmark {
            return Err(BenchmarkError::Invariant {
                line,
                message: format!(
                    "benchmark: record says {} but {} was requested",
                    sample.benchmark.as_str(),
                    benchmark.as_str()
                ),
            });
        }
        if sample.id.is_empty() {
            sample.id = format!("{}-{index}", benchmark.as_str());
        }
        return Ok(sample);
    }
    match benchmark {
        Benchmark::Hitom => adapt_hitom(obj, line, index),
        Benchmark::Tomato => adapt_tomato(obj, line, index),
        Benchmark::Tombench => adapt_tombench(obj, line, index),
    }
}

fn req_str(
    obj: &serde_json::Map<String, Value>,
    keys: &[&str],
    line: usize,
) -> Result<String, BenchmarkError> {
    for k in keys {
        if let Some(v) = obj.get(*k) {
            return v
                .as_str()
                .map(|s| s.to_string())
                .ok_or_else(|| BenchmarkError::Parse {
                    line,
                    message: format!("field {k} is not a string"),
                });
        }
    }
    Err(BenchmarkError::Parse {
        line,
        message: format!("missing field {}", keys[0]),
    })
}

fn req_u64(
    obj: &serde_json::Map<String, Value>,
    key: &str,
    line: usize,
) -> Result<u64, BenchmarkError> {
    obj.get(key)
        .and_then(Value::as_u64)
        .ok_or_else(|| BenchmarkError::Parse {
            line,
            message: format!("missing or non-integer field {key}"),
        })
}

fn opt_taxonomy(
    obj: &serde_json::Map<String, Value>,
    line: usize,
) -> Result<Option<Taxonomy>, BenchmarkError> {
    match obj.get("taxonomy").or_else(|| obj.get("category")) {
        None | Some(Value::Null) => Ok(None),
        Some(Value::String(s)) => {
            Taxonomy::parse(s)
                .map(Some)
                .ok_or_else(|| BenchmarkError::Invariant {
                    line,
                    message: format!("taxonomy: unknown value {s:?}"),
                })
        }
        Some(other) => Err(BenchmarkError::Parse {
            line,
            message: format!("taxonomy has unexpected type: {other}"),
        }),
    }
}

fn id_or_default(
    obj: &serde_json::Map<String, Value>,
    benchmark: Benchmark,
    index: usize,
) -> String {
    obj.get("id")
        .and_then(Value::as_str)
        .map(|s| s.to_string())
        .unwrap_or_else(|| format!("{}-{index}", benchmark.as_str()))
}

fn adapt_hitom(
    obj: &serde_json::Map<String, Value>,
    line: usize,
    index: usize,
) -> Result<TomSample, BenchmarkError> {
    let context = req_str(obj, &["story", "context"], line)?;
    let question = req_str(obj, &["question"], line)?;
    let answer = req_str(obj, &["answer"], line)?;
    let order = req_u64(obj, "order", line)? as u8;

    let texts: Vec<String> = match obj.get("choices") {
        Some(Value::Array(items)) => items
            .iter()
            .map(|v| {
                v.as_str()
                    .map(|s| s.to_string())
                    .ok_or_else(|| BenchmarkError::Parse {
                        line,
                        message: "choices entries must be strings".into(),
                    })
            })
            .collect::<Result<_, _>>()?,
        Some(Value::String(s)) => parse_labeled_choice_string(s),
        _ => {
            return Err(BenchmarkError::Parse {
                line,
                message: "missing field choices".into(),
            })
        }
    };
    let options: Vec<(char, String)> = texts
        .into_iter()
        .enumerate()
        .map(|(i, t)| ((b'A' + i as u8) as char, t))
        .collect();
    let gold_label = options
        .iter()
        .find(|(_, t)| t == &answer)
        .map(|(l, _)| *l)
        .ok_or_else(|| BenchmarkError::Invariant {
            line,
            message: format!("answer: {answer:?} is not among the choices"),
        })?;
    Ok(TomSample {
        id: id_or_default(obj, Benchmark::Hitom, index),
        benchmark: Benchmark::Hitom,
        context,
        question,
        options,
        gold_label,
        gold_text: Some(answer),
        order,
        taxonomy: opt_taxonomy(obj, line)?,
        label_map: None,
        deception: obj.get("deception").and_then(Value::as_bool),
    })
}

/// Parse `"A. blue_suitcase, B. red_bottle, ..."` into option texts.
fn parse_labeled_choice_string(s: &str) -> Vec<String> {
    let mut texts = Vec::new();
    for (i, part) in s.split(", ").enumerate() {
        let label_prefix = format!("{}. ", (b'A' + i as u8) as char);
        match part.strip_prefix(&label_prefix) {
            Some(text) => texts.push(text.to_string()),
            None => texts.push(part.to_string()),
        }
    }
    texts
}

fn adapt_tomato(
    obj: &serde_json::Map<String, Value>,
    line: usize,
    index: usize,
) -> Result<TomSample, BenchmarkError> {
    let context = req_str(obj, &["conversation", "context"], line)?;
    let question = req_str(obj, &["q", "question"], line)?;
    let mut options = Vec::new();
    for i in 0..4u8 {
        let key = format!("a{i}");
        let text = obj
            .get(&key)
            .and_then(Value::as_str)
            .ok_or_else(|| BenchmarkError::Parse {
                line,
                message: format!("missing field {key}"),
            })?;
        options.push(((b'A' + i) as char, text.to_string()));
    }
    let answer_idx = req_u64(obj, "answer", line)?;
    if answer_idx > 3 {
        return Err(BenchmarkError::Invariant {
            line,
            message: format!("answer: index {answer_idx} out of range 0..=3"),
        });
    }
    let order = obj.get("order").and_then(Value::as_u64).unwrap_or(1) as u8;
    Ok(TomSample {
        id: id_or_default(obj, Benchmark::Tomato, index),
        benchmark: Benchmark::Tomato,
        context,
        question,
        options,
        gold_label: (b'A' + answer_idx as u8) as char,
        gold_text: None,
        order,
        taxonomy: opt_taxonomy(obj, line)?,
        label_map: None,
        deception: None,
    })
}

fn adapt_tombench(
    obj: &serde_json::Map<String, Value>,
    line: usize,
    index: usize,
) -> Result<TomSample, BenchmarkError> {
    let context = req_str(obj, &["STORY", "story"], line)?;
    let question = req_str(obj, &["QUESTION", "question"], line)?;
    let mut original = Vec::new();
    for i in 0..4u8 {
        let label = (b'A' + i) as char;
        let keys = [
            format!("OPTION-{label}"),
            format!("option_{}", label.to_ascii_lowercase()),
        ];
        let text = keys
            .iter()
            .find_map(|k| obj.get(k).and_then(Value::as_str))
            .ok_or_else(|| BenchmarkError::Parse {
                line,
                message: format!("missing field OPTION-{label}"),
            })?;
        original.push((label, text.to_string()));
    }
    let answer = req_str(obj, &["ANSWER", "answer"], line)?;
    let gold_label = single_label(&answer).ok_or_else(|| BenchmarkError::Invariant {
        line,
        message: format!("ANSWER: {answer:?} is not a single label"),
    })?;

    // The raw map reads presented -> original: slot A shows the text of the
    // original option it maps to.
    let label_map: Option<BTreeMap<char, char>> = match obj.get("map") {
        None | Some(Value::Null) => None,
        Some(Value::Object(m)) => {
            let mut out = BTreeMap::new();
            for (k, v) in m {
                let from = single_label(k).ok_or_else(|| BenchmarkError::Parse {
                    line,
                    message: format!("map key {k:?} is not a label"),
                })?;
                let to =
                    v.as_str()
                        .and_then(single_label)
                        .ok_or_else(|| BenchmarkError::Parse {
                            line,
                            message: format!("map value for {k:?} is not a label"),
                        })?;
                out.insert(from, to);
            }
            Some(out)
        }
        Some(other) => {
            return Err(BenchmarkError::Parse {
                line,
                message: format!("map has unexpected type: {other}"),
            })
        }
    };

    let options = match &label_map {
        Some(map) => {
            let mut presented = Vec::new();
            for i in 0..4u8 {
                let slot = (b'A' + i) as char;
                let source = *map.get(&slot).ok_or_else(|| BenchmarkError::Invariant {
                    line,
                    message: format!("map: missing entry for presented label {slot:?}"),
                })?;
                let text = original
                    .iter()
                    .find(|(l, _)| *l == source)
                    .map(|(_, t)| t.clone())
                    .ok_or_else(|| BenchmarkError::Invariant {
                        line,
                        message: format!("map: {slot:?} -> {source:?} uses unknown label"),
                    })?;
                presented.push((slot, text));
            }
            presented
        }
        None => original,
    };

    Ok(TomSample {
        id: id_or_default(obj, Benchmark::Tombench, index),
        benchmark: Benchmark::Tombench,
        context,
        question,
        options,
        gold_label,
        gold_text: None,
        order: 1,
        taxonomy: opt_taxonomy(obj, line)?,
        label_map,
        deception: None,
    })
}

fn single_label(s: &str) -> Option<char> {
    let trimmed = s.trim();
    let mut chars = trimmed.chars();
    match (chars.next(), chars.next()) {
        (Some(c), None) if c.is_ascii_uppercase() => Some(c),
        _ => None,
    }
}
