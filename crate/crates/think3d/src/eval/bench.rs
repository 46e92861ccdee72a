//! Benchmark JSONL: one multiple-choice item per line.

use std::collections::HashMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;
use think3d_core::scoring::{labels, Choice};

use crate::agent::Question;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkItem {
    pub id: String,
    pub question: String,
    pub choices: Vec<Choice>,
    /// Resolved relative to the benchmark file.
    pub images: Vec<PathBuf>,
    pub gold: String,
    #[serde(default)]
    pub task: String,
}

impl BenchmarkItem {
    pub fn to_question(&self) -> Question {
        Question { id: self.id.clone(), text: self.question.clone(), choices: self.choices.clone() }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(untagged)]
enum RawChoices {
    Labeled(Vec<Choice>),
    Texts(Vec<String>),
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawItem {
    id: String,
    question: String,
    choices: RawChoices,
    images: Vec<PathBuf>,
    gold: String,
    #[serde(default)]
    task: String,
}

#[derive(Debug, Error)]
pub enum BenchError {
    #[error("{path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("line {line}: {message}")]
    Schema { line: usize, message: String },
    #[error("line {line}: duplicate id '{id}' (first seen on line {first})")]
    DuplicateId { line: usize, id: String, first: usize },
}

pub fn parse_benchmark(text: &str, base: &Path) -> Result<Vec<BenchmarkItem>, BenchError> {
    let mut items = Vec::new();
    let mut seen: HashMap<String, usize> = HashMap::new();
    for (i, line) in text.lines().enumerate() {
        let line_no = i + 1;
        if line.trim().is_empty() {
            continue;
        }
        let schema = |message: String| BenchError::Schema { line: line_no, message };
        let raw: RawItem = serde_json::from_str(line).map_err(|e| schema(e.to_string()))?;
        let choices = label_choices(raw.choices);
        if choices.is_empty() {
            return Err(schema("no choices".into()));
        }
        if !choices.iter().any(|c| c.label == raw.gold) {
            return Err(schema(format!("gold '{}' is not a choice label", raw.gold)));
        }
        if raw.images.is_empty() {
            return Err(schema("at least one image is required".into()));
        }
        if let Some(&first) = seen.get(&raw.id) {
            return Err(BenchError::DuplicateId { line: line_no, id: raw.id, first });
        }
        seen.insert(raw.id.clone(), line_no);
        items.push(BenchmarkItem {
            id: raw.id,
            question: raw.question,
            choices,
            images: raw.images.into_iter().map(|p| if p.is_absolute() { p } else { base.join(p) }).collect(),
            gold: raw.gold,
            task: raw.task,
        });
    }
    Ok(items)
}

#[derive(Debug, Deserialize)]
struct RawQuestion {
    id: String,
    question: String,
    choices: RawChoices,
    #[serde(default)]
    gold: Option<String>,
}

fn label_choices(raw: RawChoices) -> Vec<Choice> {
    match raw {
        RawChoices::Labeled(c) => c,
        RawChoices::Texts(t) => labels(t.len()).into_iter().zip(t).map(|(l, t)| Choice::new(l, t)).collect(),
    }
}

/// Parses a standalone question file: the benchmark item shape without
/// images, with `gold` optional.
pub fn parse_question(json: &str) -> Result<(Question, Option<String>), BenchError> {
    let schema = |message: String| BenchError::Schema { line: 1, message };
    let raw: RawQuestion = serde_json::from_str(json).map_err(|e| schema(e.to_string()))?;
    let choices = label_choices(raw.choices);
    if let Some(g) = &raw.gold {
        if !choices.iter().any(|c| &c.label == g) {
            return Err(schema(format!("gold '{g}' is not a choice label")));
        }
    }
    Ok((Question { id: raw.id, text: raw.question, choices }, raw.gold))
}

pub fn load_benchmark(path: &Path) -> Result<Vec<BenchmarkItem>, BenchError> {
    let text = std::fs::read_to_string(path).map_err(|source| BenchError::Io { path: path.display().to_string(), source })?;
    parse_benchmark(&text, path.parent().unwrap_or(Path::new(".")))
}
