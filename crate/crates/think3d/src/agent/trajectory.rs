//! Trajectories and their JSONL form: one line per turn, then a summary line.
//! Observation images are written next to the file and referenced by
//! relative path.

use std::io::{BufRead, Write as _};
use std::path::Path;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;
use think3d_core::scoring::{Extraction, RewardBreakdown};
use think3d_core::{AngleOffsets, RenderMode};

use crate::toolkit::{Action, ToolResult};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObservationRef {
    /// Path relative to the trajectory file.
    pub path: String,
    pub sha256: String,
    pub anchor: usize,
    pub mode: RenderMode,
    pub offsets: AngleOffsets,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Turn {
    /// 1-based round.
    pub index: usize,
    /// Digest of the messages the model saw this round.
    pub state_digest: String,
    pub model_output: String,
    /// Present iff the output carried a well-formed tool call.
    pub parsed_action: Option<Action>,
    pub parse_error: Option<String>,
    /// False for tool calls issued in the answer-only round.
    pub executed: bool,
    pub tool_result: Option<ToolResult>,
    pub observation: Option<ObservationRef>,
    #[serde(skip)]
    pub observation_png: Option<Arc<Vec<u8>>>,
}

impl Turn {
    /// A round that reached the toolkit with a reconstruct or view call.
    pub fn is_tool_round(&self) -> bool {
        self.executed && self.parsed_action.as_ref().is_some_and(Action::consumes_turn)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Metadata {
    pub model: String,
    pub seed: u64,
    pub max_turns: usize,
    pub prompt_set: String,
    /// Repeat index in evaluation runs.
    pub run: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub started_at: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub finished_at: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub question_id: String,
    pub turns: Vec<Turn>,
    /// Extracted label, or the trimmed answer text for free-form questions;
    /// empty when nothing could be extracted.
    pub final_answer: String,
    pub extraction: Option<Extraction>,
    pub answer_parse_failed: bool,
    pub steps: usize,
    pub tool_rounds: usize,
    pub metadata: Metadata,
    #[serde(default)]
    pub gold: Option<String>,
    #[serde(default)]
    pub reward: Option<RewardBreakdown>,
    /// Set when the episode stopped on a backend failure.
    #[serde(default)]
    pub error: Option<String>,
}

impl Trajectory {
    pub fn view_actions(&self) -> impl Iterator<Item = (&Turn, AngleOffsets)> {
        self.turns.iter().filter_map(|t| match (&t.observation, t.executed) {
            (Some(o), true) => Some((t, o.offsets)),
            _ => None,
        })
    }
}

#[derive(Debug, Error)]
pub enum TrajectoryIoError {
    #[error("{path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
}

#[derive(Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase")]
enum Line {
    Turn {
        question_id: String,
        run: usize,
        #[serde(flatten)]
        turn: Turn,
    },
    Summary(Box<Summary>),
}

#[derive(Serialize, Deserialize)]
struct Summary {
    question_id: String,
    final_answer: String,
    extraction: Option<Extraction>,
    answer_parse_failed: bool,
    steps: usize,
    tool_rounds: usize,
    metadata: Metadata,
    gold: Option<String>,
    reward: Option<RewardBreakdown>,
    error: Option<String>,
}

fn safe(s: &str) -> String {
    s.chars().map(|c| if c.is_ascii_alphanumeric() || c == '-' || c == '_' { c } else { '_' }).collect()
}

pub fn image_rel_path(t: &Trajectory, turn: &Turn) -> String {
    format!("images/{}/run{}/turn-{}.png", safe(&t.question_id), t.metadata.run, turn.index)
}

/// Serializes trajectories to JSONL under `dir/file_name`, writing
/// observation PNGs beneath `dir/images/`.
pub fn write_trajectories(dir: &Path, file_name: &str, trajs: &[Trajectory]) -> Result<(), TrajectoryIoError> {
    fn io(path: &Path) -> impl Fn(std::io::Error) -> TrajectoryIoError + '_ {
        move |source| TrajectoryIoError::Io { path: path.display().to_string(), source }
    }
    std::fs::create_dir_all(dir).map_err(io(dir))?;
    let path = dir.join(file_name);
    let mut out = Vec::new();
    for t in trajs {
        for turn in &t.turns {
            let mut turn = turn.clone();
            let rel = image_rel_path(t, &turn);
            if let (Some(obs), Some(png)) = (&mut turn.observation, &turn.observation_png) {
                obs.path = rel;
                let img_path = dir.join(&obs.path);
                let parent = img_path.parent().expect("image path has a parent");
                std::fs::create_dir_all(parent).map_err(io(parent))?;
                std::fs::write(&img_path, png.as_slice()).map_err(io(&img_path))?;
            }
            let line = Line::Turn { question_id: t.question_id.clone(), run: t.metadata.run, turn };
            serde_json::to_writer(&mut out, &line).expect("turn serializes");
            out.push(b'\n');
        }
        let summary = Line::Summary(Box::new(Summary {
            question_id: t.question_id.clone(),
            final_answer: t.final_answer.clone(),
            extraction: t.extraction.clone(),
            answer_parse_failed: t.answer_parse_failed,
            steps: t.steps,
            tool_rounds: t.tool_rounds,
            metadata: t.metadata.clone(),
            gold: t.gold.clone(),
            reward: t.reward,
            error: t.error.clone(),
        }));
        serde_json::to_writer(&mut out, &summary).expect("summary serializes");
        out.push(b'\n');
    }
    let mut f = std::fs::File::create(&path).map_err(io(&path))?;
    f.write_all(&out).map_err(io(&path))
}

/// Reads trajectories back; image bytes are not loaded.
pub fn read_trajectories(path: &Path) -> Result<Vec<Trajectory>, TrajectoryIoError> {
    let f = std::fs::File::open(path).map_err(|source| TrajectoryIoError::Io { path: path.display().to_string(), source })?;
    let mut out = Vec::new();
    let mut pending: Vec<Turn> = Vec::new();
    for (i, line) in std::io::BufReader::new(f).lines().enumerate() {
        let line = line.map_err(|source| TrajectoryIoError::Io { path: path.display().to_string(), source })?;
        if line.trim().is_empty() {
            continue;
        }
        let parsed: Line = serde_json::from_str(&line).map_err(|e| TrajectoryIoError::Parse { line: i + 1, message: e.to_string() })?;
        match parsed {
            Line::Turn { turn, .. } => pending.push(turn),
            Line::Summary(s) => out.push(Trajectory {
                question_id: s.question_id,
                turns: std::mem::take(&mut pending),
                final_answer: s.final_answer,
                extraction: s.extraction,
                answer_parse_failed: s.answer_parse_failed,
                steps: s.steps,
                tool_rounds: s.tool_rounds,
                metadata: s.metadata,
                gold: s.gold,
                reward: s.reward,
                error: s.error,
            }),
        }
    }
    if !pending.is_empty() {
        return Err(TrajectoryIoError::Parse { line: 0, message: "turn lines without a closing summary".into() });
    }
    Ok(out)
}
