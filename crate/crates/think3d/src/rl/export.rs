//! Converts canonical-action trajectories into a JSONL training set.
//!
//! Each line is one rollout. `turns[k].segments` hold the text the trainer
//! tokenizes in order; `mask` is 1 on segments the policy generated (action
//! and answer) and 0 on prompt and observation segments. Rollouts sharing a
//! `group` were sampled for the same question and are normalized together.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;
use think3d_core::rl::{CanonicalTag, Segment, CANONICAL_ANCHOR};
use think3d_core::scoring::reward;
use think3d_core::RenderMode;

use crate::agent::episode::parse_feedback;
use crate::agent::trajectory::TrajectoryIoError;
use crate::agent::{read_trajectories, Trajectory};
use crate::toolkit::Action;

#[derive(Debug, Error)]
pub enum ExportError {
    #[error("{question_id} turn {turn}: view (anchor {anchor}, {mode}, {azimuth}, {elevation}) is not a canonical viewpoint")]
    NonCanonical { question_id: String, turn: usize, anchor: usize, mode: &'static str, azimuth: f64, elevation: f64 },
    #[error("{question_id} turn {turn}: {kind} is not available in the canonical action space")]
    UnexpectedAction { question_id: String, turn: usize, kind: &'static str },
    #[error("{question_id}: no gold answer")]
    MissingGold { question_id: String },
    #[error("{question_id}: episode did not finish: {message}")]
    Incomplete { question_id: String, message: String },
    #[error(transparent)]
    Read(#[from] TrajectoryIoError),
    #[error("{path}: {source}")]
    Io { path: String, source: std::io::Error },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExportSegment {
    pub segment: Segment,
    pub role: String,
    pub mask: u8,
    pub text: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub image: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub view: Option<CanonicalTag>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExportTurn {
    pub index: usize,
    pub segments: Vec<ExportSegment>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExportRecord {
    pub group: String,
    pub question_id: String,
    pub run: usize,
    pub prompt_set: String,
    pub gold: String,
    pub final_answer: String,
    pub reward: f64,
    pub turns: Vec<ExportTurn>,
    /// Per-segment mask in reading order.
    pub mask: Vec<u8>,
}

fn segment(segment: Segment, text: String) -> ExportSegment {
    let role = if segment.trainable() { "assistant" } else { "user" };
    ExportSegment { segment, role: role.into(), mask: segment.trainable() as u8, text, image: None, view: None }
}

fn check_action(t: &Trajectory, turn: usize, action: &Action) -> Result<Option<CanonicalTag>, ExportError> {
    match *action {
        Action::View { anchor, mode, azimuth, elevation } => {
            let tag = CanonicalTag::ALL.into_iter().find(|tag| {
                let o = tag.offsets();
                o.azimuth == azimuth && o.elevation == elevation
            });
            match tag {
                Some(tag) if anchor == CANONICAL_ANCHOR && mode == RenderMode::Global => Ok(Some(tag)),
                _ => Err(ExportError::NonCanonical { question_id: t.question_id.clone(), turn, anchor, mode: mode.as_str(), azimuth, elevation }),
            }
        }
        Action::Reconstruct => Err(ExportError::UnexpectedAction { question_id: t.question_id.clone(), turn, kind: "reconstruct" }),
        Action::Answer { .. } => Ok(None),
    }
}

/// Builds one record per trajectory. `image_root` is joined with the
/// relative observation paths; `questions` maps ids to prompt text for an
/// optional leading prompt segment.
pub fn export_rollout_dataset(
    trajectories: &[Trajectory],
    image_root: Option<&Path>,
    questions: &BTreeMap<String, String>,
) -> Result<Vec<ExportRecord>, ExportError> {
    trajectories.iter().map(|t| export_one(t, image_root, questions)).collect()
}

fn export_one(t: &Trajectory, image_root: Option<&Path>, questions: &BTreeMap<String, String>) -> Result<ExportRecord, ExportError> {
    if let Some(message) = &t.error {
        return Err(ExportError::Incomplete { question_id: t.question_id.clone(), message: message.clone() });
    }
    let gold = t.gold.clone().ok_or_else(|| ExportError::MissingGold { question_id: t.question_id.clone() })?;
    let mut turns = Vec::with_capacity(t.turns.len());
    for (k, turn) in t.turns.iter().enumerate() {
        let mut segments = Vec::new();
        if k == 0 {
            if let Some(q) = questions.get(&t.question_id) {
                segments.push(segment(Segment::Prompt, q.clone()));
            }
        }
        let tag = match &turn.parsed_action {
            Some(a) => check_action(t, turn.index, a)?,
            None => None,
        };
        let is_step = turn.executed && (tag.is_some() || turn.parse_error.is_some());
        segments.push(segment(if is_step { Segment::Action } else { Segment::Answer }, turn.model_output.clone()));
        let feedback = match (&turn.tool_result, &turn.parse_error) {
            (Some(r), _) if is_step => Some(r.feedback()),
            (None, Some(e)) => Some(parse_feedback(e)),
            _ => None,
        };
        if let Some(text) = feedback {
            let mut obs = segment(Segment::Observation, text);
            if let Some(o) = &turn.observation {
                obs.image = Some(image_root.map_or_else(|| PathBuf::from(&o.path), |r| r.join(&o.path)));
                obs.view = tag;
            }
            segments.push(obs);
        }
        turns.push(ExportTurn { index: turn.index, segments });
    }
    let mask = turns.iter().flat_map(|t| t.segments.iter().map(|s| s.mask)).collect();
    Ok(ExportRecord {
        group: t.question_id.clone(),
        question_id: t.question_id.clone(),
        run: t.metadata.run,
        prompt_set: t.metadata.prompt_set.clone(),
        final_answer: t.final_answer.clone(),
        reward: reward(t.extraction.as_ref(), &gold).total,
        gold,
        turns,
        mask,
    })
}

/// Reads every `*.jsonl` trajectory file in `path` (or `path` itself when it
/// is a file), paired with the directory its image paths are relative to.
pub fn read_trajectory_dir(path: &Path) -> Result<Vec<(PathBuf, Vec<Trajectory>)>, ExportError> {
    let io = |p: &Path| {
        let p = p.display().to_string();
        move |source| ExportError::Io { path: p, source }
    };
    let files: Vec<PathBuf> = if path.is_dir() {
        let mut v: Vec<PathBuf> = std::fs::read_dir(path)
            .map_err(io(path))?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.extension().is_some_and(|e| e == "jsonl") && looks_like_trajectories(p))
            .collect();
        v.sort();
        v
    } else {
        vec![path.to_path_buf()]
    };
    files
        .into_iter()
        .map(|f| {
            let root = f.parent().map(Path::to_path_buf).unwrap_or_default();
            Ok((root, read_trajectories(&f)?))
        })
        .collect()
}

fn looks_like_trajectories(path: &Path) -> bool {
    use std::io::BufRead;
    let Ok(f) = std::fs::File::open(path) else { return false };
    let first = std::io::BufReader::new(f).lines().map_while(Result::ok).find(|l| !l.trim().is_empty());
    first
        .and_then(|l| serde_json::from_str::<serde_json::Value>(&l).ok())
        .is_some_and(|v| matches!(v.get("type").and_then(|t| t.as_str()), Some("turn" | "summary")))
}

/// Writes one JSON line per record and copies referenced images into
/// `images/` next to `out`, rewriting paths to be relative to it.
pub fn write_export(records: &[ExportRecord], out: &Path) -> Result<(), ExportError> {
    let io = |p: &Path| {
        let p = p.display().to_string();
        move |source| ExportError::Io { path: p, source }
    };
    let base = out.parent().map(Path::to_path_buf).unwrap_or_default();
    let mut lines = Vec::new();
    for r in records {
        let mut r = r.clone();
        for turn in &mut r.turns {
            for seg in &mut turn.segments {
                if let Some(src) = &seg.image {
                    let rel = PathBuf::from(format!("images/{}/run{}/turn-{}.png", sanitize(&r.question_id), r.run, turn.index));
                    let dst = base.join(&rel);
                    std::fs::create_dir_all(dst.parent().expect("has parent")).map_err(io(&dst))?;
                    std::fs::copy(src, &dst).map_err(io(src))?;
                    seg.image = Some(rel);
                }
            }
        }
        serde_json::to_writer(&mut lines, &r).expect("record serializes");
        lines.push(b'\n');
    }
    std::fs::write(out, lines).map_err(io(out))
}

fn sanitize(s: &str) -> String {
    s.chars().map(|c| if c.is_ascii_alphanumeric() || c == '-' || c == '_' { c } else { '_' }).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::sync::Arc;

    use crate::agent::{run_episode, write_trajectories, AgentConfig, PromptSet, Question, ScriptedBackend};
    use crate::toolkit::{FixtureReconstructor, ImagePayload, Toolkit, ToolkitConfig};
    use think3d_core::scoring::{extract_answer, Choice};

    fn rollout(outputs: &[&str]) -> Trajectory {
        let kit = Toolkit::new(ToolkitConfig::default(), Arc::new(FixtureReconstructor::default()));
        let q = Question { id: "q/1".into(), text: "Which side?".into(), choices: vec![Choice::new("A", "left"), Choice::new("B", "right")] };
        let images: Vec<_> = (0..3).map(|i| ImagePayload::new(format!("f{i}.png"), vec![i; 4])).collect();
        let mut backend = ScriptedBackend::new(outputs.iter().map(|s| s.to_string()).collect());
        let cfg = AgentConfig { prompts: PromptSet::rl_set(), ..Default::default() };
        let mut t = run_episode(&q, &images, &mut backend, &kit, &cfg).unwrap();
        t.gold = Some("B".into());
        t
    }

    const TOP: &str = r#"<tool>{"kind":"view","anchor":1,"mode":"global","azimuth":0,"elevation":60}</tool>"#;

    #[test]
    fn top_then_answer_gives_two_turns() {
        let t = rollout(&[TOP, "Final Answer: B"]);
        let recs = export_rollout_dataset(std::slice::from_ref(&t), None, &BTreeMap::new()).unwrap();
        let r = &recs[0];
        assert_eq!(r.turns.len(), 2);
        let kinds: Vec<_> = r.turns.iter().flat_map(|t| t.segments.iter().map(|s| (s.segment, s.mask))).collect();
        assert_eq!(kinds, vec![(Segment::Action, 1), (Segment::Observation, 0), (Segment::Answer, 1)]);
        assert_eq!(r.mask, vec![1, 0, 1]);
        assert_eq!(r.turns[0].segments[1].view, Some(CanonicalTag::Top));
        let choices = [Choice::new("A", "left"), Choice::new("B", "right")];
        let ex = extract_answer("Final Answer: B", &choices);
        assert_eq!(r.reward, reward(ex.as_ref(), "B").total);
        assert_eq!(r.reward, 1.1);
    }

    #[test]
    fn prompt_segment_is_masked() {
        let t = rollout(&["Final Answer: A"]);
        let qs = BTreeMap::from([("q/1".to_string(), "Which side?".to_string())]);
        let r = &export_rollout_dataset(&[t], None, &qs).unwrap()[0];
        assert_eq!(r.mask, vec![0, 1]);
        assert_eq!(r.reward, 0.1);
    }

    #[test]
    fn off_grid_offsets_are_rejected() {
        let t = rollout(&[r#"<tool>{"kind":"view","anchor":1,"mode":"global","azimuth":30,"elevation":10}</tool>"#, "Final Answer: B"]);
        assert!(matches!(export_rollout_dataset(&[t], None, &BTreeMap::new()), Err(ExportError::NonCanonical { turn: 1, .. })));
        let ego = rollout(&[r#"<tool>{"kind":"view","anchor":1,"mode":"ego","azimuth":0,"elevation":60}</tool>"#, "Final Answer: B"]);
        assert!(matches!(export_rollout_dataset(&[ego], None, &BTreeMap::new()), Err(ExportError::NonCanonical { .. })));
    }

    #[test]
    fn written_bundle_carries_images() {
        let t = rollout(&[TOP, "Final Answer: B"]);
        let dir = tempfile::tempdir().unwrap();
        write_trajectories(&dir.path().join("traj"), "t.jsonl", &[t]).unwrap();
        let mut recs = Vec::new();
        for (root, trajs) in read_trajectory_dir(&dir.path().join("traj")).unwrap() {
            recs.extend(export_rollout_dataset(&trajs, Some(&root), &BTreeMap::new()).unwrap());
        }
        let out = dir.path().join("out/train.jsonl");
        std::fs::create_dir_all(out.parent().unwrap()).unwrap();
        write_export(&recs, &out).unwrap();
        let text = std::fs::read_to_string(&out).unwrap();
        let back: ExportRecord = serde_json::from_str(text.lines().next().unwrap()).unwrap();
        let img = back.turns[0].segments[1].image.clone().unwrap();
        assert!(img.is_relative());
        assert!(std::fs::read(dir.path().join("out").join(img)).unwrap().starts_with(b"\x89PNG"));
    }

    #[test]
    fn missing_gold_is_an_error() {
        let mut t = rollout(&["Final Answer: A"]);
        t.gold = None;
        assert!(matches!(export_rollout_dataset(&[t], None, &BTreeMap::new()), Err(ExportError::MissingGold { .. })));
    }
}
