//! In-process tool service: sessions, turn budgets and view history.

use std::collections::HashMap;
use std::sync::{Arc, Mutex};

use base64::engine::general_purpose::STANDARD as B64;
use base64::Engine as _;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use think3d_core::pointcloud::fuse_and_clean;
use think3d_core::render::render;
use think3d_core::{AngleOffsets, RenderError, RenderedView, Scene};

use super::action::{Action, ErrorCode, ImageRef, ToolError, ToolOutput, ToolResult};
use super::config::ToolkitConfig;
use super::recon::{ImagePayload, ReconError, Reconstructor};
use crate::io::{encode_png, CameraRecord};

/// A successful view, as stored in the session history.
#[derive(Debug)]
pub struct HistoryEntry {
    /// Turn at which the view was produced (1-based).
    pub turn: usize,
    pub action: Action,
    pub view: RenderedView,
    pub png: Arc<Vec<u8>>,
    pub image: ImageRef,
}

impl HistoryEntry {
    pub fn record(&self, step: usize) -> HistoryRecord {
        HistoryRecord {
            step,
            turn: self.turn,
            action: self.action.clone(),
            image: self.image.clone(),
            camera: CameraRecord::from_pose(self.view.anchor_index, &self.view.camera, None),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HistoryRecord {
    pub step: usize,
    pub turn: usize,
    pub action: Action,
    pub image: ImageRef,
    pub camera: CameraRecord,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogEntry {
    /// Budget turn the action was charged to; 0 when it consumed none.
    pub turn: usize,
    pub action: Action,
    pub result: ToolResult,
}

#[derive(Debug)]
pub struct Session {
    pub id: String,
    pub images: Arc<Vec<ImagePayload>>,
    pub scene: Option<Arc<Scene>>,
    pub history: Vec<Arc<HistoryEntry>>,
    pub log: Vec<LogEntry>,
    pub turn_count: usize,
    pub max_turns: usize,
    pub closed: bool,
    pub final_answer: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HistorySnapshot {
    pub session_id: String,
    pub input_images: usize,
    pub turn_count: usize,
    pub max_turns: usize,
    pub closed: bool,
    pub final_answer: Option<String>,
    pub history: Vec<HistoryRecord>,
    pub actions: Vec<LogEntry>,
}

impl Session {
    pub fn snapshot(&self) -> HistorySnapshot {
        HistorySnapshot {
            session_id: self.id.clone(),
            input_images: self.images.len(),
            turn_count: self.turn_count,
            max_turns: self.max_turns,
            closed: self.closed,
            final_answer: self.final_answer.clone(),
            history: self.history.iter().enumerate().map(|(i, h)| h.record(i + 1)).collect(),
            actions: self.log.clone(),
        }
    }

    /// One JSON line per history entry.
    pub fn history_jsonl(&self) -> String {
        let mut out = String::new();
        for (i, h) in self.history.iter().enumerate() {
            out.push_str(&serde_json::to_string(&h.record(i + 1)).expect("history record serializes"));
            out.push('\n');
        }
        out
    }
}

/// Result of one action plus the stored observation, if one was produced.
#[derive(Debug, Clone)]
pub struct Handled {
    pub result: ToolResult,
    pub observation: Option<Arc<HistoryEntry>>,
}

pub struct Toolkit {
    config: ToolkitConfig,
    reconstructor: Arc<dyn Reconstructor>,
    sessions: Mutex<HashMap<String, Arc<Mutex<Session>>>>,
}

fn recon_error(e: ReconError) -> ToolError {
    let code = match e {
        ReconError::Transport { .. } | ReconError::Unavailable => ErrorCode::Transport,
        _ => ErrorCode::Contract,
    };
    ToolError::new(code, e.to_string())
}

impl Toolkit {
    pub fn new(config: ToolkitConfig, reconstructor: Arc<dyn Reconstructor>) -> Self {
        Self { config, reconstructor, sessions: Mutex::new(HashMap::new()) }
    }

    pub fn config(&self) -> &ToolkitConfig {
        &self.config
    }

    pub fn create_session(&self, images: Vec<ImagePayload>) -> Result<String, ToolError> {
        self.create_session_with_budget(images, self.config.max_turns)
    }

    pub fn create_session_with_budget(&self, images: Vec<ImagePayload>, max_turns: usize) -> Result<String, ToolError> {
        if images.is_empty() {
            return Err(ToolError::new(ErrorCode::EmptyInput, "a session needs at least one image"));
        }
        if images.len() > self.config.max_images {
            return Err(ToolError::new(
                ErrorCode::TooManyImages,
                format!("{} images exceed the cap of {}", images.len(), self.config.max_images),
            ));
        }
        let id = uuid::Uuid::new_v4().simple().to_string();
        let session = Session {
            id: id.clone(),
            images: Arc::new(images),
            scene: None,
            history: Vec::new(),
            log: Vec::new(),
            turn_count: 0,
            max_turns,
            closed: false,
            final_answer: None,
        };
        self.sessions.lock().expect("session table").insert(id.clone(), Arc::new(Mutex::new(session)));
        Ok(id)
    }

    pub fn session(&self, id: &str) -> Option<Arc<Mutex<Session>>> {
        self.sessions.lock().expect("session table").get(id).cloned()
    }

    pub fn remove_session(&self, id: &str) -> bool {
        self.sessions.lock().expect("session table").remove(id).is_some()
    }

    pub fn session_count(&self) -> usize {
        self.sessions.lock().expect("session table").len()
    }

    pub fn history(&self, id: &str) -> Result<HistorySnapshot, ToolError> {
        let s = self.session(id).ok_or_else(|| unknown(id))?;
        let snap = s.lock().expect("session lock").snapshot();
        Ok(snap)
    }

    pub fn handle_action(&self, id: &str, action: Action) -> ToolResult {
        self.handle(id, action).result
    }

    pub fn handle(&self, id: &str, action: Action) -> Handled {
        let Some(session) = self.session(id) else {
            return Handled { result: unknown(id).into(), observation: None };
        };
        let mut s = session.lock().expect("session lock");
        let (turn, outcome) = self.apply(&mut s, &action);
        let (result, observation) = match outcome {
            Ok((out, obs)) => (ToolResult::Ok(out), obs),
            Err(e) => (ToolResult::Error(e), None),
        };
        s.log.push(LogEntry { turn, action, result: result.without_inline_images() });
        Handled { result, observation }
    }

    fn apply(&self, s: &mut Session, action: &Action) -> (usize, Result<(ToolOutput, Option<Arc<HistoryEntry>>), ToolError>) {
        if s.closed {
            return (0, Err(ToolError::new(ErrorCode::Closed, "session already answered")));
        }
        if let Action::Answer { text } = action {
            s.closed = true;
            s.final_answer = Some(text.clone());
            return (0, Ok((ToolOutput::Answer { text: text.clone() }, None)));
        }
        if s.turn_count >= s.max_turns {
            return (0, Err(ToolError::new(ErrorCode::Budget, format!("turn budget of {} exhausted", s.max_turns))));
        }
        s.turn_count += 1;
        let turn = s.turn_count;
        let out = match action {
            Action::Reconstruct => self.reconstruct(s).map(|o| (o, None)),
            Action::View { anchor, mode, azimuth, elevation } => self.view(s, turn, action, *anchor, *mode, *azimuth, *elevation),
            Action::Answer { .. } => unreachable!("handled above"),
        };
        (turn, out)
    }

    fn reconstruct(&self, s: &mut Session) -> Result<ToolOutput, ToolError> {
        if s.scene.is_some() {
            return Err(ToolError::new(ErrorCode::AlreadyReconstructed, "this session already has a reconstruction"));
        }
        let rec = self.reconstructor.reconstruct(&s.images).map_err(recon_error)?;
        if rec.scene.view_count() != s.images.len() {
            return Err(ToolError::new(
                ErrorCode::Contract,
                format!("{} camera poses for {} images", rec.scene.view_count(), s.images.len()),
            ));
        }
        let mut scene = rec.scene;
        scene.points = fuse_and_clean(&scene.points, self.config.cleaning);
        let out = ToolOutput::Reconstruct { cameras: scene.view_count(), points: scene.points.len(), cached: rec.cached };
        s.scene = Some(Arc::new(scene));
        Ok(out)
    }

    #[allow(clippy::too_many_arguments)]
    fn view(
        &self,
        s: &mut Session,
        turn: usize,
        action: &Action,
        anchor: usize,
        mode: think3d_core::RenderMode,
        azimuth: f64,
        elevation: f64,
    ) -> Result<(ToolOutput, Option<Arc<HistoryEntry>>), ToolError> {
        let scene = s.scene.clone().ok_or_else(|| ToolError::new(ErrorCode::Precondition, "call reconstruct before requesting views"))?;
        let offsets = AngleOffsets::new(azimuth, elevation).map_err(|e| ToolError::new(ErrorCode::InvalidArgument, e.to_string()))?;
        let view = render(&scene, anchor, offsets, mode, &self.config.render).map_err(|e| match e {
            RenderError::InvalidAnchor { .. } => ToolError::new(ErrorCode::InvalidAnchor, e.to_string()),
            other => ToolError::new(ErrorCode::Render, other.to_string()),
        })?;
        let png = encode_png(&view.image).map_err(|e| ToolError::new(ErrorCode::Render, e.to_string()))?;
        let image = ImageRef {
            name: format!("view-{:02}.png", s.history.len() + 1),
            width: view.image.width,
            height: view.image.height,
            sha256: hex::encode(Sha256::digest(&png)),
            png_base64: None,
        };
        let out = ToolOutput::View {
            anchor,
            mode,
            offsets,
            camera: CameraRecord::from_pose(anchor, &view.camera, None),
            covered_pixels: view.covered_count(),
            image: ImageRef { png_base64: self.config.inline_images.then(|| B64.encode(&png)), ..image.clone() },
        };
        let entry = Arc::new(HistoryEntry { turn, action: action.clone(), view, png: Arc::new(png), image });
        s.history.push(entry.clone());
        Ok((out, Some(entry)))
    }
}

fn unknown(id: &str) -> ToolError {
    ToolError::new(ErrorCode::UnknownSession, format!("no session '{id}'"))
}

/// Re-executes a recorded action log in a fresh session.
pub fn replay(toolkit: &Toolkit, images: Vec<ImagePayload>, actions: &[Action], max_turns: usize) -> Result<Vec<Handled>, ToolError> {
    let id = toolkit.create_session_with_budget(images, max_turns)?;
    let out = actions.iter().map(|a| toolkit.handle(&id, a.clone())).collect();
    toolkit.remove_session(&id);
    Ok(out)
}
