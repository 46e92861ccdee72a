//! Wire types for tool calls and their results.

use serde::{Deserialize, Serialize};
use think3d_core::{AngleOffsets, RenderMode};

use crate::io::CameraRecord;

/// One tool call. Serialized with a `kind` tag, e.g.
/// `{"kind":"view","anchor":1,"mode":"ego","azimuth":-45.0,"elevation":0.0}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum Action {
    Reconstruct,
    View { anchor: usize, mode: RenderMode, azimuth: f64, elevation: f64 },
    Answer { text: String },
}

impl Action {
    pub fn view(anchor: usize, mode: RenderMode, azimuth: f64, elevation: f64) -> Self {
        Action::View { anchor, mode, azimuth, elevation }
    }

    pub fn kind(&self) -> &'static str {
        match self {
            Action::Reconstruct => "reconstruct",
            Action::View { .. } => "view",
            Action::Answer { .. } => "answer",
        }
    }

    /// Reconstruct and view calls spend the session's turn budget.
    pub fn consumes_turn(&self) -> bool {
        !matches!(self, Action::Answer { .. })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ErrorCode {
    EmptyInput,
    TooManyImages,
    UnknownSession,
    Precondition,
    InvalidAnchor,
    InvalidArgument,
    Budget,
    Closed,
    AlreadyReconstructed,
    Transport,
    Contract,
    Render,
}

impl ErrorCode {
    /// HTTP status used by the tool server.
    pub fn http_status(self) -> u16 {
        match self {
            ErrorCode::UnknownSession => 404,
            ErrorCode::EmptyInput | ErrorCode::TooManyImages | ErrorCode::InvalidArgument => 400,
            ErrorCode::Precondition | ErrorCode::Closed | ErrorCode::AlreadyReconstructed => 409,
            ErrorCode::InvalidAnchor => 422,
            ErrorCode::Budget => 429,
            ErrorCode::Transport => 502,
            ErrorCode::Contract | ErrorCode::Render => 500,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, thiserror::Error)]
#[error("{code:?}: {message}")]
pub struct ToolError {
    pub code: ErrorCode,
    pub message: String,
}

impl ToolError {
    pub fn new(code: ErrorCode, message: impl Into<String>) -> Self {
        Self { code, message: message.into() }
    }
}

/// A rendered observation as handed back to the caller.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImageRef {
    /// Session-local name, e.g. `view-01.png`.
    pub name: String,
    pub width: u32,
    pub height: u32,
    pub sha256: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub png_base64: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum ToolOutput {
    Reconstruct { cameras: usize, points: usize, cached: bool },
    View {
        anchor: usize,
        mode: RenderMode,
        offsets: AngleOffsets,
        camera: CameraRecord,
        covered_pixels: usize,
        image: ImageRef,
    },
    Answer { text: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "lowercase")]
pub enum ToolResult {
    Ok(ToolOutput),
    Error(ToolError),
}

impl ToolResult {
    pub fn is_ok(&self) -> bool {
        matches!(self, ToolResult::Ok(_))
    }

    pub fn error(&self) -> Option<&ToolError> {
        match self {
            ToolResult::Error(e) => Some(e),
            ToolResult::Ok(_) => None,
        }
    }

    /// Same result without inline image payloads.
    pub fn without_inline_images(&self) -> Self {
        let mut r = self.clone();
        if let ToolResult::Ok(ToolOutput::View { image, .. }) = &mut r {
            image.png_base64 = None;
        }
        r
    }

    /// Short text for feeding back into a model conversation.
    pub fn feedback(&self) -> String {
        match self {
            ToolResult::Ok(ToolOutput::Reconstruct { cameras, points, .. }) => {
                format!("Reconstruction succeeded: {cameras} camera poses and {points} points. Views are numbered 1 to {cameras}.")
            }
            ToolResult::Ok(ToolOutput::View { anchor, mode, offsets, image, .. }) => format!(
                "Rendered {} view from camera {anchor} with azimuth {} and elevation {} ({}).",
                mode.as_str(),
                offsets.azimuth,
                offsets.elevation,
                image.name
            ),
            ToolResult::Ok(ToolOutput::Answer { text }) => format!("Answer recorded: {text}"),
            ToolResult::Error(e) => {
                let code = serde_json::to_value(e.code).ok().and_then(|v| v.as_str().map(str::to_owned)).unwrap_or_default();
                format!("Tool error [{code}]: {}", e.message)
            }
        }
    }
}

impl From<ToolError> for ToolResult {
    fn from(e: ToolError) -> Self {
        ToolResult::Error(e)
    }
}
