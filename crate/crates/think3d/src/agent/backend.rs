//! Model backends: the trait, and the scripted backend used for replays and
//! deterministic runs.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::messages::Message;

#[derive(Debug, Error)]
pub enum BackendError {
    #[error("transport: {0}")]
    Transport(String),
    #[error("HTTP {status} after {attempts} attempts: {body}")]
    Http { status: u16, attempts: usize, body: String },
    #[error("protocol: {0}")]
    Protocol(String),
    #[error("script: {0}")]
    Script(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Capabilities {
    pub max_images: usize,
    pub max_context_tokens: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SamplingParams {
    pub temperature: f64,
    pub max_tokens: usize,
    pub seed: u64,
}

impl Default for SamplingParams {
    fn default() -> Self {
        Self { temperature: 1.0, max_tokens: 2048, seed: 0 }
    }
}

pub trait VlmBackend: Send {
    fn name(&self) -> String;
    fn capabilities(&self) -> Capabilities;
    fn complete(&mut self, messages: &[Message], params: &SamplingParams) -> Result<String, BackendError>;
}

/// Replays a fixed list of outputs, one per call. After the list is used up
/// the last entry repeats.
#[derive(Debug, Clone)]
pub struct ScriptedBackend {
    outputs: Vec<String>,
    cursor: usize,
    capabilities: Capabilities,
}

impl ScriptedBackend {
    pub fn new(outputs: Vec<String>) -> Self {
        Self { outputs, cursor: 0, capabilities: Capabilities { max_images: 64, max_context_tokens: usize::MAX } }
    }

    pub fn with_capabilities(mut self, capabilities: Capabilities) -> Self {
        self.capabilities = capabilities;
        self
    }

    pub fn calls(&self) -> usize {
        self.cursor
    }
}

impl VlmBackend for ScriptedBackend {
    fn name(&self) -> String {
        "scripted".into()
    }

    fn capabilities(&self) -> Capabilities {
        self.capabilities
    }

    fn complete(&mut self, _messages: &[Message], _params: &SamplingParams) -> Result<String, BackendError> {
        let out = self
            .outputs
            .get(self.cursor)
            .or_else(|| self.outputs.last())
            .cloned()
            .ok_or_else(|| BackendError::Script("empty script".into()))?;
        self.cursor += 1;
        Ok(out)
    }
}

/// Script file: either a bare array of outputs used for every item, or
/// `{"default": [...], "items": {"<item id>": [...]}}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Script {
    Single(Vec<String>),
    Keyed {
        #[serde(default)]
        default: Option<Vec<String>>,
        #[serde(default)]
        items: BTreeMap<String, Vec<String>>,
    },
}

impl Script {
    pub fn load(path: &Path) -> Result<Self, BackendError> {
        let text = std::fs::read_to_string(path).map_err(|e| BackendError::Script(format!("{}: {e}", path.display())))?;
        serde_json::from_str(&text).map_err(|e| BackendError::Script(format!("{}: {e}", path.display())))
    }

    pub fn outputs_for(&self, item_id: &str) -> Option<&[String]> {
        match self {
            Script::Single(v) => Some(v),
            Script::Keyed { default, items } => items.get(item_id).or(default.as_ref()).map(Vec::as_slice),
        }
    }

    pub fn backend_for(&self, item_id: &str) -> Result<ScriptedBackend, BackendError> {
        self.outputs_for(item_id)
            .map(|o| ScriptedBackend::new(o.to_vec()))
            .ok_or_else(|| BackendError::Script(format!("no script entry for item '{item_id}'")))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn scripted_repeats_last() {
        let mut b = ScriptedBackend::new(vec!["a".into(), "b".into()]);
        let p = SamplingParams::default();
        let got: Vec<_> = (0..4).map(|_| b.complete(&[], &p).unwrap()).collect();
        assert_eq!(got, ["a", "b", "b", "b"]);
        assert!(ScriptedBackend::new(vec![]).complete(&[], &p).is_err());
    }

    #[test]
    fn script_formats() {
        let s: Script = serde_json::from_str(r#"["x","y"]"#).unwrap();
        assert_eq!(s.outputs_for("any").unwrap(), ["x", "y"]);
        let k: Script = serde_json::from_str(r#"{"default":["d"],"items":{"q1":["one"]}}"#).unwrap();
        assert_eq!(k.outputs_for("q1").unwrap(), ["one"]);
        assert_eq!(k.outputs_for("q2").unwrap(), ["d"]);
        let strict: Script = serde_json::from_str(r#"{"items":{"q1":["one"]}}"#).unwrap();
        assert!(strict.backend_for("q2").is_err());
    }
}
