//! Prompt templates with `{question}`, `{round}`, `{max_rounds}` and
//! `{tool_spec}` placeholders.

use std::path::Path;

use thiserror::Error;
use think3d_core::rl::CanonicalTag;

#[derive(Debug, Error)]
pub enum PromptError {
    #[error("prompt template '{name}' missing in {dir}")]
    Missing { name: &'static str, dir: String },
    #[error("unknown prompt set '{0}' (expected 'default', 'rl' or a directory)")]
    UnknownSet(String),
}

/// Which tool calls the prompts advertise.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ActionSpace {
    /// Reconstruct plus free-form views.
    Free,
    /// Pre-reconstructed scene, left/right/top views of camera 1 only.
    Canonical,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PromptSet {
    pub name: String,
    pub system: String,
    pub tool: String,
    pub continuation: String,
    pub final_turn: String,
    pub action_space: ActionSpace,
}

pub const TEMPLATE_FILES: [&str; 4] = ["system.txt", "tool.txt", "continuation.txt", "final.txt"];

impl PromptSet {
    pub fn default_set() -> Self {
        Self {
            name: "default".into(),
            system: include_str!("../../prompts/default/system.txt").into(),
            tool: include_str!("../../prompts/default/tool.txt").into(),
            continuation: include_str!("../../prompts/default/continuation.txt").into(),
            final_turn: include_str!("../../prompts/default/final.txt").into(),
            action_space: ActionSpace::Free,
        }
    }

    pub fn rl_set() -> Self {
        Self {
            name: "rl".into(),
            system: include_str!("../../prompts/rl/system.txt").into(),
            tool: include_str!("../../prompts/rl/tool.txt").into(),
            continuation: include_str!("../../prompts/rl/continuation.txt").into(),
            final_turn: include_str!("../../prompts/rl/final.txt").into(),
            action_space: ActionSpace::Canonical,
        }
    }

    /// Loads the four template files from a directory. A file named
    /// `canonical` in the directory selects the canonical action space.
    pub fn from_dir(dir: &Path) -> Result<Self, PromptError> {
        let read = |i: usize| {
            std::fs::read_to_string(dir.join(TEMPLATE_FILES[i]))
                .map_err(|_| PromptError::Missing { name: TEMPLATE_FILES[i], dir: dir.display().to_string() })
        };
        Ok(Self {
            name: dir.display().to_string(),
            system: read(0)?,
            tool: read(1)?,
            continuation: read(2)?,
            final_turn: read(3)?,
            action_space: if dir.join("canonical").exists() { ActionSpace::Canonical } else { ActionSpace::Free },
        })
    }

    /// `default`, `rl`, or a template directory.
    pub fn resolve(spec: &str) -> Result<Self, PromptError> {
        match spec {
            "default" => Ok(Self::default_set()),
            "rl" => Ok(Self::rl_set()),
            dir if Path::new(dir).is_dir() => Self::from_dir(Path::new(dir)),
            other => Err(PromptError::UnknownSet(other.to_owned())),
        }
    }

    pub fn tool_spec(&self) -> String {
        match self.action_space {
            ActionSpace::Free => [
                r#"<tool>{"kind":"reconstruct"}</tool>  build the 3D scene from the input photos"#,
                r#"<tool>{"kind":"view","anchor":N,"mode":"global"|"ego","azimuth":DEG,"elevation":DEG}</tool>  render from camera N rotated by the given angles"#,
                r#"<tool>{"kind":"answer","text":"<letter>"}</tool>  submit the final answer"#,
            ]
            .join("\n"),
            ActionSpace::Canonical => CanonicalTag::ALL
                .iter()
                .map(|t| {
                    let o = t.offsets();
                    format!(
                        r#"{} view: <tool>{{"kind":"view","anchor":1,"mode":"global","azimuth":{},"elevation":{}}}</tool>"#,
                        t.as_str(),
                        o.azimuth,
                        o.elevation
                    )
                })
                .collect::<Vec<_>>()
                .join("\n"),
        }
    }
}

pub struct Vars<'a> {
    pub question: &'a str,
    pub round: usize,
    pub max_rounds: usize,
    pub tool_spec: &'a str,
}

pub fn fill(template: &str, vars: &Vars<'_>) -> String {
    template
        .replace("{question}", vars.question)
        .replace("{round}", &vars.round.to_string())
        .replace("{max_rounds}", &vars.max_rounds.to_string())
        .replace("{tool_spec}", vars.tool_spec)
        .trim_end()
        .to_owned()
}
