//! Conversation assembly for each agent round.

use std::sync::Arc;

use sha2::{Digest, Sha256};

use super::prompts::{fill, PromptSet, Vars};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Role {
    System,
    User,
    Assistant,
}

impl Role {
    pub fn as_str(self) -> &'static str {
        match self {
            Role::System => "system",
            Role::User => "user",
            Role::Assistant => "assistant",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ImageOrigin {
    Input,
    Observation,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ImagePart {
    pub name: String,
    pub data: Arc<Vec<u8>>,
    pub origin: ImageOrigin,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Part {
    Text(String),
    Image(ImagePart),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Message {
    pub role: Role,
    pub parts: Vec<Part>,
}

impl Message {
    pub fn text(role: Role, text: impl Into<String>) -> Self {
        Self { role, parts: vec![Part::Text(text.into())] }
    }

    pub fn images(&self) -> impl Iterator<Item = &ImagePart> {
        self.parts.iter().filter_map(|p| match p {
            Part::Image(i) => Some(i),
            Part::Text(_) => None,
        })
    }

    pub fn text_content(&self) -> String {
        let texts: Vec<&str> = self.parts.iter().filter_map(|p| if let Part::Text(t) = p { Some(t.as_str()) } else { None }).collect();
        texts.join("\n\n")
    }
}

/// A completed earlier round as seen by the prompt builder.
#[derive(Debug, Clone, PartialEq)]
pub struct PriorTurn {
    pub output: String,
    /// Tool feedback, parse-error feedback, or empty.
    pub feedback: String,
    pub observation: Option<ImagePart>,
}

pub struct RoundSpec<'a> {
    /// Question text including the formatted choices.
    pub question: &'a str,
    pub round: usize,
    pub max_rounds: usize,
    pub image_cap: usize,
}

/// Builds the message list for `round` (1-based). Round `max_rounds + 1` is
/// the answer-only round: the tool section is dropped and the final-turn
/// template replaces the continuation.
pub fn build_messages(spec: &RoundSpec<'_>, inputs: &[ImagePart], history: &[PriorTurn], prompts: &PromptSet) -> Vec<Message> {
    let tool_spec = prompts.tool_spec();
    let is_final = spec.round > spec.max_rounds;
    let vars = Vars { question: spec.question, round: spec.round, max_rounds: spec.max_rounds, tool_spec: &tool_spec };

    let mut system = fill(&prompts.system, &vars);
    if !is_final {
        system.push_str("\n\n");
        system.push_str(&fill(&prompts.tool, &vars));
    }
    let mut msgs = vec![Message::text(Role::System, system)];

    let mut user = vec![Part::Text(spec.question.to_owned())];
    user.extend(inputs.iter().cloned().map(Part::Image));
    msgs.push(Message { role: Role::User, parts: user });

    // oldest observations go first when over the cap; inputs always stay
    let observations = history.iter().filter(|h| h.observation.is_some()).count();
    let room = spec.image_cap.saturating_sub(inputs.len());
    let mut evict = observations.saturating_sub(room);

    for h in history {
        msgs.push(Message::text(Role::Assistant, h.output.clone()));
        let mut parts = Vec::new();
        if !h.feedback.is_empty() {
            parts.push(Part::Text(h.feedback.clone()));
        }
        if let Some(obs) = &h.observation {
            if evict > 0 {
                evict -= 1;
                parts.push(Part::Text(format!("[rendered view {} omitted to fit the image limit]", obs.name)));
            } else {
                parts.push(Part::Image(obs.clone()));
            }
        }
        if parts.is_empty() {
            parts.push(Part::Text("No tool was called.".into()));
        }
        msgs.push(Message { role: Role::User, parts });
    }

    let tail = if is_final { fill(&prompts.final_turn, &vars) } else { fill(&prompts.continuation, &vars) };
    let last = msgs.last_mut().expect("at least two messages");
    if last.role == Role::User {
        last.parts.push(Part::Text(tail));
    } else {
        msgs.push(Message::text(Role::User, tail));
    }
    msgs
}

/// Stable hex digest of a message list (images by content hash).
pub fn digest(messages: &[Message]) -> String {
    let mut h = Sha256::new();
    for m in messages {
        h.update(m.role.as_str().as_bytes());
        h.update([0]);
        for p in &m.parts {
            match p {
                Part::Text(t) => {
                    h.update(b"t");
                    h.update((t.len() as u64).to_le_bytes());
                    h.update(t.as_bytes());
                }
                Part::Image(i) => {
                    h.update(b"i");
                    h.update(Sha256::digest(i.data.as_slice()));
                }
            }
        }
        h.update([1]);
    }
    hex::encode(h.finalize())[..16].to_owned()
}
