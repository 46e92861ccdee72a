//! The observe, manipulate, reflect loop.

use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;
use think3d_core::scoring::{extract_answer, format_choices, Choice};

use super::backend::{BackendError, SamplingParams, VlmBackend};
use super::messages::{build_messages, digest, ImageOrigin, ImagePart, PriorTurn, RoundSpec};
use super::parse::{parse_action, Parsed};
use super::prompts::{ActionSpace, PromptSet};
use super::trajectory::{Metadata, ObservationRef, Trajectory, Turn};
use crate::toolkit::{Action, ImagePayload, ToolError, ToolOutput, ToolResult, Toolkit};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Question {
    pub id: String,
    pub text: String,
    #[serde(default)]
    pub choices: Vec<Choice>,
}

impl Question {
    pub fn prompt_text(&self) -> String {
        if self.choices.is_empty() {
            self.text.clone()
        } else {
            format!("{}\n\nChoices:\n{}", self.text, format_choices(&self.choices))
        }
    }
}

#[derive(Debug, Clone)]
pub struct AgentConfig {
    /// Tool-calling rounds before the forced answer round.
    pub max_turns: usize,
    pub sampling: SamplingParams,
    pub prompts: PromptSet,
    /// Further caps the backend's image limit.
    pub image_cap: Option<usize>,
    pub record_timestamps: bool,
    pub run: usize,
}

impl Default for AgentConfig {
    fn default() -> Self {
        Self {
            max_turns: 3,
            sampling: SamplingParams::default(),
            prompts: PromptSet::default_set(),
            image_cap: None,
            record_timestamps: false,
            run: 0,
        }
    }
}

#[derive(Debug, Error)]
pub enum EpisodeError {
    #[error("could not open a tool session: {0}")]
    Session(ToolError),
    #[error("backend failed in round {round}: {source}")]
    Backend { round: usize, source: BackendError, partial: Box<Trajectory> },
}

impl EpisodeError {
    pub fn partial(&self) -> Option<&Trajectory> {
        match self {
            EpisodeError::Backend { partial, .. } => Some(partial),
            EpisodeError::Session(_) => None,
        }
    }
}

fn now() -> String {
    let d = std::time::SystemTime::now().duration_since(std::time::UNIX_EPOCH).unwrap_or_default();
    format!("{}.{:03}", d.as_secs(), d.subsec_millis())
}

pub fn parse_feedback(message: &str) -> String {
    format!("Tool error [parse_failure]: {message}. Write exactly one <tool>{{...}}</tool> block with valid JSON, or answer.")
}

struct Loop<'a> {
    question: &'a Question,
    toolkit: &'a Toolkit,
    session: String,
    config: &'a AgentConfig,
    traj: Trajectory,
    prior: Vec<PriorTurn>,
}

impl Loop<'_> {
    fn finish(mut self, answer_text: &str) -> Trajectory {
        let t = &mut self.traj;
        if self.question.choices.is_empty() {
            t.final_answer = answer_text.trim().to_owned();
        } else {
            t.extraction = extract_answer(answer_text, &self.question.choices);
            t.final_answer = t.extraction.as_ref().map(|e| e.label.clone()).unwrap_or_default();
        }
        t.answer_parse_failed = t.final_answer.is_empty();
        self.close()
    }

    fn close(mut self) -> Trajectory {
        self.toolkit.remove_session(&self.session);
        let t = &mut self.traj;
        t.steps = t.turns.len();
        t.tool_rounds = t.turns.iter().filter(|x| x.is_tool_round()).count();
        if self.config.record_timestamps {
            t.metadata.finished_at = Some(now());
        }
        self.traj
    }
}

/// Runs one episode: up to `max_turns` tool-calling rounds, then an
/// answer-only round in which tool calls are not executed.
pub fn run_episode(
    question: &Question,
    images: &[ImagePayload],
    backend: &mut dyn VlmBackend,
    toolkit: &Toolkit,
    config: &AgentConfig,
) -> Result<Trajectory, EpisodeError> {
    let canonical = config.prompts.action_space == ActionSpace::Canonical;
    // the canonical prompt set starts from an existing reconstruction
    let budget = config.max_turns + usize::from(canonical);
    let session = toolkit.create_session_with_budget(images.to_vec(), budget).map_err(EpisodeError::Session)?;
    if canonical {
        if let ToolResult::Error(e) = toolkit.handle_action(&session, Action::Reconstruct) {
            toolkit.remove_session(&session);
            return Err(EpisodeError::Session(e));
        }
    }

    let inputs: Vec<ImagePart> = images
        .iter()
        .map(|i| ImagePart { name: i.name.clone(), data: Arc::new(i.bytes.clone()), origin: ImageOrigin::Input })
        .collect();
    let caps = backend.capabilities();
    let image_cap = config.image_cap.map_or(caps.max_images, |c| c.min(caps.max_images));
    let question_text = question.prompt_text();

    let mut st = Loop {
        question,
        toolkit,
        session,
        config,
        traj: Trajectory {
            question_id: question.id.clone(),
            turns: Vec::new(),
            final_answer: String::new(),
            extraction: None,
            answer_parse_failed: false,
            steps: 0,
            tool_rounds: 0,
            metadata: Metadata {
                model: backend.name(),
                seed: config.sampling.seed,
                max_turns: config.max_turns,
                prompt_set: config.prompts.name.clone(),
                run: config.run,
                started_at: config.record_timestamps.then(now),
                finished_at: None,
            },
            gold: None,
            reward: None,
            error: None,
        },
        prior: Vec::new(),
    };

    for round in 1..=config.max_turns + 1 {
        let is_final = round > config.max_turns;
        let spec = RoundSpec { question: &question_text, round, max_rounds: config.max_turns, image_cap };
        let messages = build_messages(&spec, &inputs, &st.prior, &config.prompts);
        let state_digest = digest(&messages);
        let output = match backend.complete(&messages, &config.sampling) {
            Ok(o) => o,
            Err(source) => {
                st.traj.error = Some(source.to_string());
                st.traj.answer_parse_failed = true;
                let partial = Box::new(st.close());
                return Err(EpisodeError::Backend { round, source, partial });
            }
        };
        let parsed = parse_action(&output);
        let mut turn = Turn {
            index: round,
            state_digest,
            model_output: output.clone(),
            parsed_action: None,
            parse_error: None,
            executed: false,
            tool_result: None,
            observation: None,
            observation_png: None,
        };

        if is_final {
            if let Parsed::Action(a) = &parsed.parsed {
                turn.parsed_action = Some(a.clone());
            }
            let text = match &parsed.parsed {
                Parsed::Action(Action::Answer { text }) => text.clone(),
                _ => parsed.reasoning.clone(),
            };
            st.traj.turns.push(turn);
            return Ok(st.finish(&text));
        }

        match parsed.parsed {
            Parsed::Absent => {
                st.traj.turns.push(turn);
                return Ok(st.finish(&output));
            }
            Parsed::Malformed(msg) => {
                let feedback = parse_feedback(&msg);
                turn.parse_error = Some(msg);
                st.traj.turns.push(turn);
                st.prior.push(PriorTurn { output, feedback, observation: None });
            }
            Parsed::Action(action) => {
                turn.parsed_action = Some(action.clone());
                turn.executed = true;
                let handled = toolkit.handle(&st.session, action.clone());
                turn.tool_result = Some(handled.result.without_inline_images());
                if let (ToolResult::Ok(ToolOutput::Answer { text }), Action::Answer { .. }) = (&handled.result, &action) {
                    let text = text.clone();
                    st.traj.turns.push(turn);
                    return Ok(st.finish(&text));
                }
                let feedback = handled.result.feedback();
                let mut observation = None;
                if let (Some(entry), ToolResult::Ok(ToolOutput::View { anchor, mode, offsets, image, .. })) =
                    (&handled.observation, &handled.result)
                {
                    turn.observation = Some(ObservationRef {
                        path: image.name.clone(),
                        sha256: image.sha256.clone(),
                        anchor: *anchor,
                        mode: *mode,
                        offsets: *offsets,
                    });
                    turn.observation_png = Some(entry.png.clone());
                    observation = Some(ImagePart { name: image.name.clone(), data: entry.png.clone(), origin: ImageOrigin::Observation });
                }
                st.traj.turns.push(turn);
                st.prior.push(PriorTurn { output, feedback, observation });
            }
        }
    }
    unreachable!("the answer-only round always returns")
}

/// Replays a recorded trajectory's model outputs as a script.
pub fn replay_backend(traj: &Trajectory) -> super::backend::ScriptedBackend {
    super::backend::ScriptedBackend::new(traj.turns.iter().map(|t| t.model_output.clone()).collect())
}

pub struct EpisodeJob {
    pub question: Question,
    pub images: Vec<ImagePayload>,
    pub backend: Box<dyn VlmBackend>,
    pub config: AgentConfig,
}

/// Runs jobs on up to `workers` threads; results keep job order.
pub fn run_batch(jobs: Vec<EpisodeJob>, toolkit: &Toolkit, workers: usize) -> Vec<Result<Trajectory, EpisodeError>> {
    use rayon::prelude::*;
    let pool = rayon::ThreadPoolBuilder::new().num_threads(workers.max(1)).build().expect("thread pool");
    pool.install(|| {
        jobs.into_par_iter()
            .map(|mut job| run_episode(&job.question, &job.images, job.backend.as_mut(), toolkit, &job.config))
            .collect()
    })
}
