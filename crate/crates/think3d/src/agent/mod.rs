//! The agent loop: prompts, model backends, tool-call parsing, episodes and
//! trajectories.

pub mod backend;
pub mod episode;
pub mod messages;
pub mod parse;
pub mod prompts;
pub mod remote;
pub mod trajectory;

pub use backend::{BackendError, Capabilities, SamplingParams, Script, ScriptedBackend, VlmBackend};
pub use episode::{replay_backend, run_batch, run_episode, AgentConfig, EpisodeError, EpisodeJob, Question};
pub use parse::{parse_action, ParseOutcome, Parsed};
pub use prompts::{ActionSpace, PromptError, PromptSet};
pub use remote::{RemoteBackend, RemoteConfig};
pub use trajectory::{read_trajectories, write_trajectories, ObservationRef, Trajectory, Turn};
