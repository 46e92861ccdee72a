//! GRPO for multi-turn viewpoint selection.

pub mod canonical;
pub mod grpo;
pub mod toy;

pub use canonical::{canonical_camera, render_canonical, CanonicalTag, CANONICAL_ANCHOR};
pub use grpo::{group_advantages, grpo_loss, GrpoConfig, GrpoError, GrpoLoss, Segment, TokenizedTrajectory};
pub use toy::{StepStats, TabularPolicy, ToyAction, ToyRollout, ToyTrainConfig, ToyTrainer, ToyViewpointBandit};
