//! RL data tooling: cached canonical views, training-set export and toy
//! trainer curves.

pub mod canonical;
pub mod curve;
pub mod export;

pub use canonical::{pre_render_canonical, CanonicalError, CanonicalView};
pub use curve::{moving_average, train_toy, write_curve, CurveRow};
pub use export::{export_rollout_dataset, read_trajectory_dir, write_export, ExportError, ExportRecord, ExportSegment, ExportTurn};
