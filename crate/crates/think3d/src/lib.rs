//! Std companion to `think3d-core`: file formats, the tool service, the agent
//! loop, the evaluation harness and RL data tooling.

pub mod io;
pub mod toolkit;
pub mod agent;
pub mod eval;
pub mod rl;
