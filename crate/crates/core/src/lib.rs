//! Allocation-only core of the think3d toolkit: pinhole geometry and virtual
//! cameras, fused point clouds, a z-buffered point renderer, multiple-choice
//! scoring, and GRPO for viewpoint-selection policies.
//!
//! Everything here is a pure function of its inputs. File formats, HTTP and
//! the agent loop live in the `think3d` crate.
#![no_std]

extern crate alloc;
#[cfg(test)]
extern crate std;

pub mod geometry;
pub mod pointcloud;
pub mod render;
pub mod rl;
pub mod scoring;

pub use geometry::{AngleOffsets, CameraPose, GeometryError, Intrinsics, Rotation, Vec3};
pub use pointcloud::{CleaningPolicy, ColoredPoint, Scene, SceneError};
pub use render::{Image, RenderError, RenderMode, RenderOptions, RenderedView};
