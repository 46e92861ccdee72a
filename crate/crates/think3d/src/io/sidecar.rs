//! JSON camera sidecar: one record per view, in view order.

use serde::{Deserialize, Serialize};
use thiserror::Error;
use think3d_core::geometry::{CameraPose, GeometryError, Intrinsics, Rotation, Vec3};
use think3d_core::Scene;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CameraRecord {
    /// 1-based view index.
    pub view_index: usize,
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: u32,
    pub height: u32,
    /// World-to-camera rotation, row-major.
    pub rotation: [f64; 9],
    pub center: [f64; 3],
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub source_image: Option<String>,
}

#[derive(Debug, Error)]
pub enum SidecarError {
    #[error("sidecar JSON: {0}")]
    Json(#[from] serde_json::Error),
    #[error("record {position}: view_index {found}, expected {expected}")]
    ViewOrder { position: usize, found: usize, expected: usize },
    #[error("camera {view}: {source}")]
    Camera { view: usize, source: GeometryError },
}

impl CameraRecord {
    pub fn from_pose(view_index: usize, pose: &CameraPose, source_image: Option<String>) -> Self {
        let k = &pose.intrinsics;
        Self {
            view_index,
            fx: k.fx,
            fy: k.fy,
            cx: k.cx,
            cy: k.cy,
            width: k.width,
            height: k.height,
            rotation: pose.rotation.to_row_major(),
            center: [pose.center.x, pose.center.y, pose.center.z],
            source_image,
        }
    }

    pub fn to_pose(&self) -> Result<CameraPose, GeometryError> {
        let k = Intrinsics::new(self.fx, self.fy, self.cx, self.cy, self.width, self.height)?;
        let r = Rotation::from_row_major(self.rotation)?;
        CameraPose::new(k, r, Vec3::new(self.center[0], self.center[1], self.center[2]))
    }
}

pub fn parse_sidecar(json: &[u8]) -> Result<Vec<CameraRecord>, SidecarError> {
    let records: Vec<CameraRecord> = serde_json::from_slice(json)?;
    for (i, r) in records.iter().enumerate() {
        if r.view_index != i + 1 {
            return Err(SidecarError::ViewOrder { position: i, found: r.view_index, expected: i + 1 });
        }
    }
    Ok(records)
}

pub fn cameras_from_records(records: &[CameraRecord]) -> Result<Vec<CameraPose>, SidecarError> {
    records
        .iter()
        .map(|r| r.to_pose().map_err(|source| SidecarError::Camera { view: r.view_index, source }))
        .collect()
}

pub fn records_from_scene(scene: &Scene) -> Vec<CameraRecord> {
    scene
        .cameras
        .iter()
        .zip(&scene.source_images)
        .enumerate()
        .map(|(i, (cam, img))| CameraRecord::from_pose(i + 1, cam, Some(img.clone())))
        .collect()
}

pub fn sidecar_json(records: &[CameraRecord]) -> Vec<u8> {
    let mut out = serde_json::to_vec_pretty(records).expect("camera records serialize");
    out.push(b'\n');
    out
}
