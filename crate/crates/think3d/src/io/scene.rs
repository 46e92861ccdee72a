//! Scene bundles: a PLY cloud plus its camera sidecar.

use std::path::{Path, PathBuf};

use sha2::{Digest, Sha256};
use thiserror::Error;
use think3d_core::{Scene, SceneError};

use super::ply::{read_ply, write_ply, PlyError, PlyFormat};
use super::sidecar::{cameras_from_records, parse_sidecar, records_from_scene, sidecar_json, SidecarError};

const VIEWS_COMMENT: &str = "think3d views";

#[derive(Debug, Error)]
pub enum SceneFileError {
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("point cloud: {0}")]
    Ply(#[from] PlyError),
    #[error("camera sidecar: {0}")]
    Sidecar(#[from] SidecarError),
    #[error("schema: point cloud was written for {cloud} views but the sidecar has {sidecar} cameras")]
    ViewCountMismatch { cloud: usize, sidecar: usize },
    #[error("schema: {0}")]
    Scene(#[from] SceneError),
}

fn read(path: &Path) -> Result<Vec<u8>, SceneFileError> {
    std::fs::read(path).map_err(|source| SceneFileError::Io { path: path.to_path_buf(), source })
}

fn write(path: &Path, bytes: &[u8]) -> Result<(), SceneFileError> {
    std::fs::write(path, bytes).map_err(|source| SceneFileError::Io { path: path.to_path_buf(), source })
}

/// Builds a scene from in-memory PLY and sidecar bytes.
pub fn scene_from_parts(ply: &[u8], sidecar: &[u8]) -> Result<Scene, SceneFileError> {
    let cloud = read_ply(ply)?;
    let records = parse_sidecar(sidecar)?;
    let declared = cloud
        .comments
        .iter()
        .find_map(|c| c.strip_prefix(VIEWS_COMMENT).and_then(|n| n.trim().parse::<usize>().ok()));
    if let Some(cloud_views) = declared {
        if cloud_views != records.len() {
            return Err(SceneFileError::ViewCountMismatch { cloud: cloud_views, sidecar: records.len() });
        }
    }
    let cameras = cameras_from_records(&records)?;
    let images = records
        .iter()
        .map(|r| r.source_image.clone().unwrap_or_else(|| format!("view/{}", r.view_index)))
        .collect();
    Ok(Scene::new(cloud.points, cameras, images)?)
}

/// Canonical serialized form: binary PLY and pretty JSON sidecar.
pub fn scene_to_parts(scene: &Scene) -> (Vec<u8>, Vec<u8>) {
    let comments = [format!("{VIEWS_COMMENT} {}", scene.view_count())];
    let ply = write_ply(&scene.points, &comments, PlyFormat::BinaryLittleEndian);
    (ply, sidecar_json(&records_from_scene(scene)))
}

pub fn load_scene(cloud_path: &Path, sidecar_path: &Path) -> Result<Scene, SceneFileError> {
    scene_from_parts(&read(cloud_path)?, &read(sidecar_path)?)
}

pub fn save_scene(scene: &Scene, cloud_path: &Path, sidecar_path: &Path) -> Result<(), SceneFileError> {
    let (ply, json) = scene_to_parts(scene);
    write(cloud_path, &ply)?;
    write(sidecar_path, &json)
}

/// Hex SHA-256 of the canonical serialization.
pub fn scene_hash(scene: &Scene) -> String {
    let (ply, json) = scene_to_parts(scene);
    let mut h = Sha256::new();
    h.update((ply.len() as u64).to_le_bytes());
    h.update(&ply);
    h.update(&json);
    hex::encode(h.finalize())
}
