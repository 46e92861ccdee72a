//! Left, right and top views of camera 1, rendered once per scene and cached.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;
use think3d_core::rl::{render_canonical, CanonicalTag, CANONICAL_ANCHOR};
use think3d_core::{AngleOffsets, RenderError, RenderOptions, Scene};

use crate::io::{encode_png, scene_hash, CameraRecord, PngError};

#[derive(Debug, Error)]
pub enum CanonicalError {
    #[error(transparent)]
    Render(#[from] RenderError),
    #[error(transparent)]
    Png(#[from] PngError),
    #[error("{path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("corrupt cache entry {path}: {message}")]
    Cache { path: String, message: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CanonicalView {
    pub tag: CanonicalTag,
    pub offsets: AngleOffsets,
    pub camera: CameraRecord,
    #[serde(skip)]
    pub png: Vec<u8>,
    /// Location of the PNG when a cache directory is used.
    #[serde(skip)]
    pub path: Option<PathBuf>,
    #[serde(skip)]
    pub cached: bool,
}

fn io_err(path: &Path) -> impl Fn(std::io::Error) -> CanonicalError + '_ {
    move |source| CanonicalError::Io { path: path.display().to_string(), source }
}

/// Cache directory for a scene under a given set of render options.
pub fn cache_key(scene: &Scene, options: &RenderOptions) -> String {
    let mut h = Sha256::new();
    h.update(scene_hash(scene).as_bytes());
    h.update(serde_json::to_vec(options).expect("options serialize"));
    hex::encode(h.finalize())
}

/// Renders the three canonical views in left, right, top order. With
/// `cache_dir`, results are stored under a key derived from the scene and
/// options and later calls read them back unchanged.
pub fn pre_render_canonical(scene: &Scene, options: &RenderOptions, cache_dir: Option<&Path>) -> Result<Vec<CanonicalView>, CanonicalError> {
    let dir = cache_dir.map(|d| d.join(cache_key(scene, options)));
    if let Some(dir) = &dir {
        if let Some(views) = load_cached(dir)? {
            return Ok(views);
        }
    }
    let rendered = render_canonical(scene, options)?;
    let mut views = Vec::with_capacity(3);
    for (tag, view) in rendered {
        views.push(CanonicalView {
            tag,
            offsets: tag.offsets(),
            camera: CameraRecord::from_pose(CANONICAL_ANCHOR, &view.camera, None),
            png: encode_png(&view.image)?,
            path: None,
            cached: false,
        });
    }
    if let Some(dir) = &dir {
        std::fs::create_dir_all(dir).map_err(io_err(dir))?;
        for v in &mut views {
            let png = dir.join(format!("{}.png", v.tag.as_str()));
            std::fs::write(&png, &v.png).map_err(io_err(&png))?;
            v.path = Some(png);
        }
        // the manifest is written last and marks the entry complete
        let manifest = dir.join("views.json");
        let json = serde_json::to_vec_pretty(&views).expect("views serialize");
        std::fs::write(&manifest, json).map_err(io_err(&manifest))?;
    }
    Ok(views)
}

fn load_cached(dir: &Path) -> Result<Option<Vec<CanonicalView>>, CanonicalError> {
    let manifest = dir.join("views.json");
    let bytes = match std::fs::read(&manifest) {
        Ok(b) => b,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(None),
        Err(e) => return Err(io_err(&manifest)(e)),
    };
    let corrupt = |message: String| CanonicalError::Cache { path: manifest.display().to_string(), message };
    let mut views: Vec<CanonicalView> = serde_json::from_slice(&bytes).map_err(|e| corrupt(e.to_string()))?;
    if views.iter().map(|v| v.tag).ne(CanonicalTag::ALL) || views.iter().any(|v| v.offsets != v.tag.offsets()) {
        return Err(corrupt("unexpected view set".into()));
    }
    for v in &mut views {
        let png = dir.join(format!("{}.png", v.tag.as_str()));
        v.png = std::fs::read(&png).map_err(io_err(&png))?;
        v.path = Some(png);
        v.cached = true;
    }
    Ok(Some(views))
}
