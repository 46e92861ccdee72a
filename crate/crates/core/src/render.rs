//! Z-buffered point splatting for global and ego-centric novel views.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use thiserror::Error;

use crate::geometry::{make_virtual_camera_with, world_to_camera, AngleConvention, AngleOffsets, CameraPose, GeometryError, Projection};
use crate::pointcloud::{unit_to_u8, ColoredPoint, Scene, SceneError, ViewCone, DEFAULT_EGO_HALF_ANGLE};

pub const MAX_SPLAT_RADIUS: u32 = 32;

/// Marks pixels no point reached in [`RenderedView::source`].
pub const NO_POINT: u32 = u32::MAX;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum RenderError {
    #[error("anchor view {index} out of range 1..={views}")]
    InvalidAnchor { index: usize, views: usize },
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error(transparent)]
    Scene(#[from] SceneError),
    #[error("invalid render options: {0}")]
    InvalidOptions(alloc::string::String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "lowercase"))]
pub enum RenderMode {
    Global,
    Ego,
}

impl RenderMode {
    pub fn as_str(&self) -> &'static str {
        match self {
            RenderMode::Global => "global",
            RenderMode::Ego => "ego",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(default))]
pub struct RenderOptions {
    /// Disc radius in pixels; 0 draws single pixels.
    pub splat_radius: u32,
    pub background: [f32; 3],
    /// Ego-mode cone half-angle in degrees, in (0, 180].
    pub ego_half_angle: f64,
    /// Dolly-back distance along the virtual camera's -Z, world units.
    pub retreat: f64,
    /// Sign convention for the azimuth and elevation offsets.
    pub convention: AngleConvention,
}

impl Default for RenderOptions {
    fn default() -> Self {
        Self { splat_radius: 2, background: [1.0, 1.0, 1.0], ego_half_angle: DEFAULT_EGO_HALF_ANGLE, retreat: 0.0, convention: AngleConvention::default() }
    }
}

impl RenderOptions {
    pub fn validate(&self) -> Result<(), RenderError> {
        if self.splat_radius > MAX_SPLAT_RADIUS {
            return Err(RenderError::InvalidOptions(format!("splat radius {} exceeds {MAX_SPLAT_RADIUS}", self.splat_radius)));
        }
        if !(self.ego_half_angle > 0.0 && self.ego_half_angle <= 180.0) {
            return Err(RenderError::InvalidOptions(format!("ego half-angle {} not in (0, 180]", self.ego_half_angle)));
        }
        if !(self.retreat.is_finite() && self.retreat >= 0.0) {
            return Err(RenderError::InvalidOptions(format!("retreat {} must be finite and >= 0", self.retreat)));
        }
        let unit = |s: f64| s == 1.0 || s == -1.0;
        if !(unit(self.convention.azimuth_sign) && unit(self.convention.elevation_sign)) {
            return Err(RenderError::InvalidOptions("angle convention signs must be +1 or -1".into()));
        }
        if !self.background.iter().all(|c| (0.0..=1.0).contains(c)) {
            return Err(RenderError::InvalidOptions("background outside [0, 1]".into()));
        }
        Ok(())
    }
}

/// Row-major 8-bit RGB raster.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Image {
    pub width: u32,
    pub height: u32,
    pub data: Vec<u8>,
}

impl Image {
    pub fn filled(width: u32, height: u32, rgb: [u8; 3]) -> Self {
        let n = width as usize * height as usize;
        let mut data = Vec::with_capacity(n * 3);
        for _ in 0..n {
            data.extend_from_slice(&rgb);
        }
        Self { width, height, data }
    }

    pub fn pixel(&self, x: u32, y: u32) -> [u8; 3] {
        let i = (y as usize * self.width as usize + x as usize) * 3;
        [self.data[i], self.data[i + 1], self.data[i + 2]]
    }

    fn set(&mut self, idx: usize, rgb: [u8; 3]) {
        self.data[idx * 3..idx * 3 + 3].copy_from_slice(&rgb);
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RenderedView {
    pub image: Image,
    /// Per-pixel camera depth of the winning point, `INFINITY` for background.
    pub depth: Vec<f32>,
    /// Per-pixel index into `Scene::points` of the winning point, or [`NO_POINT`].
    pub source: Vec<u32>,
    pub camera: CameraPose,
    pub mode: RenderMode,
    pub offsets: AngleOffsets,
    pub anchor_index: usize,
}

impl RenderedView {
    pub fn is_covered(&self, x: u32, y: u32) -> bool {
        self.source[y as usize * self.image.width as usize + x as usize] != NO_POINT
    }

    pub fn covered_count(&self) -> usize {
        self.source.iter().filter(|&&s| s != NO_POINT).count()
    }
}

pub fn render(
    scene: &Scene,
    anchor_index: usize,
    offsets: AngleOffsets,
    mode: RenderMode,
    options: &RenderOptions,
) -> Result<RenderedView, RenderError> {
    options.validate()?;
    let anchor = scene
        .camera(anchor_index)
        .ok_or(RenderError::InvalidAnchor { index: anchor_index, views: scene.view_count() })?;
    let mut camera = make_virtual_camera_with(anchor, offsets, options.convention)?;
    if options.retreat > 0.0 {
        camera.center -= camera.forward() * options.retreat;
    }
    let cone = match mode {
        RenderMode::Global => None,
        // the cone follows the original anchor, not the rotated virtual camera
        RenderMode::Ego => Some(ViewCone::new(anchor, options.ego_half_angle)?),
    };
    let points = scene
        .points
        .iter()
        .enumerate()
        .filter(|(_, p)| cone.is_none_or(|c| c.contains(&p.position_f64())))
        .map(|(i, p)| (i as u32, p));
    let fb = rasterize(points, &camera, options);
    Ok(RenderedView {
        image: fb.image,
        depth: fb.depth.into_iter().map(|d| d as f32).collect(),
        source: fb.source,
        camera,
        mode,
        offsets,
        anchor_index,
    })
}

struct Framebuffer {
    image: Image,
    depth: Vec<f64>,
    source: Vec<u32>,
}

/// Splats points into a raster of the camera's native resolution.
///
/// A point wins a pixel over the current occupant when it is strictly nearer,
/// or equally near with a lower index, so the result does not depend on the
/// order points arrive in.
fn rasterize<'a>(points: impl Iterator<Item = (u32, &'a ColoredPoint)>, camera: &CameraPose, options: &RenderOptions) -> Framebuffer {
    let k = &camera.intrinsics;
    let (w, h) = (k.width as i64, k.height as i64);
    let n = k.pixel_count();
    let mut fb = Framebuffer {
        image: Image::filled(k.width, k.height, options.background.map(unit_to_u8)),
        depth: vec![f64::INFINITY; n],
        source: vec![NO_POINT; n],
    };
    let r = options.splat_radius as i64;
    let r2 = r * r;
    for (id, p) in points {
        let pc = world_to_camera(camera, &p.position_f64());
        let Some(Projection { u, v, depth }) = crate::geometry::project_camera_point(k, &pc) else {
            continue;
        };
        let (px, py) = (libm::floor(u) as i64, libm::floor(v) as i64);
        for dy in -r..=r {
            let y = py + dy;
            if y < 0 || y >= h {
                continue;
            }
            for dx in -r..=r {
                let x = px + dx;
                if x < 0 || x >= w || dx * dx + dy * dy > r2 {
                    continue;
                }
                let idx = (y * w + x) as usize;
                let (d0, s0) = (fb.depth[idx], fb.source[idx]);
                if depth < d0 || (depth == d0 && id < s0) {
                    fb.depth[idx] = depth;
                    fb.source[idx] = id;
                    fb.image.set(idx, p.color);
                }
            }
        }
    }
    fb
}
