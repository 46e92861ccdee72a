//! The discretized viewpoint set used for RL: left, right and top views of
//! the first input camera.

use crate::geometry::{make_virtual_camera, AngleOffsets, CameraPose, GeometryError};
use crate::pointcloud::Scene;
use crate::render::{render, RenderError, RenderMode, RenderOptions, RenderedView};

/// Canonical views are rendered from input camera 1.
pub const CANONICAL_ANCHOR: usize = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "lowercase"))]
pub enum CanonicalTag {
    Left,
    Right,
    Top,
}

impl CanonicalTag {
    pub const ALL: [CanonicalTag; 3] = [CanonicalTag::Left, CanonicalTag::Right, CanonicalTag::Top];

    pub const fn offsets(self) -> AngleOffsets {
        match self {
            CanonicalTag::Left => AngleOffsets { azimuth: -45.0, elevation: 0.0 },
            CanonicalTag::Right => AngleOffsets { azimuth: 45.0, elevation: 0.0 },
            CanonicalTag::Top => AngleOffsets { azimuth: 0.0, elevation: 60.0 },
        }
    }

    pub fn from_offsets(offsets: AngleOffsets) -> Option<Self> {
        Self::ALL.into_iter().find(|t| t.offsets() == offsets)
    }

    pub fn as_str(self) -> &'static str {
        match self {
            CanonicalTag::Left => "left",
            CanonicalTag::Right => "right",
            CanonicalTag::Top => "top",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|t| t.as_str().eq_ignore_ascii_case(s))
    }

    pub fn index(self) -> usize {
        self as usize
    }
}

pub fn canonical_camera(scene: &Scene, tag: CanonicalTag) -> Result<CameraPose, RenderError> {
    let anchor = scene
        .camera(CANONICAL_ANCHOR)
        .ok_or(RenderError::InvalidAnchor { index: CANONICAL_ANCHOR, views: scene.view_count() })?;
    make_virtual_camera(anchor, tag.offsets()).map_err(|e: GeometryError| e.into())
}

/// Renders the three canonical views in left, right, top order (global mode).
pub fn render_canonical(scene: &Scene, options: &RenderOptions) -> Result<[(CanonicalTag, RenderedView); 3], RenderError> {
    let one = |tag: CanonicalTag| render(scene, CANONICAL_ANCHOR, tag.offsets(), RenderMode::Global, options).map(|v| (tag, v));
    Ok([one(CanonicalTag::Left)?, one(CanonicalTag::Right)?, one(CanonicalTag::Top)?])
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::rotation_from_angles;
    use crate::pointcloud::{synth_scene, SyntheticSpec};

    #[test]
    fn three_views_in_fixed_order() {
        let scene = synth_scene(&SyntheticSpec::cube(4, 2)).unwrap();
        let views = render_canonical(&scene, &RenderOptions::default()).unwrap();
        let tags: [CanonicalTag; 3] = core::array::from_fn(|i| views[i].0);
        assert_eq!(tags, CanonicalTag::ALL);
        let top = &views[2].1;
        let anchor = scene.camera(1).unwrap();
        let delta = rotation_from_angles(AngleOffsets { azimuth: 0.0, elevation: 60.0 }).unwrap();
        assert_eq!(top.camera.rotation, delta.compose(&anchor.rotation));
        assert_eq!(top.camera.center, anchor.center);
    }

    #[test]
    fn offsets_round_trip() {
        for t in CanonicalTag::ALL {
            assert_eq!(CanonicalTag::from_offsets(t.offsets()), Some(t));
            assert_eq!(CanonicalTag::parse(t.as_str()), Some(t));
        }
        assert_eq!(CanonicalTag::from_offsets(AngleOffsets { azimuth: 30.0, elevation: 10.0 }), None);
    }
}
