//! Fused colored point clouds with per-view cameras.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::geometry::{unproject, world_to_camera, CameraPose, GeometryError, Intrinsics, Vec3};

/// Default ego-cone half-angle in degrees.
pub const DEFAULT_EGO_HALF_ANGLE: f64 = 75.0;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SceneError {
    #[error("scene has no cameras")]
    NoCameras,
    #[error("{cameras} cameras but {images} source images")]
    ViewCountMismatch { cameras: usize, images: usize },
    #[error("point {index}: {reason}")]
    InvalidPoint { index: usize, reason: &'static str },
    #[error("camera {index}: {source}")]
    InvalidCamera { index: usize, source: GeometryError },
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
}

/// A point with 8-bit RGB color and a reconstruction confidence.
///
/// Colors are stored as 8-bit channels; [`ColoredPoint::color_unit`] gives
/// the normalized [0, 1] triplet.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ColoredPoint {
    pub position: [f32; 3],
    pub color: [u8; 3],
    pub confidence: f32,
}

impl ColoredPoint {
    pub fn new(position: [f32; 3], color: [u8; 3]) -> Self {
        Self { position, color, confidence: 1.0 }
    }

    pub fn with_confidence(mut self, confidence: f32) -> Self {
        self.confidence = confidence;
        self
    }

    pub fn position_f64(&self) -> Vec3 {
        Vec3::new(self.position[0] as f64, self.position[1] as f64, self.position[2] as f64)
    }

    pub fn color_unit(&self) -> [f32; 3] {
        self.color.map(|c| c as f32 / 255.0)
    }

    /// Quantizes a unit-range color; out-of-range channels are clamped.
    pub fn color_from_unit(rgb: [f32; 3]) -> [u8; 3] {
        rgb.map(unit_to_u8)
    }

    fn check(&self) -> Result<(), &'static str> {
        if !self.position.iter().all(|c| c.is_finite()) {
            return Err("non-finite position");
        }
        if !(self.confidence >= 0.0 && self.confidence <= 1.0) {
            return Err("confidence outside [0, 1]");
        }
        Ok(())
    }
}

pub(crate) fn unit_to_u8(c: f32) -> u8 {
    libm::roundf(c.clamp(0.0, 1.0) * 255.0) as u8
}

/// Fused point cloud plus the per-view cameras it was reconstructed from.
/// Views are addressed 1..=T.
#[derive(Debug, Clone, PartialEq)]
pub struct Scene {
    pub points: Vec<ColoredPoint>,
    pub cameras: Vec<CameraPose>,
    pub source_images: Vec<String>,
}

impl Scene {
    pub fn new(points: Vec<ColoredPoint>, cameras: Vec<CameraPose>, source_images: Vec<String>) -> Result<Self, SceneError> {
        let scene = Self { points, cameras, source_images };
        scene.validate()?;
        Ok(scene)
    }

    pub fn validate(&self) -> Result<(), SceneError> {
        if self.cameras.is_empty() {
            return Err(SceneError::NoCameras);
        }
        if self.cameras.len() != self.source_images.len() {
            return Err(SceneError::ViewCountMismatch { cameras: self.cameras.len(), images: self.source_images.len() });
        }
        for (index, cam) in self.cameras.iter().enumerate() {
            cam.validate().map_err(|source| SceneError::InvalidCamera { index: index + 1, source })?;
        }
        for (index, p) in self.points.iter().enumerate() {
            p.check().map_err(|reason| SceneError::InvalidPoint { index, reason })?;
        }
        Ok(())
    }

    pub fn view_count(&self) -> usize {
        self.cameras.len()
    }

    /// Camera by 1-based view index.
    pub fn camera(&self, view_index: usize) -> Option<&CameraPose> {
        view_index.checked_sub(1).and_then(|i| self.cameras.get(i))
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "snake_case"))]
pub enum CleaningPolicy {
    KeepAll,
    /// Keep points with confidence at or above a fixed value.
    MinConfidence(f32),
    /// Threshold at the empirical quantile of the confidences (linear
    /// interpolation between order statistics).
    DropLowestFraction(f64),
}

impl Default for CleaningPolicy {
    fn default() -> Self {
        CleaningPolicy::DropLowestFraction(0.2)
    }
}

impl CleaningPolicy {
    /// The confidence threshold this policy selects for `points`.
    pub fn threshold(&self, points: &[ColoredPoint]) -> f32 {
        match *self {
            CleaningPolicy::KeepAll => f32::NEG_INFINITY,
            CleaningPolicy::MinConfidence(t) => t,
            CleaningPolicy::DropLowestFraction(q) => {
                let mut c: Vec<f32> = points.iter().map(|p| p.confidence).collect();
                if c.is_empty() {
                    return f32::NEG_INFINITY;
                }
                c.sort_by(f32::total_cmp);
                quantile_sorted(&c, q) as f32
            }
        }
    }
}

/// Empirical quantile of sorted data, linear interpolation between order statistics.
pub fn quantile_sorted(sorted: &[f32], q: f64) -> f64 {
    let n = sorted.len();
    let pos = q.clamp(0.0, 1.0) * (n - 1) as f64;
    let lo = libm::floor(pos) as usize;
    let hi = (lo + 1).min(n - 1);
    let frac = pos - lo as f64;
    sorted[lo] as f64 + frac * (sorted[hi] as f64 - sorted[lo] as f64)
}

/// Keeps points whose confidence reaches the policy threshold, in input order.
pub fn fuse_and_clean(raw: &[ColoredPoint], policy: CleaningPolicy) -> Vec<ColoredPoint> {
    let t = policy.threshold(raw);
    raw.iter().filter(|p| p.confidence >= t).copied().collect()
}

/// One reconstructed view: per-pixel depth, color and confidence.
/// Pixels with non-finite or non-positive depth carry no point.
#[derive(Debug, Clone)]
pub struct DepthView {
    pub pose: CameraPose,
    pub depth: Vec<f32>,
    pub colors: Vec<[u8; 3]>,
    pub confidence: Vec<f32>,
}

/// Back-projects every valid pixel center of a depth view into world points.
pub fn unproject_view(view: &DepthView) -> Vec<ColoredPoint> {
    let w = view.pose.intrinsics.width as usize;
    let mut out = Vec::new();
    for (i, &d) in view.depth.iter().enumerate() {
        if !(d.is_finite() && d > 0.0) {
            continue;
        }
        let (u, v) = ((i % w) as f64 + 0.5, (i / w) as f64 + 0.5);
        let p = unproject(&view.pose, u, v, d as f64);
        out.push(ColoredPoint {
            position: [p.x as f32, p.y as f32, p.z as f32],
            color: view.colors[i],
            confidence: view.confidence[i].clamp(0.0, 1.0),
        });
    }
    out
}

/// Per-view unprojection, concatenation in view order, then confidence trimming.
pub fn fuse_views(views: &[DepthView], policy: CleaningPolicy) -> Vec<ColoredPoint> {
    let raw: Vec<ColoredPoint> = views.iter().flat_map(unproject_view).collect();
    fuse_and_clean(&raw, policy)
}

/// Forward cone about an anchor camera's optical axis.
#[derive(Debug, Clone, Copy)]
pub struct ViewCone<'a> {
    anchor: &'a CameraPose,
    half_angle: f64,
}

impl<'a> ViewCone<'a> {
    pub fn new(anchor: &'a CameraPose, half_angle_deg: f64) -> Result<Self, SceneError> {
        if !(half_angle_deg > 0.0 && half_angle_deg <= 180.0) {
            return Err(SceneError::InvalidParameter(format!("cone half-angle {half_angle_deg} not in (0, 180]")));
        }
        Ok(Self { anchor, half_angle: half_angle_deg.to_radians() })
    }

    pub fn contains(&self, position: &Vec3) -> bool {
        if self.half_angle >= core::f64::consts::PI {
            return true;
        }
        let p = world_to_camera(self.anchor, position);
        if !(p.z > 0.0) {
            return false;
        }
        libm::atan2(libm::hypot(p.x, p.y), p.z) <= self.half_angle
    }
}

/// Keeps points inside the anchor's forward cone. A half-angle of 180 keeps everything.
pub fn cone_filter(points: &[ColoredPoint], anchor: &CameraPose, half_angle_deg: f64) -> Result<Vec<ColoredPoint>, SceneError> {
    let cone = ViewCone::new(anchor, half_angle_deg)?;
    Ok(points.iter().filter(|p| cone.contains(&p.position_f64())).copied().collect())
}

#[derive(Debug, Clone, PartialEq)]
pub enum Primitive {
    /// `per_side`^3 points on a regular grid filling an axis-aligned cube.
    CubeLattice { center: [f64; 3], edge: f64, per_side: usize },
    /// Regular grid on the plane `origin + i*u + j*v`.
    PlaneGrid { origin: [f64; 3], u: [f64; 3], v: [f64; 3], nu: usize, nv: usize, color: [u8; 3] },
    /// Three colored point rows along +X (red), +Y (green), +Z (blue).
    AxisMarkers { origin: [f64; 3], length: f64, samples: usize },
}

impl Primitive {
    fn emit(&self, out: &mut Vec<ColoredPoint>) {
        match *self {
            Primitive::CubeLattice { center, edge, per_side } => {
                let n = per_side.max(1);
                let step = if n > 1 { edge / (n - 1) as f64 } else { 0.0 };
                let shade = |i: usize| if n > 1 { (i * 255 / (n - 1)) as u8 } else { 128 };
                for i in 0..n {
                    for j in 0..n {
                        for k in 0..n {
                            let p = [
                                center[0] - edge / 2.0 + i as f64 * step,
                                center[1] - edge / 2.0 + j as f64 * step,
                                center[2] - edge / 2.0 + k as f64 * step,
                            ];
                            out.push(ColoredPoint::new(p.map(|c| c as f32), [shade(i), shade(j), shade(k)]));
                        }
                    }
                }
            }
            Primitive::PlaneGrid { origin, u, v, nu, nv, color } => {
                for i in 0..nu {
                    for j in 0..nv {
                        let p = core::array::from_fn(|a| origin[a] + i as f64 * u[a] + j as f64 * v[a]);
                        out.push(ColoredPoint::new(p.map(|c: f64| c as f32), color));
                    }
                }
            }
            Primitive::AxisMarkers { origin, length, samples } => {
                let colors = [[255, 0, 0], [0, 255, 0], [0, 0, 255]];
                for (axis, color) in colors.into_iter().enumerate() {
                    for s in 1..=samples {
                        let mut p = origin;
                        p[axis] += length * s as f64 / samples as f64;
                        out.push(ColoredPoint::new(p.map(|c| c as f32), color));
                    }
                }
            }
        }
    }
}

/// Cameras evenly spaced on a horizontal circle, all looking at `target`.
/// World "down" is +Y.
#[derive(Debug, Clone, PartialEq)]
pub struct CameraRing {
    pub count: usize,
    pub radius: f64,
    pub height: f64,
    pub target: [f64; 3],
    pub intrinsics: Intrinsics,
    /// Start angle in degrees; camera 1 sits at `target + radius*(sin a, 0, -cos a)`.
    pub phase: f64,
}

impl CameraRing {
    pub fn center(&self, k: usize) -> Vec3 {
        let a = (self.phase + 360.0 * k as f64 / self.count as f64).to_radians();
        Vec3::new(
            self.target[0] + self.radius * libm::sin(a),
            self.target[1] + self.height,
            self.target[2] - self.radius * libm::cos(a),
        )
    }

    pub fn poses(&self) -> Result<Vec<CameraPose>, GeometryError> {
        (0..self.count)
            .map(|k| CameraPose::look_at(self.intrinsics, self.center(k), Vec3::from(self.target), Vec3::y()))
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticSpec {
    pub primitives: Vec<Primitive>,
    pub ring: CameraRing,
    pub seed: u64,
    /// Confidences are drawn uniformly from `[1 - jitter, 1]`; zero gives all ones.
    pub confidence_jitter: f32,
}

impl SyntheticSpec {
    /// A unit cube lattice seen by `cameras` cameras on a radius-3 ring.
    pub fn cube(per_side: usize, cameras: usize) -> Self {
        Self {
            primitives: alloc::vec![Primitive::CubeLattice { center: [0.0; 3], edge: 1.0, per_side }],
            ring: CameraRing {
                count: cameras,
                radius: 3.0,
                height: -0.5,
                target: [0.0; 3],
                intrinsics: Intrinsics::centered(240.0, 320, 240).expect("static intrinsics"),
                phase: 0.0,
            },
            seed: 0,
            confidence_jitter: 0.0,
        }
    }
}

pub fn synth_scene(spec: &SyntheticSpec) -> Result<Scene, SceneError> {
    let mut points = Vec::new();
    for prim in &spec.primitives {
        prim.emit(&mut points);
    }
    if spec.confidence_jitter > 0.0 {
        let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
        let jitter = spec.confidence_jitter.clamp(0.0, 1.0);
        for p in &mut points {
            p.confidence = 1.0 - jitter * rng.random::<f32>();
        }
    }
    if spec.ring.count == 0 {
        return Err(SceneError::NoCameras);
    }
    let cameras = spec.ring.poses().map_err(|source| SceneError::InvalidCamera { index: 0, source })?;
    let source_images = (1..=cameras.len()).map(|k| format!("synthetic://view/{k}")).collect();
    Scene::new(points, cameras, source_images)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::Rotation;
    use alloc::vec;
    use proptest::prelude::*;

    fn pt(conf: f32) -> ColoredPoint {
        ColoredPoint::new([0.0, 0.0, 1.0], [1, 2, 3]).with_confidence(conf)
    }

    fn identity_cam() -> CameraPose {
        CameraPose::new(Intrinsics::centered(100.0, 100, 100).unwrap(), Rotation::identity(), Vec3::zeros()).unwrap()
    }

    #[test]
    fn cleaning_keeps_all_equal_confidences() {
        let pts = vec![pt(1.0); 5];
        assert_eq!(fuse_and_clean(&pts, CleaningPolicy::default()), pts);
    }

    #[test]
    fn cleaning_drops_lowest_fifth() {
        let confs = [0.1, 0.5, 0.9, 0.95, 1.0];
        let pts: Vec<_> = confs.iter().map(|&c| pt(c)).collect();
        // sorted-order oracle: position 0.2 * 4 = 0.8 between 0.1 and 0.5
        let threshold = 0.1 + 0.8 * (0.5 - 0.1);
        assert!((CleaningPolicy::default().threshold(&pts) as f64 - threshold).abs() < 1e-6);
        let kept = fuse_and_clean(&pts, CleaningPolicy::default());
        assert_eq!(kept.iter().map(|p| p.confidence).collect::<Vec<_>>(), vec![0.5, 0.9, 0.95, 1.0]);
    }

    #[test]
    fn cleaning_empty_is_empty() {
        assert!(fuse_and_clean(&[], CleaningPolicy::default()).is_empty());
    }

    #[test]
    fn cone_examples() {
        let cam = identity_cam();
        let ahead = ColoredPoint::new([0.0, 0.0, 2.0], [0; 3]);
        let behind = ColoredPoint::new([0.0, 0.0, -2.0], [0; 3]);
        assert_eq!(cone_filter(&[ahead], &cam, 1.0).unwrap().len(), 1);
        assert!(cone_filter(&[behind], &cam, 90.0).unwrap().is_empty());
        assert_eq!(cone_filter(&[behind], &cam, 180.0).unwrap().len(), 1);

        let a = 45f64.to_radians();
        let off = ColoredPoint::new([libm::sin(a) as f32 * 2.0, 0.0, libm::cos(a) as f32 * 2.0], [0; 3]);
        assert!(cone_filter(&[off], &cam, 40.0).unwrap().is_empty());
        assert_eq!(cone_filter(&[off], &cam, 50.0).unwrap().len(), 1);
    }

    #[test]
    fn cone_rejects_bad_half_angle() {
        let cam = identity_cam();
        assert!(cone_filter(&[], &cam, 0.0).is_err());
        assert!(cone_filter(&[], &cam, 180.5).is_err());
        assert!(cone_filter(&[], &cam, f64::NAN).is_err());
    }

    #[test]
    fn synthetic_cube_counts() {
        let s = synth_scene(&SyntheticSpec::cube(4, 2)).unwrap();
        assert_eq!(s.points.len(), 64);
        assert_eq!(s.cameras.len(), 2);
        assert_eq!(s.source_images.len(), 2);
    }

    #[test]
    fn synthetic_is_deterministic() {
        let mut spec = SyntheticSpec::cube(5, 3);
        spec.confidence_jitter = 0.5;
        spec.seed = 42;
        assert_eq!(synth_scene(&spec).unwrap(), synth_scene(&spec).unwrap());
        let mut other = spec.clone();
        other.seed = 43;
        assert_ne!(synth_scene(&spec).unwrap().points, synth_scene(&other).unwrap().points);
    }

    #[test]
    fn ring_radius_is_exact() {
        let mut spec = SyntheticSpec::cube(2, 4);
        spec.ring.radius = 2.0;
        spec.ring.height = 0.0;
        let s = synth_scene(&spec).unwrap();
        for c in &s.cameras {
            assert!((c.center.norm() - 2.0).abs() < 1e-9);
            // each camera looks at the origin
            let f = world_to_camera(c, &Vec3::zeros());
            assert!(f.x.abs() < 1e-9 && f.y.abs() < 1e-9 && (f.z - 2.0).abs() < 1e-9);
        }
    }

    #[test]
    fn scene_validation() {
        let cam = identity_cam();
        assert_eq!(Scene::new(vec![], vec![], vec![]), Err(SceneError::NoCameras));
        assert!(matches!(Scene::new(vec![], vec![cam], vec![]), Err(SceneError::ViewCountMismatch { .. })));
        assert!(matches!(
            Scene::new(vec![pt(1.5)], vec![cam], vec!["a".into()]),
            Err(SceneError::InvalidPoint { index: 0, .. })
        ));
        let s = Scene::new(vec![], vec![cam], vec!["a".into()]).unwrap();
        assert!(s.camera(0).is_none());
        assert!(s.camera(1).is_some());
        assert!(s.camera(2).is_none());
    }

    #[test]
    fn unprojected_view_lands_on_pixel_centers() {
        let pose = identity_cam();
        let n = pose.intrinsics.pixel_count();
        let view = DepthView { pose, depth: vec![2.0; n], colors: vec![[9, 9, 9]; n], confidence: vec![1.0; n] };
        let pts = unproject_view(&view);
        assert_eq!(pts.len(), n);
        let q = crate::geometry::project(&pose, &pts[101].position_f64()).unwrap();
        assert_eq!(q.pixel(), (1, 1));
    }

    proptest! {
        #[test]
        fn fixed_threshold_cleaning_is_idempotent(confs in proptest::collection::vec(0.0f32..=1.0, 0..64), t in 0.0f32..=1.0) {
            let pts: Vec<_> = confs.iter().map(|&c| pt(c)).collect();
            let once = fuse_and_clean(&pts, CleaningPolicy::MinConfidence(t));
            prop_assert_eq!(fuse_and_clean(&once, CleaningPolicy::MinConfidence(t)), once.clone());
            // a percentile pass is idempotent once its resolved threshold is pinned
            let policy = CleaningPolicy::DropLowestFraction(0.2);
            let resolved = CleaningPolicy::MinConfidence(policy.threshold(&pts));
            let trimmed = fuse_and_clean(&pts, policy);
            prop_assert_eq!(fuse_and_clean(&trimmed, resolved), trimmed);
        }

        #[test]
        fn cone_is_monotone(
            coords in proptest::collection::vec((-5.0f32..5.0, -5.0f32..5.0, -5.0f32..5.0), 1..64),
            a in 1.0f64..180.0, b in 1.0f64..180.0,
        ) {
            let cam = identity_cam();
            let pts: Vec<_> = coords.iter().map(|&(x, y, z)| ColoredPoint::new([x, y, z], [0; 3])).collect();
            let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
            let small = cone_filter(&pts, &cam, lo).unwrap();
            let large = cone_filter(&pts, &cam, hi).unwrap();
            prop_assert!(small.iter().all(|p| large.contains(p)));
        }
    }
}
