//! Pinhole cameras, view-offset rotations and virtual-camera construction.
//!
//! Camera frame: +X right, +Y down, +Z forward. A pose stores the
//! world-to-camera rotation `R` and the camera center `c` in world units, so a
//! world point `p` maps to camera coordinates `R (p - c)`.
//!
//! View offsets are right-handed rotations: azimuth about the camera's up axis
//! (-Y) and elevation about its right axis (+X), composed as
//! `dR = R_elev * R_azim` and pre-multiplied onto the anchor rotation. With the
//! world-to-camera convention the viewing direction expressed in anchor
//! coordinates is `dR^T e_z`, which pans right for positive azimuth and pitches
//! down for positive elevation.

use core::fmt;

use nalgebra::{Matrix3, Vector3};
use thiserror::Error;

pub type Vec3 = Vector3<f64>;

/// Points with camera depth at or below this are treated as behind the camera.
pub const NEAR_PLANE: f64 = 1e-4;

const ROTATION_TOLERANCE: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum GeometryError {
    #[error("invalid angle offsets: azimuth={azimuth}, elevation={elevation}")]
    InvalidAngle { azimuth: f64, elevation: f64 },
    #[error("invalid intrinsics: {0}")]
    InvalidIntrinsics(&'static str),
    #[error("matrix is not a proper rotation (orthonormality residual {residual:e}, det {determinant})")]
    NotARotation { residual: f64, determinant: f64 },
    #[error("camera center is not finite")]
    NonFiniteCenter,
}

#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct Intrinsics {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: u32,
    pub height: u32,
}

impl Intrinsics {
    pub fn new(fx: f64, fy: f64, cx: f64, cy: f64, width: u32, height: u32) -> Result<Self, GeometryError> {
        let k = Self { fx, fy, cx, cy, width, height };
        k.validate()?;
        Ok(k)
    }

    /// Square pixels with the principal point at the raster center.
    pub fn centered(focal: f64, width: u32, height: u32) -> Result<Self, GeometryError> {
        Self::new(focal, focal, width as f64 / 2.0, height as f64 / 2.0, width, height)
    }

    pub fn validate(&self) -> Result<(), GeometryError> {
        if !(self.fx.is_finite() && self.fx > 0.0 && self.fy.is_finite() && self.fy > 0.0) {
            return Err(GeometryError::InvalidIntrinsics("focal lengths must be positive"));
        }
        if self.width == 0 || self.height == 0 {
            return Err(GeometryError::InvalidIntrinsics("raster must be at least 1x1"));
        }
        if !(self.cx >= 0.0 && self.cx < self.width as f64 && self.cy >= 0.0 && self.cy < self.height as f64) {
            return Err(GeometryError::InvalidIntrinsics("principal point outside raster"));
        }
        Ok(())
    }

    pub fn pixel_count(&self) -> usize {
        self.width as usize * self.height as usize
    }
}

/// A proper rotation matrix (orthonormal, determinant +1).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Rotation(Matrix3<f64>);

impl Rotation {
    pub fn identity() -> Self {
        Self(Matrix3::identity())
    }

    pub fn from_matrix(m: Matrix3<f64>) -> Result<Self, GeometryError> {
        let residual = orthonormality_residual(&m);
        let determinant = m.determinant();
        if !residual.is_finite() || residual > ROTATION_TOLERANCE || (determinant - 1.0).abs() > ROTATION_TOLERANCE {
            return Err(GeometryError::NotARotation { residual, determinant });
        }
        Ok(Self(m))
    }

    pub fn from_row_major(rows: [f64; 9]) -> Result<Self, GeometryError> {
        Self::from_matrix(Matrix3::from_row_slice(&rows))
    }

    pub fn to_row_major(&self) -> [f64; 9] {
        let m = &self.0;
        [m[(0, 0)], m[(0, 1)], m[(0, 2)], m[(1, 0)], m[(1, 1)], m[(1, 2)], m[(2, 0)], m[(2, 1)], m[(2, 2)]]
    }

    pub fn matrix(&self) -> &Matrix3<f64> {
        &self.0
    }

    pub fn transpose(&self) -> Self {
        Self(self.0.transpose())
    }

    /// `self * rhs`; the product of two rotations is a rotation.
    pub fn compose(&self, rhs: &Rotation) -> Self {
        Self(self.0 * rhs.0)
    }

    pub fn apply(&self, v: &Vec3) -> Vec3 {
        self.0 * v
    }

    pub fn residual(&self) -> f64 {
        orthonormality_residual(&self.0)
    }
}

/// Max-abs entry of `R^T R - I`.
pub fn orthonormality_residual(m: &Matrix3<f64>) -> f64 {
    (m.transpose() * m - Matrix3::identity()).abs().max()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CameraPose {
    pub intrinsics: Intrinsics,
    /// World-to-camera rotation.
    pub rotation: Rotation,
    /// Camera center in world units.
    pub center: Vec3,
}

impl CameraPose {
    pub fn new(intrinsics: Intrinsics, rotation: Rotation, center: Vec3) -> Result<Self, GeometryError> {
        intrinsics.validate()?;
        if !center.iter().all(|c| c.is_finite()) {
            return Err(GeometryError::NonFiniteCenter);
        }
        Ok(Self { intrinsics, rotation, center })
    }

    /// Camera looking from `center` toward `target`, with world "down" used to
    /// level the image rows.
    pub fn look_at(intrinsics: Intrinsics, center: Vec3, target: Vec3, world_down: Vec3) -> Result<Self, GeometryError> {
        let forward = (target - center).normalize();
        let mut right = world_down.cross(&forward);
        if right.norm() < 1e-12 {
            // looking straight along the down axis
            right = Vec3::new(1.0, 0.0, 0.0).cross(&forward).cross(&forward);
        }
        let right = right.normalize();
        let down = forward.cross(&right);
        let m = Matrix3::from_rows(&[right.transpose(), down.transpose(), forward.transpose()]);
        Self::new(intrinsics, Rotation::from_matrix(m)?, center)
    }

    /// Viewing direction (+Z of the camera) in world coordinates.
    pub fn forward(&self) -> Vec3 {
        self.rotation.matrix().row(2).transpose()
    }

    pub fn validate(&self) -> Result<(), GeometryError> {
        self.intrinsics.validate()?;
        Rotation::from_matrix(*self.rotation.matrix())?;
        if !self.center.iter().all(|c| c.is_finite()) {
            return Err(GeometryError::NonFiniteCenter);
        }
        Ok(())
    }
}

/// Azimuth/elevation offsets in degrees.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct AngleOffsets {
    pub azimuth: f64,
    pub elevation: f64,
}

impl AngleOffsets {
    /// Validates and canonicalizes: azimuth wrapped into [-180, 180],
    /// elevation clamped into [-90, 90].
    pub fn new(azimuth: f64, elevation: f64) -> Result<Self, GeometryError> {
        if !(azimuth.is_finite() && elevation.is_finite()) {
            return Err(GeometryError::InvalidAngle { azimuth, elevation });
        }
        let mut az = libm::remainder(azimuth, 360.0);
        if az == -180.0 && azimuth > 0.0 {
            az = 180.0;
        }
        Ok(Self { azimuth: az, elevation: elevation.clamp(-90.0, 90.0) })
    }

    pub const fn zero() -> Self {
        Self { azimuth: 0.0, elevation: 0.0 }
    }

    pub fn is_finite(&self) -> bool {
        self.azimuth.is_finite() && self.elevation.is_finite()
    }
}

impl fmt::Display for AngleOffsets {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({}, {})", self.azimuth, self.elevation)
    }
}

/// Sign flips for the two offset axes. The default (+1, +1) gives
/// pan-right / pitch-down for positive angles.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct AngleConvention {
    pub azimuth_sign: f64,
    pub elevation_sign: f64,
}

impl Default for AngleConvention {
    fn default() -> Self {
        Self { azimuth_sign: 1.0, elevation_sign: 1.0 }
    }
}

pub fn rotation_from_angles(offsets: AngleOffsets) -> Result<Rotation, GeometryError> {
    rotation_from_angles_with(offsets, AngleConvention::default())
}

pub fn rotation_from_angles_with(offsets: AngleOffsets, convention: AngleConvention) -> Result<Rotation, GeometryError> {
    if !offsets.is_finite() {
        return Err(GeometryError::InvalidAngle { azimuth: offsets.azimuth, elevation: offsets.elevation });
    }
    let a = (offsets.azimuth * convention.azimuth_sign).to_radians();
    let b = (offsets.elevation * convention.elevation_sign).to_radians();
    let (sa, ca) = (libm::sin(a), libm::cos(a));
    let (sb, cb) = (libm::sin(b), libm::cos(b));
    // right-handed rotation by `a` about -Y
    let azim = Matrix3::new(ca, 0.0, -sa, 0.0, 1.0, 0.0, sa, 0.0, ca);
    // right-handed rotation by `b` about +X
    let elev = Matrix3::new(1.0, 0.0, 0.0, 0.0, cb, -sb, 0.0, sb, cb);
    Ok(Rotation(elev * azim))
}

/// Virtual camera sharing the anchor's center and intrinsics, rotated by the offsets.
pub fn make_virtual_camera(anchor: &CameraPose, offsets: AngleOffsets) -> Result<CameraPose, GeometryError> {
    make_virtual_camera_with(anchor, offsets, AngleConvention::default())
}

pub fn make_virtual_camera_with(
    anchor: &CameraPose,
    offsets: AngleOffsets,
    convention: AngleConvention,
) -> Result<CameraPose, GeometryError> {
    let delta = rotation_from_angles_with(offsets, convention)?;
    Ok(CameraPose { intrinsics: anchor.intrinsics, rotation: delta.compose(&anchor.rotation), center: anchor.center })
}

pub fn world_to_camera(pose: &CameraPose, point: &Vec3) -> Vec3 {
    pose.rotation.apply(&(point - pose.center))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Projection {
    pub u: f64,
    pub v: f64,
    pub depth: f64,
}

impl Projection {
    /// Integer pixel containing the projection (pixel `i` spans `[i, i+1)`).
    pub fn pixel(&self) -> (u32, u32) {
        (libm::floor(self.u) as u32, libm::floor(self.v) as u32)
    }
}

/// Projects a world point; `None` when behind the near plane or off-raster.
pub fn project(pose: &CameraPose, point: &Vec3) -> Option<Projection> {
    project_camera_point(&pose.intrinsics, &world_to_camera(pose, point))
}

pub(crate) fn project_camera_point(k: &Intrinsics, p: &Vec3) -> Option<Projection> {
    let z = p.z;
    if !(z > NEAR_PLANE) {
        return None;
    }
    let u = k.fx * p.x / z + k.cx;
    let v = k.fy * p.y / z + k.cy;
    if u >= 0.0 && u < k.width as f64 && v >= 0.0 && v < k.height as f64 {
        Some(Projection { u, v, depth: z })
    } else {
        None
    }
}

/// Inverse of [`project`]: pixel coordinates plus depth back to a world point.
pub fn unproject(pose: &CameraPose, u: f64, v: f64, depth: f64) -> Vec3 {
    let k = &pose.intrinsics;
    let cam = Vec3::new((u - k.cx) / k.fx * depth, (v - k.cy) / k.fy * depth, depth);
    pose.rotation.transpose().apply(&cam) + pose.center
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    /// Hand-rolled unit quaternion, independent of the matrix construction.
    #[derive(Clone, Copy)]
    struct Quat {
        w: f64,
        x: f64,
        y: f64,
        z: f64,
    }

    impl Quat {
        fn axis_angle(axis: [f64; 3], deg: f64) -> Self {
            let h = deg.to_radians() / 2.0;
            let s = libm::sin(h);
            Quat { w: libm::cos(h), x: axis[0] * s, y: axis[1] * s, z: axis[2] * s }
        }
        fn mul(self, o: Quat) -> Quat {
            Quat {
                w: self.w * o.w - self.x * o.x - self.y * o.y - self.z * o.z,
                x: self.w * o.x + self.x * o.w + self.y * o.z - self.z * o.y,
                y: self.w * o.y - self.x * o.z + self.y * o.w + self.z * o.x,
                z: self.w * o.z + self.x * o.y - self.y * o.x + self.z * o.w,
            }
        }
        fn rotate(self, v: [f64; 3]) -> [f64; 3] {
            let p = Quat { w: 0.0, x: v[0], y: v[1], z: v[2] };
            let conj = Quat { w: self.w, x: -self.x, y: -self.y, z: -self.z };
            let r = self.mul(p).mul(conj);
            [r.x, r.y, r.z]
        }
    }

    fn oracle(az: f64, el: f64) -> Quat {
        Quat::axis_angle([1.0, 0.0, 0.0], el).mul(Quat::axis_angle([0.0, -1.0, 0.0], az))
    }

    fn assert_vec(a: Vec3, b: [f64; 3]) {
        for i in 0..3 {
            assert!((a[i] - b[i]).abs() < 1e-12, "{a:?} vs {b:?}");
        }
    }

    fn pose(rotation: Rotation, center: [f64; 3]) -> CameraPose {
        CameraPose::new(Intrinsics::new(100.0, 100.0, 50.0, 50.0, 100, 100).unwrap(), rotation, Vec3::from(center)).unwrap()
    }

    #[test]
    fn zero_offsets_give_identity() {
        let r = rotation_from_angles(AngleOffsets::zero()).unwrap();
        assert_eq!(*r.matrix(), Matrix3::identity());
    }

    #[test]
    fn azimuth_quarter_turn_matches_quaternion_oracle() {
        let r = rotation_from_angles(AngleOffsets::new(90.0, 0.0).unwrap()).unwrap();
        let expected = oracle(90.0, 0.0).rotate([0.0, 0.0, 1.0]);
        assert_vec(r.apply(&Vec3::z()), expected);
        // frozen from the oracle: forward maps to -X, the view pans to +X (right)
        assert_vec(r.apply(&Vec3::z()), [-1.0, 0.0, 0.0]);
        assert_vec(r.transpose().apply(&Vec3::z()), [1.0, 0.0, 0.0]);
    }

    #[test]
    fn elevation_quarter_turn_matches_quaternion_oracle() {
        let r = rotation_from_angles(AngleOffsets::new(0.0, 90.0).unwrap()).unwrap();
        assert_vec(r.apply(&Vec3::z()), oracle(0.0, 90.0).rotate([0.0, 0.0, 1.0]));
        assert_vec(r.apply(&Vec3::z()), [0.0, -1.0, 0.0]);
        // view direction pitches toward +Y (down)
        assert_vec(r.transpose().apply(&Vec3::z()), [0.0, 1.0, 0.0]);
    }

    #[test]
    fn composed_offsets_match_oracle_on_basis() {
        for (az, el) in [(-45.0, 0.0), (45.0, 0.0), (0.0, 60.0), (30.0, -20.0), (170.0, 85.0)] {
            let r = rotation_from_angles(AngleOffsets { azimuth: az, elevation: el }).unwrap();
            let q = oracle(az, el);
            for e in [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]] {
                assert_vec(r.apply(&Vec3::from(e)), q.rotate(e));
            }
        }
    }

    #[test]
    fn flipped_convention_mirrors_pan() {
        let flipped = AngleConvention { azimuth_sign: -1.0, elevation_sign: 1.0 };
        let r = rotation_from_angles_with(AngleOffsets::new(90.0, 0.0).unwrap(), flipped).unwrap();
        assert_vec(r.transpose().apply(&Vec3::z()), [-1.0, 0.0, 0.0]);
    }

    #[test]
    fn non_finite_offsets_rejected() {
        assert!(matches!(AngleOffsets::new(f64::NAN, 0.0), Err(GeometryError::InvalidAngle { .. })));
        let raw = AngleOffsets { azimuth: 0.0, elevation: f64::INFINITY };
        assert!(matches!(rotation_from_angles(raw), Err(GeometryError::InvalidAngle { .. })));
    }

    #[test]
    fn offsets_are_canonicalized() {
        assert_eq!(AngleOffsets::new(270.0, 0.0).unwrap().azimuth, -90.0);
        assert_eq!(AngleOffsets::new(180.0, 0.0).unwrap().azimuth, 180.0);
        assert_eq!(AngleOffsets::new(-180.0, 0.0).unwrap().azimuth, -180.0);
        assert_eq!(AngleOffsets::new(0.0, 120.0).unwrap().elevation, 90.0);
    }

    #[test]
    fn virtual_camera_with_zero_offsets_equals_anchor() {
        let anchor = CameraPose::look_at(
            Intrinsics::centered(80.0, 64, 48).unwrap(),
            Vec3::new(1.0, -0.5, -3.0),
            Vec3::zeros(),
            Vec3::y(),
        )
        .unwrap();
        let v = make_virtual_camera(&anchor, AngleOffsets::zero()).unwrap();
        assert_eq!(v, anchor);
        let v = make_virtual_camera(&anchor, AngleOffsets::new(45.0, 60.0).unwrap()).unwrap();
        assert_eq!(v.center, anchor.center);
        assert_eq!(v.intrinsics, anchor.intrinsics);
    }

    #[test]
    fn virtual_camera_from_identity_anchor_is_delta() {
        let anchor = pose(Rotation::identity(), [0.0; 3]);
        let off = AngleOffsets::new(90.0, 0.0).unwrap();
        let v = make_virtual_camera(&anchor, off).unwrap();
        assert_eq!(v.rotation, rotation_from_angles(off).unwrap());
    }

    #[test]
    fn world_to_camera_basics() {
        let p = pose(Rotation::identity(), [0.0; 3]);
        assert_eq!(world_to_camera(&p, &Vec3::new(1.0, 2.0, 3.0)), Vec3::new(1.0, 2.0, 3.0));
        let p = pose(Rotation::identity(), [1.0, 0.0, 0.0]);
        assert_eq!(world_to_camera(&p, &Vec3::new(1.0, 0.0, 5.0)), Vec3::new(0.0, 0.0, 5.0));
        let r = rotation_from_angles(AngleOffsets::new(33.0, -12.0).unwrap()).unwrap();
        let p = pose(r, [0.3, -2.0, 7.0]);
        assert_eq!(world_to_camera(&p, &p.center), Vec3::zeros());
    }

    #[test]
    fn project_examples() {
        let p = pose(Rotation::identity(), [0.0; 3]);
        assert_eq!(project(&p, &Vec3::new(0.0, 0.0, 1.0)), Some(Projection { u: 50.0, v: 50.0, depth: 1.0 }));
        let q = project(&p, &Vec3::new(0.1, 0.0, 1.0)).unwrap();
        assert_relative_eq!(q.u, 60.0, epsilon = 1e-12);
        assert_eq!(q.v, 50.0);
        assert_eq!(project(&p, &Vec3::new(0.0, 0.0, -1.0)), None);
        assert_eq!(project(&p, &Vec3::new(0.0, 0.0, 5e-5)), None);
        // off-raster
        assert_eq!(project(&p, &Vec3::new(0.6, 0.0, 1.0)), None);
    }

    #[test]
    fn rejects_bad_rotation_and_intrinsics() {
        assert!(Rotation::from_row_major([1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, -1.0]).is_err());
        assert!(Rotation::from_row_major([2.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0]).is_err());
        assert!(Intrinsics::new(0.0, 1.0, 0.0, 0.0, 1, 1).is_err());
        assert!(Intrinsics::new(1.0, 1.0, 1.0, 0.0, 1, 1).is_err());
        assert!(Intrinsics::new(1.0, 1.0, 0.0, 0.0, 0, 1).is_err());
    }

    #[test]
    fn look_at_points_forward_at_target() {
        let k = Intrinsics::centered(50.0, 32, 32).unwrap();
        let p = CameraPose::look_at(k, Vec3::new(0.0, 0.0, -4.0), Vec3::zeros(), Vec3::y()).unwrap();
        assert_eq!(*p.rotation.matrix(), Matrix3::identity());
        let p = CameraPose::look_at(k, Vec3::new(0.0, -3.0, 0.0), Vec3::zeros(), Vec3::y()).unwrap();
        assert!(p.rotation.residual() < 1e-12);
        assert_vec(p.forward(), [0.0, 1.0, 0.0]);
    }

    proptest! {
        #[test]
        fn offsets_always_in_so3(az in -720.0f64..720.0, el in -180.0f64..180.0) {
            let r = rotation_from_angles(AngleOffsets { azimuth: az, elevation: el }).unwrap();
            prop_assert!(r.residual() < 1e-6);
            prop_assert!((r.matrix().determinant() - 1.0).abs() < 1e-6);
        }

        #[test]
        fn same_axis_offsets_invert(az in -360.0f64..360.0) {
            let a = rotation_from_angles(AngleOffsets { azimuth: az, elevation: 0.0 }).unwrap();
            let b = rotation_from_angles(AngleOffsets { azimuth: -az, elevation: 0.0 }).unwrap();
            prop_assert!((a.compose(&b).matrix() - Matrix3::identity()).abs().max() < 1e-6);
        }

        #[test]
        fn virtual_camera_keeps_center_and_intrinsics(
            cx in -10.0f64..10.0, cy in -10.0f64..10.0, cz in -10.0f64..10.0,
            az in -180.0f64..180.0, el in -90.0f64..90.0,
        ) {
            let anchor = pose(rotation_from_angles(AngleOffsets { azimuth: 17.0, elevation: 5.0 }).unwrap(), [cx, cy, cz]);
            let v = make_virtual_camera(&anchor, AngleOffsets { azimuth: az, elevation: el }).unwrap();
            prop_assert_eq!(v.center.as_slice().iter().map(|c| c.to_bits()).collect::<std::vec::Vec<_>>(),
                            anchor.center.as_slice().iter().map(|c| c.to_bits()).collect::<std::vec::Vec<_>>());
            prop_assert_eq!(v.intrinsics, anchor.intrinsics);
        }

        #[test]
        fn unproject_inverts_project(
            x in -1.0f64..1.0, y in -1.0f64..1.0, z in 0.5f64..20.0,
            az in -180.0f64..180.0, el in -90.0f64..90.0,
        ) {
            let r = rotation_from_angles(AngleOffsets { azimuth: az, elevation: el }).unwrap();
            let p = pose(r, [0.5, -0.25, 2.0]);
            let world = unproject(&p, 50.0 + 40.0 * x, 50.0 + 40.0 * y, z);
            if let Some(q) = project(&p, &world) {
                let back = unproject(&p, q.u, q.v, q.depth);
                prop_assert!((back - world).norm() <= 1e-5 * world.norm().max(1.0));
            }
        }
    }
}
