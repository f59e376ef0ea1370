//! Planar base poses, rigid transforms and the pinhole camera model.
//!
//! Conventions: world +z is up, angles live in (−π, π], and cameras look
//! along their +z axis with +x to the right and +y down.

use std::f64::consts::PI;
use std::path::Path;

use nalgebra::{Matrix3, Matrix4, Quaternion, Rotation3, UnitQuaternion, Vector3};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum GeometryError {
    #[error("non-finite value: {0}")]
    NonFinite(&'static str),
    #[error("point is behind the camera (z = {0})")]
    BehindCamera(f64),
    #[error("invalid intrinsics: {0}")]
    InvalidIntrinsics(String),
    #[error("rotation is not a proper orthonormal matrix")]
    InvalidRotation,
    #[error("camera config: {0}")]
    Config(String),
}

/// Wraps an angle into (−π, π].
pub fn wrap_angle(theta: f64) -> Result<f64, GeometryError> {
    if !theta.is_finite() {
        return Err(GeometryError::NonFinite("angle"));
    }
    Ok(wrap(theta))
}

// Infallible variant for values already known to be finite.
pub(crate) fn wrap(theta: f64) -> f64 {
    let two_pi = 2.0 * PI;
    let mut r = theta.rem_euclid(two_pi);
    if r > PI {
        r -= two_pi;
    }
    // rem_euclid maps -π to π already; guard the representable edge.
    if r <= -PI {
        r += two_pi;
    }
    r
}

/// Planar robot base pose (x, y in meters, heading in radians).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Pose2D {
    pub x: f64,
    pub y: f64,
    pub theta: f64,
}

impl Pose2D {
    pub fn new(x: f64, y: f64, theta: f64) -> Self {
        Self { x, y, theta }
    }

    /// Same pose with the heading wrapped into (−π, π].
    pub fn normalized(&self) -> Self {
        Self { theta: wrap(self.theta), ..*self }
    }

    pub fn is_finite(&self) -> bool {
        self.x.is_finite() && self.y.is_finite() && self.theta.is_finite()
    }

    pub fn distance_xy(&self, other: &Pose2D) -> f64 {
        (self.x - other.x).hypot(self.y - other.y)
    }

    /// Absolute wrapped heading difference.
    pub fn heading_error(&self, other: &Pose2D) -> f64 {
        wrap(self.theta - other.theta).abs()
    }
}

/// Proper rigid transform in SE(3). Maps points from its child frame into its parent frame.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RigidTransform {
    rotation: Rotation3<f64>,
    translation: Vector3<f64>,
}

impl RigidTransform {
    pub fn identity() -> Self {
        Self { rotation: Rotation3::identity(), translation: Vector3::zeros() }
    }

    /// Builds a transform from a raw matrix, checking orthonormality and det = +1 to 1e-9.
    pub fn new(rotation: Matrix3<f64>, translation: Vector3<f64>) -> Result<Self, GeometryError> {
        if rotation.iter().chain(translation.iter()).any(|v| !v.is_finite()) {
            return Err(GeometryError::NonFinite("transform"));
        }
        let gram = rotation.transpose() * rotation - Matrix3::identity();
        if gram.amax() > 1e-9 || (rotation.determinant() - 1.0).abs() > 1e-9 {
            return Err(GeometryError::InvalidRotation);
        }
        Ok(Self { rotation: Rotation3::from_matrix_unchecked(rotation), translation })
    }

    pub fn from_parts(rotation: Rotation3<f64>, translation: Vector3<f64>) -> Self {
        Self { rotation, translation }
    }

    /// Quaternion given as (w, x, y, z); normalized before use.
    pub fn from_quaternion_wxyz(q: [f64; 4], translation: [f64; 3]) -> Result<Self, GeometryError> {
        let quat = Quaternion::new(q[0], q[1], q[2], q[3]);
        if !quat.coords.iter().all(|v| v.is_finite()) || quat.norm() < 1e-12 {
            return Err(GeometryError::InvalidRotation);
        }
        let unit = UnitQuaternion::from_quaternion(quat);
        Ok(Self { rotation: unit.to_rotation_matrix(), translation: Vector3::from(translation) })
    }

    /// Camera mounted on the base at `translation`, looking along base +x rotated by `yaw`
    /// about the vertical axis and tilted down by `pitch_down`.
    pub fn camera_mount(translation: [f64; 3], yaw: f64, pitch_down: f64) -> Self {
        let (s, c) = pitch_down.sin_cos();
        // Columns are the camera axes (right, down, forward) expressed in the base frame.
        let level = Matrix3::from_columns(&[Vector3::new(0.0, -1.0, 0.0), Vector3::new(-s, 0.0, -c), Vector3::new(c, 0.0, -s)]);
        let yaw_rot = Rotation3::from_axis_angle(&Vector3::z_axis(), yaw);
        Self { rotation: yaw_rot * Rotation3::from_matrix_unchecked(level), translation: Vector3::from(translation) }
    }

    pub fn rotation(&self) -> &Rotation3<f64> {
        &self.rotation
    }

    pub fn translation(&self) -> &Vector3<f64> {
        &self.translation
    }

    /// `self ∘ other`: apply `other` first, then `self`.
    pub fn compose(&self, other: &RigidTransform) -> RigidTransform {
        RigidTransform { rotation: self.rotation * other.rotation, translation: self.rotation * other.translation + self.translation }
    }

    pub fn inverse(&self) -> RigidTransform {
        let inv = self.rotation.inverse();
        RigidTransform { rotation: inv, translation: -(inv * self.translation) }
    }

    pub fn transform_point(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.rotation * p + self.translation
    }

    pub fn to_matrix(&self) -> Matrix4<f64> {
        let mut m = Matrix4::identity();
        m.fixed_view_mut::<3, 3>(0, 0).copy_from(self.rotation.matrix());
        m.fixed_view_mut::<3, 1>(0, 3).copy_from(&self.translation);
        m
    }
}

impl Default for RigidTransform {
    fn default() -> Self {
        Self::identity()
    }
}

/// Lifts a planar pose into SE(3): yaw about world +z, translation (x, y, height_offset).
pub fn lift_pose(p: &Pose2D, height_offset: f64) -> RigidTransform {
    RigidTransform { rotation: Rotation3::from_axis_angle(&Vector3::z_axis(), p.theta), translation: Vector3::new(p.x, p.y, height_offset) }
}

/// World-from-camera pose for a base pose and a base-from-camera rig.
pub fn base_to_camera(p: &Pose2D, rig: &RigidTransform, height_offset: f64) -> RigidTransform {
    lift_pose(p, height_offset).compose(rig)
}

/// Pinhole intrinsics. Pixel centers sit at integer coordinates.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CameraIntrinsics {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: usize,
    pub height: usize,
}

impl CameraIntrinsics {
    pub fn new(fx: f64, fy: f64, cx: f64, cy: f64, width: usize, height: usize) -> Result<Self, GeometryError> {
        let k = Self { fx, fy, cx, cy, width, height };
        k.validate()?;
        Ok(k)
    }

    /// Square image with the given horizontal field of view and a centered principal point.
    pub fn from_fov(width: usize, height: usize, hfov: f64) -> Result<Self, GeometryError> {
        let f = (width as f64 / 2.0) / (hfov / 2.0).tan();
        Self::new(f, f, (width as f64 - 1.0) / 2.0, (height as f64 - 1.0) / 2.0, width, height)
    }

    pub fn validate(&self) -> Result<(), GeometryError> {
        let bad = |m: &str| Err(GeometryError::InvalidIntrinsics(m.to_string()));
        if ![self.fx, self.fy, self.cx, self.cy].iter().all(|v| v.is_finite()) {
            return bad("non-finite parameter");
        }
        if self.width == 0 || self.height == 0 {
            return bad("zero image size");
        }
        if self.fx <= 0.0 || self.fy <= 0.0 {
            return bad("focal lengths must be positive");
        }
        if !(0.0..self.width as f64).contains(&self.cx) || !(0.0..self.height as f64).contains(&self.cy) {
            return bad("principal point outside the image");
        }
        Ok(())
    }

    /// Same field of view at a different resolution.
    pub fn scaled_to(&self, width: usize, height: usize) -> CameraIntrinsics {
        let sx = width as f64 / self.width as f64;
        let sy = height as f64 / self.height as f64;
        CameraIntrinsics { fx: self.fx * sx, fy: self.fy * sy, cx: (self.cx + 0.5) * sx - 0.5, cy: (self.cy + 0.5) * sy - 0.5, width, height }
    }
}

/// Projects a camera-frame point to pixel coordinates, returning (u, v, depth).
pub fn project_point(p_cam: &Vector3<f64>, k: &CameraIntrinsics) -> Result<(f64, f64, f64), GeometryError> {
    if !p_cam.iter().all(|v| v.is_finite()) {
        return Err(GeometryError::NonFinite("point"));
    }
    let z = p_cam.z;
    if z <= 0.0 {
        return Err(GeometryError::BehindCamera(z));
    }
    Ok((k.cx + k.fx * p_cam.x / z, k.cy + k.fy * p_cam.y / z, z))
}

pub fn unproject(u: f64, v: f64, depth: f64, k: &CameraIntrinsics) -> Vector3<f64> {
    Vector3::new((u - k.cx) * depth / k.fx, (v - k.cy) * depth / k.fy, depth)
}

/// A camera mounted on the robot, identified by name ("left", "right", ...).
#[derive(Debug, Clone, PartialEq)]
pub struct NamedRig {
    pub name: String,
    pub transform: RigidTransform,
}

/// Intrinsics plus one or more base-from-camera rigs, as loaded from a camera file.
#[derive(Debug, Clone, PartialEq)]
pub struct CameraConfig {
    pub intrinsics: CameraIntrinsics,
    pub rigs: Vec<NamedRig>,
}

#[derive(Debug, Deserialize)]
struct RawRig {
    rig_rotation: [f64; 4],
    rig_translation: [f64; 3],
}

#[derive(Debug, Deserialize)]
struct RawCameraFile {
    fx: f64,
    fy: f64,
    cx: f64,
    cy: f64,
    width: usize,
    height: usize,
    rig_rotation: Option<[f64; 4]>,
    rig_translation: Option<[f64; 3]>,
    #[serde(default)]
    rigs: std::collections::BTreeMap<String, RawRig>,
}

impl CameraConfig {
    /// Parses the TOML camera description.
    ///
    /// Top-level `rig_rotation` (wxyz) / `rig_translation` (xyz) define a rig named "main";
    /// additional rigs go in `[rigs.<name>]` tables with the same two keys.
    pub fn from_toml_str(text: &str) -> Result<Self, GeometryError> {
        let raw: RawCameraFile = toml::from_str(text).map_err(|e| GeometryError::Config(e.to_string()))?;
        let intrinsics = CameraIntrinsics::new(raw.fx, raw.fy, raw.cx, raw.cy, raw.width, raw.height)?;
        let mut rigs = Vec::new();
        match (raw.rig_rotation, raw.rig_translation) {
            (Some(q), Some(t)) => rigs.push(NamedRig { name: "main".into(), transform: RigidTransform::from_quaternion_wxyz(q, t)? }),
            (None, None) => {}
            _ => return Err(GeometryError::Config("rig_rotation and rig_translation must be given together".into())),
        }
        for (name, r) in raw.rigs {
            rigs.push(NamedRig { name, transform: RigidTransform::from_quaternion_wxyz(r.rig_rotation, r.rig_translation)? });
        }
        if rigs.is_empty() {
            return Err(GeometryError::Config("no camera rig defined".into()));
        }
        Ok(Self { intrinsics, rigs })
    }

    pub fn load(path: &Path) -> Result<Self, GeometryError> {
        let text = std::fs::read_to_string(path).map_err(|e| GeometryError::Config(format!("{}: {e}", path.display())))?;
        Self::from_toml_str(&text)
    }

    pub fn rig(&self, name: &str) -> Option<&RigidTransform> {
        self.rigs.iter().find(|r| r.name == name).map(|r| &r.transform)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn rz(theta: f64) -> Matrix4<f64> {
        let (s, c) = theta.sin_cos();
        Matrix4::new(c, -s, 0.0, 0.0, s, c, 0.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 0.0, 1.0)
    }

    fn translation(x: f64, y: f64, z: f64) -> Matrix4<f64> {
        let mut m = Matrix4::identity();
        m[(0, 3)] = x;
        m[(1, 3)] = y;
        m[(2, 3)] = z;
        m
    }

    fn test_rig() -> RigidTransform {
        RigidTransform::camera_mount([0.2, -0.1, 1.1], 0.3, 0.4)
    }

    #[test]
    fn wrap_examples() {
        assert_eq!(wrap_angle(0.0).unwrap(), 0.0);
        assert!((wrap_angle(PI + 0.1).unwrap() - (-PI + 0.1)).abs() < 1e-12);
        assert!((wrap_angle(-3.0 * PI).unwrap() - PI).abs() < 1e-12);
        assert_eq!(wrap_angle(PI).unwrap(), PI);
        assert_eq!(wrap_angle(-PI).unwrap(), PI);
        assert!(wrap_angle(f64::NAN).is_err());
        assert!(wrap_angle(f64::INFINITY).is_err());
    }

    proptest! {
        #[test]
        fn wrap_is_idempotent_and_periodic(theta in -50.0f64..50.0, n in -5i32..5) {
            let w = wrap_angle(theta).unwrap();
            prop_assert!(w > -PI && w <= PI);
            prop_assert_eq!(wrap_angle(w).unwrap(), w);
            let shifted = wrap_angle(theta + 2.0 * PI * n as f64).unwrap();
            // Equal modulo the (−π, π] seam.
            let d = (shifted - w).abs();
            prop_assert!(d < 1e-9 || (d - 2.0 * PI).abs() < 1e-9);
        }
    }

    #[test]
    fn identity_base_gives_rig() {
        let rig = test_rig();
        let cam = base_to_camera(&Pose2D::new(0.0, 0.0, 0.0), &rig, 0.0);
        assert_eq!(cam, rig);
    }

    #[test]
    fn pure_translation() {
        let rig = test_rig();
        let cam = base_to_camera(&Pose2D::new(1.0, 0.0, 0.0), &rig, 0.0);
        assert!((cam.translation() - (rig.translation() + Vector3::new(1.0, 0.0, 0.0))).norm() < 1e-12);
        assert!((cam.rotation().matrix() - rig.rotation().matrix()).amax() < 1e-12);
    }

    #[test]
    fn quarter_turn_matches_matrix_oracle() {
        let rig = test_rig();
        let cam = base_to_camera(&Pose2D::new(0.0, 0.0, PI / 2.0), &rig, 0.0);
        let oracle = rz(PI / 2.0) * rig.to_matrix();
        assert!((cam.to_matrix() - oracle).amax() < 1e-12);
        // camera position rotated 90° about z: (0.2, -0.1) -> (0.1, 0.2)
        assert!((cam.translation() - Vector3::new(0.1, 0.2, 1.1)).norm() < 1e-12);
    }

    #[test]
    fn height_offset_lifts_camera() {
        let rig = test_rig();
        let cam = base_to_camera(&Pose2D::new(0.5, 0.5, 1.0), &rig, 0.25);
        let oracle = translation(0.5, 0.5, 0.25) * rz(1.0) * rig.to_matrix();
        assert!((cam.to_matrix() - oracle).amax() < 1e-12);
    }

    #[test]
    fn relative_transform_matches_oracle_on_random_pairs() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(7);
        let rig = test_rig();
        for _ in 0..100 {
            let mut pose = || Pose2D::new(rng.random_range(-5.0..5.0), rng.random_range(-5.0..5.0), rng.random_range(-PI..PI));
            let (p1, p2) = (pose(), pose());
            let rel = base_to_camera(&p1, &rig, 0.0).compose(&base_to_camera(&p2, &rig, 0.0).inverse());
            let m = |p: &Pose2D| translation(p.x, p.y, 0.0) * rz(p.theta) * rig.to_matrix();
            let oracle = m(&p1) * m(&p2).try_inverse().unwrap();
            assert!((rel.to_matrix() - oracle).amax() < 1e-9);
        }
    }

    #[test]
    fn rotation_validation() {
        assert!(RigidTransform::new(Matrix3::identity(), Vector3::zeros()).is_ok());
        let reflect = Matrix3::new(1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, -1.0);
        assert_eq!(RigidTransform::new(reflect, Vector3::zeros()), Err(GeometryError::InvalidRotation));
        let r = *test_rig().rotation().matrix();
        assert!((r.determinant() - 1.0).abs() < 1e-12);
        assert!((r.transpose() * r - Matrix3::identity()).amax() < 1e-12);
    }

    #[test]
    fn level_mount_looks_forward() {
        let rig = RigidTransform::camera_mount([0.0, 0.0, 1.0], 0.0, 0.0);
        let ahead = rig.inverse().transform_point(&Vector3::new(2.0, 0.0, 1.0));
        assert!((ahead - Vector3::new(0.0, 0.0, 2.0)).norm() < 1e-12);
        let right = rig.inverse().transform_point(&Vector3::new(2.0, -1.0, 1.0));
        assert!(right.x > 0.0);
        let up = rig.inverse().transform_point(&Vector3::new(2.0, 0.0, 2.0));
        assert!(up.y < 0.0);
    }

    #[test]
    fn projection_examples() {
        let k = CameraIntrinsics::new(100.0, 100.0, 128.0, 96.0, 256, 192).unwrap();
        assert_eq!(project_point(&Vector3::new(0.0, 0.0, 2.0), &k).unwrap(), (128.0, 96.0, 2.0));
        assert_eq!(project_point(&Vector3::new(1.0, 0.0, 2.0), &k).unwrap().0, 178.0);
        assert!(matches!(project_point(&Vector3::new(0.0, 0.0, -1.0), &k), Err(GeometryError::BehindCamera(_))));
    }

    proptest! {
        #[test]
        fn project_unproject_roundtrip(x in -3.0f64..3.0, y in -3.0f64..3.0, z in 0.05f64..20.0) {
            let k = CameraIntrinsics::new(310.0, 290.0, 160.0, 120.0, 320, 240).unwrap();
            let p = Vector3::new(x, y, z);
            let (u, v, d) = project_point(&p, &k).unwrap();
            prop_assert!((unproject(u, v, d, &k) - p).norm() < 1e-9);
        }
    }

    #[test]
    fn intrinsics_validation() {
        assert!(CameraIntrinsics::new(0.0, 1.0, 1.0, 1.0, 4, 4).is_err());
        assert!(CameraIntrinsics::new(1.0, 1.0, 4.0, 1.0, 4, 4).is_err());
        assert!(CameraIntrinsics::new(1.0, 1.0, 1.0, 1.0, 0, 4).is_err());
    }

    #[test]
    fn camera_config_parses_named_rigs() {
        let text = r#"
            fx = 200.0
            fy = 200.0
            cx = 111.5
            cy = 111.5
            width = 224
            height = 224
            rig_rotation = [1.0, 0.0, 0.0, 0.0]
            rig_translation = [0.0, 0.0, 1.2]

            [rigs.left]
            rig_rotation = [0.7071067811865476, 0.0, 0.0, 0.7071067811865476]
            rig_translation = [0.0, 0.2, 1.2]
        "#;
        let cfg = CameraConfig::from_toml_str(text).unwrap();
        assert_eq!(cfg.rigs.len(), 2);
        assert_eq!(cfg.rig("main").unwrap(), &RigidTransform::from_quaternion_wxyz([1.0, 0.0, 0.0, 0.0], [0.0, 0.0, 1.2]).unwrap());
        let left = cfg.rig("left").unwrap();
        let x = left.rotation() * Vector3::x();
        assert!((x - Vector3::y()).norm() < 1e-12);
        assert!(CameraConfig::from_toml_str("fx = 1.0").is_err());
    }
}
