//! Rigid transforms, the fixed pinhole camera and yaw extraction.
//!
//! The camera sits at the origin with identity extrinsics and looks down +z.
//! Pixel `(i, j)` covers `[i, i+1) x [j, j+1)`; its sampling ray passes
//! through the pixel center `(i + 0.5, j + 0.5)`.

use nalgebra::{Matrix3, Rotation3, Vector2, Vector3};
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub type Vec2 = Vector2<f64>;
pub type Vec3 = Vector3<f64>;
pub type Mat3 = Matrix3<f64>;

/// Tolerance used for the orthonormality and determinant checks.
pub const ROTATION_TOLERANCE: f64 = 1e-9;

/// Points with `z` at or below this are treated as behind the camera.
pub const MIN_DEPTH: f64 = 1e-9;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GeometryError {
    #[error("matrix is not a proper rotation (orthonormality error {ortho:.3e}, det {det})")]
    InvalidRotation { ortho: f64, det: f64 },
    #[error("point {index} is behind the camera (z = {z})")]
    PointBehindCamera { index: usize, z: f64 },
    #[error("invalid camera: {0}")]
    InvalidCamera(String),
    #[error("gimbal lock: cos(pitch) = {0:.3e}")]
    GimbalLock(f64),
}

/// A proper rigid motion `x -> R x + t`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RigidTransform {
    rotation: Mat3,
    translation: Vec3,
}

impl Default for RigidTransform {
    fn default() -> Self {
        Self::identity()
    }
}

impl RigidTransform {
    pub fn identity() -> Self {
        Self {
            rotation: Mat3::identity(),
            translation: Vec3::zeros(),
        }
    }

    /// Builds a transform after checking that `rotation` is orthonormal with
    /// determinant one.
    pub fn new(rotation: Mat3, translation: Vec3) -> Result<Self, GeometryError> {
        let ortho = (rotation.transpose() * rotation - Mat3::identity()).norm();
        let det = rotation.determinant();
        if !(ortho < ROTATION_TOLERANCE) || !((det - 1.0).abs() <= ROTATION_TOLERANCE) {
            return Err(GeometryError::InvalidRotation { ortho, det });
        }
        if !translation.iter().all(|v| v.is_finite()) {
            return Err(GeometryError::InvalidRotation { ortho, det });
        }
        Ok(Self {
            rotation,
            translation,
        })
    }

    /// Builds from a rotation that is known to be proper, e.g. one produced by
    /// `Rotation3`.
    pub fn from_rotation(rotation: Rotation3<f64>, translation: Vec3) -> Self {
        Self {
            rotation: rotation.into_inner(),
            translation,
        }
    }

    pub fn from_translation(translation: Vec3) -> Self {
        Self {
            rotation: Mat3::identity(),
            translation,
        }
    }

    /// Rotation of `angle` radians about the y axis.
    pub fn yaw(angle: f64) -> Self {
        Self::from_rotation(Rotation3::from_matrix_unchecked(rot_y(angle)), Vec3::zeros())
    }

    /// Rotation by `axis_angle` (direction = axis, norm = angle).
    pub fn from_axis_angle(axis_angle: Vec3, translation: Vec3) -> Self {
        Self::from_rotation(Rotation3::new(axis_angle), translation)
    }

    /// Rotation `rotation` applied about the fixed point `center`.
    pub fn about_point(rotation: Mat3, center: Vec3) -> Self {
        Self {
            rotation,
            translation: center - rotation * center,
        }
    }

    /// Same rotation, new translation.
    pub fn with_translation(&self, translation: Vec3) -> Self {
        Self {
            rotation: self.rotation,
            translation,
        }
    }

    pub fn rotation(&self) -> &Mat3 {
        &self.rotation
    }

    pub fn translation(&self) -> &Vec3 {
        &self.translation
    }

    pub fn apply(&self, p: &Vec3) -> Vec3 {
        self.rotation * p + self.translation
    }

    /// Applies `R^T (p - t)` without forming the inverse.
    pub fn apply_inverse(&self, p: &Vec3) -> Vec3 {
        self.rotation.transpose() * (p - self.translation)
    }

    /// Returns the transform that applies `other` first, then `self`.
    pub fn compose(&self, other: &RigidTransform) -> RigidTransform {
        compose(self, other)
    }

    pub fn inverse(&self) -> RigidTransform {
        invert_transform(self)
    }

    /// Axis-angle vector of the rotation part.
    pub fn rotation_log(&self) -> Vec3 {
        Rotation3::from_matrix_unchecked(self.rotation).scaled_axis()
    }

    /// Row-major `[R | t]`.
    pub fn to_rows(&self) -> [[f64; 4]; 3] {
        let mut rows = [[0.0; 4]; 3];
        for (r, row) in rows.iter_mut().enumerate() {
            for c in 0..3 {
                row[c] = self.rotation[(r, c)];
            }
            row[3] = self.translation[r];
        }
        rows
    }

    pub fn from_rows(rows: &[[f64; 4]; 3]) -> Result<Self, GeometryError> {
        let rotation = Mat3::from_fn(|r, c| rows[r][c]);
        let translation = Vec3::new(rows[0][3], rows[1][3], rows[2][3]);
        Self::new(rotation, translation)
    }

    /// Element-wise L1 distance between the 3x4 matrices.
    pub fn l1_distance(&self, other: &RigidTransform) -> f64 {
        (self.rotation - other.rotation).abs().sum()
            + (self.translation - other.translation).abs().sum()
    }
}

/// `compose(a, b)(x) = a(b(x))`.
pub fn compose(a: &RigidTransform, b: &RigidTransform) -> RigidTransform {
    RigidTransform {
        rotation: a.rotation * b.rotation,
        translation: a.rotation * b.translation + a.translation,
    }
}

/// `[R, t] -> [R^-1, -R^-1 t]`.
pub fn invert_transform(t: &RigidTransform) -> RigidTransform {
    let rt = t.rotation.transpose();
    RigidTransform {
        rotation: rt,
        translation: -(rt * t.translation),
    }
}

pub fn rot_x(angle: f64) -> Mat3 {
    let (s, c) = angle.sin_cos();
    Mat3::new(1.0, 0.0, 0.0, 0.0, c, -s, 0.0, s, c)
}

pub fn rot_y(angle: f64) -> Mat3 {
    let (s, c) = angle.sin_cos();
    Mat3::new(c, 0.0, s, 0.0, 1.0, 0.0, -s, 0.0, c)
}

pub fn rot_z(angle: f64) -> Mat3 {
    let (s, c) = angle.sin_cos();
    Mat3::new(c, -s, 0.0, s, c, 0.0, 0.0, 0.0, 1.0)
}

/// Yaw of `M = M_y M_x M_z`, i.e. the angle of the `M_y` factor.
pub fn extract_yaw(m: &Mat3) -> Result<f64, GeometryError> {
    let pitch = m[(1, 2)].clamp(-1.0, 1.0).asin();
    let cos_pitch = pitch.cos();
    if cos_pitch.abs() <= 1e-9 {
        return Err(GeometryError::GimbalLock(cos_pitch));
    }
    let sin_yaw = m[(0, 2)] / cos_pitch;
    let cos_yaw = m[(2, 2)] / cos_pitch;
    Ok(sin_yaw.atan2(cos_yaw))
}

/// Pinhole intrinsics with square pixels and the principal point at the
/// image center. `fov` is the full vertical field of view in radians.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PinholeCamera {
    pub fov: f64,
    pub width: usize,
    pub height: usize,
}

/// Field of view of the fixed camera.
pub const DEFAULT_FOV: f64 = 0.175;

impl PinholeCamera {
    pub fn new(fov: f64, width: usize, height: usize) -> Result<Self, GeometryError> {
        let cam = Self { fov, width, height };
        cam.validate()?;
        Ok(cam)
    }

    /// Square image with the default field of view.
    pub fn square(size: usize) -> Self {
        Self {
            fov: DEFAULT_FOV,
            width: size,
            height: size,
        }
    }

    pub fn validate(&self) -> Result<(), GeometryError> {
        if !(self.fov > 0.0 && self.fov < std::f64::consts::PI) {
            return Err(GeometryError::InvalidCamera(format!(
                "fov {} outside (0, pi)",
                self.fov
            )));
        }
        if self.width == 0 || self.height == 0 {
            return Err(GeometryError::InvalidCamera(format!(
                "image size {}x{}",
                self.width, self.height
            )));
        }
        Ok(())
    }

    /// Focal length in pixels.
    pub fn focal(&self) -> f64 {
        (self.height as f64 / 2.0) / (self.fov / 2.0).tan()
    }

    pub fn principal_point(&self) -> Vec2 {
        Vec2::new(self.width as f64 / 2.0, self.height as f64 / 2.0)
    }

    pub fn project_point(&self, p: &Vec3) -> Result<Vec2, GeometryError> {
        if p.z <= MIN_DEPTH {
            return Err(GeometryError::PointBehindCamera { index: 0, z: p.z });
        }
        let f = self.focal();
        Ok(Vec2::new(
            f * p.x / p.z + self.width as f64 / 2.0,
            f * p.y / p.z + self.height as f64 / 2.0,
        ))
    }

    pub fn project(&self, points: &[Vec3]) -> Result<Vec<Vec2>, GeometryError> {
        points
            .iter()
            .enumerate()
            .map(|(index, p)| {
                self.project_point(p).map_err(|_| GeometryError::PointBehindCamera { index, z: p.z })
            })
            .collect()
    }

    /// Unit direction of the ray through the continuous pixel position `px`.
    pub fn ray_direction(&self, px: &Vec2) -> Vec3 {
        let f = self.focal();
        let c = self.principal_point();
        Vec3::new((px.x - c.x) / f, (px.y - c.y) / f, 1.0).normalize()
    }
}

/// Wraps an angle to `(-pi, pi]`.
pub fn wrap_angle(a: f64) -> f64 {
    use std::f64::consts::PI;
    let two_pi = 2.0 * PI;
    let mut w = a.rem_euclid(two_pi);
    if w > PI {
        w -= two_pi;
    }
    w
}
