//! Pinhole projection, quaternion rotations and sight rays.
//!
//! Extrinsics follow the world-to-camera convention everywhere in this crate:
//! a world point `X` maps to camera coordinates `R X + T`, so the optical center
//! is `C = -Rᵀ T`. Camera axes are x right, y down, z forward.

use nalgebra::{Matrix3, Vector2, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Points closer than this to the image plane (in camera depth) are rejected.
pub const DEPTH_EPSILON: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawIntrinsics")]
pub struct PinholeCamera {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub skew: f64,
}

#[derive(Deserialize)]
struct RawIntrinsics {
    fx: f64,
    fy: f64,
    cx: f64,
    cy: f64,
    #[serde(default)]
    skew: f64,
}

impl TryFrom<RawIntrinsics> for PinholeCamera {
    type Error = Error;

    fn try_from(raw: RawIntrinsics) -> Result<Self> {
        PinholeCamera::with_skew(raw.fx, raw.fy, raw.cx, raw.cy, raw.skew)
    }
}

impl PinholeCamera {
    pub fn new(fx: f64, fy: f64, cx: f64, cy: f64) -> Result<Self> {
        Self::with_skew(fx, fy, cx, cy, 0.0)
    }

    pub fn with_skew(fx: f64, fy: f64, cx: f64, cy: f64, skew: f64) -> Result<Self> {
        let finite = [fx, fy, cx, cy, skew].iter().all(|v| v.is_finite());
        if !finite || fx <= 0.0 || fy <= 0.0 {
            return Err(Error::InvalidInput(format!(
                "focal lengths must be positive and finite (fx={fx}, fy={fy})"
            )));
        }
        Ok(Self {
            fx,
            fy,
            cx,
            cy,
            skew,
        })
    }

    /// The upper-triangular intrinsic matrix.
    pub fn matrix(&self) -> Matrix3<f64> {
        Matrix3::new(
            self.fx, self.skew, self.cx, //
            0.0, self.fy, self.cy, //
            0.0, 0.0, 1.0,
        )
    }

    /// `K⁻¹ [u, v, 1]ᵀ`, the pixel's direction in camera coordinates (z = 1).
    pub fn unproject(&self, pixel: &Vector2<f64>) -> Vector3<f64> {
        let yn = (pixel.y - self.cy) / self.fy;
        let xn = (pixel.x - self.cx - self.skew * yn) / self.fx;
        Vector3::new(xn, yn, 1.0)
    }

    /// Pixel of a point given in camera coordinates. The caller checks depth.
    pub fn project_camera_point(&self, p: &Vector3<f64>) -> Vector2<f64> {
        let xn = p.x / p.z;
        let yn = p.y / p.z;
        Vector2::new(
            self.fx * xn + self.skew * yn + self.cx,
            self.fy * yn + self.cy,
        )
    }
}

/// Raw quaternion components `w + xi + yj + zk`, not necessarily unit length.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Quaternion {
    pub w: f64,
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

impl Quaternion {
    pub fn new(w: f64, x: f64, y: f64, z: f64) -> Self {
        Self { w, x, y, z }
    }

    pub fn norm(&self) -> f64 {
        (self.w * self.w + self.x * self.x + self.y * self.y + self.z * self.z).sqrt()
    }
}

/// Rotation matrix of a quaternion, normalizing it first.
pub fn quat_to_rotation(q: &Quaternion) -> Result<Matrix3<f64>> {
    Ok(UnitQuaternion::new(q.w, q.x, q.y, q.z)?.rotation_matrix())
}

/// A rotation stored as a unit quaternion.
///
/// `q` and `-q` describe the same rotation; compare rotations with
/// [`UnitQuaternion::angle_to`] rather than by components.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct UnitQuaternion {
    w: f64,
    x: f64,
    y: f64,
    z: f64,
}

impl Default for UnitQuaternion {
    fn default() -> Self {
        Self::identity()
    }
}

impl UnitQuaternion {
    /// Normalizes the given components. Zero or non-finite input is rejected.
    /// Components already of unit norm up to rounding are kept bit for bit.
    pub fn new(w: f64, x: f64, y: f64, z: f64) -> Result<Self> {
        let q = Quaternion::new(w, x, y, z);
        let n = q.norm();
        if !n.is_finite() || n < 1e-300 {
            return Err(Error::InvalidInput(format!(
                "quaternion ({w}, {x}, {y}, {z}) cannot be normalized"
            )));
        }
        if (n - 1.0).abs() <= 4.0 * f64::EPSILON {
            return Ok(Self { w, x, y, z });
        }
        Ok(Self::renormalized(w / n, x / n, y / n, z / n))
    }

    // A second pass brings the norm to within an ulp or two of one.
    fn renormalized(w: f64, x: f64, y: f64, z: f64) -> Self {
        let n = (w * w + x * x + y * y + z * z).sqrt();
        Self {
            w: w / n,
            x: x / n,
            y: y / n,
            z: z / n,
        }
    }

    pub const fn identity() -> Self {
        Self {
            w: 1.0,
            x: 0.0,
            y: 0.0,
            z: 0.0,
        }
    }

    pub fn from_axis_angle(axis: &Vector3<f64>, angle: f64) -> Result<Self> {
        let n = axis.norm();
        if !(n > 0.0) || !angle.is_finite() {
            return Err(Error::InvalidInput("rotation axis must be non-zero".into()));
        }
        Ok(Self::exp(&(axis * (angle / n))))
    }

    /// Quaternion of the rotation vector `v` (axis times angle in radians).
    pub fn exp(v: &Vector3<f64>) -> Self {
        let theta = v.norm();
        let half = 0.5 * theta;
        // sin(θ/2)/θ, with its Taylor expansion near zero
        let k = if theta < 1e-8 {
            0.5 - theta * theta / 48.0
        } else {
            half.sin() / theta
        };
        Self::renormalized(half.cos(), v.x * k, v.y * k, v.z * k)
    }

    /// Rotation vector of this rotation, with angle in `[0, π]`.
    pub fn log(&self) -> Vector3<f64> {
        // pick the hemisphere with w >= 0 so the angle is at most π
        let (w, v) = if self.w < 0.0 {
            (-self.w, -self.vector())
        } else {
            (self.w, self.vector())
        };
        let s = v.norm();
        if s < 1e-12 {
            return v * (2.0 / w.max(1e-300));
        }
        let theta = 2.0 * s.atan2(w);
        v * (theta / s)
    }

    pub fn w(&self) -> f64 {
        self.w
    }

    pub fn vector(&self) -> Vector3<f64> {
        Vector3::new(self.x, self.y, self.z)
    }

    /// Components in `[w, x, y, z]` order.
    pub fn to_array(&self) -> [f64; 4] {
        [self.w, self.x, self.y, self.z]
    }

    pub fn norm(&self) -> f64 {
        Quaternion::new(self.w, self.x, self.y, self.z).norm()
    }

    pub fn inverse(&self) -> Self {
        Self {
            w: self.w,
            x: -self.x,
            y: -self.y,
            z: -self.z,
        }
    }

    /// Hamilton product `self ⊗ rhs`; as rotations, `rhs` is applied first.
    pub fn compose(&self, rhs: &Self) -> Self {
        let (a, b) = (self, rhs);
        Self::renormalized(
            a.w * b.w - a.x * b.x - a.y * b.y - a.z * b.z,
            a.w * b.x + a.x * b.w + a.y * b.z - a.z * b.y,
            a.w * b.y - a.x * b.z + a.y * b.w + a.z * b.x,
            a.w * b.z + a.x * b.y - a.y * b.x + a.z * b.w,
        )
    }

    /// Geodesic angle in radians between two rotations.
    pub fn angle_to(&self, other: &Self) -> f64 {
        let dot = (self.w * other.w + self.x * other.x + self.y * other.y + self.z * other.z)
            .abs()
            .min(1.0);
        2.0 * dot.acos()
    }

    pub fn rotation_matrix(&self) -> Matrix3<f64> {
        let Self { w, x, y, z } = *self;
        Matrix3::new(
            1.0 - 2.0 * y * y - 2.0 * z * z,
            2.0 * x * y - 2.0 * w * z,
            2.0 * x * z + 2.0 * w * y,
            2.0 * x * y + 2.0 * w * z,
            1.0 - 2.0 * x * x - 2.0 * z * z,
            2.0 * y * z - 2.0 * w * x,
            2.0 * x * z - 2.0 * w * y,
            2.0 * y * z + 2.0 * w * x,
            1.0 - 2.0 * x * x - 2.0 * y * y,
        )
    }

    /// Quaternion of a rotation matrix (Shepperd's method).
    pub fn from_rotation_matrix(m: &Matrix3<f64>) -> Result<Self> {
        let trace = m[(0, 0)] + m[(1, 1)] + m[(2, 2)];
        let (w, x, y, z) = if trace > 0.0 {
            let s = 2.0 * (trace + 1.0).sqrt();
            (
                0.25 * s,
                (m[(2, 1)] - m[(1, 2)]) / s,
                (m[(0, 2)] - m[(2, 0)]) / s,
                (m[(1, 0)] - m[(0, 1)]) / s,
            )
        } else if m[(0, 0)] > m[(1, 1)] && m[(0, 0)] > m[(2, 2)] {
            let s = 2.0 * (1.0 + m[(0, 0)] - m[(1, 1)] - m[(2, 2)]).sqrt();
            (
                (m[(2, 1)] - m[(1, 2)]) / s,
                0.25 * s,
                (m[(0, 1)] + m[(1, 0)]) / s,
                (m[(0, 2)] + m[(2, 0)]) / s,
            )
        } else if m[(1, 1)] > m[(2, 2)] {
            let s = 2.0 * (1.0 + m[(1, 1)] - m[(0, 0)] - m[(2, 2)]).sqrt();
            (
                (m[(0, 2)] - m[(2, 0)]) / s,
                (m[(0, 1)] + m[(1, 0)]) / s,
                0.25 * s,
                (m[(1, 2)] + m[(2, 1)]) / s,
            )
        } else {
            let s = 2.0 * (1.0 + m[(2, 2)] - m[(0, 0)] - m[(1, 1)]).sqrt();
            (
                (m[(1, 0)] - m[(0, 1)]) / s,
                (m[(0, 2)] + m[(2, 0)]) / s,
                (m[(1, 2)] + m[(2, 1)]) / s,
                0.25 * s,
            )
        };
        Self::new(w, x, y, z)
    }
}

/// Camera orientation and translation at one frame, world-to-camera.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FramePose {
    pub rotation: UnitQuaternion,
    pub translation: Vector3<f64>,
}

impl FramePose {
    pub fn new(rotation: UnitQuaternion, translation: Vector3<f64>) -> Self {
        Self {
            rotation,
            translation,
        }
    }

    pub fn identity() -> Self {
        Self::new(UnitQuaternion::identity(), Vector3::zeros())
    }

    /// Pose with the given orientation and optical center.
    pub fn from_center(rotation: UnitQuaternion, center: &Vector3<f64>) -> Self {
        let translation = -(rotation.rotation_matrix() * center);
        Self::new(rotation, translation)
    }

    /// Camera at `center` looking at `target`, image y axis pointing away from `up`.
    pub fn look_at(center: &Vector3<f64>, target: &Vector3<f64>, up: &Vector3<f64>) -> Result<Self> {
        let forward = target - center;
        let z = forward
            .try_normalize(1e-12)
            .ok_or_else(|| Error::InvalidInput("look-at target coincides with center".into()))?;
        let x = z
            .cross(up)
            .try_normalize(1e-12)
            .ok_or_else(|| Error::InvalidInput("up vector is parallel to viewing axis".into()))?;
        let y = z.cross(&x);
        // rows are the camera axes in world coordinates
        let r = Matrix3::from_rows(&[x.transpose(), y.transpose(), z.transpose()]);
        let rotation = UnitQuaternion::from_rotation_matrix(&r)?;
        Ok(Self::from_center(rotation, center))
    }

    pub fn rotation_matrix(&self) -> Matrix3<f64> {
        self.rotation.rotation_matrix()
    }

    pub fn optical_center(&self) -> Vector3<f64> {
        optical_center(self)
    }

    pub fn to_camera(&self, x: &Vector3<f64>) -> Vector3<f64> {
        self.rotation_matrix() * x + self.translation
    }
}

/// Half-line from an optical center along a unit direction.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SightRay {
    pub origin: Vector3<f64>,
    pub direction: Vector3<f64>,
}

impl SightRay {
    /// Normalizes `direction`; a zero direction is rejected.
    pub fn new(origin: Vector3<f64>, direction: Vector3<f64>) -> Result<Self> {
        let direction = direction
            .try_normalize(1e-300)
            .filter(|d| d.iter().all(|v| v.is_finite()))
            .ok_or_else(|| Error::InvalidInput("sight ray direction must be non-zero".into()))?;
        Ok(Self { origin, direction })
    }

    /// Ray from `origin` through `point`.
    pub fn through(origin: Vector3<f64>, point: &Vector3<f64>) -> Result<Self> {
        Self::new(origin, point - origin)
    }

    /// Distance from `x` to the line carrying this ray.
    pub fn distance(&self, x: &Vector3<f64>) -> f64 {
        ray_residual(x, self).norm()
    }
}

pub fn optical_center(pose: &FramePose) -> Vector3<f64> {
    -(pose.rotation_matrix().transpose() * pose.translation)
}

pub fn project_point(x: &Vector3<f64>, cam: &PinholeCamera, pose: &FramePose) -> Result<Vector2<f64>> {
    let p = pose.to_camera(x);
    if p.z <= DEPTH_EPSILON {
        return Err(Error::BehindCamera { depth: p.z });
    }
    Ok(cam.project_camera_point(&p))
}

pub fn sight_ray(pixel: &Vector2<f64>, cam: &PinholeCamera, pose: &FramePose) -> SightRay {
    let dir = pose.rotation_matrix().transpose() * cam.unproject(pixel);
    SightRay {
        origin: optical_center(pose),
        direction: dir.normalize(),
    }
}

/// Orthogonal projector `I - L Lᵀ` onto the plane normal to `direction`.
pub fn projector(direction: &Vector3<f64>) -> Matrix3<f64> {
    Matrix3::identity() - direction * direction.transpose()
}

/// `(I - L Lᵀ)(X - C)`: the part of `X - C` orthogonal to the ray.
pub fn ray_residual(x: &Vector3<f64>, ray: &SightRay) -> Vector3<f64> {
    let d = x - ray.origin;
    d - ray.direction * ray.direction.dot(&d)
}

/// Cross-product matrix `[v]×`, so that `[v]× w = v × w`.
pub fn skew(v: &Vector3<f64>) -> Matrix3<f64> {
    Matrix3::new(0.0, -v.z, v.y, v.z, 0.0, -v.x, -v.y, v.x, 0.0)
}
