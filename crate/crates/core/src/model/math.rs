//! Vectors, quaternions and poses in the shared space.
//!
//! Right-handed, Y up, meters. A device screen lies in its local z = 0 plane
//! and faces +z.

use std::ops::{Add, Mul, Neg, Sub};

use serde::{Deserialize, Serialize};

use super::ModelError;

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Vec3 {
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

impl Vec3 {
    pub const ZERO: Vec3 = Vec3::new(0.0, 0.0, 0.0);
    pub const ONE: Vec3 = Vec3::new(1.0, 1.0, 1.0);
    pub const X: Vec3 = Vec3::new(1.0, 0.0, 0.0);
    pub const Y: Vec3 = Vec3::new(0.0, 1.0, 0.0);
    pub const Z: Vec3 = Vec3::new(0.0, 0.0, 1.0);

    pub const fn new(x: f64, y: f64, z: f64) -> Self {
        Self { x, y, z }
    }

    pub fn dot(self, o: Vec3) -> f64 {
        self.x * o.x + self.y * o.y + self.z * o.z
    }

    pub fn cross(self, o: Vec3) -> Vec3 {
        Vec3::new(
            self.y * o.z - self.z * o.y,
            self.z * o.x - self.x * o.z,
            self.x * o.y - self.y * o.x,
        )
    }

    pub fn norm(self) -> f64 {
        self.dot(self).sqrt()
    }

    pub fn distance(self, o: Vec3) -> f64 {
        (self - o).norm()
    }

    /// Unit vector in the same direction, or zero for a zero vector.
    pub fn normalized(self) -> Vec3 {
        let n = self.norm();
        if n > 0.0 {
            self * (1.0 / n)
        } else {
            Vec3::ZERO
        }
    }

    /// Component-wise product.
    pub fn hadamard(self, o: Vec3) -> Vec3 {
        Vec3::new(self.x * o.x, self.y * o.y, self.z * o.z)
    }

    pub fn lerp(self, o: Vec3, t: f64) -> Vec3 {
        self + (o - self) * t
    }

    pub fn is_finite(self) -> bool {
        self.x.is_finite() && self.y.is_finite() && self.z.is_finite()
    }

    pub fn to_array(self) -> [f64; 3] {
        [self.x, self.y, self.z]
    }
}

impl Add for Vec3 {
    type Output = Vec3;
    fn add(self, o: Vec3) -> Vec3 {
        Vec3::new(self.x + o.x, self.y + o.y, self.z + o.z)
    }
}

impl Sub for Vec3 {
    type Output = Vec3;
    fn sub(self, o: Vec3) -> Vec3 {
        Vec3::new(self.x - o.x, self.y - o.y, self.z - o.z)
    }
}

impl Neg for Vec3 {
    type Output = Vec3;
    fn neg(self) -> Vec3 {
        Vec3::new(-self.x, -self.y, -self.z)
    }
}

impl Mul<f64> for Vec3 {
    type Output = Vec3;
    fn mul(self, s: f64) -> Vec3 {
        Vec3::new(self.x * s, self.y * s, self.z * s)
    }
}

/// Rotation quaternion, component order (x, y, z, w).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Quat {
    pub x: f64,
    pub y: f64,
    pub z: f64,
    pub w: f64,
}

impl Default for Quat {
    fn default() -> Self {
        Quat::IDENTITY
    }
}

impl Quat {
    pub const IDENTITY: Quat = Quat { x: 0.0, y: 0.0, z: 0.0, w: 1.0 };

    pub const fn new(x: f64, y: f64, z: f64, w: f64) -> Self {
        Self { x, y, z, w }
    }

    /// Rotation of `angle` radians about `axis` (need not be normalized).
    pub fn from_axis_angle(axis: Vec3, angle: f64) -> Quat {
        let a = axis.normalized();
        let (s, c) = (angle * 0.5).sin_cos();
        Quat::new(a.x * s, a.y * s, a.z * s, c)
    }

    /// Rotation about +Y.
    pub fn yaw(angle: f64) -> Quat {
        Quat::from_axis_angle(Vec3::Y, angle)
    }

    /// Rotation about +Z (in-plane roll of a screen at identity).
    pub fn roll(angle: f64) -> Quat {
        Quat::from_axis_angle(Vec3::Z, angle)
    }

    pub fn norm(self) -> f64 {
        (self.x * self.x + self.y * self.y + self.z * self.z + self.w * self.w).sqrt()
    }

    pub fn normalized(self) -> Quat {
        let n = self.norm();
        if n > 0.0 {
            Quat::new(self.x / n, self.y / n, self.z / n, self.w / n)
        } else {
            Quat::IDENTITY
        }
    }

    pub fn conjugate(self) -> Quat {
        Quat::new(-self.x, -self.y, -self.z, self.w)
    }

    pub fn dot(self, o: Quat) -> f64 {
        self.x * o.x + self.y * o.y + self.z * o.z + self.w * o.w
    }

    pub fn rotate(self, v: Vec3) -> Vec3 {
        let u = Vec3::new(self.x, self.y, self.z);
        let t = u.cross(v) * 2.0;
        v + t * self.w + u.cross(t)
    }

    /// Shortest-arc spherical interpolation.
    pub fn slerp(self, to: Quat, t: f64) -> Quat {
        let mut cos = self.dot(to);
        let mut end = to;
        if cos < 0.0 {
            cos = -cos;
            end = Quat::new(-to.x, -to.y, -to.z, -to.w);
        }
        if cos > 0.9995 {
            return Quat::new(
                self.x + (end.x - self.x) * t,
                self.y + (end.y - self.y) * t,
                self.z + (end.z - self.z) * t,
                self.w + (end.w - self.w) * t,
            )
            .normalized();
        }
        let theta = cos.acos();
        let sin = theta.sin();
        let a = ((1.0 - t) * theta).sin() / sin;
        let b = (t * theta).sin() / sin;
        Quat::new(
            self.x * a + end.x * b,
            self.y * a + end.y * b,
            self.z * a + end.z * b,
            self.w * a + end.w * b,
        )
        .normalized()
    }

    pub fn is_finite(self) -> bool {
        self.x.is_finite() && self.y.is_finite() && self.z.is_finite() && self.w.is_finite()
    }
}

impl Mul for Quat {
    type Output = Quat;
    /// Hamilton product: `self * o` applies `o` first.
    fn mul(self, o: Quat) -> Quat {
        Quat::new(
            self.w * o.x + self.x * o.w + self.y * o.z - self.z * o.y,
            self.w * o.y - self.x * o.z + self.y * o.w + self.z * o.x,
            self.w * o.z + self.x * o.y - self.y * o.x + self.z * o.w,
            self.w * o.w - self.x * o.x - self.y * o.y - self.z * o.z,
        )
    }
}

/// Position, rotation and per-axis scale of a device or hologram.
///
/// Composition treats the rigid part and the scale independently: a parent's
/// scale magnifies its children's scale but does not stretch their offsets.
/// This keeps composition associative and exactly invertible even with
/// non-uniform scale.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Pose {
    pub position: Vec3,
    pub rotation: Quat,
    pub scale: Vec3,
}

impl Default for Pose {
    fn default() -> Self {
        Pose::IDENTITY
    }
}

impl Pose {
    pub const IDENTITY: Pose = Pose {
        position: Vec3::ZERO,
        rotation: Quat::IDENTITY,
        scale: Vec3::ONE,
    };

    pub fn new(position: Vec3, rotation: Quat, scale: Vec3) -> Self {
        Self { position, rotation, scale }
    }

    pub fn from_position(position: Vec3) -> Pose {
        Pose { position, ..Pose::IDENTITY }
    }

    pub fn translation(x: f64, y: f64, z: f64) -> Pose {
        Pose::from_position(Vec3::new(x, y, z))
    }

    pub fn with_rotation(mut self, rotation: Quat) -> Pose {
        self.rotation = rotation;
        self
    }

    pub fn with_scale(mut self, scale: Vec3) -> Pose {
        self.scale = scale;
        self
    }

    /// Maps a point from this pose's local frame (ignoring scale) to the parent frame.
    pub fn transform_point(&self, local: Vec3) -> Vec3 {
        self.position + self.rotation.rotate(local)
    }

    /// Inverse of [`Pose::transform_point`].
    pub fn inverse_transform_point(&self, world: Vec3) -> Vec3 {
        self.rotation.conjugate().rotate(world - self.position)
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        if !self.position.is_finite() || !self.rotation.is_finite() || !self.scale.is_finite() {
            return Err(ModelError::NonFinite("pose"));
        }
        if (self.rotation.norm() - 1.0).abs() > 1e-6 {
            return Err(ModelError::NotUnitQuaternion(self.rotation.norm()));
        }
        if self.scale.x <= 0.0 || self.scale.y <= 0.0 || self.scale.z <= 0.0 {
            return Err(ModelError::NonPositiveScale);
        }
        Ok(())
    }
}

/// `parent ∘ child`: the child's pose expressed in the parent's frame.
pub fn compose_pose(parent: &Pose, child_relative: &Pose) -> Pose {
    Pose {
        position: parent.transform_point(child_relative.position),
        rotation: (parent.rotation * child_relative.rotation).normalized(),
        scale: parent.scale.hadamard(child_relative.scale),
    }
}

/// The pose `r` such that `compose_pose(parent, r) == child`.
pub fn relative_pose(parent: &Pose, child: &Pose) -> Pose {
    Pose {
        position: parent.inverse_transform_point(child.position),
        rotation: (parent.rotation.conjugate() * child.rotation).normalized(),
        scale: Vec3::new(
            child.scale.x / parent.scale.x,
            child.scale.y / parent.scale.y,
            child.scale.z / parent.scale.z,
        ),
    }
}

/// Angle in radians between two directions.
pub fn angle_between(a: Vec3, b: Vec3) -> f64 {
    let d = a.normalized().dot(b.normalized()).clamp(-1.0, 1.0);
    d.acos()
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::FRAC_PI_2;

    // Rigid part of a pose as a 4x4 homogeneous matrix, built from the
    // rotation-matrix formula rather than quaternion products.
    fn matrix(p: &Pose) -> [[f64; 4]; 4] {
        let Quat { x, y, z, w } = p.rotation;
        [
            [1.0 - 2.0 * (y * y + z * z), 2.0 * (x * y - z * w), 2.0 * (x * z + y * w), p.position.x],
            [2.0 * (x * y + z * w), 1.0 - 2.0 * (x * x + z * z), 2.0 * (y * z - x * w), p.position.y],
            [2.0 * (x * z - y * w), 2.0 * (y * z + x * w), 1.0 - 2.0 * (x * x + y * y), p.position.z],
            [0.0, 0.0, 0.0, 1.0],
        ]
    }

    fn matmul(a: &[[f64; 4]; 4], b: &[[f64; 4]; 4]) -> [[f64; 4]; 4] {
        let mut out = [[0.0; 4]; 4];
        for i in 0..4 {
            for j in 0..4 {
                out[i][j] = (0..4).map(|k| a[i][k] * b[k][j]).sum();
            }
        }
        out
    }

    #[test]
    fn identity_composition() {
        let p = Pose::translation(1.0, -2.0, 0.5).with_rotation(Quat::yaw(0.3));
        let l = compose_pose(&Pose::IDENTITY, &p);
        assert_eq!(l.position, p.position);
        assert!((l.rotation.dot(p.rotation) - 1.0).abs() < 1e-15);
        let q = compose_pose(&p, &Pose::IDENTITY);
        assert!(q.position.distance(p.position) < 1e-15);
        assert!((q.rotation.dot(p.rotation) - 1.0).abs() < 1e-15);
    }

    #[test]
    fn translations_compose_like_matrices() {
        let a = Pose::translation(1.0, 0.0, 0.0);
        let b = Pose::translation(0.0, 2.0, 0.0);
        let m = matmul(&matrix(&a), &matrix(&b));
        let c = compose_pose(&a, &b);
        assert_eq!(c.position, Vec3::new(m[0][3], m[1][3], m[2][3]));
        assert_eq!(c.position, Vec3::new(1.0, 2.0, 0.0));
    }

    #[test]
    fn rotated_composition_matches_matrix_product() {
        let a = Pose::translation(0.3, 0.1, -0.2).with_rotation(Quat::from_axis_angle(Vec3::new(1.0, 2.0, 3.0), 0.7));
        let b = Pose::translation(-1.0, 0.5, 2.0).with_rotation(Quat::from_axis_angle(Vec3::new(-2.0, 0.1, 1.0), 1.9));
        let m = matmul(&matrix(&a), &matrix(&b));
        let c = matrix(&compose_pose(&a, &b));
        for i in 0..3 {
            for j in 0..4 {
                assert!((m[i][j] - c[i][j]).abs() < 1e-12, "{i},{j}");
            }
        }
    }

    #[test]
    fn relative_of_self_is_identity() {
        let p = Pose::translation(4.0, 1.0, -3.0)
            .with_rotation(Quat::from_axis_angle(Vec3::new(0.2, 1.0, 0.0), 2.1))
            .with_scale(Vec3::new(2.0, 0.5, 1.5));
        let r = relative_pose(&p, &p);
        assert!(r.position.norm() < 1e-12);
        assert!((r.rotation.w.abs() - 1.0).abs() < 1e-12);
        assert!(r.scale.distance(Vec3::ONE) < 1e-15);
        assert_eq!(relative_pose(&Pose::IDENTITY, &p), p);
    }

    #[test]
    fn rotate_quarter_turn() {
        let v = Quat::yaw(FRAC_PI_2).rotate(Vec3::Z);
        assert!(v.distance(Vec3::X) < 1e-15);
    }

    #[test]
    fn slerp_endpoints() {
        let a = Quat::yaw(0.1);
        let b = Quat::roll(1.2);
        assert!((a.slerp(b, 0.0).dot(a) - 1.0).abs() < 1e-12);
        assert!((a.slerp(b, 1.0).dot(b) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn validate_rejects_bad_values() {
        assert!(Pose::IDENTITY.validate().is_ok());
        assert!(Pose::translation(f64::NAN, 0.0, 0.0).validate().is_err());
        assert!(Pose::IDENTITY.with_scale(Vec3::new(1.0, 0.0, 1.0)).validate().is_err());
        assert!(Pose::IDENTITY.with_rotation(Quat::new(0.0, 0.0, 0.0, 2.0)).validate().is_err());
    }
}
