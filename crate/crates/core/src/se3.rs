//! Rigid-motion algebra on unit quaternions.
//!
//! A [`Pose`] maps coordinates of the previous sensor frame into the current
//! one: `x_t = R x_{t-1} + t`. Rotation matrices are only materialized on
//! demand.

use nalgebra::{Matrix3, Quaternion, Unit, UnitQuaternion, Vector3, Vector4};
use serde::{Deserialize, Serialize};

/// Number of raw pose parameters: quaternion `(w, x, y, z)` then translation.
pub const POSE_PARAMS: usize = 7;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Pose {
    pub rotation: UnitQuaternion<f64>,
    pub translation: Vector3<f64>,
}

impl Default for Pose {
    fn default() -> Self {
        Self::identity()
    }
}

impl Pose {
    pub fn identity() -> Self {
        Self {
            rotation: UnitQuaternion::identity(),
            translation: Vector3::zeros(),
        }
    }

    pub fn new(rotation: UnitQuaternion<f64>, translation: Vector3<f64>) -> Self {
        Self {
            rotation,
            translation,
        }
    }

    pub fn from_translation(translation: Vector3<f64>) -> Self {
        Self::new(UnitQuaternion::identity(), translation)
    }

    /// Rotation of `angle` radians about `axis` (need not be normalized).
    pub fn from_axis_angle(axis: Vector3<f64>, angle: f64, translation: Vector3<f64>) -> Self {
        let axis = Unit::new_normalize(axis);
        Self::new(UnitQuaternion::from_axis_angle(&axis, angle), translation)
    }

    pub fn rot_z(angle: f64) -> Self {
        Self::from_axis_angle(Vector3::z(), angle, Vector3::zeros())
    }

    /// Builds a pose from Euler angles (radians, roll about x, pitch about y,
    /// yaw about z; applied in that order) and a translation.
    pub fn from_euler(roll: f64, pitch: f64, yaw: f64, translation: Vector3<f64>) -> Self {
        Self::new(
            UnitQuaternion::from_euler_angles(roll, pitch, yaw),
            translation,
        )
    }

    /// Builds a pose from raw parameters `(w, x, y, z, tx, ty, tz)`; the
    /// quaternion part is renormalized.
    pub fn from_params(p: &[f64; POSE_PARAMS]) -> Self {
        let q = Quaternion::new(p[0], p[1], p[2], p[3]);
        Self::new(
            UnitQuaternion::from_quaternion(q),
            Vector3::new(p[4], p[5], p[6]),
        )
    }

    pub fn params(&self) -> [f64; POSE_PARAMS] {
        let q = self.rotation.quaternion();
        [
            q.w,
            q.i,
            q.j,
            q.k,
            self.translation.x,
            self.translation.y,
            self.translation.z,
        ]
    }

    pub fn matrix(&self) -> Matrix3<f64> {
        self.rotation.to_rotation_matrix().into_inner()
    }

    /// `self ∘ other`: applies `other` first, then `self`.
    pub fn compose(&self, other: &Pose) -> Pose {
        let rotation = UnitQuaternion::new_normalize(
            (self.rotation * other.rotation).into_inner(),
        );
        Pose {
            rotation,
            translation: self.rotation * other.translation + self.translation,
        }
    }

    pub fn inverse(&self) -> Pose {
        let rotation = self.rotation.inverse();
        Pose {
            rotation,
            translation: -(rotation * self.translation),
        }
    }

    pub fn apply(&self, x: &Vector3<f64>) -> Vector3<f64> {
        self.rotation * x + self.translation
    }

    /// Rotation angle in `[0, π]`, taken as `2·acos(|w|)`.
    pub fn rotation_angle(&self) -> f64 {
        let w = self.rotation.quaternion().w.abs().min(1.0);
        2.0 * w.acos()
    }

    /// Squared Frobenius norm of `R − I`.
    pub fn frobenius_dev(&self) -> f64 {
        (self.matrix() - Matrix3::identity()).norm_squared()
    }

    /// Returns the same pose with its quaternion renormalized.
    pub fn renormalized(&self) -> Pose {
        Pose {
            rotation: UnitQuaternion::new_normalize(self.rotation.into_inner()),
            translation: self.translation,
        }
    }
}

/// Rotation matrix of the possibly non-unit quaternion `q = (w, x, y, z)`,
/// i.e. the rotation of `q / |q|`.
pub fn rotation_from_quat_params(q: &Vector4<f64>) -> Matrix3<f64> {
    homogeneous_rotation(q) / q.norm_squared()
}

/// Partial derivatives `∂R/∂q_k` of [`rotation_from_quat_params`] for
/// `k = w, x, y, z`.
pub fn rotation_quat_jacobian(q: &Vector4<f64>) -> [Matrix3<f64>; 4] {
    let (w, x, y, z) = (q[0], q[1], q[2], q[3]);
    let s = q.norm_squared();
    let m = homogeneous_rotation(q);
    #[rustfmt::skip]
    let dm = [
        Matrix3::new(
            2.0 * w, -2.0 * z, 2.0 * y,
            2.0 * z, 2.0 * w, -2.0 * x,
            -2.0 * y, 2.0 * x, 2.0 * w,
        ),
        Matrix3::new(
            2.0 * x, 2.0 * y, 2.0 * z,
            2.0 * y, -2.0 * x, -2.0 * w,
            2.0 * z, 2.0 * w, -2.0 * x,
        ),
        Matrix3::new(
            -2.0 * y, 2.0 * x, 2.0 * w,
            2.0 * x, 2.0 * y, 2.0 * z,
            -2.0 * w, 2.0 * z, -2.0 * y,
        ),
        Matrix3::new(
            -2.0 * z, -2.0 * w, 2.0 * x,
            2.0 * w, -2.0 * z, 2.0 * y,
            2.0 * x, 2.0 * y, 2.0 * z,
        ),
    ];
    let mut out = [Matrix3::zeros(); 4];
    for k in 0..4 {
        out[k] = dm[k] / s - m * (2.0 * q[k] / (s * s));
    }
    out
}

#[rustfmt::skip]
fn homogeneous_rotation(q: &Vector4<f64>) -> Matrix3<f64> {
    let (w, x, y, z) = (q[0], q[1], q[2], q[3]);
    Matrix3::new(
        w * w + x * x - y * y - z * z, 2.0 * (x * y - w * z), 2.0 * (x * z + w * y),
        2.0 * (x * y + w * z), w * w - x * x + y * y - z * z, 2.0 * (y * z - w * x),
        2.0 * (x * z - w * y), 2.0 * (y * z + w * x), w * w - x * x - y * y + z * z,
    )
}

/// Raw quaternion parameters of a pose as a 4-vector `(w, x, y, z)`.
pub fn quat_params(pose: &Pose) -> Vector4<f64> {
    let q = pose.rotation.quaternion();
    Vector4::new(q.w, q.i, q.j, q.k)
}

/// Maps a tangent-space increment (rotation vector, translation) onto the
/// 7-parameter chart. Column `k < 3` is `∂q/∂ω_k` for the right perturbation
/// `q ⊗ exp(ω/2)`; columns 3..6 are the translation axes.
pub fn tangent_basis(pose: &Pose) -> nalgebra::SMatrix<f64, POSE_PARAMS, 6> {
    let q = pose.rotation.into_inner();
    let mut basis = nalgebra::SMatrix::<f64, POSE_PARAMS, 6>::zeros();
    for k in 0..3 {
        let mut e = Vector3::zeros();
        e[k] = 0.5;
        let d = q * Quaternion::from_imag(e);
        basis[(0, k)] = d.w;
        basis[(1, k)] = d.i;
        basis[(2, k)] = d.j;
        basis[(3, k)] = d.k;
    }
    for k in 0..3 {
        basis[(4 + k, 3 + k)] = 1.0;
    }
    basis
}

/// Applies a tangent increment `(ω, v)`: `R ← R·exp(ω)`, `t ← t + v`.
pub fn retract(pose: &Pose, step: &nalgebra::SVector<f64, 6>) -> Pose {
    let omega = Vector3::new(step[0], step[1], step[2]);
    let dq = UnitQuaternion::from_scaled_axis(omega);
    Pose {
        rotation: UnitQuaternion::new_normalize((pose.rotation * dq).into_inner()),
        translation: pose.translation + Vector3::new(step[3], step[4], step[5]),
    }
}
