//! SE(2) group arithmetic.
//!
//! Tangent vectors are ordered `(vx, vy, omega)`: translation first, then
//! rotation. The exponential map is the closed-form SE(2) exponential, not
//! the decoupled `R2 x SO(2)` retraction.

use std::f64::consts::PI;

use nalgebra::{Matrix2, Matrix3, Vector2, Vector3};
use serde::{Deserialize, Serialize};

/// Below this rotation magnitude exp/log/jacobians switch to Taylor branches.
pub const SMALL_ANGLE: f64 = 1e-9;

/// Wraps an angle into `(-pi, pi]`.
pub fn normalize_angle(angle: f64) -> f64 {
    let r = angle.rem_euclid(2.0 * PI);
    if r > PI {
        r - 2.0 * PI
    } else {
        r
    }
}

/// A planar rigid transform.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Se2Pose {
    pub x: f64,
    pub y: f64,
    pub yaw: f64,
}

impl Default for Se2Pose {
    fn default() -> Self {
        Self::identity()
    }
}

impl Se2Pose {
    pub fn new(x: f64, y: f64, yaw: f64) -> Self {
        Self {
            x,
            y,
            yaw: normalize_angle(yaw),
        }
    }

    pub fn identity() -> Self {
        Self {
            x: 0.0,
            y: 0.0,
            yaw: 0.0,
        }
    }

    pub fn translation(&self) -> Vector2<f64> {
        Vector2::new(self.x, self.y)
    }

    pub fn rotation(&self) -> Matrix2<f64> {
        let (s, c) = self.yaw.sin_cos();
        Matrix2::new(c, -s, s, c)
    }

    pub fn compose(&self, other: &Se2Pose) -> Se2Pose {
        let t = self.rotation() * other.translation() + self.translation();
        Se2Pose::new(t.x, t.y, self.yaw + other.yaw)
    }

    pub fn inverse(&self) -> Se2Pose {
        let t = -(self.rotation().transpose() * self.translation());
        Se2Pose::new(t.x, t.y, -self.yaw)
    }

    /// `self^-1 * other`.
    pub fn between(&self, other: &Se2Pose) -> Se2Pose {
        self.inverse().compose(other)
    }

    pub fn transform_point(&self, p: &Vector2<f64>) -> Vector2<f64> {
        self.rotation() * p + self.translation()
    }

    /// Adjoint representation acting on `(vx, vy, omega)` tangents.
    pub fn adjoint(&self) -> Matrix3<f64> {
        let r = self.rotation();
        Matrix3::new(
            r[(0, 0)],
            r[(0, 1)],
            self.y,
            r[(1, 0)],
            r[(1, 1)],
            -self.x,
            0.0,
            0.0,
            1.0,
        )
    }

    pub fn exp(xi: &Vector3<f64>) -> Se2Pose {
        se2_exp(xi)
    }

    pub fn log(&self) -> Vector3<f64> {
        se2_log(self)
    }

    /// Per-component maximum absolute difference, with yaw compared on the circle.
    pub fn max_abs_diff(&self, other: &Se2Pose) -> f64 {
        let dyaw = normalize_angle(self.yaw - other.yaw).abs();
        (self.x - other.x).abs().max((self.y - other.y).abs()).max(dyaw)
    }
}

/// `sin(t)/t`, `(1 - cos t)/t`.
fn sinc_terms(theta: f64) -> (f64, f64) {
    if theta.abs() < SMALL_ANGLE {
        let t2 = theta * theta;
        (1.0 - t2 / 6.0, theta / 2.0)
    } else {
        let half = 0.5 * theta;
        (theta.sin() / theta, 2.0 * half.sin() * half.sin() / theta)
    }
}

pub fn se2_exp(xi: &Vector3<f64>) -> Se2Pose {
    let theta = xi[2];
    let (a, b) = sinc_terms(theta);
    let x = a * xi[0] - b * xi[1];
    let y = b * xi[0] + a * xi[1];
    Se2Pose::new(x, y, theta)
}

/// Principal-branch logarithm; the returned rotation lies in `(-pi, pi]`.
pub fn se2_log(pose: &Se2Pose) -> Vector3<f64> {
    let theta = normalize_angle(pose.yaw);
    let (a, b) = sinc_terms(theta);
    let det = a * a + b * b;
    let vx = (a * pose.x + b * pose.y) / det;
    let vy = (-b * pose.x + a * pose.y) / det;
    Vector3::new(vx, vy, theta)
}

/// Right Jacobian: `exp(xi + d) ~= exp(xi) * exp(J_r(xi) d)`.
pub fn right_jacobian(xi: &Vector3<f64>) -> Matrix3<f64> {
    let (r1, r2, theta) = (xi[0], xi[1], xi[2]);
    let (a, b) = sinc_terms(theta);
    // (1 - cos t)/t^2 and (t - sin t)/t^2 need their own series near zero.
    let (c, d) = if theta.abs() < 1e-4 {
        let t2 = theta * theta;
        (0.5 - t2 / 24.0, theta / 6.0 - theta * t2 / 120.0)
    } else {
        let t2 = theta * theta;
        (b / theta, (theta - theta.sin()) / t2)
    };
    Matrix3::new(
        a,
        b,
        r1 * d - r2 * c,
        -b,
        a,
        r1 * c + r2 * d,
        0.0,
        0.0,
        1.0,
    )
}

pub fn right_jacobian_inv(xi: &Vector3<f64>) -> Matrix3<f64> {
    // The 2x2 rotational block is a scaled rotation with determinant a^2 + b^2 > 0
    // on the principal branch, so the inverse always exists there.
    right_jacobian(xi)
        .try_inverse()
        .expect("SE(2) right Jacobian is invertible for |omega| < 2 pi")
}
