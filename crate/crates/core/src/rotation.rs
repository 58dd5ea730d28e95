//! Axis-angle ↔ matrix ↔ Euler conversions.
//!
//! Euler angles follow the intrinsic x-y-z order: `R = Rx(pitch)·Ry(yaw)·Rz(roll)`,
//! with yaw reported on the `[-90°, 90°]` branch.

use nalgebra::{Matrix3, Vector3};

/// Below this `|cos(yaw)|` the x and z axes are treated as aligned.
const GIMBAL_EPS: f64 = 1e-6;

/// Rodrigues formula. The zero vector maps to the identity.
pub fn rotation_vec_to_matrix(rvec: &Vector3<f64>) -> Matrix3<f64> {
    let theta = rvec.norm();
    if theta < 1e-300 {
        return Matrix3::identity();
    }
    let k = rvec / theta;
    let kx = Matrix3::new(0.0, -k.z, k.y, k.z, 0.0, -k.x, -k.y, k.x, 0.0);
    Matrix3::identity() + kx * theta.sin() + kx * kx * (1.0 - theta.cos())
}

/// Inverse of [`rotation_vec_to_matrix`], angle in `[0, π]`.
pub fn matrix_to_rotation_vec(r: &Matrix3<f64>) -> Vector3<f64> {
    let cos_theta = ((r.trace() - 1.0) / 2.0).clamp(-1.0, 1.0);
    let theta = cos_theta.acos();
    let skew = Vector3::new(r[(2, 1)] - r[(1, 2)], r[(0, 2)] - r[(2, 0)], r[(1, 0)] - r[(0, 1)]);
    if theta < 1e-8 {
        // first-order: R ≈ I + [w]x
        return skew / 2.0;
    }
    if std::f64::consts::PI - theta > 1e-6 {
        return skew * (theta / (2.0 * theta.sin()));
    }
    // near a half turn the skew part vanishes; read the axis off R + I
    let b = (r + Matrix3::identity()) / 2.0;
    let col = (0..3)
        .max_by(|&i, &j| b[(i, i)].total_cmp(&b[(j, j)]))
        .unwrap_or(0);
    let mut axis: Vector3<f64> = b.column(col).into();
    axis /= axis.norm();
    // resolve the sign from whatever skew remains
    if axis.dot(&skew) < 0.0 {
        axis = -axis;
    }
    axis * theta
}

pub fn rot_x(angle: f64) -> Matrix3<f64> {
    let (s, c) = angle.sin_cos();
    Matrix3::new(1.0, 0.0, 0.0, 0.0, c, -s, 0.0, s, c)
}

pub fn rot_y(angle: f64) -> Matrix3<f64> {
    let (s, c) = angle.sin_cos();
    Matrix3::new(c, 0.0, s, 0.0, 1.0, 0.0, -s, 0.0, c)
}

pub fn rot_z(angle: f64) -> Matrix3<f64> {
    let (s, c) = angle.sin_cos();
    Matrix3::new(c, -s, 0.0, s, c, 0.0, 0.0, 0.0, 1.0)
}

/// Pitch, yaw and roll in degrees.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Euler {
    pub pitch_deg: f64,
    pub yaw_deg: f64,
    pub roll_deg: f64,
}

impl Euler {
    pub fn new(pitch_deg: f64, yaw_deg: f64, roll_deg: f64) -> Self {
        Euler {
            pitch_deg,
            yaw_deg,
            roll_deg,
        }
    }
}

pub fn euler_to_matrix(e: Euler) -> Matrix3<f64> {
    rot_x(e.pitch_deg.to_radians()) * rot_y(e.yaw_deg.to_radians()) * rot_z(e.roll_deg.to_radians())
}

/// Extracts intrinsic x-y-z angles. At gimbal lock roll is pinned to zero and
/// pitch carries the combined rotation.
pub fn matrix_to_euler(r: &Matrix3<f64>) -> Euler {
    let sin_yaw = r[(0, 2)].clamp(-1.0, 1.0);
    let yaw = sin_yaw.asin();
    let (pitch, roll) = if yaw.cos().abs() < GIMBAL_EPS {
        (r[(2, 1)].atan2(r[(1, 1)]), 0.0)
    } else {
        ((-r[(1, 2)]).atan2(r[(2, 2)]), (-r[(0, 1)]).atan2(r[(0, 0)]))
    };
    Euler::new(pitch.to_degrees(), yaw.to_degrees(), roll.to_degrees())
}
