//! Small helpers for working in degrees on a circle.

/// Wraps an angle in degrees into `[-180, 180)`.
pub fn wrap_deg(angle: f64) -> f64 {
    let a = (angle + 180.0).rem_euclid(360.0) - 180.0;
    // rem_euclid can round up to exactly 360 for tiny negative inputs
    if a >= 180.0 {
        a - 360.0
    } else {
        a
    }
}

/// Minimal signed difference `to - from` in degrees, in `[-180, 180)`.
pub fn signed_diff_deg(to: f64, from: f64) -> f64 {
    wrap_deg(to - from)
}
