//! Domain types shared by every pipeline stage.

use std::collections::HashSet;
use std::fmt;

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use crate::angles::{signed_diff_deg, wrap_deg};
use crate::error::{Error, Result};

/// Number of participants at the table.
pub const PARTICIPANTS: usize = 4;

/// Longest allowed session, in seconds.
pub const MAX_SESSION_S: f64 = 600.0;

/// Half-width of the no-man's-land around a classification edge, in degrees.
/// Seats closer than twice this would leave an empty gaze region.
pub const BOUNDARY_BAND_DEG: f64 = 5.0;

/// Landmark indices of the upstream 468-point face mesh, in file order.
pub const LANDMARK_IDS: [u32; 6] = [1, 9, 57, 130, 287, 359];

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ParticipantId(String);

impl ParticipantId {
    pub fn new(id: impl Into<String>) -> Self {
        ParticipantId(id.into())
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for ParticipantId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl From<&str> for ParticipantId {
    fn from(s: &str) -> Self {
        ParticipantId::new(s)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Role {
    Backend,
    Frontend,
    UiUx,
    DataPersistence,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Participant {
    pub id: ParticipantId,
    pub role: Role,
}

/// Experimental condition: ad hoc discussion or planning poker.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Condition {
    #[serde(rename = "A")]
    NoCoordination,
    #[serde(rename = "B")]
    PlanningPoker,
}

impl Condition {
    pub fn label(self) -> &'static str {
        match self {
            Condition::NoCoordination => "A",
            Condition::PlanningPoker => "B",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s.trim() {
            "A" | "a" => Some(Condition::NoCoordination),
            "B" | "b" => Some(Condition::PlanningPoker),
            _ => None,
        }
    }
}

impl fmt::Display for Condition {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

/// Pinhole intrinsics of the local perspective view used for pose fitting.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Pinhole {
    pub focal_px: f64,
    pub cx: f64,
    pub cy: f64,
}

impl Pinhole {
    /// Projects a point given in the view frame (x right, y up, z toward the
    /// viewer). Points in front of the camera have `z < 0`.
    pub fn project(&self, p: &Vector3<f64>) -> Option<[f64; 2]> {
        if p.z >= -1e-12 {
            return None;
        }
        Some([
            self.cx + self.focal_px * p.x / p.z,
            self.cy + self.focal_px * p.y / p.z,
        ])
    }
}

/// Panoramic camera made of two 180° hemispheres stitched side by side.
///
/// Stitched pixel `x` in `[0, 2·width)` maps linearly to azimuth: hemisphere 0
/// covers `[-90°, 90°)` and hemisphere 1 covers `[90°, 270°)`. Azimuth is
/// measured counter-clockwise seen from above, with `z` pointing up. Pixel
/// `y` maps linearly to elevation across the vertical field of view, top row
/// at `+vfov/2`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CameraModel {
    #[serde(default = "default_vfov")]
    pub vertical_fov_deg: f64,
    #[serde(default = "default_hfov")]
    pub horizontal_fov_deg: f64,
    pub image_width_px: u32,
    pub image_height_px: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub focal_length_px: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub principal_point: Option<[f64; 2]>,
}

fn default_vfov() -> f64 {
    45.0
}

fn default_hfov() -> f64 {
    360.0
}

impl CameraModel {
    pub fn new(image_width_px: u32, image_height_px: u32) -> Self {
        CameraModel {
            vertical_fov_deg: default_vfov(),
            horizontal_fov_deg: default_hfov(),
            image_width_px,
            image_height_px,
            focal_length_px: None,
            principal_point: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.vertical_fov_deg > 0.0 && self.vertical_fov_deg <= 180.0) {
            return Err(Error::invalid(
                "camera",
                format!("vertical_fov_deg {} outside (0, 180]", self.vertical_fov_deg),
            ));
        }
        if self.horizontal_fov_deg != 360.0 {
            return Err(Error::invalid(
                "camera",
                format!(
                    "horizontal_fov_deg must be 360, got {}",
                    self.horizontal_fov_deg
                ),
            ));
        }
        if self.image_width_px == 0 || self.image_height_px == 0 {
            return Err(Error::invalid("camera", "image size must be nonzero"));
        }
        if let Some(f) = self.focal_length_px {
            if !(f.is_finite() && f > 0.0) {
                return Err(Error::invalid("camera", format!("focal length {f}")));
            }
        }
        Ok(())
    }

    /// Width of the stitched panorama in pixels.
    pub fn panorama_width(&self) -> f64 {
        2.0 * self.image_width_px as f64
    }

    /// Intrinsics of the local perspective view. The focal length defaults to
    /// `(width / 2) / tan(90° / 2)` for a 180° hemisphere.
    pub fn pinhole(&self) -> Pinhole {
        let w = self.image_width_px as f64;
        let h = self.image_height_px as f64;
        let focal_px = self
            .focal_length_px
            .unwrap_or_else(|| (w / 2.0) / 45f64.to_radians().tan());
        let [cx, cy] = self.principal_point.unwrap_or([w / 2.0, h / 2.0]);
        Pinhole { focal_px, cx, cy }
    }

    /// Stitched pixel to `(azimuth, elevation)` in degrees.
    pub fn pixel_to_angles(&self, px: [f64; 2]) -> (f64, f64) {
        let az = wrap_deg(-90.0 + 180.0 * px[0] / self.image_width_px as f64);
        let el = self.vertical_fov_deg / 2.0
            - self.vertical_fov_deg * px[1] / self.image_height_px as f64;
        (az, el)
    }

    /// `(azimuth, elevation)` in degrees to stitched pixel, `x` in `[0, 2·width)`.
    pub fn angles_to_pixel(&self, az_deg: f64, el_deg: f64) -> [f64; 2] {
        let x = (az_deg + 90.0).rem_euclid(360.0) * self.image_width_px as f64 / 180.0;
        let y = (self.vertical_fov_deg / 2.0 - el_deg) * self.image_height_px as f64
            / self.vertical_fov_deg;
        [x, y]
    }

    /// Projects a point in the camera frame (meters or any unit) to a stitched
    /// pixel.
    pub fn project_world(&self, p: &Vector3<f64>) -> [f64; 2] {
        let az = p.y.atan2(p.x).to_degrees();
        let el = p.z.atan2(p.x.hypot(p.y)).to_degrees();
        self.angles_to_pixel(az, el)
    }

    /// Maps a stitched pixel into the perspective view whose optical axis is
    /// horizontal at azimuth `center_az_deg`. Returns `None` for rays more than
    /// 90° away from the axis.
    pub fn to_local_view(&self, px: [f64; 2], center_az_deg: f64) -> Option<[f64; 2]> {
        let (az, el) = self.pixel_to_angles(px);
        let d = signed_diff_deg(az, center_az_deg).to_radians();
        if d.cos() <= 1e-9 {
            return None;
        }
        let pin = self.pinhole();
        Some([
            pin.cx + pin.focal_px * d.tan(),
            pin.cy - pin.focal_px * el.to_radians().tan() / d.cos(),
        ])
    }

    /// Does the elevation lie inside the vertical field of view?
    pub fn sees_elevation(&self, el_deg: f64) -> bool {
        el_deg.abs() <= self.vertical_fov_deg / 2.0
    }
}

/// Axis-aligned pixel rectangle in stitched panorama coordinates. `x` may wrap
/// past the panorama seam.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BBox {
    pub x: f64,
    pub y: f64,
    pub w: f64,
    pub h: f64,
}

impl BBox {
    pub fn contains_point(&self, p: [f64; 2], pano_width: f64) -> bool {
        let dx = (p[0] - self.x).rem_euclid(pano_width);
        dx <= self.w + 1e-9 && p[1] >= self.y - 1e-9 && p[1] <= self.y + self.h + 1e-9
    }

    pub fn contains_box(&self, other: &BBox, pano_width: f64) -> bool {
        let dx = (other.x - self.x).rem_euclid(pano_width);
        dx + other.w <= self.w + 1e-9
            && other.y >= self.y - 1e-9
            && other.y + other.h <= self.y + self.h + 1e-9
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Seat {
    pub id: ParticipantId,
    pub role: Role,
    /// Azimuth of the participant's nose in the camera frame.
    pub angle_deg: f64,
}

/// Where everybody sits. All heads share one radius and one elevation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeatingLayout {
    pub radius_m: f64,
    pub seat_elevation_deg: f64,
    pub seats: Vec<Seat>,
}

impl SeatingLayout {
    pub fn validate(&self) -> Result<()> {
        if self.seats.len() != PARTICIPANTS {
            return Err(Error::ParticipantCount(self.seats.len()));
        }
        let mut ids = HashSet::new();
        for seat in &self.seats {
            if !ids.insert(&seat.id) {
                return Err(Error::invalid(
                    "layout",
                    format!("duplicate participant id {}", seat.id),
                ));
            }
            if !(-180.0..180.0).contains(&seat.angle_deg) {
                return Err(Error::invalid(
                    "layout",
                    format!("seat angle {} of {} outside [-180, 180)", seat.angle_deg, seat.id),
                ));
            }
        }
        if !(self.radius_m.is_finite() && self.radius_m > 0.0) {
            return Err(Error::invalid("layout", format!("radius {}", self.radius_m)));
        }
        if !(self.seat_elevation_deg.abs() < 90.0) {
            return Err(Error::invalid(
                "layout",
                format!("seat elevation {} must be within (-90, 90)", self.seat_elevation_deg),
            ));
        }
        let min_sep = 2.0 * BOUNDARY_BAND_DEG;
        for (i, a) in self.seats.iter().enumerate() {
            for b in &self.seats[i + 1..] {
                let sep = signed_diff_deg(a.angle_deg, b.angle_deg).abs();
                if sep <= min_sep {
                    return Err(Error::invalid(
                        "layout",
                        format!(
                            "seats {} and {} are {sep:.3}° apart (minimum {min_sep}°)",
                            a.id, b.id
                        ),
                    ));
                }
            }
        }
        Ok(())
    }

    pub fn ids(&self) -> impl Iterator<Item = &ParticipantId> {
        self.seats.iter().map(|s| &s.id)
    }

    /// Position of `id` in seat order, which is also the row/column order of
    /// every 4×4 matrix.
    pub fn index_of(&self, id: &ParticipantId) -> Option<usize> {
        self.seats.iter().position(|s| &s.id == id)
    }

    pub fn seat(&self, id: &ParticipantId) -> Option<&Seat> {
        self.seats.iter().find(|s| &s.id == id)
    }
}

/// One participant's face at one video frame.
#[derive(Debug, Clone, PartialEq)]
pub struct LandmarkFrame {
    pub frame_idx: u64,
    pub timestamp_s: f64,
    pub participant: ParticipantId,
    pub person_bbox: BBox,
    pub face_bbox: BBox,
    /// Stitched pixel coordinates in [`LANDMARK_IDS`] order.
    pub landmarks: [[f64; 2]; 6],
}

impl LandmarkFrame {
    pub fn nose(&self) -> [f64; 2] {
        self.landmarks[0]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpeechSegment {
    pub speaker: ParticipantId,
    #[serde(rename = "start")]
    pub start_s: f64,
    #[serde(rename = "end")]
    pub end_s: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub text: Option<String>,
}

impl SpeechSegment {
    pub fn new(speaker: impl Into<ParticipantId>, start_s: f64, end_s: f64) -> Self {
        SpeechSegment {
            speaker: speaker.into(),
            start_s,
            end_s,
            text: None,
        }
    }

    pub fn duration_s(&self) -> f64 {
        self.end_s - self.start_s
    }

    /// Closed-open membership test.
    pub fn contains(&self, t: f64) -> bool {
        t >= self.start_s && t < self.end_s
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Session {
    pub group_id: u32,
    pub condition: Condition,
    /// Frame rate declared by the landmark file.
    #[serde(skip)]
    pub fps: f64,
    pub duration_s: f64,
    pub camera: CameraModel,
    pub layout: SeatingLayout,
}

impl Session {
    pub fn validate(&self) -> Result<()> {
        if !(self.duration_s > 0.0 && self.duration_s <= MAX_SESSION_S) {
            return Err(Error::invalid(
                "session",
                format!("duration {} s outside (0, {MAX_SESSION_S}]", self.duration_s),
            ));
        }
        if !(self.fps.is_finite() && self.fps > 0.0) {
            return Err(Error::invalid("session", format!("fps {}", self.fps)));
        }
        self.camera.validate()?;
        self.layout.validate()
    }

    /// Number of video frames covering the session.
    pub fn frame_count(&self) -> u64 {
        (self.duration_s * self.fps).round() as u64
    }

    pub fn frame_time(&self, frame_idx: u64) -> f64 {
        frame_idx as f64 / self.fps
    }

    /// Directory-friendly key, e.g. `group3_B`.
    pub fn key(&self) -> String {
        session_key(self.group_id, self.condition)
    }
}

pub fn session_key(group_id: u32, condition: Condition) -> String {
    format!("group{group_id}_{}", condition.label())
}
