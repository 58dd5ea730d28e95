//! Gaze-target classification from head pose and seat geometry.
//!
//! A participant's nose is located on the seat circle at azimuth `a` and
//! elevation `b`. Turning the face by `yaw` away from the camera sends the
//! gaze across the circle to the point at azimuth `a + 180° + 2·yaw`
//! (inscribed angle), which is what the focus vector encodes. The focus
//! vector is then read back as camera angles and split into regions: a
//! reading band at the bottom of the vertical field, and three horizontal
//! bands for the opposite, right and left neighbours.

use std::collections::HashMap;
use std::io::Write;
use std::path::Path;

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::angles::{signed_diff_deg, wrap_deg};
use crate::error::{Error, Result};
use crate::model::{ParticipantId, SeatingLayout, Session};
use crate::pose::PoseRecord;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum AttentionError {
    #[error("elevation {0}° must satisfy |b| < 90°")]
    Elevation(f64),
    #[error("gaze elevation difference {0}° reaches ±90°")]
    SteepGaze(f64),
    #[error("{0} is not seated in the layout")]
    UnknownObserver(ParticipantId),
}

/// Nose position of a seated participant in the camera frame.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LocationVector {
    pub v: Vector3<f64>,
    pub seat_angle_deg: f64,
    pub elevation_deg: f64,
    pub radius_m: f64,
}

/// `v = r·(cos a, sin a, tan b)`.
pub fn location_vector(
    a_deg: f64,
    b_deg: f64,
    r: f64,
) -> std::result::Result<LocationVector, AttentionError> {
    if !(b_deg.abs() < 90.0) {
        return Err(AttentionError::Elevation(b_deg));
    }
    let (a, b) = (a_deg.to_radians(), b_deg.to_radians());
    Ok(LocationVector {
        v: Vector3::new(r * a.cos(), r * a.sin(), r * b.tan()),
        seat_angle_deg: a_deg,
        elevation_deg: b_deg,
        radius_m: r,
    })
}

/// Where a face points, expressed from the camera.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FocusVector {
    pub v_f: Vector3<f64>,
    /// Azimuth of `v_f` in `[-180, 180)`.
    pub horiz_angle_deg: f64,
    /// Elevation of `v_f` above the camera's horizontal plane.
    pub vert_angle_deg: f64,
}

/// Focus vector of a face at `loc` with the given pitch and yaw:
///
/// ```text
/// lx = r + r·cos(2·yaw)        ly = r·sin(2·yaw)
/// h  = √(lx² + ly²)            lz = h·tan(b − pitch)
/// v_f = (−v_x·cos 2yaw + v_y·sin 2yaw,
///        −v_x·sin 2yaw − v_y·cos 2yaw,
///        −v_z + lz)
/// ```
pub fn focus_vector(
    loc: &LocationVector,
    pitch_deg: f64,
    yaw_deg: f64,
) -> std::result::Result<FocusVector, AttentionError> {
    let tilt = loc.elevation_deg - pitch_deg;
    if !(tilt.abs() < 90.0) {
        return Err(AttentionError::SteepGaze(tilt));
    }
    let r = loc.radius_m;
    let (s2, c2) = (2.0 * yaw_deg.to_radians()).sin_cos();
    let lx = r + r * c2;
    let ly = r * s2;
    let h = lx.hypot(ly);
    let lz = h * tilt.to_radians().tan();
    let v = &loc.v;
    let v_f = Vector3::new(-v.x * c2 + v.y * s2, -v.x * s2 - v.y * c2, -v.z + lz);
    Ok(FocusVector {
        v_f,
        horiz_angle_deg: wrap_deg(v_f.y.atan2(v_f.x).to_degrees()),
        vert_angle_deg: v_f.z.atan2(v_f.x.hypot(v_f.y)).to_degrees(),
    })
}

/// Zero point of the reading threshold.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GateReference {
    /// Angles count upward from the bottom edge of the vertical field.
    FieldBottom,
    /// Angles count from the camera's horizontal plane.
    Horizon,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ReadingGate {
    pub threshold_deg: f64,
    pub vertical_fov_deg: f64,
    pub reference: GateReference,
}

impl Default for ReadingGate {
    fn default() -> Self {
        ReadingGate {
            threshold_deg: 15.0,
            vertical_fov_deg: 45.0,
            reference: GateReference::FieldBottom,
        }
    }
}

impl ReadingGate {
    /// Vertical angle in the gate's own reference.
    pub fn measured(&self, vert_angle_deg: f64) -> f64 {
        match self.reference {
            GateReference::FieldBottom => vert_angle_deg + self.vertical_fov_deg / 2.0,
            GateReference::Horizon => vert_angle_deg,
        }
    }

    /// Reading iff the measured angle is strictly below the threshold.
    pub fn is_reading(&self, vert_angle_deg: f64) -> bool {
        self.measured(vert_angle_deg) < self.threshold_deg
    }
}

/// Convenience wrapper with the default 15°-of-45° gate; `vert_angle_deg` is
/// already measured from the bottom of the field.
pub fn reading_gate(vert_from_bottom_deg: f64) -> bool {
    vert_from_bottom_deg < ReadingGate::default().threshold_deg
}

/// The three neighbours of an observer and the horizontal band edges.
///
/// Going counter-clockwise from the observer the seats are right (C),
/// opposite (B), left (D). `u_r` and `u_l` are the distances from B's
/// azimuth to the C-side and D-side edges.
#[derive(Debug, Clone, PartialEq)]
pub struct NeighborBands {
    pub observer: ParticipantId,
    pub opposite: ParticipantId,
    pub right: ParticipantId,
    pub left: ParticipantId,
    pub opposite_az_deg: f64,
    pub u_r: f64,
    pub u_l: f64,
}

impl NeighborBands {
    /// Angular distance from `az` to the nearest band edge.
    pub fn edge_margin_deg(&self, az: f64) -> f64 {
        let x = signed_diff_deg(az, self.opposite_az_deg);
        (x + self.u_r).abs().min((x - self.u_l).abs())
    }

    /// Half-open regions; an azimuth exactly on an edge goes to B.
    pub fn classify_azimuth(&self, az: f64) -> &ParticipantId {
        let x = signed_diff_deg(az, self.opposite_az_deg);
        if x < -self.u_r {
            &self.right
        } else if x > self.u_l {
            &self.left
        } else {
            &self.opposite
        }
    }
}

pub fn horizontal_thresholds(
    observer: &ParticipantId,
    layout: &SeatingLayout,
    fraction: f64,
) -> std::result::Result<NeighborBands, AttentionError> {
    let own = layout
        .seat(observer)
        .ok_or_else(|| AttentionError::UnknownObserver(observer.clone()))?;
    let mut others: Vec<(f64, &ParticipantId, f64)> = layout
        .seats
        .iter()
        .filter(|s| &s.id != observer)
        .map(|s| ((s.angle_deg - own.angle_deg).rem_euclid(360.0), &s.id, s.angle_deg))
        .collect();
    others.sort_by(|a, b| a.0.total_cmp(&b.0));
    let [(off_c, c, _), (off_b, b, az_b), (off_d, d, _)] = others[..] else {
        unreachable!("validated layouts have four seats")
    };
    Ok(NeighborBands {
        observer: observer.clone(),
        opposite: b.clone(),
        right: c.clone(),
        left: d.clone(),
        opposite_az_deg: az_b,
        u_r: fraction * (off_b - off_c),
        u_l: fraction * (off_d - off_b),
    })
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum AttentionTarget {
    Participant(ParticipantId),
    Reading,
    /// No reliable pose for this frame.
    Unfocused,
}

impl AttentionTarget {
    pub fn label(&self) -> &str {
        match self {
            AttentionTarget::Participant(p) => p.as_str(),
            AttentionTarget::Reading => "READING",
            AttentionTarget::Unfocused => "UNFOCUSED",
        }
    }

    pub fn parse(s: &str) -> Self {
        match s {
            "READING" => AttentionTarget::Reading,
            "UNFOCUSED" => AttentionTarget::Unfocused,
            id => AttentionTarget::Participant(ParticipantId::new(id)),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AttentionRecord {
    pub frame_idx: u64,
    pub observer: ParticipantId,
    pub target: AttentionTarget,
}

pub fn classify_frame(
    focus: &FocusVector,
    bands: &NeighborBands,
    gate: &ReadingGate,
) -> AttentionTarget {
    if gate.is_reading(focus.vert_angle_deg) {
        return AttentionTarget::Reading;
    }
    AttentionTarget::Participant(bands.classify_azimuth(focus.horiz_angle_deg).clone())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AttentionConfig {
    pub gate: ReadingGate,
    pub horizontal_fraction: f64,
}

impl Default for AttentionConfig {
    fn default() -> Self {
        AttentionConfig {
            gate: ReadingGate::default(),
            horizontal_fraction: 0.25,
        }
    }
}

/// Per-session classifier with thresholds computed once.
#[derive(Debug, Clone)]
pub struct AttentionClassifier {
    observers: Vec<(LocationVector, NeighborBands)>,
    gate: ReadingGate,
}

impl AttentionClassifier {
    pub fn new(session: &Session, cfg: &AttentionConfig) -> Result<Self> {
        if !(cfg.horizontal_fraction > 0.0 && cfg.horizontal_fraction < 0.5) {
            return Err(Error::invalid(
                "attention config",
                format!("horizontal fraction {} outside (0, 0.5)", cfg.horizontal_fraction),
            ));
        }
        let layout = &session.layout;
        let mut gate = cfg.gate;
        gate.vertical_fov_deg = session.camera.vertical_fov_deg;
        let observers = layout
            .seats
            .iter()
            .map(|s| {
                let loc = location_vector(s.angle_deg, layout.seat_elevation_deg, layout.radius_m)?;
                let bands = horizontal_thresholds(&s.id, layout, cfg.horizontal_fraction)?;
                Ok((loc, bands))
            })
            .collect::<std::result::Result<Vec<_>, AttentionError>>()
            .map_err(|e| Error::invalid("layout", e.to_string()))?;
        Ok(AttentionClassifier { observers, gate })
    }

    pub fn bands(&self, observer: usize) -> &NeighborBands {
        &self.observers[observer].1
    }

    /// Classifies seat `observer` (seat order) for one frame.
    pub fn classify(&self, observer: usize, pitch_deg: f64, yaw_deg: f64) -> AttentionTarget {
        let (loc, bands) = &self.observers[observer];
        match focus_vector(loc, pitch_deg, yaw_deg) {
            Ok(f) => classify_frame(&f, bands, &self.gate),
            Err(_) => AttentionTarget::Unfocused,
        }
    }
}

/// One record per (frame, observer) for every frame of the session, frames
/// outer and seats inner. Frames without a reliable pose are `Unfocused`.
pub fn classify_session(
    session: &Session,
    poses: &[PoseRecord],
    cfg: &AttentionConfig,
) -> Result<Vec<AttentionRecord>> {
    let classifier = AttentionClassifier::new(session, cfg)?;
    let layout = &session.layout;
    let mut by_key: HashMap<(u64, usize), (f64, f64)> = HashMap::with_capacity(poses.len());
    let mut frames = session.frame_count();
    for rec in poses {
        let seat = layout.index_of(&rec.participant).ok_or_else(|| {
            Error::invalid("poses", format!("participant {} not in layout", rec.participant))
        })?;
        frames = frames.max(rec.frame_idx + 1);
        if let Some(p) = rec.pose {
            by_key.insert((rec.frame_idx, seat), (p.pitch_deg, p.yaw_deg));
        }
    }
    let mut out = Vec::with_capacity(frames as usize * layout.seats.len());
    for frame_idx in 0..frames {
        for (seat, s) in layout.seats.iter().enumerate() {
            let target = match by_key.get(&(frame_idx, seat)) {
                Some(&(pitch, yaw)) => classifier.classify(seat, pitch, yaw),
                None => AttentionTarget::Unfocused,
            };
            out.push(AttentionRecord {
                frame_idx,
                observer: s.id.clone(),
                target,
            });
        }
    }
    Ok(out)
}

const ATTENTION_HEADER: &str = "frame_idx,observer,target";

pub fn write_attention_dump(
    records: &[AttentionRecord],
    out: &mut impl Write,
) -> std::io::Result<()> {
    writeln!(out, "{ATTENTION_HEADER}")?;
    for r in records {
        writeln!(out, "{},{},{}", r.frame_idx, r.observer, r.target.label())?;
    }
    Ok(())
}

pub fn read_attention_dump(path: &Path) -> Result<Vec<AttentionRecord>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, h)) if h.trim() == ATTENTION_HEADER => {}
        _ => {
            return Err(Error::schema(path, 1, format!("expected header `{ATTENTION_HEADER}`")))
        }
    }
    let mut out = Vec::new();
    for (i, line) in lines {
        if line.trim().is_empty() {
            continue;
        }
        let cols: Vec<&str> = line.split(',').collect();
        if cols.len() != 3 {
            return Err(Error::schema(path, i + 1, "expected 3 columns"));
        }
        out.push(AttentionRecord {
            frame_idx: cols[0]
                .parse()
                .map_err(|_| Error::schema(path, i + 1, "bad frame_idx"))?,
            observer: ParticipantId::new(cols[1]),
            target: AttentionTarget::parse(cols[2]),
        });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{Role, Seat};
    use approx::assert_abs_diff_eq;

    fn layout(angles: [f64; 4]) -> SeatingLayout {
        SeatingLayout {
            radius_m: 1.0,
            seat_elevation_deg: 12.0,
            seats: angles
                .iter()
                .enumerate()
                .map(|(i, &a)| Seat {
                    id: ParticipantId::new(format!("P{}", i + 1)),
                    role: Role::Backend,
                    angle_deg: a,
                })
                .collect(),
        }
    }

    #[test]
    fn location_vector_examples() {
        let v = location_vector(0.0, 0.0, 1.0).unwrap().v;
        assert_eq!(v, Vector3::new(1.0, 0.0, 0.0));
        let v = location_vector(90.0, 0.0, 2.0).unwrap().v;
        assert_abs_diff_eq!(v, Vector3::new(0.0, 2.0, 0.0), epsilon = 1e-15);
        // independent scalar evaluation: √2/2 and 1/√3
        let v = location_vector(45.0, 30.0, 1.0).unwrap().v;
        assert_abs_diff_eq!(v.x, 0.5f64.sqrt(), epsilon = 1e-12);
        assert_abs_diff_eq!(v.y, 0.5f64.sqrt(), epsilon = 1e-12);
        assert_abs_diff_eq!(v.z, 1.0 / 3f64.sqrt(), epsilon = 1e-12);
        assert!(location_vector(0.0, 90.0, 1.0).is_err());
        assert!(location_vector(0.0, -95.0, 1.0).is_err());
    }

    #[test]
    fn location_vector_invariants() {
        for &(a, b, r) in &[(-170.0, 5.0, 1.3), (33.0, -20.0, 0.7), (120.0, 45.0, 2.0)] {
            let loc = location_vector(a, b, r).unwrap();
            assert_abs_diff_eq!(loc.v.y.atan2(loc.v.x).to_degrees(), a, epsilon = 1e-9);
            assert_abs_diff_eq!(loc.v.x.hypot(loc.v.y), r, epsilon = 1e-9);
        }
    }

    #[test]
    fn head_on_gaze_crosses_the_table() {
        let r = 1.3;
        let loc = location_vector(0.0, 0.0, r).unwrap();
        let f = focus_vector(&loc, 0.0, 0.0).unwrap();
        assert_abs_diff_eq!(f.v_f, Vector3::new(-r, 0.0, 0.0), epsilon = 1e-12);
        assert_abs_diff_eq!(f.horiz_angle_deg, -180.0, epsilon = 1e-9);
    }

    #[test]
    fn quarter_turn_folds_back() {
        let r = 1.0;
        let loc = location_vector(0.0, 0.0, r).unwrap();
        let f = focus_vector(&loc, 0.0, 90.0).unwrap();
        // cos 180° = -1, sin 180° = 0 → v_f = (r, 0, lz) with lz = h·tan 0
        assert_abs_diff_eq!(f.v_f, Vector3::new(r, 0.0, 0.0), epsilon = 1e-12);
        assert_abs_diff_eq!(f.horiz_angle_deg, 0.0, epsilon = 1e-9);
    }

    #[test]
    fn level_gaze_when_pitch_equals_elevation() {
        let loc = location_vector(30.0, 12.0, 1.0).unwrap();
        let f = focus_vector(&loc, 12.0, 17.0).unwrap();
        assert_abs_diff_eq!(f.v_f.z, -loc.v.z, epsilon = 1e-12);
        assert!(matches!(focus_vector(&loc, -78.0, 0.0), Err(AttentionError::SteepGaze(_))));
    }

    #[test]
    fn reading_gate_boundary() {
        assert!(reading_gate(14.9));
        assert!(!reading_gate(15.0));
        assert!(!reading_gate(44.0));
        let gate = ReadingGate::default();
        // 15° above the field bottom is 7.5° below the horizon
        assert!(gate.is_reading(-7.6));
        assert!(!gate.is_reading(-7.5));
        let horizon = ReadingGate { reference: GateReference::Horizon, ..gate };
        assert!(horizon.is_reading(14.0));
    }

    #[test]
    fn symmetric_square_bands() {
        let l = layout([0.0, 90.0, -180.0, -90.0]);
        let bands = horizontal_thresholds(&"P1".into(), &l, 0.25).unwrap();
        assert_eq!(bands.opposite.as_str(), "P3");
        assert_eq!(bands.right.as_str(), "P2");
        assert_eq!(bands.left.as_str(), "P4");
        assert_abs_diff_eq!(bands.u_r, 22.5);
        assert_abs_diff_eq!(bands.u_l, 22.5);
    }

    #[test]
    fn zero_width_band_puts_edge_on_b() {
        let bands = NeighborBands {
            observer: "A".into(),
            opposite: "B".into(),
            right: "C".into(),
            left: "D".into(),
            opposite_az_deg: 180.0 - 360.0,
            u_r: 0.0,
            u_l: 30.0,
        };
        assert_eq!(bands.classify_azimuth(-180.0).as_str(), "B");
        assert_eq!(bands.classify_azimuth(179.999).as_str(), "C");
    }

    #[test]
    fn asymmetric_bands_per_observer() {
        // oracle: 25% of the angular gaps, written out by hand
        let l = layout([10.0, 80.0, -170.0, -100.0]);
        let b1 = horizontal_thresholds(&"P1".into(), &l, 0.25).unwrap();
        assert_eq!((b1.right.as_str(), b1.opposite.as_str(), b1.left.as_str()), ("P2", "P3", "P4"));
        assert_abs_diff_eq!(b1.u_r, 0.25 * 110.0);
        assert_abs_diff_eq!(b1.u_l, 0.25 * 70.0);
        let b2 = horizontal_thresholds(&"P2".into(), &l, 0.25).unwrap();
        assert_eq!((b2.right.as_str(), b2.opposite.as_str(), b2.left.as_str()), ("P3", "P4", "P1"));
        assert_abs_diff_eq!(b2.u_r, 0.25 * 70.0);
        assert_abs_diff_eq!(b2.u_l, 0.25 * 110.0);
    }

    #[test]
    fn classify_frame_regions() {
        let l = layout([0.0, 90.0, -180.0, -90.0]);
        let bands = horizontal_thresholds(&"P1".into(), &l, 0.25).unwrap();
        let gate = ReadingGate::default();
        let focus = |az: f64, el: f64| FocusVector { v_f: Vector3::zeros(), horiz_angle_deg: az, vert_angle_deg: el };
        let target = |az, el| classify_frame(&focus(az, el), &bands, &gate);
        assert_eq!(target(-180.0, 5.0), AttentionTarget::Participant("P3".into()));
        assert_eq!(target(90.0, 5.0), AttentionTarget::Participant("P2".into()));
        assert_eq!(target(-90.0, 5.0), AttentionTarget::Participant("P4".into()));
        // exactly on the C-side edge resolves to B
        assert_eq!(target(180.0 - 22.5, 5.0), AttentionTarget::Participant("P3".into()));
        // vertical angle 10° above the field bottom is reading, whatever the azimuth
        for az in [-180.0, -90.0, 0.0, 90.0] {
            assert_eq!(target(az, 10.0 - 22.5), AttentionTarget::Reading);
        }
    }

    #[test]
    fn dump_labels() {
        let recs = vec![
            AttentionRecord { frame_idx: 0, observer: "P1".into(), target: AttentionTarget::Reading },
            AttentionRecord { frame_idx: 0, observer: "P2".into(), target: AttentionTarget::Participant("P1".into()) },
            AttentionRecord { frame_idx: 1, observer: "P1".into(), target: AttentionTarget::Unfocused },
        ];
        let mut buf = Vec::new();
        write_attention_dump(&recs, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text, "frame_idx,observer,target\n0,P1,READING\n0,P2,P1\n1,P1,UNFOCUSED\n");
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("a.csv");
        std::fs::write(&p, text).unwrap();
        assert_eq!(read_attention_dump(&p).unwrap(), recs);
    }
}
