//! Synthetic sessions with exact ground truth.
//!
//! Every head is placed at its seat and oriented with a look-at construction
//! in world coordinates: the face's forward axis points from the observer's
//! nose at the aim point, which lies on the seat circle at the target's
//! height. The six model landmarks are then projected through the panoramic
//! camera and optionally jittered. Nothing here uses the focus-vector
//! formulas, so the attention classifier can be checked against it.
//!
//! Speech and gaze scripts are generated on a 0.1 s grid.

use std::path::Path;

use nalgebra::{Matrix3, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::angles::wrap_deg;
use crate::attention::{horizontal_thresholds, AttentionTarget, NeighborBands};
use crate::bundle::{normalize_segments, write_bundle, SessionBundle};
use crate::error::{Error, Result};
use crate::model::{
    BBox, CameraModel, Condition, LandmarkFrame, ParticipantId, Role, Seat, SeatingLayout,
    Session, SpeechSegment, PARTICIPANTS,
};
use crate::pose::FaceModel3D;
use crate::rotation::rot_z;

/// Grid step of generated scripts, in tenths of a second.
const TICKS_PER_S: f64 = 10.0;

/// Largest head turn, relative to the camera's line of sight, that keeps the
/// face usable for landmark fitting.
pub const MAX_VIEW_YAW_DEG: f64 = 70.0;

/// One scripted gaze interval `[start_s, end_s)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GazeInterval {
    pub observer: ParticipantId,
    /// A participant id or `READING`.
    pub target: String,
    pub start_s: f64,
    pub end_s: f64,
    #[serde(default)]
    pub roll_deg: f64,
    /// Shift of the aim point along the seat circle away from the target's
    /// head, counter-clockwise positive.
    #[serde(default)]
    pub aim_offset_deg: f64,
    /// Depression below horizontal while reading.
    #[serde(default = "default_depression")]
    pub depression_deg: f64,
    /// Sideways turn while reading, relative to facing the table centre.
    #[serde(default)]
    pub reading_yaw_deg: f64,
}

fn default_depression() -> f64 {
    45.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    pub seed: u64,
    #[serde(default = "default_group")]
    pub group_id: u32,
    #[serde(default = "default_condition")]
    pub condition: Condition,
    #[serde(default = "default_fps")]
    pub fps: f64,
    #[serde(default = "default_duration")]
    pub duration_s: f64,
    /// Standard deviation of the isotropic landmark jitter, pixels.
    #[serde(default)]
    pub noise_px: f64,
    #[serde(default = "default_camera")]
    pub camera: CameraModel,
    /// Generated from the seed when absent.
    #[serde(default)]
    pub layout: Option<SeatingLayout>,
    /// Generated from the seed when absent.
    #[serde(default)]
    pub speech: Option<Vec<SpeechSegment>>,
    /// Generated from the seed when absent. Frames not covered by a scripted
    /// interval look at the opposite seat.
    #[serde(default)]
    pub gaze: Option<Vec<GazeInterval>>,
}

fn default_group() -> u32 {
    1
}
fn default_condition() -> Condition {
    Condition::NoCoordination
}
fn default_fps() -> f64 {
    30.0
}
fn default_duration() -> f64 {
    60.0
}
fn default_camera() -> CameraModel {
    CameraModel::new(1920, 480)
}

impl Scenario {
    /// A fully generated scenario; the layout and scripts are drawn from the
    /// seed when the session is synthesized.
    pub fn random(seed: u64, duration_s: f64, noise_px: f64) -> Self {
        Scenario {
            seed,
            group_id: default_group(),
            condition: default_condition(),
            fps: default_fps(),
            duration_s,
            noise_px,
            camera: default_camera(),
            layout: None,
            speech: None,
            gaze: None,
        }
    }

    pub fn from_toml(path: &Path, text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| {
            let line = e
                .span()
                .map(|s| text[..s.start].lines().count().max(1))
                .unwrap_or(0);
            Error::schema(path, line, e.message().to_string())
        })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(path, &text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("scenario serializes")
    }
}

/// Ground truth for one observer at one frame.
#[derive(Debug, Clone, PartialEq)]
pub struct TruthFrame {
    pub frame_idx: u64,
    pub observer: usize,
    pub target: AttentionTarget,
    /// Distance of the ray-cast aim azimuth from the nearest band edge for
    /// participant looks; the depression angle for reading.
    pub margin_deg: f64,
    /// Orientation in the local view centred on the observer.
    pub pitch_deg: f64,
    pub yaw_deg: f64,
    pub roll_deg: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GroundTruth {
    pub fps: f64,
    pub participants: Vec<ParticipantId>,
    /// Frames outer, seats inner.
    pub frames: Vec<TruthFrame>,
    /// `pair_frames[o][t]`: frames where `o` looks at `t` while `t` speaks,
    /// counted by testing every frame against every segment.
    pub pair_frames: Vec<Vec<u64>>,
}

impl GroundTruth {
    pub fn pair_seconds(&self, observer: usize, target: usize) -> f64 {
        self.pair_frames[observer][target] as f64 / self.fps
    }
}

#[derive(Debug, Clone)]
pub struct Synthetic {
    pub bundle: SessionBundle,
    pub truth: GroundTruth,
}

impl Synthetic {
    pub fn write(&self, dir: &Path) -> Result<()> {
        write_bundle(&self.bundle, dir).map(|_| ())
    }
}

fn ticks_to_s(t: u32) -> f64 {
    t as f64 / TICKS_PER_S
}

fn random_layout(rng: &mut impl Rng) -> SeatingLayout {
    let gaps = loop {
        let g: Vec<f64> = (0..3).map(|_| rng.random_range(72.0..108.0)).collect();
        let last = 360.0 - g.iter().sum::<f64>();
        if (72.0..108.0).contains(&last) {
            break [g[0], g[1], g[2], last];
        }
    };
    let base: f64 = rng.random_range(-180.0..180.0);
    let roles = [Role::Backend, Role::Frontend, Role::UiUx, Role::DataPersistence];
    let mut angle = base;
    let mut seats = Vec::with_capacity(PARTICIPANTS);
    for (i, gap) in gaps.iter().enumerate() {
        seats.push(Seat {
            id: ParticipantId::new(format!("P{}", i + 1)),
            role: roles[i],
            angle_deg: wrap_deg(angle),
        });
        angle += gap;
    }
    SeatingLayout {
        radius_m: rng.random_range(1.0..1.4),
        seat_elevation_deg: rng.random_range(10.0..14.0),
        seats,
    }
}

fn random_speech(rng: &mut impl Rng, layout: &SeatingLayout, duration_s: f64) -> Vec<SpeechSegment> {
    let end = (duration_s * TICKS_PER_S).floor() as u32;
    let mut out = Vec::new();
    for id in layout.ids() {
        let mut t: u32 = rng.random_range(0..40);
        while t < end {
            let len = rng.random_range(5..60).min(end - t);
            if len > 0 {
                out.push(SpeechSegment::new(id.clone(), ticks_to_s(t), ticks_to_s(t + len)));
            }
            t += len + rng.random_range(10..90);
        }
    }
    out
}

/// Half-width of the band a target's own azimuth sits in, seen from `bands`.
fn aim_room(bands: &NeighborBands, target_az: f64) -> f64 {
    bands.edge_margin_deg(target_az)
}

fn random_gaze(
    rng: &mut impl Rng,
    layout: &SeatingLayout,
    speech: &[SpeechSegment],
    duration_s: f64,
    fraction: f64,
) -> Vec<GazeInterval> {
    let end = (duration_s * TICKS_PER_S).ceil() as u32;
    let mut out = Vec::new();
    for seat in &layout.seats {
        let bands = horizontal_thresholds(&seat.id, layout, fraction).expect("seat is in layout");
        let others: Vec<&Seat> = layout.seats.iter().filter(|s| s.id != seat.id).collect();
        let mut t = 0u32;
        while t < end {
            let len = rng.random_range(5..40).min(end - t);
            let now = ticks_to_s(t);
            let speakers: Vec<&ParticipantId> = speech
                .iter()
                .filter(|s| s.contains(now) && s.speaker != seat.id)
                .map(|s| &s.speaker)
                .collect();
            let roll_deg = rng.random_range(-10.0..10.0);
            let mut iv = GazeInterval {
                observer: seat.id.clone(),
                target: String::new(),
                start_s: now,
                end_s: ticks_to_s(t + len),
                roll_deg,
                aim_offset_deg: 0.0,
                depression_deg: default_depression(),
                reading_yaw_deg: 0.0,
            };
            if rng.random_bool(0.15) {
                iv.target = AttentionTarget::Reading.label().to_string();
                iv.depression_deg = rng.random_range(35.0..55.0);
                iv.reading_yaw_deg = rng.random_range(-15.0..15.0);
            } else {
                let target = if !speakers.is_empty() && rng.random_bool(0.7) {
                    speakers[rng.random_range(0..speakers.len())].clone()
                } else {
                    others[rng.random_range(0..others.len())].id.clone()
                };
                let az = layout.seat(&target).expect("target seated").angle_deg;
                let room = (aim_room(&bands, az) - 1.0).clamp(0.0, 8.0);
                iv.aim_offset_deg = rng.random_range(-room..=room);
                iv.target = target.to_string();
            }
            out.push(iv);
            t += len;
        }
    }
    out
}

/// World rotation whose columns are the face axes: `z` along `forward`,
/// `x = up × forward`, `y = forward × x`, then rolled about `forward`.
fn look_along(forward: &Vector3<f64>, roll_deg: f64) -> Matrix3<f64> {
    let z = forward.normalize();
    let x = Vector3::z().cross(&z).normalize();
    let y = z.cross(&x);
    Matrix3::from_columns(&[x, y, z]) * rot_z(roll_deg.to_radians())
}

/// World-to-view rotation of the perspective view aimed horizontally at
/// azimuth `az_deg` (rows: right, up, toward the viewer).
fn world_to_view(az_deg: f64) -> Matrix3<f64> {
    let (s, c) = az_deg.to_radians().sin_cos();
    Matrix3::new(s, -c, 0.0, 0.0, 0.0, 1.0, -c, -s, 0.0)
}

fn head_position(layout: &SeatingLayout, az_deg: f64) -> Vector3<f64> {
    let r = layout.radius_m * 1000.0;
    let (s, c) = az_deg.to_radians().sin_cos();
    Vector3::new(r * c, r * s, r * layout.seat_elevation_deg.to_radians().tan())
}

/// Euler angles (intrinsic x-y-z, degrees) of a rotation.
fn euler_of(r: &Matrix3<f64>) -> (f64, f64, f64) {
    let e = crate::rotation::matrix_to_euler(r);
    (e.pitch_deg, e.yaw_deg, e.roll_deg)
}

struct Look {
    target: AttentionTarget,
    forward: Vector3<f64>,
    roll_deg: f64,
    margin_deg: f64,
}

fn resolve_look(
    iv: Option<&GazeInterval>,
    seat: &Seat,
    layout: &SeatingLayout,
    bands: &NeighborBands,
) -> Result<Look> {
    let own = head_position(layout, seat.angle_deg);
    let default_target = bands.opposite.to_string();
    let (target, roll, offset) = match iv {
        Some(iv) => (iv.target.as_str(), iv.roll_deg, iv.aim_offset_deg),
        None => (default_target.as_str(), 0.0, 0.0),
    };
    match AttentionTarget::parse(target) {
        AttentionTarget::Reading => {
            let iv = iv.expect("reading is always scripted");
            let inward = (seat.angle_deg + 180.0 + iv.reading_yaw_deg).to_radians();
            let dep = iv.depression_deg.to_radians();
            let forward = Vector3::new(
                dep.cos() * inward.cos(),
                dep.cos() * inward.sin(),
                -dep.sin(),
            );
            Ok(Look {
                target: AttentionTarget::Reading,
                forward,
                roll_deg: roll,
                margin_deg: iv.depression_deg,
            })
        }
        AttentionTarget::Participant(id) => {
            let t = layout.seat(&id).ok_or_else(|| {
                Error::invalid("scenario", format!("gaze target {id} is not seated"))
            })?;
            if t.id == seat.id {
                return Err(Error::invalid("scenario", format!("{id} cannot look at itself")));
            }
            let aim_az = t.angle_deg + offset;
            if bands.classify_azimuth(aim_az) != &t.id {
                return Err(Error::invalid(
                    "scenario",
                    format!(
                        "aim offset {offset}° moves {}'s gaze out of {id}'s region",
                        seat.id
                    ),
                ));
            }
            Ok(Look {
                target: AttentionTarget::Participant(id),
                forward: head_position(layout, aim_az) - own,
                roll_deg: roll,
                margin_deg: bands.edge_margin_deg(aim_az),
            })
        }
        AttentionTarget::Unfocused => unreachable!("parse never yields Unfocused"),
    }
}

fn validate_script(s: &Scenario, layout: &SeatingLayout, gaze: &[GazeInterval]) -> Result<()> {
    for iv in gaze {
        if layout.seat(&iv.observer).is_none() {
            return Err(Error::invalid("scenario", format!("observer {} is not seated", iv.observer)));
        }
        if !(iv.start_s >= 0.0 && iv.end_s > iv.start_s && iv.end_s <= s.duration_s + 1e-9) {
            return Err(Error::invalid(
                "scenario",
                format!("gaze interval [{}, {}) of {} outside the session", iv.start_s, iv.end_s, iv.observer),
            ));
        }
    }
    Ok(())
}

/// Builds the bundle and its ground truth. Deterministic in the scenario.
pub fn synthesize(s: &Scenario) -> Result<Synthetic> {
    synthesize_with(s, 0.25)
}

/// As [`synthesize`], with the horizontal band fraction the margins and
/// generated aim offsets refer to.
pub fn synthesize_with(s: &Scenario, fraction: f64) -> Result<Synthetic> {
    let mut rng = ChaCha8Rng::seed_from_u64(s.seed);
    let layout = match &s.layout {
        Some(l) => l.clone(),
        None => random_layout(&mut rng),
    };
    let session = Session {
        group_id: s.group_id,
        condition: s.condition,
        fps: s.fps,
        duration_s: s.duration_s,
        camera: s.camera.clone(),
        layout: layout.clone(),
    };
    session.validate()?;
    if !(s.noise_px >= 0.0 && s.noise_px.is_finite()) {
        return Err(Error::invalid("scenario", format!("noise {}", s.noise_px)));
    }
    let speech = match &s.speech {
        Some(sp) => sp.clone(),
        None => random_speech(&mut rng, &layout, s.duration_s),
    };
    let mut warnings = Vec::new();
    let segments = normalize_segments(speech, &layout, Path::new("scenario"), &mut warnings)?;
    let gaze = match &s.gaze {
        Some(g) => g.clone(),
        None => random_gaze(&mut rng, &layout, &segments, s.duration_s, fraction),
    };
    validate_script(s, &layout, &gaze)?;

    let bands: Vec<NeighborBands> = layout
        .seats
        .iter()
        .map(|seat| horizontal_thresholds(&seat.id, &layout, fraction))
        .collect::<std::result::Result<_, _>>()
        .map_err(|e| Error::invalid("layout", e.to_string()))?;
    let model = FaceModel3D::bundled();
    let jitter = Normal::new(0.0, s.noise_px).map_err(|e| Error::invalid("scenario", e.to_string()))?;
    let pano = s.camera.panorama_width();
    let height = s.camera.image_height_px as f64;

    let n_frames = session.frame_count();
    let mut frames = Vec::with_capacity(n_frames as usize * PARTICIPANTS);
    let mut truth = Vec::with_capacity(frames.capacity());
    let mut pair_frames = vec![vec![0u64; PARTICIPANTS]; PARTICIPANTS];
    for frame_idx in 0..n_frames {
        let t = session.frame_time(frame_idx);
        for (oi, seat) in layout.seats.iter().enumerate() {
            let iv = gaze
                .iter()
                .find(|iv| iv.observer == seat.id && t >= iv.start_s && t < iv.end_s);
            let look = resolve_look(iv, seat, &layout, &bands[oi])?;
            let r_world = look_along(&look.forward, look.roll_deg);
            let r_view = world_to_view(seat.angle_deg) * r_world;
            let (pitch, yaw, roll) = euler_of(&r_view);
            if yaw.abs() > MAX_VIEW_YAW_DEG {
                return Err(Error::invalid(
                    "scenario",
                    format!(
                        "{} at t={t:.3}s turns {yaw:.1}° away from the camera (limit {MAX_VIEW_YAW_DEG}°)",
                        seat.id
                    ),
                ));
            }
            let nose = head_position(&layout, seat.angle_deg);
            let nose_px = s.camera.project_world(&nose);
            let mut landmarks = [[0.0; 2]; 6];
            for (dst, p) in landmarks.iter_mut().zip(&model.points) {
                let px = s.camera.project_world(&(nose + r_world * p));
                let mut dx = px[0] - nose_px[0];
                dx -= pano * (dx / pano).round();
                let mut q = [nose_px[0] + dx, px[1]];
                if s.noise_px > 0.0 {
                    q[0] += jitter.sample(&mut rng);
                    q[1] += jitter.sample(&mut rng);
                }
                if !(0.0..=height).contains(&q[1]) {
                    return Err(Error::invalid(
                        "scenario",
                        format!("{}'s face leaves the vertical field of view", seat.id),
                    ));
                }
                q[0] = q[0].rem_euclid(pano);
                *dst = q;
            }
            let (face_bbox, person_bbox) = boxes(&landmarks, nose_px[0], pano, height);
            frames.push(LandmarkFrame {
                frame_idx,
                timestamp_s: t,
                participant: seat.id.clone(),
                person_bbox,
                face_bbox,
                landmarks,
            });
            if let AttentionTarget::Participant(id) = &look.target {
                let ti = layout.index_of(id).expect("validated target");
                if segments.iter().any(|seg| seg.speaker == *id && seg.contains(t)) {
                    pair_frames[oi][ti] += 1;
                }
            }
            truth.push(TruthFrame {
                frame_idx,
                observer: oi,
                target: look.target,
                margin_deg: look.margin_deg,
                pitch_deg: pitch,
                yaw_deg: yaw,
                roll_deg: roll,
            });
        }
    }
    Ok(Synthetic {
        bundle: SessionBundle {
            session,
            frames,
            segments,
            warnings,
        },
        truth: GroundTruth {
            fps: s.fps,
            participants: layout.ids().cloned().collect(),
            frames: truth,
            pair_frames,
        },
    })
}

/// Face box around the landmarks with a margin, and a person box extending
/// it sideways and down to the bottom of the image.
fn boxes(landmarks: &[[f64; 2]; 6], nose_x: f64, pano: f64, height: f64) -> (BBox, BBox) {
    let rel = |x: f64| {
        let mut d = x - nose_x;
        d -= pano * (d / pano).round();
        d
    };
    let xs: Vec<f64> = landmarks.iter().map(|p| rel(p[0])).collect();
    let ys: Vec<f64> = landmarks.iter().map(|p| p[1]).collect();
    let (x0, x1) = (xs.iter().cloned().fold(f64::MAX, f64::min), xs.iter().cloned().fold(f64::MIN, f64::max));
    let (y0, y1) = (ys.iter().cloned().fold(f64::MAX, f64::min), ys.iter().cloned().fold(f64::MIN, f64::max));
    let pad = 0.25 * (x1 - x0).max(y1 - y0) + 4.0;
    let fy = (y0 - pad).max(0.0);
    let face = BBox {
        x: (nose_x + x0 - pad).rem_euclid(pano),
        y: fy,
        w: x1 - x0 + 2.0 * pad,
        h: (y1 + pad).min(height) - fy,
    };
    let side = face.w;
    let py = (face.y - 0.2 * face.h).max(0.0);
    let person = BBox {
        x: (face.x - side).rem_euclid(pano),
        y: py,
        w: face.w + 2.0 * side,
        h: height - py,
    };
    (face, person)
}
