//! Head orientation from six facial landmarks.
//!
//! Each face is fitted in a local perspective view aimed horizontally at the
//! face's nose azimuth (see [`CameraModel::to_local_view`]). The view frame is
//! x right, y up, z toward the viewer, so in the resulting Euler angles a
//! positive pitch tilts the face down and a positive yaw turns it toward
//! increasing camera azimuth.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::Path;

use nalgebra::{Matrix3, SMatrix, SVector, Vector3};
use rayon::prelude::*;
use serde::Deserialize;
use thiserror::Error;

use crate::error::{Error, Result};
use crate::model::{CameraModel, LandmarkFrame, ParticipantId, Pinhole, LANDMARK_IDS};
use crate::rotation::{
    euler_to_matrix, matrix_to_euler, matrix_to_rotation_vec, rotation_vec_to_matrix, Euler,
};

const BUNDLED_FACE_MODEL: &str = include_str!("../assets/face_model.toml");

#[derive(Debug, Clone, PartialEq, Error)]
pub enum PoseError {
    #[error("degenerate configuration: {0}")]
    Degenerate(String),
    #[error("did not converge after {iterations} iterations (rmse {rmse_px:.3} px)")]
    NonConvergence { iterations: usize, rmse_px: f64 },
    #[error("reprojection rmse {rmse_px:.3} px above gate {gate_px} px")]
    RmseGate { rmse_px: f64, gate_px: f64 },
    #[error("landmark outside the usable field of view")]
    OutOfView,
}

/// Six 3D points in face-local coordinates, ordered like [`LANDMARK_IDS`].
#[derive(Debug, Clone, PartialEq)]
pub struct FaceModel3D {
    pub name: String,
    pub version: u32,
    pub points: [Vector3<f64>; 6],
}

#[derive(Deserialize)]
struct FaceModelFile {
    name: String,
    version: u32,
    landmark: Vec<FaceModelPoint>,
}

#[derive(Deserialize)]
struct FaceModelPoint {
    id: u32,
    position: [f64; 3],
}

impl FaceModel3D {
    pub fn from_toml(text: &str) -> Result<Self> {
        let file: FaceModelFile = toml::from_str(text)
            .map_err(|e| Error::invalid("face model", e.to_string()))?;
        let mut points = [Vector3::zeros(); 6];
        let mut seen = [false; 6];
        for p in &file.landmark {
            let slot = LANDMARK_IDS
                .iter()
                .position(|&id| id == p.id)
                .ok_or_else(|| Error::invalid("face model", format!("unknown landmark {}", p.id)))?;
            if seen[slot] {
                return Err(Error::invalid("face model", format!("landmark {} twice", p.id)));
            }
            seen[slot] = true;
            points[slot] = Vector3::from(p.position);
        }
        if seen.iter().any(|s| !s) {
            return Err(Error::invalid("face model", "all six landmarks are required"));
        }
        let model = FaceModel3D {
            name: file.name,
            version: file.version,
            points,
        };
        model.validate()?;
        Ok(model)
    }

    pub fn bundled() -> Self {
        Self::from_toml(BUNDLED_FACE_MODEL).expect("bundled face model is valid")
    }

    pub fn validate(&self) -> Result<()> {
        if self.points[0].norm() > 1e-12 {
            return Err(Error::invalid("face model", "nose tip must be the origin"));
        }
        let mirrored = |a: usize, b: usize| {
            let (p, q) = (self.points[a], self.points[b]);
            (p.x + q.x).abs() < 1e-9 && (p.y - q.y).abs() < 1e-9 && (p.z - q.z).abs() < 1e-9
        };
        // slots: 0:1 1:9 2:57 3:130 4:287 5:359
        if !(mirrored(3, 5) && mirrored(2, 4) && self.points[1].x.abs() < 1e-9) {
            return Err(Error::invalid("face model", "model must be mirror-symmetric in x"));
        }
        Ok(())
    }
}

impl Default for FaceModel3D {
    fn default() -> Self {
        Self::bundled()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PnpOptions {
    pub max_iterations: usize,
    /// Converged once a Levenberg-Marquardt step is shorter than this.
    pub step_tolerance: f64,
    /// Solutions with a larger reprojection RMSE are rejected.
    pub rmse_gate_px: f64,
}

impl Default for PnpOptions {
    fn default() -> Self {
        PnpOptions {
            max_iterations: 100,
            step_tolerance: 1e-10,
            rmse_gate_px: 10.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PnpSolution {
    pub rotation_vec: Vector3<f64>,
    pub translation_vec: Vector3<f64>,
    pub reprojection_rmse_px: f64,
    /// RMSE of the starting pose of the first descent.
    pub initial_rmse_px: f64,
    pub iterations: usize,
}

/// Face orientation relative to the local view.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HeadPose {
    pub pitch_deg: f64,
    pub yaw_deg: f64,
    pub roll_deg: f64,
    pub rotation_vec: Vector3<f64>,
    pub translation_vec: Vector3<f64>,
    pub reprojection_rmse_px: f64,
}

impl HeadPose {
    pub fn from_solution(sol: &PnpSolution) -> Self {
        let e = matrix_to_euler(&rotation_vec_to_matrix(&sol.rotation_vec));
        HeadPose {
            pitch_deg: e.pitch_deg,
            yaw_deg: e.yaw_deg,
            roll_deg: e.roll_deg,
            rotation_vec: sol.rotation_vec,
            translation_vec: sol.translation_vec,
            reprojection_rmse_px: sol.reprojection_rmse_px,
        }
    }

    pub fn euler(&self) -> Euler {
        Euler::new(self.pitch_deg, self.yaw_deg, self.roll_deg)
    }
}

type Params = SVector<f64, 6>;
type Residuals = SVector<f64, 12>;

fn project_all(
    params: &Params,
    model: &FaceModel3D,
    pinhole: &Pinhole,
) -> Option<[[f64; 2]; 6]> {
    let r = rotation_vec_to_matrix(&Vector3::new(params[0], params[1], params[2]));
    let t = Vector3::new(params[3], params[4], params[5]);
    let mut out = [[0.0; 2]; 6];
    for (slot, p) in model.points.iter().enumerate() {
        out[slot] = pinhole.project(&(r * p + t))?;
    }
    Some(out)
}

/// Forward projection of the model at a pose; the oracle side of PnP tests.
pub fn project_model(
    rotation: &Matrix3<f64>,
    translation: &Vector3<f64>,
    model: &FaceModel3D,
    pinhole: &Pinhole,
) -> Option<[[f64; 2]; 6]> {
    let rvec = matrix_to_rotation_vec(rotation);
    let params = Params::from_column_slice(&[
        rvec.x,
        rvec.y,
        rvec.z,
        translation.x,
        translation.y,
        translation.z,
    ]);
    project_all(&params, model, pinhole)
}

fn residuals(
    params: &Params,
    observed: &[[f64; 2]; 6],
    model: &FaceModel3D,
    pinhole: &Pinhole,
) -> Option<Residuals> {
    let projected = project_all(params, model, pinhole)?;
    let mut r = Residuals::zeros();
    for i in 0..6 {
        r[2 * i] = projected[i][0] - observed[i][0];
        r[2 * i + 1] = projected[i][1] - observed[i][1];
    }
    Some(r)
}

fn rmse(cost: f64) -> f64 {
    (cost / 6.0).sqrt()
}

fn check_non_degenerate(points: &[[f64; 2]; 6]) -> std::result::Result<(), PoseError> {
    if points.iter().flatten().any(|v| !v.is_finite()) {
        return Err(PoseError::Degenerate("non-finite landmark".into()));
    }
    let n = points.len() as f64;
    let mx = points.iter().map(|p| p[0]).sum::<f64>() / n;
    let my = points.iter().map(|p| p[1]).sum::<f64>() / n;
    let (mut sxx, mut syy, mut sxy) = (0.0, 0.0, 0.0);
    for p in points {
        let (dx, dy) = (p[0] - mx, p[1] - my);
        sxx += dx * dx;
        syy += dy * dy;
        sxy += dx * dy;
    }
    let tr = sxx + syy;
    let det = sxx * syy - sxy * sxy;
    let disc = ((tr * tr / 4.0) - det).max(0.0).sqrt();
    let (lmax, lmin) = (tr / 2.0 + disc, tr / 2.0 - disc);
    if lmax <= 1e-12 || lmin <= 1e-10 * lmax {
        return Err(PoseError::Degenerate("landmarks are collinear".into()));
    }
    Ok(())
}

/// Starting pose: face looking straight at the camera, placed on the ray
/// through the nose at the depth that matches the landmark spread.
fn initial_params(observed: &[[f64; 2]; 6], model: &FaceModel3D, pinhole: &Pinhole) -> Params {
    let spread = |pts: &mut dyn Iterator<Item = [f64; 2]>| {
        let pts: Vec<[f64; 2]> = pts.collect();
        let n = pts.len() as f64;
        let mx = pts.iter().map(|p| p[0]).sum::<f64>() / n;
        let my = pts.iter().map(|p| p[1]).sum::<f64>() / n;
        (pts.iter()
            .map(|p| (p[0] - mx).powi(2) + (p[1] - my).powi(2))
            .sum::<f64>()
            / n)
            .sqrt()
    };
    let model_spread = spread(&mut model.points.iter().map(|p| [p.x, p.y]));
    let image_spread = spread(&mut observed.iter().copied()).max(1e-9);
    let depth = pinhole.focal_px * model_spread / image_spread;
    let nose = observed[0];
    Params::from_column_slice(&[
        0.0,
        0.0,
        0.0,
        -(nose[0] - pinhole.cx) * depth / pinhole.focal_px,
        -(nose[1] - pinhole.cy) * depth / pinhole.focal_px,
        -depth,
    ])
}

struct Descent {
    params: Params,
    cost: f64,
    initial_cost: f64,
    iterations: usize,
    converged: bool,
}

fn levenberg_marquardt(
    start: Params,
    observed: &[[f64; 2]; 6],
    model: &FaceModel3D,
    pinhole: &Pinhole,
    opts: &PnpOptions,
) -> Descent {
    let eval = |p: &Params| residuals(p, observed, model, pinhole);
    let mut params = start;
    let mut r = match eval(&params) {
        Some(r) => r,
        None => {
            return Descent {
                params,
                cost: f64::INFINITY,
                initial_cost: f64::INFINITY,
                iterations: 0,
                converged: false,
            }
        }
    };
    let mut cost = r.norm_squared();
    let initial_cost = cost;
    let mut lambda = 1e-3;
    let mut converged = false;
    let mut iterations = 0;

    while iterations < opts.max_iterations {
        iterations += 1;
        // central-difference Jacobian
        let mut jac = SMatrix::<f64, 12, 6>::zeros();
        let mut ok = true;
        for k in 0..6 {
            let h = 1e-6 * params[k].abs().max(1.0);
            let mut plus = params;
            let mut minus = params;
            plus[k] += h;
            minus[k] -= h;
            match (eval(&plus), eval(&minus)) {
                (Some(rp), Some(rm)) => jac.set_column(k, &((rp - rm) / (2.0 * h))),
                _ => {
                    ok = false;
                    break;
                }
            }
        }
        if !ok {
            break;
        }
        let jtj = jac.transpose() * jac;
        let grad = jac.transpose() * r;
        if grad.amax() < 1e-14 * (1.0 + cost) {
            converged = true;
            break;
        }

        let mut accepted = None;
        while lambda < 1e16 {
            let mut damped = jtj;
            for k in 0..6 {
                damped[(k, k)] += lambda * jtj[(k, k)].max(1e-12);
            }
            let Some(step) = damped.cholesky().map(|c| c.solve(&(-grad))) else {
                lambda *= 10.0;
                continue;
            };
            let candidate = params + step;
            match eval(&candidate) {
                Some(rc) if rc.norm_squared() < cost => {
                    accepted = Some((candidate, rc, step.norm()));
                    break;
                }
                _ => lambda *= 10.0,
            }
        }
        let Some((candidate, rc, step_norm)) = accepted else {
            // no damping gives a decrease: we are at a minimum
            converged = true;
            break;
        };
        params = candidate;
        r = rc;
        cost = r.norm_squared();
        lambda = (lambda / 10.0).max(1e-12);
        if step_norm < opts.step_tolerance {
            converged = true;
            break;
        }
    }

    Descent {
        params,
        cost,
        initial_cost,
        iterations,
        converged,
    }
}

/// Perspective-n-Point for the six face landmarks by damped Gauss-Newton.
///
/// The first descent starts from a frontal face. If it fails the RMSE gate,
/// a few tilted starts are tried and the best fit wins.
pub fn solve_pnp(
    image_points: &[[f64; 2]; 6],
    model: &FaceModel3D,
    pinhole: &Pinhole,
    opts: &PnpOptions,
) -> std::result::Result<PnpSolution, PoseError> {
    check_non_degenerate(image_points)?;
    let start = initial_params(image_points, model, pinhole);
    let mut best = levenberg_marquardt(start, image_points, model, pinhole, opts);
    let initial_cost = best.initial_cost;

    if !best.converged || rmse(best.cost) > opts.rmse_gate_px {
        for (pitch, yaw) in [(0.0, 35.0), (0.0, -35.0), (25.0, 0.0), (-25.0, 0.0)] {
            let rvec = matrix_to_rotation_vec(&euler_to_matrix(Euler::new(pitch, yaw, 0.0)));
            let mut seed = start;
            seed.fixed_rows_mut::<3>(0).copy_from(&rvec);
            let d = levenberg_marquardt(seed, image_points, model, pinhole, opts);
            if d.cost < best.cost {
                best = d;
            }
        }
    }

    let rmse_px = rmse(best.cost);
    if !best.converged {
        return Err(PoseError::NonConvergence {
            iterations: best.iterations,
            rmse_px,
        });
    }
    if !(rmse_px <= opts.rmse_gate_px) {
        return Err(PoseError::RmseGate {
            rmse_px,
            gate_px: opts.rmse_gate_px,
        });
    }
    Ok(PnpSolution {
        rotation_vec: Vector3::new(best.params[0], best.params[1], best.params[2]),
        translation_vec: Vector3::new(best.params[3], best.params[4], best.params[5]),
        reprojection_rmse_px: rmse_px,
        initial_rmse_px: rmse(initial_cost),
        iterations: best.iterations,
    })
}

/// Pose of one tracked face: landmarks are re-projected into the local view
/// centred on the nose azimuth, then fitted.
pub fn estimate_pose(
    frame: &LandmarkFrame,
    camera: &CameraModel,
    model: &FaceModel3D,
    opts: &PnpOptions,
) -> std::result::Result<HeadPose, PoseError> {
    let (nose_az, _) = camera.pixel_to_angles(frame.nose());
    let mut local = [[0.0; 2]; 6];
    for (dst, px) in local.iter_mut().zip(&frame.landmarks) {
        *dst = camera.to_local_view(*px, nose_az).ok_or(PoseError::OutOfView)?;
    }
    let sol = solve_pnp(&local, model, &camera.pinhole(), opts)?;
    Ok(HeadPose::from_solution(&sol))
}

/// The per-frame angles kept between stages.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PoseAngles {
    pub pitch_deg: f64,
    pub yaw_deg: f64,
    pub roll_deg: f64,
    pub rmse_px: f64,
}

impl From<&HeadPose> for PoseAngles {
    fn from(p: &HeadPose) -> Self {
        PoseAngles {
            pitch_deg: p.pitch_deg,
            yaw_deg: p.yaw_deg,
            roll_deg: p.roll_deg,
            rmse_px: p.reprojection_rmse_px,
        }
    }
}

/// One row of the pose dump. `pose` is `None` when the frame is unreliable.
#[derive(Debug, Clone, PartialEq)]
pub struct PoseRecord {
    pub frame_idx: u64,
    pub participant: ParticipantId,
    pub pose: Option<PoseAngles>,
}

pub fn estimate_poses(
    frames: &[LandmarkFrame],
    camera: &CameraModel,
    model: &FaceModel3D,
    opts: &PnpOptions,
) -> Vec<PoseRecord> {
    frames
        .par_iter()
        .map(|f| {
            let pose = match estimate_pose(f, camera, model, opts) {
                Ok(p) => Some(PoseAngles::from(&p)),
                Err(e) => {
                    log::debug!("frame {} {}: {e}", f.frame_idx, f.participant);
                    None
                }
            };
            PoseRecord {
                frame_idx: f.frame_idx,
                participant: f.participant.clone(),
                pose,
            }
        })
        .collect()
}

/// Centered moving average of the Euler angles over `window` frames, per
/// participant. Unreliable frames are neither smoothed nor used. A window of
/// 0 or 1 returns the input unchanged.
pub fn smooth_poses(records: &[PoseRecord], window: usize) -> Vec<PoseRecord> {
    if window <= 1 {
        return records.to_vec();
    }
    let half = (window / 2) as u64;
    let mut by_participant: BTreeMap<&ParticipantId, Vec<(u64, PoseAngles)>> = BTreeMap::new();
    for r in records {
        if let Some(p) = r.pose {
            by_participant.entry(&r.participant).or_default().push((r.frame_idx, p));
        }
    }
    for track in by_participant.values_mut() {
        track.sort_by_key(|(f, _)| *f);
    }
    records
        .iter()
        .map(|r| {
            let Some(own) = r.pose else {
                return r.clone();
            };
            let track = &by_participant[&r.participant];
            let lo = track.partition_point(|(f, _)| *f + half < r.frame_idx);
            let hi = track.partition_point(|(f, _)| *f <= r.frame_idx + half);
            let n = (hi - lo) as f64;
            let mean = |g: fn(&PoseAngles) -> f64| track[lo..hi].iter().map(|(_, p)| g(p)).sum::<f64>() / n;
            PoseRecord {
                pose: Some(PoseAngles {
                    pitch_deg: mean(|p| p.pitch_deg),
                    yaw_deg: mean(|p| p.yaw_deg),
                    roll_deg: mean(|p| p.roll_deg),
                    rmse_px: own.rmse_px,
                }),
                ..r.clone()
            }
        })
        .collect()
}

const POSE_HEADER: &str = "frame_idx,participant,pitch_deg,yaw_deg,roll_deg,rmse_px,status";

pub fn write_pose_dump(records: &[PoseRecord], out: &mut impl Write) -> std::io::Result<()> {
    writeln!(out, "{POSE_HEADER}")?;
    for r in records {
        match &r.pose {
            Some(p) => writeln!(
                out,
                "{},{},{},{},{},{},OK",
                r.frame_idx, r.participant, p.pitch_deg, p.yaw_deg, p.roll_deg, p.rmse_px
            )?,
            None => writeln!(out, "{},{},,,,,UNRELIABLE", r.frame_idx, r.participant)?,
        }
    }
    Ok(())
}

pub fn read_pose_dump(path: &Path) -> Result<Vec<PoseRecord>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, h)) if h.trim() == POSE_HEADER => {}
        _ => return Err(Error::schema(path, 1, format!("expected header `{POSE_HEADER}`"))),
    }
    let mut out = Vec::new();
    for (i, line) in lines {
        if line.trim().is_empty() {
            continue;
        }
        let bad = |msg: &str| Error::schema(path, i + 1, msg.to_string());
        let cols: Vec<&str> = line.split(',').collect();
        if cols.len() != 7 {
            return Err(bad("expected 7 columns"));
        }
        let frame_idx = cols[0].parse().map_err(|_| bad("bad frame_idx"))?;
        let participant = ParticipantId::new(cols[1]);
        let pose = match cols[6] {
            "OK" => {
                let num = |s: &str| s.parse::<f64>().map_err(|_| bad("bad number"));
                Some(PoseAngles {
                    pitch_deg: num(cols[2])?,
                    yaw_deg: num(cols[3])?,
                    roll_deg: num(cols[4])?,
                    rmse_px: num(cols[5])?,
                })
            }
            "UNRELIABLE" => None,
            other => return Err(bad(&format!("unknown status {other}"))),
        };
        out.push(PoseRecord {
            frame_idx,
            participant,
            pose,
        });
    }
    Ok(out)
}
