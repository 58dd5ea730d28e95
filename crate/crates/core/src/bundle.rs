//! Canonical session bundles on disk.
//!
//! A bundle is a directory with:
//!
//! - `session.toml`: group, condition, duration, camera and seating layout;
//! - `landmarks.csv`: a `#`-prefixed header line declaring `fps` and the
//!   hemisphere size, a column header, then one row per (frame, participant);
//! - `diarization.json`: `{"segments": [{"speaker", "start", "end", "text"?}]}`;
//! - `corrections.txt` (optional): manual fixes applied to the diarization.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{BBox, LandmarkFrame, ParticipantId, SeatingLayout, Session, SpeechSegment};

pub const SESSION_FILE: &str = "session.toml";
pub const LANDMARK_FILE: &str = "landmarks.csv";
pub const DIARIZATION_FILE: &str = "diarization.json";
pub const CORRECTIONS_FILE: &str = "corrections.txt";

const LANDMARK_MAGIC: &str = "mma-landmarks";
const LANDMARK_COLUMNS: &str = "frame_idx,timestamp_s,participant,\
person_x,person_y,person_w,person_h,face_x,face_y,face_w,face_h,\
x1,y1,x9,y9,x57,y57,x130,y130,x287,y287,x359,y359";

/// Allowed disagreement between a row's timestamp and `frame_idx / fps`.
const TIMESTAMP_SLACK_S: f64 = 1e-3;

/// A validated session with its streams.
#[derive(Debug, Clone, PartialEq)]
pub struct SessionBundle {
    pub session: Session,
    pub frames: Vec<LandmarkFrame>,
    pub segments: Vec<SpeechSegment>,
    /// Non-fatal findings, also sent to the log.
    pub warnings: Vec<String>,
}

#[derive(Debug, Default, Clone, Copy)]
pub struct LoadOptions {
    /// Replace the frame rate declared by the landmark file.
    pub fps_override: Option<f64>,
}

#[derive(Serialize, Deserialize)]
struct DiarizationDoc {
    segments: Vec<SpeechSegment>,
}

fn warn(warnings: &mut Vec<String>, msg: String) {
    log::warn!("{msg}");
    warnings.push(msg);
}

fn read(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

pub fn load_session(dir: &Path) -> Result<SessionBundle> {
    load_session_with(dir, &LoadOptions::default())
}

pub fn load_session_with(dir: &Path, opts: &LoadOptions) -> Result<SessionBundle> {
    let mut warnings = Vec::new();

    let session_path = dir.join(SESSION_FILE);
    let mut session: Session = toml::from_str(&read(&session_path)?).map_err(|e| {
        let line = e
            .span()
            .map(|s| 1 + read(&session_path).unwrap_or_default()[..s.start].matches('\n').count())
            .unwrap_or(0);
        Error::schema(&session_path, line, e.message().to_string())
    })?;

    let landmark_path = dir.join(LANDMARK_FILE);
    let (header, frames) = parse_landmarks(&landmark_path, &read(&landmark_path)?)?;
    if header.width != session.camera.image_width_px || header.height != session.camera.image_height_px {
        return Err(Error::schema(
            &landmark_path,
            1,
            format!(
                "hemisphere {}x{} disagrees with session camera {}x{}",
                header.width,
                header.height,
                session.camera.image_width_px,
                session.camera.image_height_px
            ),
        ));
    }
    session.fps = opts.fps_override.unwrap_or(header.fps);
    session.validate()?;

    let diar_path = dir.join(DIARIZATION_FILE);
    let doc: DiarizationDoc = serde_json::from_str(&read(&diar_path)?)
        .map_err(|e| Error::schema(&diar_path, e.line(), e.to_string()))?;
    let mut segments = normalize_segments(doc.segments, &session.layout, &diar_path, &mut warnings)?;

    let patch_path = dir.join(CORRECTIONS_FILE);
    if patch_path.exists() {
        let patch = parse_corrections(&patch_path, &read(&patch_path)?)?;
        segments = apply_corrections(&segments, &patch)?;
        segments = normalize_segments(segments, &session.layout, &patch_path, &mut warnings)?;
    }

    validate_frames(&session, &frames, &landmark_path, &mut warnings)?;

    Ok(SessionBundle {
        session,
        frames,
        segments,
        warnings,
    })
}

struct LandmarkHeader {
    fps: f64,
    width: u32,
    height: u32,
}

fn parse_landmarks(path: &Path, text: &str) -> Result<(LandmarkHeader, Vec<LandmarkFrame>)> {
    let mut lines = text.lines();
    let first = lines.next().unwrap_or_default();
    let fields: Vec<&str> = first.trim_start_matches('#').split_whitespace().collect();
    if !first.starts_with('#') || fields.first() != Some(&LANDMARK_MAGIC) {
        return Err(Error::schema(path, 1, format!("expected `# {LANDMARK_MAGIC} v1 ...` header")));
    }
    let mut kv = BTreeMap::new();
    for f in &fields[2..] {
        let (k, v) = f
            .split_once('=')
            .ok_or_else(|| Error::schema(path, 1, format!("malformed header field `{f}`")))?;
        kv.insert(k, v);
    }
    let get = |k: &str| {
        kv.get(k)
            .ok_or_else(|| Error::schema(path, 1, format!("header is missing `{k}`")))
    };
    let fps: f64 = get("fps")?.parse().map_err(|_| Error::schema(path, 1, "bad fps"))?;
    let width: u32 = get("hemisphere_width_px")?
        .parse()
        .map_err(|_| Error::schema(path, 1, "bad hemisphere_width_px"))?;
    let height: u32 = get("hemisphere_height_px")?
        .parse()
        .map_err(|_| Error::schema(path, 1, "bad hemisphere_height_px"))?;
    if lines.next().map(str::trim) != Some(LANDMARK_COLUMNS) {
        return Err(Error::schema(path, 2, "unexpected column header"));
    }

    let mut frames = Vec::new();
    for (i, line) in lines.enumerate() {
        let lineno = i + 3;
        if line.trim().is_empty() {
            continue;
        }
        let cols: Vec<&str> = line.split(',').map(str::trim).collect();
        if cols.len() != 23 {
            return Err(Error::schema(path, lineno, format!("expected 23 columns, found {}", cols.len())));
        }
        let num = |k: usize| {
            cols[k]
                .parse::<f64>()
                .ok()
                .filter(|v| v.is_finite())
                .ok_or_else(|| Error::schema(path, lineno, format!("column {} is not a number", k + 1)))
        };
        let bbox = |k: usize| -> Result<BBox> {
            Ok(BBox {
                x: num(k)?,
                y: num(k + 1)?,
                w: num(k + 2)?,
                h: num(k + 3)?,
            })
        };
        let mut landmarks = [[0.0; 2]; 6];
        for (j, lm) in landmarks.iter_mut().enumerate() {
            *lm = [num(11 + 2 * j)?, num(12 + 2 * j)?];
        }
        frames.push(LandmarkFrame {
            frame_idx: cols[0]
                .parse()
                .map_err(|_| Error::schema(path, lineno, "frame_idx is not an integer"))?,
            timestamp_s: num(1)?,
            participant: ParticipantId::new(cols[2]),
            person_bbox: bbox(3)?,
            face_bbox: bbox(7)?,
            landmarks,
        });
    }
    Ok((LandmarkHeader { fps, width, height }, frames))
}

fn validate_frames(
    session: &Session,
    frames: &[LandmarkFrame],
    path: &Path,
    warnings: &mut Vec<String>,
) -> Result<()> {
    let pano = session.camera.panorama_width();
    let mut seen = std::collections::HashSet::new();
    let mut off_clock = 0usize;
    for (i, f) in frames.iter().enumerate() {
        let line = i + 3;
        if session.layout.index_of(&f.participant).is_none() {
            return Err(Error::schema(path, line, format!("participant {} is not in the layout", f.participant)));
        }
        if !seen.insert((f.frame_idx, f.participant.clone())) {
            return Err(Error::schema(path, line, format!("duplicate row for frame {} / {}", f.frame_idx, f.participant)));
        }
        if let Some(lm) = f.landmarks.iter().find(|p| !f.face_bbox.contains_point(**p, pano)) {
            return Err(Error::schema(path, line, format!("landmark {lm:?} outside face box")));
        }
        if !f.person_bbox.contains_box(&f.face_bbox, pano) {
            return Err(Error::schema(path, line, "face box outside person box"));
        }
        if (f.timestamp_s - session.frame_time(f.frame_idx)).abs() > TIMESTAMP_SLACK_S {
            off_clock += 1;
        }
    }
    if off_clock > 0 {
        warn(
            warnings,
            format!(
                "{}: {off_clock} rows disagree with frame_idx / fps by more than {TIMESTAMP_SLACK_S} s",
                path.display()
            ),
        );
    }
    Ok(())
}

/// Checks every segment and merges overlapping segments of the same speaker.
/// Output is sorted by `(start, speaker)`.
pub fn normalize_segments(
    segments: Vec<SpeechSegment>,
    layout: &SeatingLayout,
    path: &Path,
    warnings: &mut Vec<String>,
) -> Result<Vec<SpeechSegment>> {
    let mut by_speaker: BTreeMap<ParticipantId, Vec<SpeechSegment>> = BTreeMap::new();
    for (i, s) in segments.into_iter().enumerate() {
        if layout.index_of(&s.speaker).is_none() {
            return Err(Error::schema(path, 0, format!("segment {i}: speaker {} is not in the layout", s.speaker)));
        }
        if !(s.start_s.is_finite() && s.end_s.is_finite() && s.start_s < s.end_s) {
            return Err(Error::schema(path, 0, format!("segment {i}: need start < end, got [{}, {}]", s.start_s, s.end_s)));
        }
        by_speaker.entry(s.speaker.clone()).or_default().push(s);
    }
    let mut out = Vec::new();
    for (speaker, mut segs) in by_speaker {
        segs.sort_by(|a, b| a.start_s.total_cmp(&b.start_s).then(a.end_s.total_cmp(&b.end_s)));
        let mut merged: Vec<SpeechSegment> = Vec::with_capacity(segs.len());
        for s in segs {
            match merged.last_mut() {
                Some(last) if s.start_s < last.end_s => {
                    warn(
                        warnings,
                        format!(
                            "{speaker}: merged overlapping segments [{}, {}] and [{}, {}]",
                            last.start_s, last.end_s, s.start_s, s.end_s
                        ),
                    );
                    last.end_s = last.end_s.max(s.end_s);
                    last.text = match (last.text.take(), s.text) {
                        (Some(a), Some(b)) => Some(format!("{a} {b}")),
                        (a, b) => a.or(b),
                    };
                }
                _ => merged.push(s),
            }
        }
        out.extend(merged);
    }
    out.sort_by(|a, b| a.start_s.total_cmp(&b.start_s).then_with(|| a.speaker.cmp(&b.speaker)));
    Ok(out)
}

/// One manual fix, keyed by the original `(speaker, start_s)`.
#[derive(Debug, Clone, PartialEq)]
pub enum Correction {
    Relabel {
        speaker: ParticipantId,
        start_s: f64,
        new_speaker: ParticipantId,
    },
    Delete {
        speaker: ParticipantId,
        start_s: f64,
    },
    Retime {
        speaker: ParticipantId,
        start_s: f64,
        new_start_s: f64,
        new_end_s: f64,
    },
}

impl Correction {
    fn key(&self) -> (&ParticipantId, f64) {
        match self {
            Correction::Relabel { speaker, start_s, .. }
            | Correction::Delete { speaker, start_s }
            | Correction::Retime { speaker, start_s, .. } => (speaker, *start_s),
        }
    }
}

/// Keys match when start times agree within this many seconds.
const KEY_TOLERANCE_S: f64 = 1e-6;

/// Parses `RELABEL|DELETE|RETIME, speaker, start_s, [new values]` lines.
/// Blank lines and `#` comments are skipped.
pub fn parse_corrections(path: &Path, text: &str) -> Result<Vec<Correction>> {
    let mut out = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or_default().trim();
        if line.is_empty() {
            continue;
        }
        let bad = |msg: String| Error::schema(path, i + 1, msg);
        let cols: Vec<&str> = line.split(',').map(str::trim).collect();
        let num = |k: usize| -> Result<f64> {
            cols.get(k)
                .and_then(|c| c.parse::<f64>().ok())
                .ok_or_else(|| bad(format!("field {} must be a number", k + 1)))
        };
        let arity = |n: usize| -> Result<()> {
            if cols.len() == n {
                Ok(())
            } else {
                Err(bad(format!("{} takes {} fields, found {}", cols[0], n, cols.len())))
            }
        };
        let speaker = ParticipantId::new(*cols.get(1).unwrap_or(&""));
        let c = match cols[0].to_ascii_uppercase().as_str() {
            "RELABEL" => {
                arity(4)?;
                Correction::Relabel {
                    speaker,
                    start_s: num(2)?,
                    new_speaker: ParticipantId::new(cols[3]),
                }
            }
            "DELETE" => {
                arity(3)?;
                Correction::Delete {
                    speaker,
                    start_s: num(2)?,
                }
            }
            "RETIME" => {
                arity(5)?;
                Correction::Retime {
                    speaker,
                    start_s: num(2)?,
                    new_start_s: num(3)?,
                    new_end_s: num(4)?,
                }
            }
            other => return Err(bad(format!("unknown correction `{other}`"))),
        };
        out.push(c);
    }
    Ok(out)
}

/// Applies a patch. Every entry must match exactly one segment, otherwise
/// nothing is applied and the unmatched keys are reported. The result still
/// needs [`normalize_segments`] if it is to be used downstream.
pub fn apply_corrections(segments: &[SpeechSegment], patch: &[Correction]) -> Result<Vec<SpeechSegment>> {
    let find = |c: &Correction| {
        let (speaker, start) = c.key();
        segments
            .iter()
            .position(|s| &s.speaker == speaker && (s.start_s - start).abs() <= KEY_TOLERANCE_S)
    };
    let unmatched: Vec<String> = patch
        .iter()
        .filter(|c| find(c).is_none())
        .map(|c| {
            let (speaker, start) = c.key();
            format!("({speaker}, {start})")
        })
        .collect();
    if !unmatched.is_empty() {
        return Err(Error::UnmatchedCorrections(unmatched));
    }
    let mut out: Vec<Option<SpeechSegment>> = segments.iter().cloned().map(Some).collect();
    for c in patch {
        let idx = find(c).expect("checked above");
        let Some(seg) = out[idx].as_mut() else {
            continue;
        };
        match c {
            Correction::Relabel { new_speaker, .. } => seg.speaker = new_speaker.clone(),
            Correction::Delete { .. } => out[idx] = None,
            Correction::Retime {
                new_start_s,
                new_end_s,
                ..
            } => {
                seg.start_s = *new_start_s;
                seg.end_s = *new_end_s;
            }
        }
    }
    Ok(out.into_iter().flatten().collect())
}

pub fn write_session_toml(session: &Session) -> String {
    toml::to_string(session).expect("session serializes")
}

pub fn write_landmarks(session: &Session, frames: &[LandmarkFrame]) -> String {
    let mut s = String::new();
    let _ = writeln!(
        s,
        "# {LANDMARK_MAGIC} v1 fps={} hemisphere_width_px={} hemisphere_height_px={}",
        session.fps, session.camera.image_width_px, session.camera.image_height_px
    );
    let _ = writeln!(s, "{LANDMARK_COLUMNS}");
    for f in frames {
        let _ = write!(s, "{},{},{}", f.frame_idx, f.timestamp_s, f.participant);
        for b in [&f.person_bbox, &f.face_bbox] {
            let _ = write!(s, ",{},{},{},{}", b.x, b.y, b.w, b.h);
        }
        for p in &f.landmarks {
            let _ = write!(s, ",{},{}", p[0], p[1]);
        }
        s.push('\n');
    }
    s
}

pub fn write_diarization(segments: &[SpeechSegment]) -> String {
    let doc = DiarizationDoc {
        segments: segments.to_vec(),
    };
    serde_json::to_string_pretty(&doc).expect("diarization serializes") + "\n"
}

/// Writes the canonical form of a bundle. Corrections are already folded
/// into the segments, so no patch file is written.
pub fn write_bundle(bundle: &SessionBundle, dir: &Path) -> Result<PathBuf> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let files = [
        (SESSION_FILE, write_session_toml(&bundle.session)),
        (LANDMARK_FILE, write_landmarks(&bundle.session, &bundle.frames)),
        (DIARIZATION_FILE, write_diarization(&bundle.segments)),
    ];
    for (name, body) in files {
        let path = dir.join(name);
        fs::write(&path, body).map_err(|e| Error::io(&path, e))?;
    }
    Ok(dir.to_path_buf())
}
