//! Run configuration, session manifests and the stage functions shared by the
//! chained pipeline and the stage-wise command line.
//!
//! Output layout under the run directory:
//!
//! ```text
//! sessions/group<id>_<cond>/poses.csv
//! sessions/group<id>_<cond>/attention.csv
//! sessions/group<id>_<cond>/attention_matrix.csv
//! sessions/group<id>_<cond>/alignment.json
//! metrics.csv
//! report/...
//! ```

use std::fs;
use std::path::{Path, PathBuf};

use log::info;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::alignment::{
    attention_during_speech, attention_matrix_csv, metrics_csv, speaking_time, SessionAlignment,
    SessionMetrics,
};
use crate::attention::{
    classify_session, write_attention_dump, AttentionConfig, AttentionRecord, GateReference,
    ReadingGate,
};
use crate::bundle::{load_session_with, LoadOptions, SessionBundle};
use crate::error::{Error, Result};
use crate::model::{session_key, Condition};
use crate::pose::{estimate_poses, smooth_poses, write_pose_dump, FaceModel3D, PnpOptions, PoseRecord};
use crate::report::{write_report, Exclusion, GroupRecord, ReportInputs};
use crate::sim::{synthesize, Scenario};
use crate::stats::{run_battery, BatteryOptions, BatteryReport, PairedMode};

/// Environment variable naming a TOML file with default [`RunConfig`] values.
pub const CONFIG_ENV: &str = "MMA_CONFIG";

pub const POSES_FILE: &str = "poses.csv";
pub const ATTENTION_FILE: &str = "attention.csv";
pub const MATRIX_FILE: &str = "attention_matrix.csv";
pub const ALIGNMENT_FILE: &str = "alignment.json";
pub const METRICS_FILE: &str = "metrics.csv";

/// Thresholds and switches for a run. Every field has the published default.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub reading_angle_deg: f64,
    pub gate_reference: GateReference,
    pub horizontal_fraction: f64,
    pub rmse_gate_px: f64,
    pub alpha: f64,
    pub paired: PairedMode,
    pub exclude_outliers: bool,
    pub fps_override: Option<f64>,
    /// Moving-average window over poses; 0 or 1 disables smoothing.
    pub smoothing_window: usize,
    /// Size of the session worker pool; 0 lets the runtime decide.
    pub workers: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            reading_angle_deg: 15.0,
            gate_reference: GateReference::FieldBottom,
            horizontal_fraction: 0.25,
            rmse_gate_px: PnpOptions::default().rmse_gate_px,
            alpha: 0.05,
            paired: PairedMode::No,
            exclude_outliers: true,
            fps_override: None,
            smoothing_window: 0,
            workers: 0,
        }
    }
}

impl RunConfig {
    pub fn from_toml(path: &Path, text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::schema(path, 0, e.message().to_string()))
    }

    /// Defaults, overridden by the file named in [`CONFIG_ENV`] if set.
    pub fn from_env() -> Result<Self> {
        match std::env::var_os(CONFIG_ENV) {
            Some(p) => {
                let path = PathBuf::from(p);
                let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
                Self::from_toml(&path, &text)
            }
            None => Ok(Self::default()),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(Error::invalid("config", format!("alpha {} outside (0, 1)", self.alpha)));
        }
        if !(self.horizontal_fraction > 0.0 && self.horizontal_fraction < 0.5) {
            return Err(Error::invalid(
                "config",
                format!("horizontal fraction {} outside (0, 0.5)", self.horizontal_fraction),
            ));
        }
        if !(self.reading_angle_deg.is_finite()) {
            return Err(Error::invalid("config", "reading angle must be finite"));
        }
        if !(self.rmse_gate_px > 0.0) {
            return Err(Error::invalid("config", format!("RMSE gate {}", self.rmse_gate_px)));
        }
        if let Some(f) = self.fps_override {
            if !(f.is_finite() && f > 0.0) {
                return Err(Error::invalid("config", format!("fps override {f}")));
            }
        }
        Ok(())
    }

    pub fn pnp(&self) -> PnpOptions {
        PnpOptions {
            rmse_gate_px: self.rmse_gate_px,
            ..PnpOptions::default()
        }
    }

    pub fn attention(&self) -> AttentionConfig {
        AttentionConfig {
            gate: ReadingGate {
                threshold_deg: self.reading_angle_deg,
                reference: self.gate_reference,
                ..ReadingGate::default()
            },
            horizontal_fraction: self.horizontal_fraction,
        }
    }

    pub fn battery(&self) -> BatteryOptions {
        BatteryOptions {
            alpha: self.alpha,
            paired: self.paired,
            exclude_outliers: self.exclude_outliers,
        }
    }

    pub fn load_options(&self) -> LoadOptions {
        LoadOptions {
            fps_override: self.fps_override,
        }
    }

    /// The configuration as embedded in report files. The worker count does
    /// not affect results and is left out so reports stay comparable.
    pub fn provenance(&self) -> serde_json::Value {
        let mut v = serde_json::to_value(self).expect("config serializes");
        if let Some(o) = v.as_object_mut() {
            o.remove("workers");
        }
        v
    }
}

// ---------------------------------------------------------------- manifest

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GroupEntry {
    pub id: u32,
    #[serde(default)]
    pub male: u32,
    #[serde(default)]
    pub female: u32,
    /// Set when the group was removed from the sample by the experimenters.
    #[serde(default)]
    pub excluded: Option<Exclusion>,
    #[serde(default)]
    pub outcome_a: Option<String>,
    #[serde(default)]
    pub outcome_b: Option<String>,
}

/// Where a session's data comes from: a bundle directory or a scenario file
/// synthesized on the fly. Paths are relative to the manifest.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SessionEntry {
    pub group_id: u32,
    pub condition: Condition,
    #[serde(default)]
    pub bundle: Option<PathBuf>,
    #[serde(default)]
    pub scenario: Option<PathBuf>,
}

impl SessionEntry {
    pub fn key(&self) -> String {
        session_key(self.group_id, self.condition)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    #[serde(default)]
    pub groups: Vec<GroupEntry>,
    pub sessions: Vec<SessionEntry>,
    #[serde(skip)]
    pub base_dir: PathBuf,
}

impl Manifest {
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut m: Manifest = toml::from_str(&text).map_err(|e| {
            let line = e
                .span()
                .map(|s| text[..s.start].lines().count().max(1))
                .unwrap_or(0);
            Error::schema(path, line, e.message().to_string())
        })?;
        m.base_dir = path.parent().map(Path::to_path_buf).unwrap_or_default();
        m.validate(path)?;
        Ok(m)
    }

    fn validate(&self, path: &Path) -> Result<()> {
        let mut seen = std::collections::BTreeSet::new();
        for s in &self.sessions {
            if !seen.insert(s.key()) {
                return Err(Error::schema(path, 0, format!("session {} listed twice", s.key())));
            }
            if s.bundle.is_some() == s.scenario.is_some() {
                return Err(Error::schema(
                    path,
                    0,
                    format!("session {} needs exactly one of `bundle` or `scenario`", s.key()),
                ));
            }
        }
        let mut ids = std::collections::BTreeSet::new();
        for g in &self.groups {
            if !ids.insert(g.id) {
                return Err(Error::schema(path, 0, format!("group {} listed twice", g.id)));
            }
        }
        Ok(())
    }

    pub fn resolve(&self, p: &Path) -> PathBuf {
        self.base_dir.join(p)
    }

    pub fn excluded_for_instructions(&self) -> Vec<u32> {
        self.groups
            .iter()
            .filter(|g| g.excluded == Some(Exclusion::Instructions))
            .map(|g| g.id)
            .collect()
    }

    /// Reads or synthesizes the session's bundle.
    pub fn open_session(&self, entry: &SessionEntry, cfg: &RunConfig) -> Result<SessionBundle> {
        if let Some(b) = &entry.bundle {
            let bundle = load_session_with(&self.resolve(b), &cfg.load_options())?;
            let s = &bundle.session;
            if (s.group_id, s.condition) != (entry.group_id, entry.condition) {
                return Err(Error::invalid(
                    "manifest",
                    format!("bundle {} holds {}, listed as {}", b.display(), s.key(), entry.key()),
                ));
            }
            return Ok(bundle);
        }
        let path = self.resolve(entry.scenario.as_ref().expect("validated"));
        let scenario = self.scenario_for(entry, &path)?;
        let mut bundle = synthesize(&scenario)?.bundle;
        if let Some(f) = cfg.fps_override {
            bundle.session.fps = f;
        }
        Ok(bundle)
    }

    /// Loads a session's scenario with the manifest's group and condition.
    pub fn scenario_for(&self, entry: &SessionEntry, path: &Path) -> Result<Scenario> {
        let mut scenario = Scenario::load(path)?;
        scenario.group_id = entry.group_id;
        scenario.condition = entry.condition;
        Ok(scenario)
    }
}

// ---------------------------------------------------------------- stages

pub fn stage_pose(bundle: &SessionBundle, cfg: &RunConfig) -> Vec<PoseRecord> {
    let poses = estimate_poses(
        &bundle.frames,
        &bundle.session.camera,
        &FaceModel3D::bundled(),
        &cfg.pnp(),
    );
    smooth_poses(&poses, cfg.smoothing_window)
}

pub fn stage_attention(
    bundle: &SessionBundle,
    poses: &[PoseRecord],
    cfg: &RunConfig,
) -> Result<Vec<AttentionRecord>> {
    classify_session(&bundle.session, poses, &cfg.attention())
}

pub fn stage_align(bundle: &SessionBundle, records: &[AttentionRecord]) -> Result<SessionAlignment> {
    let s = &bundle.session;
    Ok(SessionAlignment {
        group_id: s.group_id,
        condition: s.condition,
        duration_s: s.duration_s,
        speaking: speaking_time(&bundle.segments, &s.layout)?,
        attention: attention_during_speech(records, &bundle.segments, &s.layout, s.fps)?,
    })
}

/// Metric rows in `(group, condition)` order.
pub fn stage_metrics(alignments: &[SessionAlignment]) -> Vec<SessionMetrics> {
    let mut rows: Vec<SessionMetrics> = alignments.iter().map(SessionAlignment::metrics).collect();
    rows.sort_by_key(|m| (m.group_id, m.condition.label()));
    rows
}

/// The battery over every group not removed by the experimenters.
pub fn stage_stats(metrics: &[SessionMetrics], manifest: Option<&Manifest>, cfg: &RunConfig) -> BatteryReport {
    let dropped = manifest.map(Manifest::excluded_for_instructions).unwrap_or_default();
    let kept: Vec<SessionMetrics> = metrics
        .iter()
        .filter(|m| !dropped.contains(&m.group_id))
        .copied()
        .collect();
    let mut report = run_battery(&kept, &cfg.battery());
    let mut notes: Vec<String> = dropped
        .iter()
        .filter(|g| metrics.iter().any(|m| m.group_id == **g))
        .map(|g| format!("group {g} removed before testing: procedure not followed"))
        .collect();
    for n in &notes {
        info!("{n}");
    }
    notes.append(&mut report.log);
    report.log = notes;
    report
}

/// Experiment-table rows from the manifest, session durations and the
/// battery's outlier exclusions.
pub fn group_records(
    manifest: &Manifest,
    alignments: &[SessionAlignment],
    battery: &BatteryReport,
) -> Vec<GroupRecord> {
    let outliers: std::collections::BTreeSet<u32> =
        battery.metrics.iter().flat_map(|m| m.excluded.iter().copied()).collect();
    let mut ids: std::collections::BTreeSet<u32> = manifest.groups.iter().map(|g| g.id).collect();
    ids.extend(alignments.iter().map(|a| a.group_id));
    ids.into_iter()
        .map(|id| {
            let g = manifest.groups.iter().find(|g| g.id == id);
            let duration = |c: Condition| {
                alignments
                    .iter()
                    .find(|a| a.group_id == id && a.condition == c)
                    .map(|a| a.duration_s)
            };
            let exclusion = g.and_then(|g| g.excluded).or(outliers.contains(&id).then_some(Exclusion::Outlier));
            GroupRecord {
                group_id: id,
                male: g.map_or(0, |g| g.male),
                female: g.map_or(0, |g| g.female),
                exclusion,
                duration_s: [duration(Condition::NoCoordination), duration(Condition::PlanningPoker)],
                outcome: [
                    g.and_then(|g| g.outcome_a.clone()),
                    g.and_then(|g| g.outcome_b.clone()),
                ],
            }
        })
        .collect()
}

// ---------------------------------------------------------------- files

fn write_file(path: &Path, body: &[u8]) -> Result<()> {
    fs::write(path, body).map_err(|e| Error::io(path, e))
}

pub fn write_poses(path: &Path, poses: &[PoseRecord]) -> Result<()> {
    let mut buf = Vec::new();
    write_pose_dump(poses, &mut buf).map_err(|e| Error::io(path, e))?;
    write_file(path, &buf)
}

pub fn write_attention(path: &Path, records: &[AttentionRecord]) -> Result<()> {
    let mut buf = Vec::new();
    write_attention_dump(records, &mut buf).map_err(|e| Error::io(path, e))?;
    write_file(path, &buf)
}

pub fn write_alignment(dir: &Path, al: &SessionAlignment) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    write_file(&dir.join(ALIGNMENT_FILE), al.to_json().as_bytes())?;
    write_file(&dir.join(MATRIX_FILE), attention_matrix_csv(&al.attention).as_bytes())
}

pub fn write_metrics(path: &Path, rows: &[SessionMetrics]) -> Result<()> {
    write_file(path, metrics_csv(rows).as_bytes())
}

pub fn session_dir(out: &Path, key: &str) -> PathBuf {
    out.join("sessions").join(key)
}

/// Writes all four per-session files into a scratch directory and renames
/// it into place, so a session directory is either complete or absent.
fn write_session_atomically(
    out: &Path,
    key: &str,
    poses: &[PoseRecord],
    records: &[AttentionRecord],
    al: &SessionAlignment,
) -> Result<()> {
    let final_dir = session_dir(out, key);
    let tmp = out.join("sessions").join(format!(".{key}.partial"));
    if tmp.exists() {
        fs::remove_dir_all(&tmp).map_err(|e| Error::io(&tmp, e))?;
    }
    fs::create_dir_all(&tmp).map_err(|e| Error::io(&tmp, e))?;
    write_poses(&tmp.join(POSES_FILE), poses)?;
    write_attention(&tmp.join(ATTENTION_FILE), records)?;
    write_alignment(&tmp, al)?;
    if final_dir.exists() {
        fs::remove_dir_all(&final_dir).map_err(|e| Error::io(&final_dir, e))?;
    }
    fs::rename(&tmp, &final_dir).map_err(|e| Error::io(&final_dir, e))
}

/// A stage failure tagged with where it happened.
#[derive(Debug, thiserror::Error)]
#[error("{stage} failed{}: {source}", session.as_ref().map(|s| format!(" for {s}")).unwrap_or_default())]
pub struct StageError {
    pub stage: &'static str,
    pub session: Option<String>,
    #[source]
    pub source: Error,
}

fn at<T>(stage: &'static str, session: Option<&str>, r: Result<T>) -> std::result::Result<T, StageError> {
    r.map_err(|source| StageError {
        stage,
        session: session.map(str::to_string),
        source,
    })
}

fn run_one(
    manifest: &Manifest,
    entry: &SessionEntry,
    cfg: &RunConfig,
    out: &Path,
) -> std::result::Result<SessionAlignment, StageError> {
    let key = entry.key();
    let k = Some(key.as_str());
    let bundle = at("load", k, manifest.open_session(entry, cfg))?;
    info!("{key}: {} landmark rows, {} segments", bundle.frames.len(), bundle.segments.len());
    let poses = stage_pose(&bundle, cfg);
    let records = at("attention", k, stage_attention(&bundle, &poses, cfg))?;
    let al = at("align", k, stage_align(&bundle, &records))?;
    at("write", k, write_session_atomically(out, &key, &poses, &records, &al))?;
    Ok(al)
}

/// Summary of a finished run.
#[derive(Debug)]
pub struct RunSummary {
    pub alignments: Vec<SessionAlignment>,
    pub metrics: Vec<SessionMetrics>,
    pub battery: BatteryReport,
}

/// Runs every stage over the manifest and writes the full output tree.
pub fn run_pipeline(manifest: &Manifest, cfg: &RunConfig, out: &Path) -> std::result::Result<RunSummary, StageError> {
    at("config", None, cfg.validate())?;
    at("write", None, fs::create_dir_all(out.join("sessions")).map_err(|e| Error::io(out, e)))?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.workers)
        .build()
        .map_err(|e| StageError {
            stage: "config",
            session: None,
            source: Error::invalid("workers", e.to_string()),
        })?;
    let results: Vec<_> = pool.install(|| {
        manifest
            .sessions
            .par_iter()
            .map(|entry| run_one(manifest, entry, cfg, out))
            .collect()
    });
    let alignments = results.into_iter().collect::<std::result::Result<Vec<_>, _>>()?;
    finish(manifest, cfg, out, alignments)
}

/// Metrics, statistics and the report directory from per-session results.
pub fn finish(
    manifest: &Manifest,
    cfg: &RunConfig,
    out: &Path,
    alignments: Vec<SessionAlignment>,
) -> std::result::Result<RunSummary, StageError> {
    let metrics = stage_metrics(&alignments);
    at("metrics", None, write_metrics(&out.join(METRICS_FILE), &metrics))?;
    let battery = stage_stats(&metrics, Some(manifest), cfg);
    let groups = group_records(manifest, &alignments, &battery);
    at(
        "report",
        None,
        write_report(
            &out.join("report"),
            &ReportInputs {
                metrics: &metrics,
                alignments: &alignments,
                groups: &groups,
                battery: &battery,
                config_json: cfg.provenance(),
            },
        ),
    )?;
    Ok(RunSummary {
        alignments,
        metrics,
        battery,
    })
}
