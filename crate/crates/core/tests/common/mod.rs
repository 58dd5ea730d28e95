#![allow(dead_code)]

use std::path::PathBuf;

use serde_json::Value;

pub fn fixture_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures")
}

pub struct GoldenCase {
    pub name: String,
    pub a: Vec<f64>,
    pub b: Vec<f64>,
    /// One block per independent reference implementation.
    pub refs: Vec<(String, Value)>,
}

pub fn golden_cases() -> Vec<GoldenCase> {
    let text = std::fs::read_to_string(fixture_dir().join("stats/golden.json")).unwrap();
    let v: Value = serde_json::from_str(&text).unwrap();
    let nums = |x: &Value| -> Vec<f64> { x.as_array().unwrap().iter().map(|n| n.as_f64().unwrap()).collect() };
    v["cases"]
        .as_array()
        .unwrap()
        .iter()
        .map(|c| GoldenCase {
            name: c["name"].as_str().unwrap().to_string(),
            a: nums(&c["a"]),
            b: nums(&c["b"]),
            refs: ["scipy", "mpmath"]
                .iter()
                .map(|k| (k.to_string(), c[*k].clone()))
                .collect(),
        })
        .collect()
}

pub fn pair(v: &Value) -> Option<(f64, f64)> {
    let a = v.as_array()?;
    Some((a[0].as_f64()?, a[1].as_f64()?))
}

/// Compares every statistic of every golden case against both references;
/// returns the mismatches and the largest absolute deviation seen.
pub fn golden_mismatches(tol: f64) -> (Vec<String>, f64) {
    use mma_core::stats::{cohens_d, levene, shapiro_wilk, t_test};
    let mut bad = Vec::new();
    let mut worst = 0.0f64;
    let mut check = |case: &str, what: &str, got: f64, want: f64| {
        let dev = (got - want).abs();
        worst = worst.max(dev);
        if !(dev <= tol) {
            bad.push(format!("{case} {what}: got {got}, want {want}"));
        }
    };
    for c in golden_cases() {
        let sw_a = shapiro_wilk(&c.a).unwrap();
        let sw_b = shapiro_wilk(&c.b).unwrap();
        let lev = levene(&c.a, &c.b).unwrap();
        let t = t_test(&c.a, &c.b, false).unwrap();
        let d = cohens_d(&c.a, &c.b).unwrap();
        let paired = (c.a.len() == c.b.len()).then(|| t_test(&c.a, &c.b, true).unwrap());
        for (src, r) in &c.refs {
            let tag = |s: &str| format!("{s} vs {src}");
            let mut both = |key: &str, got: (f64, f64)| {
                if let Some(want) = pair(&r[key]) {
                    check(&c.name, &tag(&format!("{key} statistic")), got.0, want.0);
                    check(&c.name, &tag(&format!("{key} p")), got.1, want.1);
                }
            };
            both("shapiro_a", sw_a);
            both("shapiro_b", sw_b);
            both("levene", (lev.statistic, lev.p));
            both("t_ind", (t.statistic, t.p));
            if let Some(p) = paired {
                both("t_paired", (p.statistic, p.p));
            }
            check(&c.name, &tag("cohens_d"), d, r["cohens_d"].as_f64().unwrap());
        }
    }
    (bad, worst)
}

// ------------------------------------------------------------ sessions

use std::path::Path;

use mma_core::alignment::SessionAlignment;
use mma_core::attention::{AttentionRecord, AttentionTarget};
use mma_core::model::{ParticipantId, Role, Seat, SeatingLayout, SpeechSegment};

/// Frame counts per (observer, target) recomputed the slow way: every record
/// is tested against every segment of every speaker.
pub fn brute_force_pair_frames(
    records: &[AttentionRecord],
    segments: &[SpeechSegment],
    layout: &SeatingLayout,
    fps: f64,
) -> Vec<Vec<u64>> {
    let n = layout.seats.len();
    let mut out = vec![vec![0u64; n]; n];
    for r in records {
        let AttentionTarget::Participant(t) = &r.target else { continue };
        let t_sec = r.frame_idx as f64 / fps;
        let speaking = segments.iter().any(|s| &s.speaker == t && t_sec >= s.start_s && t_sec < s.end_s);
        if speaking {
            let o = layout.index_of(&r.observer).unwrap();
            let ti = layout.index_of(t).unwrap();
            out[o][ti] += 1;
        }
    }
    out
}

/// Four seats with the given counter-clockwise gaps, starting at `base_deg`.
pub fn layout_from_gaps(base_deg: f64, gaps: [f64; 4], radius_m: f64, elevation_deg: f64) -> SeatingLayout {
    let roles = [Role::Backend, Role::Frontend, Role::UiUx, Role::DataPersistence];
    let mut angle = base_deg;
    let seats = (0..4)
        .map(|i| {
            let s = Seat {
                id: ParticipantId::new(format!("P{}", i + 1)),
                role: roles[i],
                angle_deg: mma_core::angles::wrap_deg(angle),
            };
            angle += gaps[i];
            s
        })
        .collect();
    SeatingLayout {
        radius_m,
        seat_elevation_deg: elevation_deg,
        seats,
    }
}

/// Every file under `dir`, keyed by relative path.
pub fn tree(dir: &Path) -> std::collections::BTreeMap<String, Vec<u8>> {
    let mut out = std::collections::BTreeMap::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in std::fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                let rel = p.strip_prefix(dir).unwrap().to_string_lossy().into_owned();
                out.insert(rel, std::fs::read(&p).unwrap());
            }
        }
    }
    out
}

/// Runs a manifest one stage at a time, each stage reading only the files
/// the previous one wrote, into the same layout `run_pipeline` produces.
pub fn run_stagewise(manifest_path: &Path, out: &Path) {
    use mma_core::alignment::read_metrics_csv;
    use mma_core::attention::read_attention_dump;
    use mma_core::bundle::{load_session_with, write_bundle};
    use mma_core::pipeline::*;
    use mma_core::pose::read_pose_dump;
    use mma_core::report::{write_report, ReportInputs};
    use mma_core::sim::synthesize;

    let cfg = RunConfig::default();
    let m = Manifest::load(manifest_path).unwrap();
    let scratch = out.join("_bundles");
    let mut alignments: Vec<SessionAlignment> = Vec::new();
    for entry in &m.sessions {
        let key = entry.key();
        let bdir = scratch.join(&key);
        let scenario = m.scenario_for(entry, &m.resolve(entry.scenario.as_ref().unwrap())).unwrap();
        write_bundle(&synthesize(&scenario).unwrap().bundle, &bdir).unwrap();
        let bundle = load_session_with(&bdir, &cfg.load_options()).unwrap();
        let sdir = session_dir(out, &key);
        std::fs::create_dir_all(&sdir).unwrap();
        write_poses(&sdir.join(POSES_FILE), &stage_pose(&bundle, &cfg)).unwrap();
        let poses = read_pose_dump(&sdir.join(POSES_FILE)).unwrap();
        write_attention(&sdir.join(ATTENTION_FILE), &stage_attention(&bundle, &poses, &cfg).unwrap()).unwrap();
        let records = read_attention_dump(&sdir.join(ATTENTION_FILE)).unwrap();
        write_alignment(&sdir, &stage_align(&bundle, &records).unwrap()).unwrap();
        alignments.push(SessionAlignment::read_json(&sdir.join(ALIGNMENT_FILE)).unwrap());
    }
    std::fs::remove_dir_all(&scratch).unwrap();
    write_metrics(&out.join(METRICS_FILE), &stage_metrics(&alignments)).unwrap();
    let metrics = read_metrics_csv(&out.join(METRICS_FILE)).unwrap();
    let battery = stage_stats(&metrics, Some(&m), &cfg);
    let groups = group_records(&m, &alignments, &battery);
    write_report(
        &out.join("report"),
        &ReportInputs {
            metrics: &metrics,
            alignments: &alignments,
            groups: &groups,
            battery: &battery,
            config_json: cfg.provenance(),
        },
    )
    .unwrap();
}

pub fn demo_manifest() -> std::path::PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../demo/manifest.toml")
}
