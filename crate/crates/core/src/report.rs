//! Figures and tables as data exports plus self-contained SVG renders.
//!
//! Every emitter is a pure function of its input and formats numbers with a
//! fixed precision, so identical inputs give byte-identical files.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::alignment::{SessionAlignment, SessionMetrics};
use crate::error::{Error, Result};
use crate::model::{session_key, Condition, ParticipantId};
use crate::stats::{render_text, BatteryReport};

const CONDITIONS: [Condition; 2] = [Condition::NoCoordination, Condition::PlanningPoker];

fn slot(c: Condition) -> usize {
    match c {
        Condition::NoCoordination => 0,
        Condition::PlanningPoker => 1,
    }
}

// ---------------------------------------------------------------- heatmap

/// Total speaking time in minutes per group (rows) and condition (columns).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HeatmapData {
    pub rows: Vec<HeatmapRow>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HeatmapRow {
    pub group_id: u32,
    /// Indexed by condition, A then B. `None` when the session is missing.
    pub minutes: [Option<f64>; 2],
}

pub fn heatmap_data(metrics: &[SessionMetrics]) -> Result<HeatmapData> {
    for c in CONDITIONS {
        if !metrics.iter().any(|m| m.condition == c) {
            return Err(Error::invalid("heatmap", format!("no session in condition {c}")));
        }
    }
    let mut rows: BTreeMap<u32, [Option<f64>; 2]> = BTreeMap::new();
    for m in metrics {
        rows.entry(m.group_id).or_default()[slot(m.condition)] = Some(m.tst / 60.0);
    }
    Ok(HeatmapData {
        rows: rows
            .into_iter()
            .map(|(group_id, minutes)| HeatmapRow { group_id, minutes })
            .collect(),
    })
}

fn cell(v: Option<f64>) -> String {
    v.map(|m| format!("{m:.2}")).unwrap_or_default()
}

pub fn heatmap_csv(data: &HeatmapData) -> String {
    let mut s = String::from("group,A,B\n");
    for r in &data.rows {
        let _ = writeln!(s, "{},{},{}", r.group_id, cell(r.minutes[0]), cell(r.minutes[1]));
    }
    s
}

const LOW: (f64, f64, f64) = (255.0, 245.0, 235.0);
const HIGH: (f64, f64, f64) = (127.0, 39.0, 4.0);

fn ramp(t: f64) -> String {
    let mix = |a: f64, b: f64| (a + (b - a) * t).round() as u8;
    format!("#{:02x}{:02x}{:02x}", mix(LOW.0, HIGH.0), mix(LOW.1, HIGH.1), mix(LOW.2, HIGH.2))
}

pub fn heatmap_svg(data: &HeatmapData) -> String {
    let values: Vec<f64> = data.rows.iter().flat_map(|r| r.minutes).flatten().collect();
    let min = values.iter().cloned().fold(f64::INFINITY, f64::min);
    let max = values.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let (cw, ch, left, top) = (90.0, 26.0, 80.0, 40.0);
    let width = left + 2.0 * cw + 10.0;
    let height = top + ch * data.rows.len() as f64 + 10.0;
    let mut s = String::new();
    let _ = writeln!(
        s,
        r##"<svg xmlns="http://www.w3.org/2000/svg" width="{width:.0}" height="{height:.0}" font-family="sans-serif" font-size="12">"##
    );
    let _ = writeln!(
        s,
        "<!-- Total speaking time (minutes) per group and condition. Colour scale: linear \
         from {} at {min:.2} min to {} at {max:.2} min over the emitted cells; blank \
         grey cells are missing sessions. -->",
        ramp(0.0),
        ramp(1.0)
    );
    for (i, c) in CONDITIONS.iter().enumerate() {
        let _ = writeln!(
            s,
            r##"<text x="{:.1}" y="{:.1}" text-anchor="middle">Activity {c}</text>"##,
            left + cw * (i as f64 + 0.5),
            top - 12.0
        );
    }
    for (j, r) in data.rows.iter().enumerate() {
        let y = top + ch * j as f64;
        let _ = writeln!(
            s,
            r##"<text x="{:.1}" y="{:.1}" text-anchor="end">Group {}</text>"##,
            left - 8.0,
            y + ch * 0.65,
            r.group_id
        );
        for (i, v) in r.minutes.iter().enumerate() {
            let x = left + cw * i as f64;
            let fill = match v {
                Some(m) if max > min => ramp((m - min) / (max - min)),
                Some(_) => ramp(0.5),
                None => "#e0e0e0".to_string(),
            };
            let _ = writeln!(
                s,
                r##"<rect x="{x:.1}" y="{y:.1}" width="{cw:.1}" height="{ch:.1}" fill="{fill}" stroke="#ffffff"/>"##
            );
            if let Some(m) = v {
                let t = if max > min { (m - min) / (max - min) } else { 0.5 };
                let ink = if t > 0.55 { "#ffffff" } else { "#000000" };
                let _ = writeln!(
                    s,
                    r##"<text x="{:.1}" y="{:.1}" text-anchor="middle" fill="{ink}">{m:.2}</text>"##,
                    x + cw / 2.0,
                    y + ch * 0.65
                );
            }
        }
    }
    s.push_str("</svg>\n");
    s
}

// ---------------------------------------------------------------- chord

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChordArc {
    pub participant: ParticipantId,
    pub speaking_s: f64,
    pub start_deg: f64,
    pub end_deg: f64,
}

/// Attention `from` an observer `to` a speaker while that speaker talks.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Ribbon {
    pub from: ParticipantId,
    pub to: ParticipantId,
    pub seconds: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChordData {
    pub group_id: u32,
    pub condition: Condition,
    pub arcs: Vec<ChordArc>,
    pub ribbons: Vec<Ribbon>,
    pub annotation: Option<String>,
}

/// Gap between neighbouring arcs.
const ARC_GAP_DEG: f64 = 3.0;

pub fn chord_data(al: &SessionAlignment) -> ChordData {
    let sp = &al.speaking;
    let total: f64 = sp.per_participant_s.iter().sum();
    let n = sp.participants.len();
    let mut arcs = Vec::with_capacity(n);
    let mut angle = 0.0;
    let usable = 360.0 - ARC_GAP_DEG * n as f64;
    for (id, s) in sp.participants.iter().zip(&sp.per_participant_s) {
        let span = if total > 0.0 { usable * s / total } else { 0.0 };
        arcs.push(ChordArc {
            participant: id.clone(),
            speaking_s: *s,
            start_deg: angle,
            end_deg: angle + span,
        });
        angle += span + ARC_GAP_DEG;
    }
    let mut ribbons = Vec::new();
    for o in 0..n {
        for t in 0..n {
            let seconds = al.attention.pair_seconds(o, t);
            if o != t && seconds > 0.0 {
                ribbons.push(Ribbon {
                    from: sp.participants[o].clone(),
                    to: sp.participants[t].clone(),
                    seconds,
                });
            }
        }
    }
    let annotation = if total <= 0.0 {
        Some("no speech recorded in this session".to_string())
    } else if ribbons.is_empty() {
        Some("no attention recorded during speech".to_string())
    } else {
        None
    };
    ChordData {
        group_id: al.group_id,
        condition: al.condition,
        arcs,
        ribbons,
        annotation,
    }
}

pub fn chord_json(data: &ChordData) -> String {
    serde_json::to_string_pretty(data).expect("chord serializes") + "\n"
}

const CX: f64 = 220.0;
const CY: f64 = 220.0;
const RADIUS: f64 = 160.0;
const MAX_RIBBON_PX: f64 = 22.0;

fn polar(deg: f64, r: f64) -> (f64, f64) {
    // clockwise from 12 o'clock
    let a = deg.to_radians();
    (CX + r * a.sin(), CY - r * a.cos())
}

pub fn chord_svg(data: &ChordData) -> String {
    let mut s = String::new();
    let _ = writeln!(
        s,
        r##"<svg xmlns="http://www.w3.org/2000/svg" width="440" height="460" font-family="sans-serif" font-size="12">"##
    );
    let _ = writeln!(
        s,
        "<!-- Attention during speech, group {} activity {}. Arc length is linear in \
         speaking seconds; ribbon width is linear in attention seconds (widest = \
         {MAX_RIBBON_PX} px); arrows point from the attending participant to the speaker. -->",
        data.group_id, data.condition
    );
    s.push_str(
        "<defs><marker id=\"arrow\" viewBox=\"0 0 10 10\" refX=\"9\" refY=\"5\" \
         markerWidth=\"4\" markerHeight=\"4\" orient=\"auto\"><path d=\"M0,0 L10,5 L0,10 z\" \
         fill=\"#555555\"/></marker></defs>\n",
    );
    let _ = writeln!(
        s,
        r##"<text x="{CX:.1}" y="450.0" text-anchor="middle">Group {} - Activity {}</text>"##,
        data.group_id, data.condition
    );
    let palette = ["#1b9e77", "#d95f02", "#7570b3", "#e7298a", "#66a61e", "#e6ab02"];
    let mid: BTreeMap<&ParticipantId, f64> = data
        .arcs
        .iter()
        .map(|a| (&a.participant, (a.start_deg + a.end_deg) / 2.0))
        .collect();
    let colour: BTreeMap<&ParticipantId, &str> = data
        .arcs
        .iter()
        .enumerate()
        .map(|(i, a)| (&a.participant, palette[i % palette.len()]))
        .collect();
    let widest = data.ribbons.iter().map(|r| r.seconds).fold(0.0, f64::max);
    for r in &data.ribbons {
        let (x0, y0) = polar(mid[&r.from], RADIUS - 6.0);
        let (x1, y1) = polar(mid[&r.to], RADIUS - 6.0);
        let w = MAX_RIBBON_PX * r.seconds / widest;
        let _ = writeln!(
            s,
            r##"<path d="M{x0:.2},{y0:.2} Q{CX:.2},{CY:.2} {x1:.2},{y1:.2}" fill="none" stroke="{}" stroke-opacity="0.55" stroke-width="{w:.2}" marker-end="url(#arrow)"><title>{} to {}: {:.2} s</title></path>"##,
            colour[&r.from], r.from, r.to, r.seconds
        );
    }
    for a in &data.arcs {
        let (x0, y0) = polar(a.start_deg, RADIUS);
        let (x1, y1) = polar(a.end_deg, RADIUS);
        let large = if a.end_deg - a.start_deg > 180.0 { 1 } else { 0 };
        if a.end_deg > a.start_deg {
            let _ = writeln!(
                s,
                r##"<path d="M{x0:.2},{y0:.2} A{RADIUS:.2},{RADIUS:.2} 0 {large} 1 {x1:.2},{y1:.2}" fill="none" stroke="{}" stroke-width="12"><title>{}: {:.2} s speaking</title></path>"##,
                colour[&a.participant], a.participant, a.speaking_s
            );
        }
        let (lx, ly) = polar((a.start_deg + a.end_deg) / 2.0, RADIUS + 22.0);
        let _ = writeln!(
            s,
            r##"<text x="{lx:.2}" y="{ly:.2}" text-anchor="middle">{} ({:.1} s)</text>"##,
            a.participant, a.speaking_s
        );
    }
    if let Some(note) = &data.annotation {
        let _ = writeln!(
            s,
            r##"<text x="{CX:.1}" y="{CY:.1}" text-anchor="middle" fill="#888888">{note}</text>"##
        );
    }
    s.push_str("</svg>\n");
    s
}

// ---------------------------------------------------------------- table

/// Why a group was taken out of the sample.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Exclusion {
    /// Participants did not follow the procedure; marked `*`.
    Instructions,
    /// Data flagged as an outlier; marked `**`.
    Outlier,
}

impl Exclusion {
    pub fn marker(self) -> &'static str {
        match self {
            Exclusion::Instructions => "*",
            Exclusion::Outlier => "**",
        }
    }
}

/// One row of the experiment table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupRecord {
    pub group_id: u32,
    pub male: u32,
    pub female: u32,
    pub exclusion: Option<Exclusion>,
    /// Indexed by condition, A then B.
    pub duration_s: [Option<f64>; 2],
    pub outcome: [Option<String>; 2],
}

fn mm_ss(seconds: f64) -> String {
    let total = seconds.round() as u64;
    format!("{}:{:02}", total / 60, total % 60)
}

fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

pub fn experiment_table_csv(records: &[GroupRecord]) -> String {
    let mut rows: Vec<&GroupRecord> = records.iter().collect();
    rows.sort_by_key(|r| r.group_id);
    let mut s = String::from("group,male,female,time_A,time_B,outcome_A,outcome_B\n");
    for r in rows {
        let marker = r.exclusion.map(Exclusion::marker).unwrap_or("");
        let time = |i: usize| r.duration_s[i].map(mm_ss).unwrap_or_default();
        let outcome = |i: usize| r.outcome[i].as_deref().map(csv_field).unwrap_or_default();
        let _ = writeln!(
            s,
            "{}{marker},{},{},{},{},{},{}",
            r.group_id,
            r.male,
            r.female,
            time(0),
            time(1),
            outcome(0),
            outcome(1)
        );
    }
    s
}

// ---------------------------------------------------------------- layout

/// Everything the report directory is built from.
pub struct ReportInputs<'a> {
    pub metrics: &'a [SessionMetrics],
    pub alignments: &'a [SessionAlignment],
    pub groups: &'a [GroupRecord],
    pub battery: &'a BatteryReport,
    /// Effective run configuration, embedded in the stats outputs.
    pub config_json: serde_json::Value,
}

fn put(dir: &Path, name: &str, body: &str) -> Result<()> {
    let path = dir.join(name);
    std::fs::write(&path, body).map_err(|e| Error::io(&path, e))
}

/// Writes `heatmap.{csv,svg}`, one chord pair per session,
/// `experiment_table.csv` and `stats.{json,txt}` into `dir`.
pub fn write_report(dir: &Path, inputs: &ReportInputs) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let heat = heatmap_data(inputs.metrics)?;
    put(dir, "heatmap.csv", &heatmap_csv(&heat))?;
    put(dir, "heatmap.svg", &heatmap_svg(&heat))?;
    let mut alignments: Vec<&SessionAlignment> = inputs.alignments.iter().collect();
    alignments.sort_by_key(|a| (a.group_id, slot(a.condition)));
    for al in alignments {
        let chord = chord_data(al);
        let stem = format!("{}_chord", session_key(al.group_id, al.condition));
        put(dir, &format!("{stem}.json"), &chord_json(&chord))?;
        put(dir, &format!("{stem}.svg"), &chord_svg(&chord))?;
    }
    put(dir, "experiment_table.csv", &experiment_table_csv(inputs.groups))?;
    write_stats(dir, inputs.battery, &inputs.config_json)
}

/// Writes `stats.json` and `stats.txt`, both carrying the effective
/// configuration.
pub fn write_stats(dir: &Path, battery: &BatteryReport, config_json: &serde_json::Value) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let doc = serde_json::json!({
        "config": config_json,
        "battery": battery,
    });
    put(dir, "stats.json", &(serde_json::to_string_pretty(&doc).expect("stats serialize") + "\n"))?;
    let text = format!(
        "Effective configuration: {}\n\n{}",
        serde_json::to_string(config_json).expect("config serializes"),
        render_text(battery)
    );
    put(dir, "stats.txt", &text)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::alignment::{AttentionStats, SpeakingStats};

    fn metric(g: u32, c: Condition, tst: f64) -> SessionMetrics {
        SessionMetrics {
            group_id: g,
            condition: c,
            tst,
            ast: tst / 4.0,
            stsd: 0.0,
            tat: 0.0,
            aat: 0.0,
            atsd: 0.0,
        }
    }

    #[test]
    fn heatmap_minutes_and_blank_cells() {
        let data = heatmap_data(&[
            metric(2, Condition::NoCoordination, 480.0),
            metric(1, Condition::PlanningPoker, 90.0),
            metric(1, Condition::NoCoordination, 61.5),
        ])
        .unwrap();
        assert_eq!(heatmap_csv(&data), "group,A,B\n1,1.02,1.50\n2,8.00,\n");
        let svg = heatmap_svg(&data);
        assert!(svg.contains("linear"));
        assert_eq!(svg, heatmap_svg(&data));
    }

    #[test]
    fn heatmap_needs_both_conditions() {
        assert!(heatmap_data(&[metric(1, Condition::NoCoordination, 1.0)]).is_err());
    }

    fn alignment(speaking: [f64; 4], pair_frames: Vec<Vec<u64>>) -> SessionAlignment {
        let ids: Vec<ParticipantId> = (1..=4).map(|i| ParticipantId::new(format!("P{i}"))).collect();
        SessionAlignment {
            group_id: 3,
            condition: Condition::PlanningPoker,
            duration_s: 60.0,
            speaking: SpeakingStats {
                participants: ids.clone(),
                per_participant_s: speaking.to_vec(),
                tst_s: speaking.iter().sum(),
                ast_s: speaking.iter().sum::<f64>() / 4.0,
                stsd_s: 0.0,
            },
            attention: AttentionStats {
                participants: ids,
                fps: 10.0,
                pair_frames,
                per_participant_attention_s: vec![0.0; 4],
                tat_s: 0.0,
                aat_s: 0.0,
                atsd_s: 0.0,
            },
        }
    }

    #[test]
    fn one_speaker_three_attenders() {
        let mut pf = vec![vec![0u64; 4]; 4];
        for o in 1..4 {
            pf[o][0] = 10 * o as u64;
        }
        let c = chord_data(&alignment([30.0, 0.0, 0.0, 0.0], pf));
        assert_eq!(c.ribbons.len(), 3);
        assert!(c.ribbons.iter().all(|r| r.to.as_str() == "P1"));
        assert!((c.arcs[0].end_deg - c.arcs[0].start_deg - (360.0 - 4.0 * ARC_GAP_DEG)).abs() < 1e-12);
        assert!(c.annotation.is_none());
        assert!(chord_svg(&c).matches("marker-end").count() == 3);
    }

    #[test]
    fn zero_attention_draws_arcs_only() {
        let c = chord_data(&alignment([10.0, 20.0, 5.0, 5.0], vec![vec![0; 4]; 4]));
        assert!(c.ribbons.is_empty());
        let svg = chord_svg(&c);
        assert_eq!(svg.matches(" A160.00").count(), 4);
        assert!(!svg.contains("marker-end"));
    }

    #[test]
    fn silent_session_is_annotated() {
        let c = chord_data(&alignment([0.0; 4], vec![vec![0; 4]; 4]));
        assert!(c.annotation.as_deref().unwrap().contains("no speech"));
        assert!(chord_svg(&c).contains("no speech"));
    }

    #[test]
    fn table_markers_and_times() {
        let rec = |g, ex| GroupRecord {
            group_id: g,
            male: 3,
            female: 1,
            exclusion: ex,
            duration_s: [Some(490.0), None],
            outcome: [Some("Medium".into()), Some("Very, simple".into())],
        };
        let csv = experiment_table_csv(&[rec(10, Some(Exclusion::Outlier)), rec(5, Some(Exclusion::Instructions)), rec(1, None)]);
        assert_eq!(
            csv,
            "group,male,female,time_A,time_B,outcome_A,outcome_B\n\
             1,3,1,8:10,,Medium,\"Very, simple\"\n\
             5*,3,1,8:10,,Medium,\"Very, simple\"\n\
             10**,3,1,8:10,,Medium,\"Very, simple\"\n"
        );
        assert_eq!(experiment_table_csv(&[]), "group,male,female,time_A,time_B,outcome_A,outcome_B\n");
    }
}
