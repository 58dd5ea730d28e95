//! Speaking time from diarization, and attention time restricted to the
//! moments the attended participant is speaking.

use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::attention::{AttentionRecord, AttentionTarget};
use crate::error::{Error, Result};
use crate::model::{Condition, ParticipantId, SeatingLayout, SpeechSegment, PARTICIPANTS};

/// Sample standard deviation (n − 1).
pub(crate) fn sample_sd(values: &[f64]) -> f64 {
    let n = values.len() as f64;
    if values.len() < 2 {
        return 0.0;
    }
    let mean = values.iter().sum::<f64>() / n;
    (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpeakingStats {
    /// Seat order of the layout.
    pub participants: Vec<ParticipantId>,
    pub per_participant_s: Vec<f64>,
    pub tst_s: f64,
    pub ast_s: f64,
    pub stsd_s: f64,
}

pub fn speaking_time(segments: &[SpeechSegment], layout: &SeatingLayout) -> Result<SpeakingStats> {
    let mut per = vec![0.0; layout.seats.len()];
    for s in segments {
        let i = layout
            .index_of(&s.speaker)
            .ok_or_else(|| Error::invalid("segments", format!("speaker {} is not in the layout", s.speaker)))?;
        per[i] += s.duration_s();
    }
    let tst_s: f64 = per.iter().sum();
    Ok(SpeakingStats {
        participants: layout.ids().cloned().collect(),
        tst_s,
        ast_s: tst_s / PARTICIPANTS as f64,
        stsd_s: sample_sd(&per),
        per_participant_s: per,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttentionStats {
    pub participants: Vec<ParticipantId>,
    pub fps: f64,
    /// `pair_frames[observer][target]`, seat order, zero diagonal.
    pub pair_frames: Vec<Vec<u64>>,
    /// Seconds each participant spent looking at whoever was speaking.
    pub per_participant_attention_s: Vec<f64>,
    pub tat_s: f64,
    pub aat_s: f64,
    pub atsd_s: f64,
}

impl AttentionStats {
    pub fn pair_seconds(&self, observer: usize, target: usize) -> f64 {
        self.pair_frames[observer][target] as f64 / self.fps
    }
}

/// Merged, sorted speech intervals per seat.
struct SpeechIndex {
    intervals: Vec<Vec<(f64, f64)>>,
}

impl SpeechIndex {
    fn new(segments: &[SpeechSegment], layout: &SeatingLayout) -> Result<Self> {
        let mut intervals = vec![Vec::new(); layout.seats.len()];
        for s in segments {
            let i = layout
                .index_of(&s.speaker)
                .ok_or_else(|| Error::invalid("segments", format!("speaker {} is not in the layout", s.speaker)))?;
            intervals[i].push((s.start_s, s.end_s));
        }
        for iv in &mut intervals {
            iv.sort_by(|a, b| a.0.total_cmp(&b.0));
            let mut merged: Vec<(f64, f64)> = Vec::with_capacity(iv.len());
            for &(a, b) in iv.iter() {
                match merged.last_mut() {
                    Some(last) if a <= last.1 => last.1 = last.1.max(b),
                    _ => merged.push((a, b)),
                }
            }
            *iv = merged;
        }
        Ok(SpeechIndex { intervals })
    }

    /// Is seat `who` speaking at `t`, using `[start, end)`?
    fn speaking(&self, who: usize, t: f64) -> bool {
        let iv = &self.intervals[who];
        let k = iv.partition_point(|&(start, _)| start <= t);
        k > 0 && t < iv[k - 1].1
    }
}

/// Counts a frame for `observer → T` iff the frame time `frame_idx / fps`
/// falls inside one of `T`'s speech segments. Reading and Unfocused frames
/// never count.
pub fn attention_during_speech(
    records: &[AttentionRecord],
    segments: &[SpeechSegment],
    layout: &SeatingLayout,
    fps: f64,
) -> Result<AttentionStats> {
    if !(fps.is_finite() && fps > 0.0) {
        return Err(Error::invalid("fps", format!("{fps} must be positive")));
    }
    let index = SpeechIndex::new(segments, layout)?;
    let n = layout.seats.len();
    let mut pair_frames = vec![vec![0u64; n]; n];
    for r in records {
        let AttentionTarget::Participant(target) = &r.target else {
            continue;
        };
        let o = layout
            .index_of(&r.observer)
            .ok_or_else(|| Error::invalid("attention", format!("observer {} is not in the layout", r.observer)))?;
        let t = layout
            .index_of(target)
            .ok_or_else(|| Error::invalid("attention", format!("target {target} is not in the layout")))?;
        if o == t {
            return Err(Error::invalid("attention", format!("{} attends to themself", r.observer)));
        }
        if index.speaking(t, r.frame_idx as f64 / fps) {
            pair_frames[o][t] += 1;
        }
    }
    let per: Vec<f64> = pair_frames
        .iter()
        .map(|row| row.iter().sum::<u64>() as f64 / fps)
        .collect();
    let tat_s: f64 = per.iter().sum();
    Ok(AttentionStats {
        participants: layout.ids().cloned().collect(),
        fps,
        pair_frames,
        tat_s,
        aat_s: tat_s / PARTICIPANTS as f64,
        atsd_s: sample_sd(&per),
        per_participant_attention_s: per,
    })
}

/// Frame counts as CSV, header `observer,<ids...>`.
pub fn attention_matrix_csv(stats: &AttentionStats) -> String {
    let mut s = String::from("observer");
    for p in &stats.participants {
        let _ = write!(s, ",{p}");
    }
    s.push('\n');
    for (p, row) in stats.participants.iter().zip(&stats.pair_frames) {
        let _ = write!(s, "{p}");
        for v in row {
            let _ = write!(s, ",{v}");
        }
        s.push('\n');
    }
    s
}

/// Everything the later stages need from one session.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionAlignment {
    pub group_id: u32,
    pub condition: Condition,
    pub duration_s: f64,
    pub speaking: SpeakingStats,
    pub attention: AttentionStats,
}

impl SessionAlignment {
    pub fn metrics(&self) -> SessionMetrics {
        SessionMetrics {
            group_id: self.group_id,
            condition: self.condition,
            tst: self.speaking.tst_s,
            ast: self.speaking.ast_s,
            stsd: self.speaking.stsd_s,
            tat: self.attention.tat_s,
            aat: self.attention.aat_s,
            atsd: self.attention.atsd_s,
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("alignment serializes") + "\n"
    }

    pub fn read_json(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::schema(path, e.line(), e.to_string()))
    }
}

/// The six per-session metrics, in seconds.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SessionMetrics {
    pub group_id: u32,
    pub condition: Condition,
    pub tst: f64,
    pub ast: f64,
    pub stsd: f64,
    pub tat: f64,
    pub aat: f64,
    pub atsd: f64,
}

const METRICS_HEADER: &str = "group,condition,TST,AST,STSD,TAT,AAT,ATSD";

pub fn metrics_csv(rows: &[SessionMetrics]) -> String {
    let mut s = format!("{METRICS_HEADER}\n");
    for m in rows {
        let _ = writeln!(
            s,
            "{},{},{},{},{},{},{},{}",
            m.group_id, m.condition, m.tst, m.ast, m.stsd, m.tat, m.aat, m.atsd
        );
    }
    s
}

pub fn read_metrics_csv(path: &Path) -> Result<Vec<SessionMetrics>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_metrics_csv(path, &text)
}

pub fn parse_metrics_csv(path: &Path, text: &str) -> Result<Vec<SessionMetrics>> {
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, h)) if h.trim() == METRICS_HEADER => {}
        _ => return Err(Error::schema(path, 1, format!("expected header `{METRICS_HEADER}`"))),
    }
    let mut out = Vec::new();
    for (i, line) in lines {
        if line.trim().is_empty() {
            continue;
        }
        let bad = |msg: &str| Error::schema(path, i + 1, msg.to_string());
        let cols: Vec<&str> = line.split(',').map(str::trim).collect();
        if cols.len() != 8 {
            return Err(bad("expected 8 columns"));
        }
        let num = |k: usize| cols[k].parse::<f64>().map_err(|_| bad("bad number"));
        out.push(SessionMetrics {
            group_id: cols[0].parse().map_err(|_| bad("bad group id"))?,
            condition: Condition::parse(cols[1]).ok_or_else(|| bad("condition must be A or B"))?,
            tst: num(2)?,
            ast: num(3)?,
            stsd: num(4)?,
            tat: num(5)?,
            aat: num(6)?,
            atsd: num(7)?,
        });
    }
    Ok(out)
}
