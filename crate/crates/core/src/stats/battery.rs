//! The per-metric battery: screen for outliers, check the prerequisites, then
//! compare the two conditions.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::{self, Write as _};

use log::info;
use serde::{Deserialize, Serialize};

use super::descriptive::iqr_fences;
use super::hypothesis::{cohens_d, levene, t_test, EffectLabel, TestResult};
use super::shapiro::shapiro_wilk;
use super::StatsError;
use crate::alignment::SessionMetrics;
use crate::model::Condition;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum Metric {
    Tst,
    Ast,
    Stsd,
    Tat,
    Aat,
    Atsd,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Family {
    Speaking,
    Attention,
}

impl Family {
    pub fn metrics(self) -> [Metric; 3] {
        match self {
            Family::Speaking => [Metric::Tst, Metric::Ast, Metric::Stsd],
            Family::Attention => [Metric::Tat, Metric::Aat, Metric::Atsd],
        }
    }

    fn describe(self) -> &'static str {
        match self {
            Family::Speaking => "speaking-time",
            Family::Attention => "attention-time",
        }
    }
}

impl Metric {
    pub const ALL: [Metric; 6] = [
        Metric::Tst,
        Metric::Ast,
        Metric::Stsd,
        Metric::Tat,
        Metric::Aat,
        Metric::Atsd,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Metric::Tst => "TST",
            Metric::Ast => "AST",
            Metric::Stsd => "STSD",
            Metric::Tat => "TAT",
            Metric::Aat => "AAT",
            Metric::Atsd => "ATSD",
        }
    }

    pub fn family(self) -> Family {
        match self {
            Metric::Tst | Metric::Ast | Metric::Stsd => Family::Speaking,
            _ => Family::Attention,
        }
    }

    pub fn of(self, m: &SessionMetrics) -> f64 {
        match self {
            Metric::Tst => m.tst,
            Metric::Ast => m.ast,
            Metric::Stsd => m.stsd,
            Metric::Tat => m.tat,
            Metric::Aat => m.aat,
            Metric::Atsd => m.atsd,
        }
    }
}

impl fmt::Display for Metric {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// One metric's per-group values under one condition.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricSample {
    pub metric: Metric,
    pub condition: Condition,
    pub values: Vec<f64>,
    pub group_ids: Vec<u32>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PairedMode {
    #[default]
    No,
    Yes,
    Both,
}

impl PairedMode {
    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "no" => Some(PairedMode::No),
            "yes" => Some(PairedMode::Yes),
            "both" => Some(PairedMode::Both),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BatteryOptions {
    pub alpha: f64,
    pub paired: PairedMode,
    /// Drop flagged groups from both conditions of the affected family.
    pub exclude_outliers: bool,
}

impl Default for BatteryOptions {
    fn default() -> Self {
        BatteryOptions {
            alpha: 0.05,
            paired: PairedMode::No,
            exclude_outliers: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StatReport {
    pub metric: Metric,
    pub group_ids: Vec<u32>,
    pub mean_a: f64,
    pub mean_b: f64,
    pub shapiro_a: TestResult,
    pub shapiro_b: TestResult,
    pub levene: TestResult,
    /// Independent-samples pooled test, absent in paired-only mode.
    pub t_independent: Option<TestResult>,
    pub t_paired: Option<TestResult>,
    /// The p-value significance is judged on.
    pub t_p: f64,
    pub cohens_d: f64,
    pub effect_label: EffectLabel,
    pub prerequisites_met: bool,
    pub significant: bool,
}

impl StatReport {
    pub fn shapiro_p_a(&self) -> f64 {
        self.shapiro_a.p
    }

    pub fn shapiro_p_b(&self) -> f64 {
        self.shapiro_b.p
    }

    pub fn levene_p(&self) -> f64 {
        self.levene.p
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub metric: Metric,
    /// Groups this metric's own values flag in either condition.
    pub outliers: Vec<u32>,
    /// Groups removed before testing (flagged anywhere in the family).
    pub excluded: Vec<u32>,
    pub report: Option<StatReport>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BatteryReport {
    pub options: BatteryOptions,
    pub metrics: Vec<MetricReport>,
    pub log: Vec<String>,
}

impl BatteryReport {
    pub fn get(&self, metric: Metric) -> Option<&MetricReport> {
        self.metrics.iter().find(|m| m.metric == metric)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes") + "\n"
    }
}

fn compare(
    metric: Metric,
    ids: &[u32],
    a: &[f64],
    b: &[f64],
    opts: &BatteryOptions,
) -> Result<StatReport, StatsError> {
    let w_a = shapiro_wilk(a)?;
    let w_b = shapiro_wilk(b)?;
    let lev = levene(a, b)?;
    let t_ind = match opts.paired {
        PairedMode::Yes => None,
        _ => Some(t_test(a, b, false)?),
    };
    let t_pair = match opts.paired {
        PairedMode::No => None,
        _ => Some(t_test(a, b, true)?),
    };
    let t_p = t_ind.or(t_pair).map(|t| t.p).expect("one test always runs");
    let d = cohens_d(a, b)?;
    let shapiro_a = TestResult { statistic: w_a.0, p: w_a.1 };
    let shapiro_b = TestResult { statistic: w_b.0, p: w_b.1 };
    Ok(StatReport {
        metric,
        group_ids: ids.to_vec(),
        mean_a: super::mean(a),
        mean_b: super::mean(b),
        prerequisites_met: shapiro_a.p > opts.alpha && shapiro_b.p > opts.alpha && lev.p > opts.alpha,
        significant: t_p <= opts.alpha,
        shapiro_a,
        shapiro_b,
        levene: lev,
        t_independent: t_ind,
        t_paired: t_pair,
        t_p,
        cohens_d: d,
        effect_label: EffectLabel::of(d),
    })
}

/// Runs the full battery over per-session metric rows. Only groups with a
/// session in both conditions take part; failures are recorded per metric.
pub fn run_battery(rows: &[SessionMetrics], opts: &BatteryOptions) -> BatteryReport {
    let mut log = Vec::new();
    let mut by_group: BTreeMap<u32, [Option<&SessionMetrics>; 2]> = BTreeMap::new();
    for r in rows {
        let slot = match r.condition {
            Condition::NoCoordination => 0,
            Condition::PlanningPoker => 1,
        };
        by_group.entry(r.group_id).or_default()[slot] = Some(r);
    }
    let mut ids = Vec::new();
    let mut pairs = Vec::new();
    for (g, [a, b]) in &by_group {
        match (a, b) {
            (Some(a), Some(b)) => {
                ids.push(*g);
                pairs.push((*a, *b));
            }
            _ => {
                let msg = format!("group {g} lacks a session in one condition and is left out of the tests");
                info!("{msg}");
                log.push(msg);
            }
        }
    }

    let mut metrics = Vec::new();
    for family in [Family::Speaking, Family::Attention] {
        let mut flagged: BTreeMap<Metric, BTreeSet<u32>> = BTreeMap::new();
        let mut screen_error = None;
        for metric in family.metrics() {
            let set = flagged.entry(metric).or_default();
            for (cond, pick) in [("A", 0usize), ("B", 1usize)] {
                let values: Vec<f64> = pairs
                    .iter()
                    .map(|p| metric.of(if pick == 0 { p.0 } else { p.1 }))
                    .collect();
                match iqr_fences(&values) {
                    Ok((lo, hi)) => {
                        for (g, v) in ids.iter().zip(&values) {
                            if *v < lo || *v > hi {
                                set.insert(*g);
                                let msg = format!(
                                    "group {g}: {metric} ({cond}) = {v:.4} lies outside the IQR fences [{lo:.4}, {hi:.4}]"
                                );
                                info!("{msg}");
                                log.push(msg);
                            }
                        }
                    }
                    Err(e) => screen_error = Some(format!("outlier screen: {e}")),
                }
            }
        }
        let family_flagged: BTreeSet<u32> = flagged.values().flatten().copied().collect();
        let excluded: Vec<u32> = if opts.exclude_outliers {
            family_flagged.iter().copied().collect()
        } else {
            Vec::new()
        };
        for g in &excluded {
            let msg = format!(
                "group {g} excluded from both conditions of the {} metrics",
                family.describe()
            );
            info!("{msg}");
            log.push(msg);
        }

        for metric in family.metrics() {
            let outliers: Vec<u32> = flagged[&metric].iter().copied().collect();
            let mut report = MetricReport {
                metric,
                outliers,
                excluded: excluded.clone(),
                report: None,
                error: None,
            };
            if let Some(e) = &screen_error {
                report.error = Some(format!("{metric}: {e}"));
                metrics.push(report);
                continue;
            }
            let kept: Vec<(u32, f64, f64)> = ids
                .iter()
                .zip(&pairs)
                .filter(|(g, _)| !excluded.contains(g))
                .map(|(g, p)| (*g, metric.of(p.0), metric.of(p.1)))
                .collect();
            let g: Vec<u32> = kept.iter().map(|k| k.0).collect();
            let a: Vec<f64> = kept.iter().map(|k| k.1).collect();
            let b: Vec<f64> = kept.iter().map(|k| k.2).collect();
            match compare(metric, &g, &a, &b, opts) {
                Ok(r) => report.report = Some(r),
                Err(e) => report.error = Some(format!("{metric}: {e}")),
            }
            metrics.push(report);
        }
    }
    BatteryReport {
        options: *opts,
        metrics,
        log,
    }
}

fn fmt_p(v: f64) -> String {
    format!("{v:.6}")
}

/// Aligned text rendering: one table per metric family.
pub fn render_text(report: &BatteryReport) -> String {
    let mut s = String::new();
    let o = &report.options;
    let _ = writeln!(
        s,
        "alpha = {}, t-test = {}, outlier exclusion = {}",
        o.alpha,
        match o.paired {
            PairedMode::No => "independent",
            PairedMode::Yes => "paired",
            PairedMode::Both => "independent (paired also shown)",
        },
        if o.exclude_outliers { "on" } else { "off" }
    );
    let headers = [
        "Variable",
        "p-value (t)",
        "Shapiro-Wilk A",
        "Shapiro-Wilk B",
        "Levene",
        "Cohen's d",
        "Effect",
        "p (paired)",
        "Outliers",
    ];
    for family in [Family::Speaking, Family::Attention] {
        let _ = writeln!(s, "\n{} statistics", capitalize(family.describe()));
        let mut rows: Vec<[String; 9]> = Vec::new();
        for m in report.metrics.iter().filter(|m| m.metric.family() == family) {
            let outliers = m
                .outliers
                .iter()
                .map(u32::to_string)
                .collect::<Vec<_>>()
                .join(" ");
            let row = match (&m.report, &m.error) {
                (Some(r), _) => [
                    r.metric.name().to_string(),
                    fmt_p(r.t_p) + if r.significant { " *" } else { "" },
                    fmt_p(r.shapiro_a.p),
                    fmt_p(r.shapiro_b.p),
                    fmt_p(r.levene.p),
                    format!("{:.3}", r.cohens_d),
                    r.effect_label.to_string(),
                    r.t_paired.map(|t| fmt_p(t.p)).unwrap_or_else(|| "-".into()),
                    outliers,
                ],
                (None, e) => {
                    let msg = e.clone().unwrap_or_default();
                    [
                        m.metric.name().to_string(),
                        format!("error: {msg}"),
                        String::new(),
                        String::new(),
                        String::new(),
                        String::new(),
                        String::new(),
                        String::new(),
                        outliers,
                    ]
                }
            };
            rows.push(row);
        }
        let widths: Vec<usize> = (0..headers.len())
            .map(|c| {
                rows.iter()
                    .filter(|r| !r[1].starts_with("error"))
                    .map(|r| r[c].chars().count())
                    .chain([headers[c].chars().count()])
                    .max()
                    .unwrap_or(0)
            })
            .collect();
        let line = |cells: &[String]| {
            let mut l = String::new();
            for (c, cell) in cells.iter().enumerate() {
                if c > 0 {
                    l.push_str("  ");
                }
                let pad = widths[c].saturating_sub(cell.chars().count());
                l.push_str(cell);
                l.extend(std::iter::repeat_n(' ', pad));
            }
            l.trim_end().to_string()
        };
        let header_cells: Vec<String> = headers.iter().map(|h| h.to_string()).collect();
        let _ = writeln!(s, "{}", line(&header_cells));
        for r in &rows {
            let _ = writeln!(s, "{}", line(r));
        }
    }
    if !report.log.is_empty() {
        let _ = writeln!(s, "\nScreening log");
        for l in &report.log {
            let _ = writeln!(s, "  {l}");
        }
    }
    s
}

fn capitalize(s: &str) -> String {
    let mut c = s.chars();
    match c.next() {
        Some(f) => f.to_uppercase().collect::<String>() + c.as_str(),
        None => String::new(),
    }
}
