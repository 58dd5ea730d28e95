//! `mma`: run the meeting-analytics pipeline end to end or one stage at a time.
//!
//! Every stage reads and writes the canonical files, so
//! `simulate → pose → attention → align → metrics → report` produces the same
//! bytes as a single `pipeline` run. Failures print a JSON error report on
//! stderr and exit with status 1.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use mma_core::alignment::{read_metrics_csv, SessionAlignment};
use mma_core::attention::read_attention_dump;
use mma_core::bundle::{load_session_with, write_bundle};
use mma_core::pipeline::{
    self, group_records, run_pipeline, stage_align, stage_attention, stage_metrics, stage_pose,
    stage_stats, Manifest, RunConfig, StageError, ALIGNMENT_FILE, ATTENTION_FILE, CONFIG_ENV,
    POSES_FILE,
};
use mma_core::pose::read_pose_dump;
use mma_core::report::{write_report, write_stats, ReportInputs};
use mma_core::sim::{synthesize, Scenario};
use mma_core::stats::PairedMode;
use serde_json::json;

#[derive(Parser, Debug)]
#[command(name = "mma", version, about = "Speaking and attention analytics for round-table sessions")]
struct Cli {
    #[command(flatten)]
    opts: Overrides,
    #[command(subcommand)]
    cmd: Command,
}

#[derive(Copy, Clone, Debug, ValueEnum)]
enum Paired {
    No,
    Yes,
    Both,
}

/// Threshold and statistics overrides, applied on top of the config file.
#[derive(Args, Debug)]
struct Overrides {
    /// TOML file with default settings
    #[arg(long, global = true, env = CONFIG_ENV)]
    config: Option<PathBuf>,
    /// Reading threshold, degrees above the bottom of the vertical field
    #[arg(long, global = true)]
    reading_angle_deg: Option<f64>,
    /// Fraction of the seat gap that belongs to the opposite participant
    #[arg(long, global = true)]
    horizontal_fraction: Option<f64>,
    /// Reject pose fits whose reprojection RMSE exceeds this many pixels
    #[arg(long, global = true)]
    rmse_gate_px: Option<f64>,
    /// Which t-test decides significance
    #[arg(long, global = true, value_enum)]
    paired: Option<Paired>,
    /// Significance level
    #[arg(long, global = true)]
    alpha: Option<f64>,
    /// Frame rate to use instead of the one in the landmark file
    #[arg(long, global = true)]
    fps_override: Option<f64>,
    /// Moving-average window over poses (0 disables)
    #[arg(long, global = true)]
    smoothing_window: Option<usize>,
    /// Keep IQR outliers in the tests instead of excluding them
    #[arg(long, global = true)]
    keep_outliers: bool,
    /// Session worker threads (0 = automatic)
    #[arg(long, global = true)]
    workers: Option<usize>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Synthesize a bundle from a scenario file, or every scenario of a manifest
    Simulate {
        /// Scenario TOML
        scenario: Option<PathBuf>,
        /// Manifest whose scenario sessions are all synthesized into <out>/<key>
        #[arg(long, conflicts_with = "scenario")]
        manifest: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Estimate head poses for a bundle
    Pose {
        bundle: PathBuf,
        /// Output directory for poses.csv
        #[arg(long)]
        out: PathBuf,
    },
    /// Classify gaze targets from a pose dump
    Attention {
        bundle: PathBuf,
        #[arg(long)]
        poses: PathBuf,
        /// Output directory for attention.csv
        #[arg(long)]
        out: PathBuf,
    },
    /// Window attention to speech and compute per-session metrics
    Align {
        bundle: PathBuf,
        #[arg(long)]
        attention: PathBuf,
        /// Output directory for alignment.json and attention_matrix.csv
        #[arg(long)]
        out: PathBuf,
    },
    /// Collect alignment files into one metrics table
    Metrics {
        #[arg(required = true)]
        alignments: Vec<PathBuf>,
        /// Output CSV file
        #[arg(long)]
        out: PathBuf,
    },
    /// Run the statistical battery on a metrics table
    Stats {
        metrics: PathBuf,
        /// Manifest naming groups removed by the experimenters
        #[arg(long)]
        manifest: Option<PathBuf>,
        /// Output directory for stats.json and stats.txt
        #[arg(long)]
        out: PathBuf,
    },
    /// Write heatmap, chord charts, experiment table and statistics
    Report {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        metrics: PathBuf,
        /// Alignment files, one per session
        #[arg(long, num_args = 1.., required = true)]
        alignments: Vec<PathBuf>,
        /// Report directory
        #[arg(long)]
        out: PathBuf,
    },
    /// Run every stage over a manifest of sessions
    Pipeline {
        manifest: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
}

/// What goes into the JSON error report.
#[derive(Debug)]
struct Failure {
    stage: String,
    session: Option<String>,
    message: String,
}

impl Failure {
    fn new(stage: &str, e: impl std::fmt::Display) -> Self {
        Failure {
            stage: stage.to_string(),
            session: None,
            message: e.to_string(),
        }
    }
}

impl From<StageError> for Failure {
    fn from(e: StageError) -> Self {
        Failure {
            stage: e.stage.to_string(),
            session: e.session,
            message: e.source.to_string(),
        }
    }
}

trait Stage<T> {
    fn stage(self, name: &str) -> Result<T, Failure>;
}

impl<T, E: std::fmt::Display> Stage<T> for Result<T, E> {
    fn stage(self, name: &str) -> Result<T, Failure> {
        self.map_err(|e| Failure::new(name, e))
    }
}

fn config(o: &Overrides) -> Result<RunConfig, Failure> {
    let mut cfg = match &o.config {
        Some(path) => {
            let text = std::fs::read_to_string(path).stage("config")?;
            RunConfig::from_toml(path, &text).stage("config")?
        }
        None => RunConfig::default(),
    };
    if let Some(v) = o.reading_angle_deg {
        cfg.reading_angle_deg = v;
    }
    if let Some(v) = o.horizontal_fraction {
        cfg.horizontal_fraction = v;
    }
    if let Some(v) = o.rmse_gate_px {
        cfg.rmse_gate_px = v;
    }
    if let Some(p) = o.paired {
        cfg.paired = match p {
            Paired::No => PairedMode::No,
            Paired::Yes => PairedMode::Yes,
            Paired::Both => PairedMode::Both,
        };
    }
    if let Some(v) = o.alpha {
        cfg.alpha = v;
    }
    if o.fps_override.is_some() {
        cfg.fps_override = o.fps_override;
    }
    if let Some(v) = o.smoothing_window {
        cfg.smoothing_window = v;
    }
    if o.keep_outliers {
        cfg.exclude_outliers = false;
    }
    if let Some(v) = o.workers {
        cfg.workers = v;
    }
    cfg.validate().stage("config")?;
    Ok(cfg)
}

fn mkdir(dir: &Path) -> Result<(), Failure> {
    std::fs::create_dir_all(dir).stage("write")
}

fn run(cli: Cli) -> Result<(), Failure> {
    let cfg = config(&cli.opts)?;
    match cli.cmd {
        Command::Simulate { scenario, manifest, out } => match (scenario, manifest) {
            (Some(path), None) => {
                let s = Scenario::load(&path).stage("simulate")?;
                let syn = synthesize(&s).stage("simulate")?;
                write_bundle(&syn.bundle, &out).stage("write")?;
            }
            (None, Some(path)) => {
                let m = Manifest::load(&path).stage("manifest")?;
                for entry in &m.sessions {
                    let Some(sc) = &entry.scenario else { continue };
                    let s = m.scenario_for(entry, &m.resolve(sc)).stage("simulate")?;
                    let syn = synthesize(&s).map_err(|e| Failure {
                        session: Some(entry.key()),
                        ..Failure::new("simulate", e)
                    })?;
                    write_bundle(&syn.bundle, &out.join(entry.key())).stage("write")?;
                }
            }
            _ => return Err(Failure::new("simulate", "give a scenario file or --manifest")),
        },
        Command::Pose { bundle, out } => {
            let b = load_session_with(&bundle, &cfg.load_options()).stage("load")?;
            let poses = stage_pose(&b, &cfg);
            mkdir(&out)?;
            pipeline::write_poses(&out.join(POSES_FILE), &poses).stage("write")?;
        }
        Command::Attention { bundle, poses, out } => {
            let b = load_session_with(&bundle, &cfg.load_options()).stage("load")?;
            let poses = read_pose_dump(&poses).stage("load")?;
            let records = stage_attention(&b, &poses, &cfg).stage("attention")?;
            mkdir(&out)?;
            pipeline::write_attention(&out.join(ATTENTION_FILE), &records).stage("write")?;
        }
        Command::Align { bundle, attention, out } => {
            let b = load_session_with(&bundle, &cfg.load_options()).stage("load")?;
            let records = read_attention_dump(&attention).stage("load")?;
            let al = stage_align(&b, &records).stage("align")?;
            pipeline::write_alignment(&out, &al).stage("write")?;
        }
        Command::Metrics { alignments, out } => {
            let als = read_alignments(&alignments)?;
            if let Some(dir) = out.parent() {
                mkdir(dir)?;
            }
            pipeline::write_metrics(&out, &stage_metrics(&als)).stage("write")?;
        }
        Command::Stats { metrics, manifest, out } => {
            let rows = read_metrics_csv(&metrics).stage("load")?;
            let m = manifest.map(|p| Manifest::load(&p)).transpose().stage("manifest")?;
            let battery = stage_stats(&rows, m.as_ref(), &cfg);
            write_stats(&out, &battery, &cfg.provenance()).stage("write")?;
        }
        Command::Report { manifest, metrics, alignments, out } => {
            let m = Manifest::load(&manifest).stage("manifest")?;
            let rows = read_metrics_csv(&metrics).stage("load")?;
            let als = read_alignments(&alignments)?;
            let battery = stage_stats(&rows, Some(&m), &cfg);
            let groups = group_records(&m, &als, &battery);
            write_report(
                &out,
                &ReportInputs {
                    metrics: &rows,
                    alignments: &als,
                    groups: &groups,
                    battery: &battery,
                    config_json: cfg.provenance(),
                },
            )
            .stage("report")?;
        }
        Command::Pipeline { manifest, out } => {
            let m = Manifest::load(&manifest).stage("manifest")?;
            let summary = run_pipeline(&m, &cfg, &out)?;
            log::info!(
                "{} sessions processed, results in {}",
                summary.alignments.len(),
                out.display()
            );
        }
    }
    Ok(())
}

fn read_alignments(paths: &[PathBuf]) -> Result<Vec<SessionAlignment>, Failure> {
    paths
        .iter()
        .map(|p| {
            let p = if p.is_dir() { p.join(ALIGNMENT_FILE) } else { p.clone() };
            SessionAlignment::read_json(&p).stage("load")
        })
        .collect()
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            let report = json!({
                "error": {
                    "stage": f.stage,
                    "session": f.session,
                    "message": f.message,
                }
            });
            eprintln!("{report}");
            ExitCode::FAILURE
        }
    }
}
