//! On-disk layout of a `simulate` run and the replay check over it.
//!
//! ```text
//! <out>/manifest.json        how the run was produced
//! <out>/config.json          resolved run configuration and environment
//! <out>/summary.json         outcome histogram, breach totals, per-trial rows
//! <out>/histogram.csv        outcome,count
//! <out>/breach_stats.csv     one row per trial
//! <out>/trials/NNN/metrics.json
//! <out>/trials/NNN/trajectory.csv
//! <out>/trials/NNN/clearance.csv
//! <out>/trials/NNN/depth_samples.csv
//! <out>/trials/NNN/topics/{sensors,detections,commands}.jsonl
//! ```
//!
//! CSV files start with a `# indoornav schema N` comment line; JSON files
//! carry a `schema_version` field.

use std::fs::{self, File};
use std::io::Write;
use std::path::{Path, PathBuf};

use indoornav_core::decision::NavCommand;
use indoornav_core::detect2d::ClassCatalog;
use indoornav_core::shield::{apply_envelope, breach_stats, Direction, EnvelopeConfig, TofFrame};
use indoornav_core::sim::{
    depth_metrics, BinSpec, DepthMetrics, DepthSample, Environment, Outcome, Termination,
    TrialResult,
};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::config::RunConfig;
use crate::wire::{read_topic, topics, DetectionMessage, SensorPacket, TopicRecorder};
use crate::{Error, Result};

pub const LOG_SCHEMA_VERSION: u32 = 1;
const CSV_PREAMBLE: &str = "# indoornav schema 1\n";

pub const MANIFEST: &str = "manifest.json";
pub const CONFIG: &str = "config.json";
pub const SUMMARY: &str = "summary.json";
pub const HISTOGRAM: &str = "histogram.csv";
pub const BREACH_STATS: &str = "breach_stats.csv";
pub const TRIALS: &str = "trials";
pub const METRICS: &str = "metrics.json";
pub const TRAJECTORY: &str = "trajectory.csv";
pub const CLEARANCE: &str = "clearance.csv";
pub const DEPTH_SAMPLES: &str = "depth_samples.csv";
pub const TOPICS: &str = "topics";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub schema_version: u32,
    pub command: String,
    pub args: Vec<String>,
    pub config_path: Option<PathBuf>,
    pub env_path: Option<PathBuf>,
    pub seed: u64,
    pub trials: u64,
    pub version: String,
    pub out_dir: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResolvedConfig {
    pub schema_version: u32,
    pub run: RunConfig,
    pub environment: Environment,
}

/// The depth figures compared by replay.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DepthSummary {
    pub tof_mae_mm: f64,
    pub mono_mae_mm: f64,
    pub pearson_r: f64,
    pub bins_used: usize,
}

impl From<&DepthMetrics> for DepthSummary {
    fn from(m: &DepthMetrics) -> Self {
        Self {
            tof_mae_mm: m.tof_mae_mm,
            mono_mae_mm: m.mono_mae_mm,
            pearson_r: m.pearson_r,
            bins_used: m.bins_used,
        }
    }
}

/// Metrics that replay must reproduce from the recorded data.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplayMetrics {
    pub breach_count: usize,
    pub per_direction: [usize; 6],
    pub mean_clearance_mm: Option<f64>,
    /// `None` when the samples cover fewer than two bins.
    pub depth: Option<DepthSummary>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialMetrics {
    pub schema_version: u32,
    pub index: u64,
    pub seed: u64,
    pub environment: String,
    pub outcome: Outcome,
    pub termination: Termination,
    pub min_true_clearance_mm: f64,
    pub reflex_ticks: usize,
    pub duration_s: f64,
    pub rooms: Vec<u32>,
    pub depth_samples: usize,
    pub live: ReplayMetrics,
}

fn depth_summary(samples: &[DepthSample]) -> Option<DepthSummary> {
    depth_metrics(samples, &BinSpec::default())
        .ok()
        .map(|m| DepthSummary::from(&m))
}

impl TrialMetrics {
    pub fn from_result(index: u64, r: &TrialResult, envelope: &EnvelopeConfig) -> Self {
        let (stats, _) = breach_stats(&r.tof_log, envelope);
        Self {
            schema_version: LOG_SCHEMA_VERSION,
            index,
            seed: r.seed,
            environment: r.environment.clone(),
            outcome: r.outcome,
            termination: r.termination,
            min_true_clearance_mm: r.min_true_clearance_mm,
            reflex_ticks: r.reflex_ticks,
            duration_s: r.duration_s,
            rooms: r.rooms.clone(),
            depth_samples: r.depth_samples.len(),
            live: ReplayMetrics {
                breach_count: r.breach_count,
                per_direction: stats.per_direction,
                mean_clearance_mm: r.mean_clearance_mm,
                depth: depth_summary(&r.depth_samples),
            },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HistogramRow {
    pub outcome: String,
    pub count: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub schema_version: u32,
    pub trials: usize,
    pub histogram: Vec<HistogramRow>,
    pub landed: usize,
    pub collisions: usize,
    pub total_breaches: usize,
    /// Mean of the per-trial mean clearances.
    pub mean_clearance_mm: Option<f64>,
    pub min_true_clearance_mm: f64,
    /// Depth metrics over the samples of all trials.
    pub depth: Option<DepthSummary>,
}

pub fn trial_dir(out: &Path, index: u64) -> PathBuf {
    out.join(TRIALS).join(format!("{index:03}"))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value).map_err(|e| Error::Codec(e.to_string()))?;
    text.push('\n');
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = crate::config::read_text(path)?;
    serde_json::from_str(&text).map_err(|e| Error::schema(path, e.line(), e.to_string()))
}

pub(crate) fn csv_writer(path: &Path) -> Result<csv::Writer<File>> {
    let mut f = File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(CSV_PREAMBLE.as_bytes())
        .map_err(|e| Error::io(path, e))?;
    Ok(csv::Writer::from_writer(f))
}

pub(crate) fn csv_reader(path: &Path) -> Result<csv::Reader<File>> {
    let f = File::open(path).map_err(|e| Error::io(path, e))?;
    Ok(csv::ReaderBuilder::new().comment(Some(b'#')).from_reader(f))
}

pub(crate) fn csv_err(path: &Path, e: csv::Error) -> Error {
    let line = e.position().map_or(0, |p| p.line() as usize);
    Error::schema(path, line, e.to_string())
}

/// Reads every row of a CSV file written by [`csv_writer`] into `T`.
pub(crate) fn read_csv<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>> {
    let mut r = csv_reader(path)?;
    r.deserialize()
        .map(|row| row.map_err(|e| csv_err(path, e)))
        .collect()
}

fn write_rows<T: Serialize>(path: &Path, rows: &[T]) -> Result<()> {
    let mut w = csv_writer(path)?;
    for row in rows {
        w.serialize(row).map_err(|e| csv_err(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

fn direction_columns(prefix: &str) -> impl Iterator<Item = String> + '_ {
    Direction::ALL
        .iter()
        .map(move |d| format!("{prefix}_{}", d.name()))
}

fn write_trajectory(path: &Path, r: &TrialResult) -> Result<()> {
    let mut w = csv_writer(path)?;
    let mut header: Vec<String> = ["t_s", "x_mm", "y_mm", "z_mm", "yaw_deg", "room"]
        .map(String::from)
        .to_vec();
    header.extend(direction_columns("clearance"));
    header.extend(["cmd_vx", "cmd_vy", "cmd_vz", "cmd_yaw_deg", "cmd_source"].map(String::from));
    w.write_record(&header).map_err(|e| csv_err(path, e))?;
    for s in &r.trajectory {
        let mut rec = vec![
            s.t_s.to_string(),
            s.position[0].to_string(),
            s.position[1].to_string(),
            s.position[2].to_string(),
            s.yaw_deg.to_string(),
            s.room.map(|r| r.to_string()).unwrap_or_default(),
        ];
        rec.extend(s.clearances.iter().map(f64::to_string));
        let c = &s.command;
        rec.extend([c.vx, c.vy, c.vz, c.yaw].iter().map(f64::to_string));
        rec.push(format!("{:?}", c.source).to_lowercase());
        w.write_record(&rec).map_err(|e| csv_err(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

fn write_clearance(path: &Path, log: &[TofFrame], envelope: &EnvelopeConfig) -> Result<()> {
    let mut w = csv_writer(path)?;
    let mut header = vec!["timestamp_ms".to_owned()];
    for p in ["raw", "valid", "adjusted", "breach"] {
        header.extend(direction_columns(p));
    }
    w.write_record(&header).map_err(|e| csv_err(path, e))?;
    let mut in_breach = [false; 6];
    for f in log {
        let env = apply_envelope(f, envelope);
        let mut rec = vec![f.timestamp_ms.to_string()];
        rec.extend(f.distances.iter().map(f64::to_string));
        rec.extend(f.valid.iter().map(|&v| u8::from(v).to_string()));
        rec.extend((0..6).map(|i| fmt_opt(env.valid[i].then_some(env.adjusted[i]))));
        // A marker on the tick a breach starts, matching how breaches are counted.
        for i in 0..6 {
            let onset = env.breached[i] && !in_breach[i];
            in_breach[i] = env.breached[i];
            rec.push(u8::from(onset).to_string());
        }
        w.write_record(&rec).map_err(|e| csv_err(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

fn record_topics(dir: &Path, r: &TrialResult, perception_period_ms: u64) -> Result<()> {
    let mut rec = TopicRecorder::create(dir)?;
    for (f, s) in r.tof_log.iter().zip(&r.trajectory) {
        rec.record(topics::SENSORS, f.timestamp_ms, &SensorPacket::new(f, &s.imu))?;
        rec.record(topics::COMMANDS, f.timestamp_ms, &s.command)?;
    }
    let catalog = ClassCatalog::default();
    for frame in &r.detections {
        let t = frame.frame_k * perception_period_ms;
        rec.record(
            topics::DETECTIONS,
            t,
            &DetectionMessage::from_frame(frame, t, &catalog),
        )?;
    }
    // Every topic file exists even when nothing was published on it.
    for t in [topics::SENSORS, topics::COMMANDS, topics::DETECTIONS] {
        let p = TopicRecorder::path_of(dir, t);
        if !p.exists() {
            File::create(&p).map_err(|e| Error::io(&p, e))?;
        }
    }
    rec.finish()?;
    Ok(())
}

/// Writes everything under `trials/NNN/` for one trial.
pub fn write_trial(out: &Path, index: u64, r: &TrialResult, run: &RunConfig) -> Result<TrialMetrics> {
    let dir = trial_dir(out, index);
    fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
    let envelope = &run.trial.envelope;
    write_trajectory(&dir.join(TRAJECTORY), r)?;
    write_clearance(&dir.join(CLEARANCE), &r.tof_log, envelope)?;
    write_rows(&dir.join(DEPTH_SAMPLES), &r.depth_samples)?;
    let period_ms = (run.trial.perception_period_s * 1000.0).round() as u64;
    record_topics(&dir.join(TOPICS), r, period_ms)?;
    let m = TrialMetrics::from_result(index, r, envelope);
    write_json(&dir.join(METRICS), &m)?;
    Ok(m)
}

pub fn summarize(metrics: &[TrialMetrics], pooled_depth: &[DepthSample]) -> RunSummary {
    let histogram = Outcome::ALL
        .iter()
        .map(|o| HistogramRow {
            outcome: o.name().to_owned(),
            count: metrics.iter().filter(|m| m.outcome == *o).count(),
        })
        .collect();
    let means: Vec<f64> = metrics
        .iter()
        .filter_map(|m| m.live.mean_clearance_mm)
        .collect();
    RunSummary {
        schema_version: LOG_SCHEMA_VERSION,
        trials: metrics.len(),
        histogram,
        landed: metrics
            .iter()
            .filter(|m| m.termination == Termination::Landed)
            .count(),
        collisions: metrics
            .iter()
            .filter(|m| m.termination == Termination::Collision)
            .count(),
        total_breaches: metrics.iter().map(|m| m.live.breach_count).sum(),
        mean_clearance_mm: (!means.is_empty())
            .then(|| means.iter().sum::<f64>() / means.len() as f64),
        min_true_clearance_mm: metrics
            .iter()
            .map(|m| m.min_true_clearance_mm)
            .fold(f64::INFINITY, f64::min),
        depth: depth_summary(pooled_depth),
    }
}

/// Writes the run-level files. Call after every trial has been written.
pub fn write_run(
    out: &Path,
    manifest: &RunManifest,
    config: &ResolvedConfig,
    metrics: &[TrialMetrics],
    pooled_depth: &[DepthSample],
) -> Result<RunSummary> {
    fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    write_json(&out.join(MANIFEST), manifest)?;
    write_json(&out.join(CONFIG), config)?;
    let summary = summarize(metrics, pooled_depth);
    write_json(&out.join(SUMMARY), &summary)?;
    write_rows(&out.join(HISTOGRAM), &summary.histogram)?;

    let path = out.join(BREACH_STATS);
    let mut w = csv_writer(&path)?;
    let mut header: Vec<String> = ["trial", "seed", "outcome", "termination", "breach_count"]
        .map(String::from)
        .to_vec();
    header.extend(direction_columns("breaches"));
    header.extend(["mean_clearance_mm", "min_true_clearance_mm"].map(String::from));
    w.write_record(&header).map_err(|e| csv_err(&path, e))?;
    for m in metrics {
        let mut rec = vec![
            m.index.to_string(),
            m.seed.to_string(),
            m.outcome.name().to_owned(),
            format!("{:?}", m.termination).to_lowercase(),
            m.live.breach_count.to_string(),
        ];
        rec.extend(m.live.per_direction.iter().map(usize::to_string));
        rec.push(fmt_opt(m.live.mean_clearance_mm));
        rec.push(m.min_true_clearance_mm.to_string());
        w.write_record(&rec).map_err(|e| csv_err(&path, e))?;
    }
    w.flush().map_err(|e| Error::io(&path, e))?;
    Ok(summary)
}

/// Trial directories of a run, in index order.
pub fn trial_dirs(out: &Path) -> Result<Vec<PathBuf>> {
    let root = out.join(TRIALS);
    let mut dirs: Vec<PathBuf> = fs::read_dir(&root)
        .map_err(|e| Error::io(&root, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.is_dir())
        .collect();
    dirs.sort();
    Ok(dirs)
}

/// Checks that `dir` holds a run and returns its manifest and config.
pub fn open_run(dir: &Path) -> Result<(RunManifest, ResolvedConfig)> {
    let manifest_path = dir.join(MANIFEST);
    if !manifest_path.is_file() {
        return Err(Error::Config(format!(
            "{}: not a run directory (no {MANIFEST})",
            dir.display()
        )));
    }
    let manifest: RunManifest = read_json(&manifest_path)?;
    if manifest.schema_version != LOG_SCHEMA_VERSION {
        return Err(Error::schema(
            &manifest_path,
            1,
            format!("unsupported schema version {}", manifest.schema_version),
        ));
    }
    let config: ResolvedConfig = read_json(&dir.join(CONFIG))?;
    Ok((manifest, config))
}

/// Reads the ToF log of a trial: from the recorded sensor topic when
/// present, otherwise from the clearance table.
pub fn read_tof_log(trial: &Path) -> Result<Vec<TofFrame>> {
    let topic = TopicRecorder::path_of(&trial.join(TOPICS), topics::SENSORS);
    if topic.is_file() {
        return Ok(read_topic::<SensorPacket>(&topic)?
            .into_iter()
            .map(|r| r.payload.tof_frame())
            .collect());
    }
    let path = trial.join(CLEARANCE);
    let mut r = csv_reader(&path)?;
    let mut out = Vec::new();
    for rec in r.records() {
        let rec = rec.map_err(|e| csv_err(&path, e))?;
        let line = rec.position().map_or(0, |p| p.line() as usize);
        let num = |i: usize| -> Result<f64> {
            rec.get(i)
                .and_then(|s| s.parse().ok())
                .ok_or_else(|| Error::schema(&path, line, format!("bad number in column {}", i + 1)))
        };
        let timestamp_ms = num(0)? as u64;
        let mut distances = [0.0; 6];
        let mut valid = [false; 6];
        for i in 0..6 {
            distances[i] = num(1 + i)?;
            valid[i] = num(7 + i)? != 0.0;
        }
        out.push(TofFrame {
            distances,
            valid,
            timestamp_ms,
        });
    }
    Ok(out)
}

pub fn read_depth_samples(trial: &Path) -> Result<Vec<DepthSample>> {
    read_csv(&trial.join(DEPTH_SAMPLES))
}

pub fn read_commands(trial: &Path) -> Result<Vec<NavCommand>> {
    let p = TopicRecorder::path_of(&trial.join(TOPICS), topics::COMMANDS);
    Ok(read_topic::<NavCommand>(&p)?
        .into_iter()
        .map(|r| r.payload)
        .collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialReplay {
    pub index: u64,
    pub live: ReplayMetrics,
    pub replayed: ReplayMetrics,
    pub matches: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplayReport {
    pub schema_version: u32,
    pub trials: Vec<TrialReplay>,
    pub all_match: bool,
}

/// Recomputes breach and depth metrics from the recorded data of every
/// trial and compares them with the values stored at run time.
pub fn replay(dir: &Path) -> Result<ReplayReport> {
    let (manifest, config) = open_run(dir)?;
    let envelope = &config.run.trial.envelope;
    let dirs = trial_dirs(dir)?;
    if dirs.len() as u64 != manifest.trials {
        return Err(Error::schema(
            dir.join(MANIFEST),
            1,
            format!(
                "manifest lists {} trials but {} were found",
                manifest.trials,
                dirs.len()
            ),
        ));
    }
    let mut trials = Vec::with_capacity(dirs.len());
    for t in &dirs {
        let m: TrialMetrics = read_json(&t.join(METRICS))?;
        let log = read_tof_log(t)?;
        let (stats, _) = breach_stats(&log, envelope);
        let depth = read_depth_samples(t)?;
        let replayed = ReplayMetrics {
            breach_count: stats.breach_count,
            per_direction: stats.per_direction,
            mean_clearance_mm: stats.mean_clearance_mm,
            depth: depth_summary(&depth),
        };
        trials.push(TrialReplay {
            index: m.index,
            matches: replayed == m.live,
            live: m.live,
            replayed,
        });
    }
    Ok(ReplayReport {
        schema_version: LOG_SCHEMA_VERSION,
        all_match: trials.iter().all(|t| t.matches),
        trials,
    })
}
