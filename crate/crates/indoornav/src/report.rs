//! Plot-ready data derived from a run directory. Four tables, each written
//! as CSV (with a schema comment line) or JSON (`{schema_version, rows}`):
//!
//! | file                  | columns |
//! |-----------------------|---------|
//! | `clearance_series`    | trial, timestamp_ms, direction, raw_mm, valid, breach |
//! | `clearance_histogram` | bin_start_mm, bin_end_mm, count |
//! | `depth_scatter`       | bin_center_mm, samples, tof_mean_mm, tof_sd_mm, mono_mean_mm, mono_sd_mm |
//! | `latency`             | component, kind, nominal_ms, mean_ms, p95_ms, samples |
//!
//! `breach` is 1 on the tick a sensor enters the breached state, so the
//! markers of a trial add up to its breach count. The histogram pools valid
//! raw readings of every direction in 100 mm bins.

use std::path::{Path, PathBuf};

use indoornav_core::shield::{apply_envelope, Direction};
use indoornav_core::sim::{BinSpec, DepthSample};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::logs::{self, csv_err, csv_writer, read_csv, LOG_SCHEMA_VERSION};
use crate::pipeline::{LatencyReport, PipelineConfig};
use crate::{Error, Result};

pub const HISTOGRAM_BIN_MM: f64 = 100.0;
pub const LATENCY_JSON: &str = "latency.json";
pub const LATENCY_CSV: &str = "latency.csv";

pub const SERIES: &str = "clearance_series";
pub const CLEARANCE_HISTOGRAM: &str = "clearance_histogram";
pub const DEPTH_SCATTER: &str = "depth_scatter";
pub const LATENCY: &str = "latency";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Format {
    Csv,
    Json,
}

impl Format {
    pub fn ext(self) -> &'static str {
        match self {
            Format::Csv => "csv",
            Format::Json => "json",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeriesRow {
    pub trial: u64,
    pub timestamp_ms: u64,
    pub direction: String,
    pub raw_mm: f64,
    pub valid: u8,
    pub breach: u8,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HistogramBin {
    pub bin_start_mm: f64,
    pub bin_end_mm: f64,
    pub count: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScatterRow {
    pub bin_center_mm: f64,
    pub samples: usize,
    pub tof_mean_mm: f64,
    pub tof_sd_mm: f64,
    pub mono_mean_mm: f64,
    pub mono_sd_mm: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LatencyRow {
    pub component: String,
    pub kind: String,
    pub nominal_ms: f64,
    pub mean_ms: f64,
    pub p95_ms: f64,
    pub samples: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Table<T> {
    pub schema_version: u32,
    pub rows: Vec<T>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReportData {
    pub series: Vec<SeriesRow>,
    pub histogram: Vec<HistogramBin>,
    pub scatter: Vec<ScatterRow>,
    pub latency: Vec<LatencyRow>,
    /// Whether the latency rows were measured or are the configured values.
    pub latency_measured: bool,
}

fn mean_sd(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let sd = if xs.len() > 1 {
        (xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1.0)).sqrt()
    } else {
        0.0
    };
    (mean, sd)
}

/// Per-bin mean and sample standard deviation of both sensors.
pub fn depth_scatter(samples: &[DepthSample], bins: &BinSpec) -> Vec<ScatterRow> {
    let mut per_bin: Vec<(Vec<f64>, Vec<f64>)> = vec![Default::default(); bins.count];
    for s in samples {
        if let Some(i) = bins.bin_of(s.truth_mm) {
            per_bin[i].0.push(s.tof_mm);
            per_bin[i].1.push(s.mono_mm);
        }
    }
    per_bin
        .iter()
        .enumerate()
        .filter(|(_, b)| !b.0.is_empty())
        .map(|(i, (tof, mono))| {
            let (tm, ts) = mean_sd(tof);
            let (mm, ms) = mean_sd(mono);
            ScatterRow {
                bin_center_mm: bins.center(i),
                samples: tof.len(),
                tof_mean_mm: tm,
                tof_sd_mm: ts,
                mono_mean_mm: mm,
                mono_sd_mm: ms,
            }
        })
        .collect()
}

pub fn clearance_histogram(values: &[f64], max_mm: f64) -> Vec<HistogramBin> {
    let n = (max_mm / HISTOGRAM_BIN_MM).ceil() as usize;
    let mut counts = vec![0u64; n.max(1)];
    for &v in values {
        let i = ((v / HISTOGRAM_BIN_MM).floor() as usize).min(counts.len() - 1);
        counts[i] += 1;
    }
    counts
        .into_iter()
        .enumerate()
        .map(|(i, count)| HistogramBin {
            bin_start_mm: i as f64 * HISTOGRAM_BIN_MM,
            bin_end_mm: (i + 1) as f64 * HISTOGRAM_BIN_MM,
            count,
        })
        .collect()
}

pub fn latency_rows(r: &LatencyReport) -> Vec<LatencyRow> {
    let mut rows: Vec<LatencyRow> = r
        .stages
        .iter()
        .chain([&r.parallel, &r.overhead])
        .map(|s| LatencyRow {
            component: s.name.clone(),
            kind: s.kind.clone(),
            nominal_ms: s.nominal_ms,
            mean_ms: s.observed.mean_ms,
            p95_ms: s.observed.p95_ms,
            samples: s.observed.samples,
        })
        .collect();
    rows.push(LatencyRow {
        component: "end_to_end".into(),
        kind: "total".into(),
        nominal_ms: r.nominal_effective_ms,
        mean_ms: r.effective.mean_ms,
        p95_ms: r.effective.p95_ms,
        samples: r.effective.samples,
    });
    rows
}

/// Builds all four tables from a run directory. A `latency.json` written
/// by the `latency` command in the same directory is used when present;
/// otherwise the latency table lists the default configured delays.
pub fn build(dir: &Path) -> Result<ReportData> {
    let (_, config) = logs::open_run(dir)?;
    let envelope = &config.run.trial.envelope;
    let mut series = Vec::new();
    let mut values = Vec::new();
    let mut depth = Vec::new();
    for t in logs::trial_dirs(dir)? {
        let m: logs::TrialMetrics = logs::read_json(&t.join(logs::METRICS))?;
        let mut in_breach = [false; 6];
        for f in logs::read_tof_log(&t)? {
            let env = apply_envelope(&f, envelope);
            for d in Direction::ALL {
                let i = d.index();
                let onset = env.breached[i] && !in_breach[i];
                in_breach[i] = env.breached[i];
                if f.valid[i] {
                    values.push(f.distances[i]);
                }
                series.push(SeriesRow {
                    trial: m.index,
                    timestamp_ms: f.timestamp_ms,
                    direction: d.name().to_owned(),
                    raw_mm: f.distances[i],
                    valid: u8::from(f.valid[i]),
                    breach: u8::from(onset),
                });
            }
        }
        depth.extend(logs::read_depth_samples(&t)?);
    }
    let latency_path = dir.join(LATENCY_JSON);
    let (latency, latency_measured) = if latency_path.is_file() {
        (LatencyReport::read_json(&latency_path)?, true)
    } else {
        (LatencyReport::nominal(&PipelineConfig::default()), false)
    };
    Ok(ReportData {
        series,
        histogram: clearance_histogram(&values, envelope.max_range_mm),
        scatter: depth_scatter(&depth, &BinSpec::default()),
        latency: latency_rows(&latency),
        latency_measured,
    })
}

fn write_table<T: Serialize>(out: &Path, name: &str, rows: &[T], fmt: Format) -> Result<PathBuf> {
    let path = out.join(format!("{name}.{}", fmt.ext()));
    match fmt {
        Format::Csv => {
            let mut w = csv_writer(&path)?;
            for r in rows {
                w.serialize(r).map_err(|e| csv_err(&path, e))?;
            }
            w.flush().map_err(|e| Error::io(&path, e))?;
        }
        Format::Json => {
            #[derive(Serialize)]
            struct TableRef<'a, T> {
                schema_version: u32,
                rows: &'a [T],
            }
            let table = TableRef {
                schema_version: LOG_SCHEMA_VERSION,
                rows,
            };
            let text =
                serde_json::to_string_pretty(&table).map_err(|e| Error::Codec(e.to_string()))?;
            std::fs::write(&path, text + "\n").map_err(|e| Error::io(&path, e))?;
        }
    }
    Ok(path)
}

pub fn read_table<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>> {
    match path.extension().and_then(|e| e.to_str()) {
        Some("csv") => read_csv(path),
        Some("json") => Ok(logs::read_json::<Table<T>>(path)?.rows),
        _ => Err(Error::Config(format!("{}: not a report table", path.display()))),
    }
}

/// Writes the four tables into `out` and returns their paths.
pub fn write(data: &ReportData, out: &Path, fmt: Format) -> Result<Vec<PathBuf>> {
    std::fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    Ok(vec![
        write_table(out, SERIES, &data.series, fmt)?,
        write_table(out, CLEARANCE_HISTOGRAM, &data.histogram, fmt)?,
        write_table(out, DEPTH_SCATTER, &data.scatter, fmt)?,
        write_table(out, LATENCY, &data.latency, fmt)?,
    ])
}
