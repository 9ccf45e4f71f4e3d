//! Latency samples collected while the pipeline runs, and the report built
//! from them.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;
use std::sync::atomic::{AtomicU64, Ordering};
use std::time::Duration;

use parking_lot::Mutex;
use serde::{Deserialize, Serialize};

use super::{PipelineConfig, StageKind};
use crate::{Error, Result};

pub(crate) const PARALLEL: &str = "parallel_perception";
pub(crate) const OVERHEAD: &str = "overhead";
pub(crate) const END_TO_END: &str = "end_to_end";
pub(crate) const REFLEX: &str = "reflex";

#[derive(Default)]
pub(crate) struct Recorder {
    samples: Mutex<BTreeMap<String, Vec<f64>>>,
    pub(crate) next_cycle: AtomicU64,
    pub(crate) cycles: AtomicU64,
    pub(crate) lost_cycles: AtomicU64,
}

impl Recorder {
    pub(crate) fn record(&self, key: &str, d: Duration) {
        self.samples
            .lock()
            .entry(key.to_owned())
            .or_default()
            .push(d.as_secs_f64() * 1e3);
    }

    pub(crate) fn cycle_done(&self, e2e: Duration) {
        self.record(END_TO_END, e2e);
        self.cycles.fetch_add(1, Ordering::SeqCst);
    }

    fn summary(&self, key: &str) -> Summary {
        Summary::of(self.samples.lock().get(key).map_or(&[][..], |v| v))
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub mean_ms: f64,
    pub p95_ms: f64,
    pub samples: usize,
}

impl Summary {
    /// Mean and nearest-rank 95th percentile. Empty input gives zeros.
    pub fn of(xs: &[f64]) -> Self {
        if xs.is_empty() {
            return Self::default();
        }
        let mut v = xs.to_vec();
        v.sort_by(f64::total_cmp);
        let rank = ((0.95 * v.len() as f64).ceil() as usize).clamp(1, v.len());
        Self {
            mean_ms: v.iter().sum::<f64>() / v.len() as f64,
            p95_ms: v[rank - 1],
            samples: v.len(),
        }
    }

    fn fixed(ms: f64) -> Self {
        Self {
            mean_ms: ms,
            p95_ms: ms,
            samples: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageLatency {
    pub name: String,
    pub kind: String,
    pub nominal_ms: f64,
    pub observed: Summary,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LatencyReport {
    /// Configured stages in pipeline order.
    pub stages: Vec<StageLatency>,
    /// Frame published until the last parallel member finished.
    pub parallel: StageLatency,
    pub overhead: StageLatency,
    /// Capture start until the sink finished, per completed cycle.
    pub effective: Summary,
    /// Observed means composed as source + parallel + sequential + overhead.
    pub composed_ms: f64,
    /// The same composition over configured delays.
    pub nominal_effective_ms: f64,
    /// Sensor tick until the reflex command was issued.
    pub reflex: Summary,
    pub cycles: u64,
    pub lost_cycles: u64,
}

fn kind_name(k: StageKind) -> &'static str {
    match k {
        StageKind::Source => "source",
        StageKind::ParallelPerception => "parallel_perception",
        StageKind::SequentialDecision => "sequential_decision",
        StageKind::Sink => "sink",
    }
}

fn compose(stages: &[StageLatency], parallel: &StageLatency, overhead: &StageLatency) -> f64 {
    let serial: f64 = stages
        .iter()
        .filter(|s| s.kind != "parallel_perception")
        .map(|s| s.observed.mean_ms)
        .sum();
    serial + parallel.observed.mean_ms + overhead.observed.mean_ms
}

impl LatencyReport {
    pub(crate) fn from_recorder(cfg: &PipelineConfig, rec: &Recorder) -> Self {
        let stages: Vec<_> = cfg
            .stages
            .iter()
            .map(|s| StageLatency {
                name: s.name.clone(),
                kind: kind_name(s.kind).to_owned(),
                nominal_ms: s.delay.mean_ms(),
                observed: rec.summary(&s.name),
            })
            .collect();
        let parallel = StageLatency {
            name: PARALLEL.into(),
            kind: "aggregate".into(),
            nominal_ms: cfg.nominal_parallel_ms(),
            observed: rec.summary(PARALLEL),
        };
        let overhead = StageLatency {
            name: OVERHEAD.into(),
            kind: "overhead".into(),
            nominal_ms: cfg.overhead.mean_ms(),
            observed: rec.summary(OVERHEAD),
        };
        let composed_ms = compose(&stages, &parallel, &overhead);
        Self {
            stages,
            parallel,
            overhead,
            effective: rec.summary(END_TO_END),
            composed_ms,
            nominal_effective_ms: cfg.nominal_effective_ms(),
            reflex: rec.summary(REFLEX),
            cycles: rec.cycles.load(Ordering::SeqCst),
            lost_cycles: rec.lost_cycles.load(Ordering::SeqCst),
        }
    }

    /// Report with every observation set to its configured value, for when
    /// nothing was measured.
    pub fn nominal(cfg: &PipelineConfig) -> Self {
        let stage = |name: &str, kind: &str, ms: f64| StageLatency {
            name: name.into(),
            kind: kind.into(),
            nominal_ms: ms,
            observed: Summary::fixed(ms),
        };
        let stages: Vec<_> = cfg
            .stages
            .iter()
            .map(|s| stage(&s.name, kind_name(s.kind), s.delay.mean_ms()))
            .collect();
        let parallel = stage(PARALLEL, "aggregate", cfg.nominal_parallel_ms());
        let overhead = stage(OVERHEAD, "overhead", cfg.overhead.mean_ms());
        let total = cfg.nominal_effective_ms();
        Self {
            stages,
            parallel,
            overhead,
            effective: Summary::fixed(total),
            composed_ms: total,
            nominal_effective_ms: total,
            reflex: Summary::default(),
            cycles: 0,
            lost_cycles: 0,
        }
    }

    /// Largest observed mean among the parallel members.
    pub fn max_parallel_member_ms(&self) -> f64 {
        self.stages
            .iter()
            .filter(|s| s.kind == "parallel_perception")
            .map(|s| s.observed.mean_ms)
            .fold(0.0, f64::max)
    }

    pub fn to_json(&self) -> Result<String> {
        serde_json::to_string_pretty(self).map_err(|e| Error::Codec(e.to_string()))
    }

    /// One row per component plus the effective and reflex rows.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("component,kind,nominal_ms,mean_ms,p95_ms,samples\n");
        let mut row = |name: &str, kind: &str, nominal: f64, s: &Summary| {
            let _ = writeln!(
                out,
                "{name},{kind},{nominal:.3},{:.3},{:.3},{}",
                s.mean_ms, s.p95_ms, s.samples
            );
        };
        for s in self.stages.iter().chain([&self.parallel, &self.overhead]) {
            row(&s.name, &s.kind, s.nominal_ms, &s.observed);
        }
        row(END_TO_END, "total", self.nominal_effective_ms, &self.effective);
        row(REFLEX, "reflex", f64::NAN, &self.reflex);
        out
    }

    pub fn write(&self, json_path: &Path, csv_path: &Path) -> Result<()> {
        std::fs::write(json_path, self.to_json()?).map_err(|e| Error::io(json_path, e))?;
        std::fs::write(csv_path, self.to_csv()).map_err(|e| Error::io(csv_path, e))
    }

    pub fn read_json(path: &Path) -> Result<Self> {
        let text = crate::config::read_text(path)?;
        serde_json::from_str(&text).map_err(|e| Error::schema(path, e.line(), e.to_string()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn p95_is_nearest_rank() {
        let xs: Vec<f64> = (1..=100).map(f64::from).collect();
        let s = Summary::of(&xs);
        assert_eq!(s.p95_ms, 95.0);
        assert_eq!(s.mean_ms, 50.5);
        assert_eq!(Summary::of(&[7.0]).p95_ms, 7.0);
        assert_eq!(Summary::of(&[]).samples, 0);
    }

    #[test]
    fn nominal_report_composes_configured_delays() {
        let r = LatencyReport::nominal(&PipelineConfig::default());
        assert_eq!(r.parallel.nominal_ms, 500.0);
        assert_eq!(r.nominal_effective_ms, 967.0);
        assert_eq!(r.composed_ms, 967.0);
        let csv = r.to_csv();
        assert!(csv.lines().any(|l| l.starts_with("llm,sequential_decision,400.000")));
    }
}
