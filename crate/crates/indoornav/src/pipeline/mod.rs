//! Threaded perception and decision pipeline with simulated stage delays.
//!
//! One cycle: the source captures a frame, every parallel member works on
//! that frame, an aggregator waits for all of them, the sequential stages
//! run in order on the newest bundle, and the sink transmits and signals the
//! source to capture again. Next to that loop a sensor bridge ticks every
//! few milliseconds and feeds the reflex stage, which never waits on the
//! slow path.

mod latency;
mod supervisor;

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;
use std::sync::atomic::Ordering;
use std::sync::Arc;
use std::thread;
use std::time::{Duration, Instant};

use indoornav_core::shield::{apply_envelope, reflex_check, EnvelopeConfig, TofFrame};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::wire::{topics, Bus, EndpointConfig, TopicStats, DEFAULT_QUEUE_CAPACITY};
use crate::{Error, Result};

pub use latency::{LatencyReport, StageLatency, Summary};
use latency::{Recorder, OVERHEAD, PARALLEL, REFLEX};
pub use supervisor::{
    EventKind, ShutdownReport, StageCtx, StageDef, StageHealth, Supervisor, WatchdogEvent,
    SHUTDOWN_BUDGET,
};

const POLL: Duration = Duration::from_millis(2);
const CYCLE_TOPIC: &str = "cycle";
const BUNDLE_TOPIC: &str = "bundle";
const AGGREGATE: &str = "aggregate";
const SENSOR_BRIDGE: &str = "sensor_bridge";
const RESERVED: [&str; 7] = [
    AGGREGATE,
    SENSOR_BRIDGE,
    REFLEX,
    PARALLEL,
    OVERHEAD,
    "end_to_end",
    CYCLE_TOPIC,
];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StageKind {
    Source,
    ParallelPerception,
    SequentialDecision,
    Sink,
}

/// Simulated processing time: a fixed number of milliseconds, or a range
/// sampled uniformly per message.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Delay {
    Fixed(f64),
    Range { min_ms: f64, max_ms: f64 },
}

impl Delay {
    pub fn mean_ms(&self) -> f64 {
        match *self {
            Delay::Fixed(ms) => ms,
            Delay::Range { min_ms, max_ms } => 0.5 * (min_ms + max_ms),
        }
    }

    pub fn validate(&self) -> std::result::Result<(), String> {
        match *self {
            Delay::Fixed(ms) if ms.is_finite() && ms >= 0.0 => Ok(()),
            Delay::Range { min_ms, max_ms }
                if min_ms.is_finite() && max_ms.is_finite() && 0.0 <= min_ms && min_ms <= max_ms =>
            {
                Ok(())
            }
            other => Err(format!("invalid delay {other:?}")),
        }
    }

    fn sample(&self, rng: &mut ChaCha8Rng) -> Duration {
        let ms = match *self {
            Delay::Fixed(ms) => ms,
            Delay::Range { min_ms, max_ms } if min_ms < max_ms => rng.random_range(min_ms..max_ms),
            Delay::Range { min_ms, .. } => min_ms,
        };
        Duration::from_secs_f64(ms / 1e3)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StageSpec {
    pub name: String,
    pub kind: StageKind,
    pub delay: Delay,
    #[serde(default)]
    pub critical: bool,
}

impl StageSpec {
    pub fn new(name: &str, kind: StageKind, delay: Delay, critical: bool) -> Self {
        Self {
            name: name.to_owned(),
            kind,
            delay,
            critical,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    /// Source first, then parallel members, sequential stages in execution
    /// order, and the sink.
    pub stages: Vec<StageSpec>,
    pub overhead: Delay,
    pub watchdog_interval_ms: u64,
    pub sensor_period_ms: u64,
    /// Time from a sensor tick until its reading is available.
    pub sensor_link_ms: f64,
    pub queue_capacity: usize,
    /// Stop after this many completed cycles even if time remains.
    pub max_cycles: Option<u64>,
    pub seed: u64,
    pub envelope: EnvelopeConfig,
    pub endpoints: EndpointConfig,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        use Delay::Fixed;
        use StageKind::*;
        Self {
            stages: vec![
                StageSpec::new("camera", Source, Fixed(30.0), true),
                StageSpec::new("sensors", ParallelPerception, Fixed(10.0), true),
                StageSpec::new("yolo", ParallelPerception, Fixed(10.0), true),
                StageSpec::new("depth", ParallelPerception, Fixed(33.0), false),
                StageSpec::new("vlm", ParallelPerception, Fixed(500.0), false),
                StageSpec::new("llm", SequentialDecision, Fixed(400.0), true),
                StageSpec::new("tx", Sink, Fixed(12.0), true),
            ],
            overhead: Fixed(25.0),
            watchdog_interval_ms: 250,
            sensor_period_ms: 10,
            sensor_link_ms: 5.0,
            queue_capacity: DEFAULT_QUEUE_CAPACITY,
            max_cycles: None,
            seed: 0,
            envelope: EnvelopeConfig::default(),
            endpoints: EndpointConfig::default(),
        }
    }
}

impl PipelineConfig {
    /// Default stages with transmission (5 to 20 ms) and overheads (10 to
    /// 40 ms) drawn from ranges instead of fixed midpoints.
    pub fn with_ranges() -> Self {
        let mut cfg = Self::default();
        for s in &mut cfg.stages {
            if s.name == "tx" {
                s.delay = Delay::Range {
                    min_ms: 5.0,
                    max_ms: 20.0,
                };
            }
        }
        cfg.overhead = Delay::Range {
            min_ms: 10.0,
            max_ms: 40.0,
        };
        cfg
    }

    /// Every stage and the overhead set to zero.
    pub fn zero_delay(mut self) -> Self {
        for s in &mut self.stages {
            s.delay = Delay::Fixed(0.0);
        }
        self.overhead = Delay::Fixed(0.0);
        self
    }

    pub fn load(path: &Path) -> Result<Self> {
        let cfg: Self = crate::config::load_structured(path)?;
        cfg.validate()?;
        Ok(cfg)
    }

    fn of_kind(&self, kind: StageKind) -> impl Iterator<Item = &StageSpec> {
        self.stages.iter().filter(move |s| s.kind == kind)
    }

    pub fn nominal_parallel_ms(&self) -> f64 {
        self.of_kind(StageKind::ParallelPerception)
            .map(|s| s.delay.mean_ms())
            .fold(0.0, f64::max)
    }

    /// Source + slowest parallel member + sequential stages + sink +
    /// overheads, using mean delays.
    pub fn nominal_effective_ms(&self) -> f64 {
        let serial: f64 = self
            .stages
            .iter()
            .filter(|s| s.kind != StageKind::ParallelPerception)
            .map(|s| s.delay.mean_ms())
            .sum();
        serial + self.nominal_parallel_ms() + self.overhead.mean_ms()
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        let mut names = BTreeSet::new();
        for s in &self.stages {
            if s.name.is_empty() || s.name.contains(char::is_whitespace) {
                return bad(format!("stage name '{}' is empty or has spaces", s.name));
            }
            if RESERVED.contains(&s.name.as_str()) {
                return bad(format!("stage name '{}' is reserved", s.name));
            }
            if !names.insert(&s.name) {
                return bad(format!("duplicate stage '{}'", s.name));
            }
            s.delay
                .validate()
                .or_else(|m| bad(format!("stage '{}': {m}", s.name)))?;
        }
        self.overhead
            .validate()
            .or_else(|m| bad(format!("overhead: {m}")))?;
        if self.of_kind(StageKind::Source).count() != 1 {
            return bad("exactly one source stage is required".into());
        }
        if self.of_kind(StageKind::Sink).count() != 1 {
            return bad("exactly one sink stage is required".into());
        }
        if self.stages.first().map(|s| s.kind) != Some(StageKind::Source)
            || self.stages.last().map(|s| s.kind) != Some(StageKind::Sink)
        {
            return bad("the source must come first and the sink last".into());
        }
        if self.watchdog_interval_ms == 0 || self.sensor_period_ms == 0 {
            return bad("watchdog interval and sensor period must be positive".into());
        }
        if !(self.sensor_link_ms.is_finite() && self.sensor_link_ms >= 0.0) {
            return bad("sensor_link_ms must be non-negative".into());
        }
        if self.queue_capacity == 0 {
            return bad("queue capacity must be positive".into());
        }
        if self.max_cycles == Some(0) {
            return bad("max_cycles must be at least 1".into());
        }
        self.envelope.validate().or_else(|m| bad(m.into()))?;
        self.endpoints.resolve()?;
        Ok(())
    }

    /// How long the source waits for the loop to close before capturing
    /// again and counting the cycle as lost.
    fn cycle_timeout(&self) -> Duration {
        let ms = (4.0 * self.nominal_effective_ms()).max(4.0 * self.watchdog_interval_ms as f64);
        Duration::from_secs_f64(ms.max(200.0) / 1e3)
    }
}

/// Message carried between stages. Times are taken from one monotonic clock.
#[derive(Debug, Clone)]
pub enum Msg {
    Frame { cycle: u64, t0: Instant, sent: Instant },
    Part { cycle: u64, member: usize },
    Bundle { cycle: u64, t0: Instant },
    Staged { cycle: u64, t0: Instant },
    Done { cycle: u64 },
    Sensor { tick: u64, t_tick: Instant, raw: [f64; 6] },
    Command { tick: u64, reflex: bool },
}

fn part_topic(name: &str) -> String {
    format!("perception.{name}")
}

fn stage_topic(name: &str) -> String {
    format!("decision.{name}")
}

fn stage_rng(seed: u64, index: usize) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed.wrapping_add(index as u64))
}

struct Wiring {
    cfg: Arc<PipelineConfig>,
    rec: Arc<Recorder>,
}

impl Wiring {
    fn source(&self, index: usize) -> StageDef<Msg> {
        let spec = self.cfg.stages[index].clone();
        let (rec, seed, timeout) = (self.rec.clone(), self.cfg.seed, self.cfg.cycle_timeout());
        StageDef::new(&spec.name.clone(), spec.critical, move |ctx: &StageCtx<Msg>| {
            let done = ctx.bus().subscribe(CYCLE_TOPIC)?;
            let out = ctx.bus().publisher(topics::CAMERA)?;
            let mut rng = stage_rng(seed, index);
            loop {
                let cycle = rec.next_cycle.fetch_add(1, Ordering::SeqCst);
                let t0 = Instant::now();
                ctx.work(spec.delay.sample(&mut rng))?;
                rec.record(&spec.name, t0.elapsed());
                out.publish(Msg::Frame {
                    cycle,
                    t0,
                    sent: Instant::now(),
                })?;
                let waiting = Instant::now();
                loop {
                    ctx.check()?;
                    match done.recv_timeout(POLL)? {
                        Some(d) if matches!(d.payload, Msg::Done { cycle: c } if c == cycle) => break,
                        _ if waiting.elapsed() > timeout => {
                            rec.lost_cycles.fetch_add(1, Ordering::SeqCst);
                            break;
                        }
                        _ => {}
                    }
                }
            }
        })
    }

    fn member(&self, index: usize, member: usize) -> StageDef<Msg> {
        let spec = self.cfg.stages[index].clone();
        let (rec, seed) = (self.rec.clone(), self.cfg.seed);
        StageDef::new(&spec.name.clone(), spec.critical, move |ctx: &StageCtx<Msg>| {
            let frames = ctx.bus().subscribe(topics::CAMERA)?;
            let out = ctx.bus().publisher(&part_topic(&spec.name))?;
            let mut rng = stage_rng(seed, index);
            loop {
                ctx.check()?;
                if let Some(d) = frames.recv_timeout(POLL)? {
                    if let Msg::Frame { cycle, .. } = d.payload {
                        let t = Instant::now();
                        ctx.work(spec.delay.sample(&mut rng))?;
                        rec.record(&spec.name, t.elapsed());
                        out.publish(Msg::Part { cycle, member })?;
                    }
                }
            }
        })
    }

    /// Waits until every parallel member has reported on a frame, then
    /// publishes the bundle.
    fn aggregator(&self) -> StageDef<Msg> {
        let members: Vec<String> = self
            .cfg
            .of_kind(StageKind::ParallelPerception)
            .map(|s| s.name.clone())
            .collect();
        let rec = self.rec.clone();
        StageDef::new(AGGREGATE, true, move |ctx: &StageCtx<Msg>| {
            struct Partial {
                frame: Option<(Instant, Instant)>,
                got: BTreeSet<usize>,
            }
            let frames = ctx.bus().subscribe(topics::CAMERA)?;
            let parts = members
                .iter()
                .map(|m| ctx.bus().subscribe(&part_topic(m)))
                .collect::<Result<Vec<_>>>()?;
            let out = ctx.bus().publisher(BUNDLE_TOPIC)?;
            let mut open: BTreeMap<u64, Partial> = BTreeMap::new();
            loop {
                ctx.check()?;
                let blank = || Partial {
                    frame: None,
                    got: BTreeSet::new(),
                };
                if let Some(d) = frames.recv_timeout(Duration::from_micros(200))? {
                    if let Msg::Frame { cycle, t0, sent } = d.payload {
                        open.entry(cycle).or_insert_with(blank).frame = Some((t0, sent));
                    }
                }
                for sub in &parts {
                    while let Some(d) = sub.try_recv()? {
                        if let Msg::Part { cycle, member } = d.payload {
                            open.entry(cycle).or_insert_with(blank).got.insert(member);
                        }
                    }
                }
                let ready = open.iter().rev().find_map(|(&c, p)| match p.frame {
                    Some((t0, sent)) if p.got.len() == parts.len() => Some((c, t0, sent)),
                    _ => None,
                });
                if let Some((cycle, t0, sent)) = ready {
                    rec.record(PARALLEL, sent.elapsed());
                    out.publish(Msg::Bundle { cycle, t0 })?;
                    open = open.split_off(&(cycle + 1));
                }
            }
        })
    }

    /// A sequential stage, or the sink when `sink` is set. Both consume the
    /// newest message on `input` and drop anything older.
    fn sequential(&self, index: usize, input: String, sink: bool) -> StageDef<Msg> {
        let spec = self.cfg.stages[index].clone();
        let (rec, seed, overhead) = (self.rec.clone(), self.cfg.seed, self.cfg.overhead);
        StageDef::new(&spec.name.clone(), spec.critical, move |ctx: &StageCtx<Msg>| {
            let sub = ctx.bus().subscribe(&input)?;
            let out_topic = if sink {
                CYCLE_TOPIC.to_owned()
            } else {
                stage_topic(&spec.name)
            };
            let out = ctx.bus().publisher(&out_topic)?;
            let mut rng = stage_rng(seed, index);
            loop {
                ctx.check()?;
                let Some(d) = sub.latest(POLL)? else { continue };
                let (cycle, t0) = match d.payload {
                    Msg::Bundle { cycle, t0 } | Msg::Staged { cycle, t0 } => (cycle, t0),
                    _ => continue,
                };
                let t = Instant::now();
                ctx.work(spec.delay.sample(&mut rng))?;
                rec.record(&spec.name, t.elapsed());
                if sink {
                    let t = Instant::now();
                    ctx.work(overhead.sample(&mut rng))?;
                    rec.record(OVERHEAD, t.elapsed());
                    rec.cycle_done(t0.elapsed());
                    out.publish(Msg::Done { cycle })?;
                } else {
                    out.publish(Msg::Staged { cycle, t0 })?;
                }
            }
        })
    }

    /// Synthetic ToF readings at the sensor cadence.
    fn sensor_bridge(&self) -> StageDef<Msg> {
        let period = Duration::from_millis(self.cfg.sensor_period_ms);
        let link = Duration::from_secs_f64(self.cfg.sensor_link_ms / 1e3);
        let seed = self.cfg.seed ^ 0x5e5;
        StageDef::new(SENSOR_BRIDGE, true, move |ctx: &StageCtx<Msg>| {
            let out = ctx.bus().publisher(topics::SENSORS)?;
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut tick = 0;
            loop {
                let t_tick = Instant::now();
                let raw = std::array::from_fn(|_| rng.random_range(0.0..1500.0));
                ctx.work(link)?;
                out.publish(Msg::Sensor { tick, t_tick, raw })?;
                tick += 1;
                ctx.work(period.saturating_sub(t_tick.elapsed()))?;
            }
        })
    }

    fn reflex(&self) -> StageDef<Msg> {
        let (rec, env) = (self.rec.clone(), self.cfg.envelope.clone());
        StageDef::new(REFLEX, true, move |ctx: &StageCtx<Msg>| {
            let sub = ctx.bus().subscribe(topics::SENSORS)?;
            let out = ctx.bus().publisher(topics::COMMANDS)?;
            loop {
                ctx.check()?;
                let Some(d) = sub.latest(POLL)? else { continue };
                if let Msg::Sensor { tick, t_tick, raw } = d.payload {
                    let frame = TofFrame::from_raw(raw, tick * 10, &env);
                    let fired = reflex_check(&apply_envelope(&frame, &env), &env).is_some();
                    out.publish(Msg::Command {
                        tick,
                        reflex: fired,
                    })?;
                    rec.record(REFLEX, t_tick.elapsed());
                }
            }
        })
    }

    fn stages(&self) -> Vec<StageDef<Msg>> {
        let mut defs = vec![self.sensor_bridge(), self.reflex()];
        let mut member = 0;
        let mut input = BUNDLE_TOPIC.to_owned();
        for (i, s) in self.cfg.stages.iter().enumerate() {
            match s.kind {
                StageKind::Source => defs.push(self.source(i)),
                StageKind::ParallelPerception => {
                    defs.push(self.member(i, member));
                    member += 1;
                }
                StageKind::SequentialDecision => {
                    defs.push(self.sequential(i, input.clone(), false));
                    input = stage_topic(&s.name);
                }
                StageKind::Sink => defs.push(self.sequential(i, input.clone(), true)),
            }
        }
        defs.push(self.aggregator());
        defs
    }
}

/// A running pipeline.
pub struct Pipeline {
    cfg: Arc<PipelineConfig>,
    rec: Arc<Recorder>,
    sup: Supervisor<Msg>,
}

/// Everything collected from one run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineRun {
    pub latency: LatencyReport,
    pub health: BTreeMap<String, StageHealth>,
    pub events: Vec<WatchdogEvent>,
    pub topics: BTreeMap<String, TopicStats>,
    pub shutdown: ShutdownReport,
}

impl Pipeline {
    pub fn start(cfg: PipelineConfig) -> Result<Self> {
        cfg.validate()?;
        let wiring = Wiring {
            cfg: Arc::new(cfg),
            rec: Arc::new(Recorder::default()),
        };
        let bus = Bus::new(wiring.cfg.queue_capacity);
        let sup = Supervisor::start(
            bus,
            wiring.stages(),
            Duration::from_millis(wiring.cfg.watchdog_interval_ms),
        )?;
        Ok(Self {
            cfg: wiring.cfg,
            rec: wiring.rec,
            sup,
        })
    }

    pub fn supervisor(&self) -> &Supervisor<Msg> {
        &self.sup
    }

    pub fn bus(&self) -> &Bus<Msg> {
        self.sup.bus()
    }

    pub fn cycles(&self) -> u64 {
        self.rec.cycles.load(Ordering::SeqCst)
    }

    /// Fault injection for tests and drills.
    pub fn kill(&self, stage: &str) -> Result<()> {
        self.sup.kill(stage)
    }

    pub fn latency(&self) -> LatencyReport {
        LatencyReport::from_recorder(&self.cfg, &self.rec)
    }

    /// Idempotent; see [`Supervisor::shutdown`].
    pub fn shutdown(&self) -> ShutdownReport {
        self.sup.shutdown()
    }

    /// Shuts down (if not already) and collects the run.
    pub fn finish(self) -> PipelineRun {
        let shutdown = self.sup.shutdown();
        PipelineRun {
            latency: self.latency(),
            health: self.sup.health(),
            events: self.sup.events(),
            topics: self.sup.bus().all_stats(),
            shutdown,
        }
    }
}

/// Runs the pipeline for `duration` (or until `max_cycles` cycles have
/// completed) and returns what was measured.
pub fn run_pipeline(cfg: &PipelineConfig, duration: Duration) -> Result<PipelineRun> {
    let max = cfg.max_cycles.unwrap_or(u64::MAX);
    let p = Pipeline::start(cfg.clone())?;
    let started = Instant::now();
    while started.elapsed() < duration && p.cycles() < max {
        thread::sleep(POLL);
    }
    Ok(p.finish())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_config_is_valid_and_composes_to_967() {
        let cfg = PipelineConfig::default();
        cfg.validate().unwrap();
        assert_eq!(cfg.nominal_parallel_ms(), 500.0);
        assert_eq!(cfg.nominal_effective_ms(), 967.0);
        let r = PipelineConfig::with_ranges();
        r.validate().unwrap();
        assert_eq!(r.nominal_effective_ms(), 30.0 + 500.0 + 400.0 + 12.5 + 25.0);
    }

    #[test]
    fn config_rejects_bad_shapes() {
        let mut cfg = PipelineConfig::default();
        cfg.stages.retain(|s| s.kind != StageKind::Sink);
        assert!(cfg.validate().is_err());
        let mut cfg = PipelineConfig::default();
        cfg.stages[2].delay = Delay::Fixed(-1.0);
        assert!(cfg.validate().is_err());
        let mut cfg = PipelineConfig::default();
        cfg.stages[2].name = "reflex".into();
        assert!(cfg.validate().is_err());
        let cfg = PipelineConfig {
            overhead: Delay::Range {
                min_ms: 30.0,
                max_ms: 10.0,
            },
            ..PipelineConfig::default()
        };
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn delay_parses_from_number_or_range() {
        let d: Delay = serde_json::from_str("12").unwrap();
        assert_eq!(d, Delay::Fixed(12.0));
        let d: Delay = toml::from_str::<BTreeMap<String, Delay>>("d = { min_ms = 5, max_ms = 20 }")
            .unwrap()["d"];
        assert_eq!(d.mean_ms(), 12.5);
    }

    #[test]
    fn zero_delay_pipeline_cycles_quickly() {
        let mut cfg = PipelineConfig::default().zero_delay();
        cfg.overhead = Delay::Fixed(5.0);
        cfg.max_cycles = Some(20);
        let run = run_pipeline(&cfg, Duration::from_secs(5)).unwrap();
        assert!(run.latency.cycles >= 20);
        let e = run.latency.effective.mean_ms;
        assert!((5.0..8.0).contains(&e), "{e}");
        assert!(run.shutdown.forced.is_empty());
        assert!(run.health.values().all(|h| h.restarts == 0));
    }
}
