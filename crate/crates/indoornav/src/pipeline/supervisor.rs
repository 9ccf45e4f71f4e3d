//! Stage threads with heartbeat liveness, a watchdog that restarts critical
//! stages, and bounded shutdown.

use std::collections::BTreeMap;
use std::panic::{self, AssertUnwindSafe};
use std::sync::atomic::{AtomicBool, AtomicU64, AtomicUsize, Ordering};
use std::sync::Arc;
use std::thread::{self, JoinHandle};
use std::time::{Duration, Instant};

use parking_lot::Mutex;
use serde::{Deserialize, Serialize};

use crate::wire::Bus;
use crate::{Error, Result};

pub const SHUTDOWN_BUDGET: Duration = Duration::from_secs(2);
/// Longest sleep between heartbeats inside [`StageCtx::work`].
const BEAT_SLICE: Duration = Duration::from_millis(5);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EventKind {
    /// Heartbeat older than the check interval.
    Stalled,
    /// A critical stage was started again.
    Restarted,
    /// A non-critical stage stopped; it stays down.
    Died,
    /// Still running when the shutdown budget ran out.
    ForcedStop,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WatchdogEvent {
    pub t_ms: u64,
    pub stage: String,
    pub kind: EventKind,
}

type Body<M> = Arc<dyn Fn(&StageCtx<M>) -> Result<()> + Send + Sync>;

struct Slot<M> {
    name: String,
    critical: bool,
    body: Body<M>,
    heartbeat_ms: AtomicU64,
    generation: AtomicU64,
    kill: AtomicBool,
    live: AtomicUsize,
    max_live: AtomicUsize,
    starts: AtomicUsize,
    /// Non-critical stage that died and was reported.
    buried: AtomicBool,
    stalled_reported: AtomicBool,
    threads: Mutex<Vec<JoinHandle<()>>>,
}

struct Shared<M> {
    bus: Bus<M>,
    epoch: Instant,
    stop: AtomicBool,
    slots: Vec<Arc<Slot<M>>>,
    events: Mutex<Vec<WatchdogEvent>>,
    interval: Duration,
}

impl<M> Shared<M> {
    fn now_ms(&self) -> u64 {
        self.epoch.elapsed().as_millis() as u64
    }

    fn event(&self, stage: &str, kind: EventKind) {
        self.events.lock().push(WatchdogEvent {
            t_ms: self.now_ms(),
            stage: stage.to_owned(),
            kind,
        });
    }
}

/// What a stage body sees.
pub struct StageCtx<M> {
    shared: Arc<Shared<M>>,
    slot: Arc<Slot<M>>,
    generation: u64,
}

impl<M: Clone + Send + 'static> StageCtx<M> {
    pub fn name(&self) -> &str {
        &self.slot.name
    }

    pub fn bus(&self) -> &Bus<M> {
        &self.shared.bus
    }

    pub fn beat(&self) {
        self.slot
            .heartbeat_ms
            .store(self.shared.now_ms(), Ordering::SeqCst);
    }

    /// True once the pipeline is stopping, this instance was killed, or a
    /// newer instance has replaced it.
    pub fn should_stop(&self) -> bool {
        self.shared.stop.load(Ordering::SeqCst)
            || self.slot.kill.load(Ordering::SeqCst)
            || self.slot.generation.load(Ordering::SeqCst) != self.generation
    }

    /// Simulated processing time. Keeps heartbeating; returns
    /// [`Error::Closed`] early if the stage should stop.
    pub fn work(&self, d: Duration) -> Result<()> {
        let deadline = Instant::now() + d;
        loop {
            self.beat();
            if self.should_stop() {
                return Err(Error::Closed);
            }
            let now = Instant::now();
            if now >= deadline {
                return Ok(());
            }
            thread::sleep((deadline - now).min(BEAT_SLICE));
        }
    }

    /// Returns `Err(Closed)` if the stage should stop, for `?` in loops.
    pub fn check(&self) -> Result<()> {
        self.beat();
        if self.should_stop() {
            Err(Error::Closed)
        } else {
            Ok(())
        }
    }
}

/// Per-stage counters for the run report.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct StageHealth {
    pub critical: bool,
    pub starts: usize,
    pub restarts: usize,
    /// Most instances of this stage ever alive at once.
    pub max_live: usize,
    pub alive: bool,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ShutdownReport {
    pub joined: usize,
    pub forced: Vec<String>,
    pub elapsed_ms: u64,
    /// This call did the work; later calls are no-ops.
    pub performed: bool,
}

pub struct StageDef<M> {
    pub name: String,
    pub critical: bool,
    pub body: Body<M>,
}

impl<M> StageDef<M> {
    pub fn new<F>(name: &str, critical: bool, body: F) -> Self
    where
        F: Fn(&StageCtx<M>) -> Result<()> + Send + Sync + 'static,
    {
        Self {
            name: name.to_owned(),
            critical,
            body: Arc::new(body),
        }
    }
}

/// Running set of stages plus the watchdog.
pub struct Supervisor<M: Clone + Send + 'static> {
    shared: Arc<Shared<M>>,
    watchdog: Mutex<Option<JoinHandle<()>>>,
    shut: AtomicBool,
}

fn spawn_instance<M: Clone + Send + 'static>(shared: &Arc<Shared<M>>, slot: &Arc<Slot<M>>) {
    let generation = slot.generation.fetch_add(1, Ordering::SeqCst) + 1;
    slot.kill.store(false, Ordering::SeqCst);
    slot.stalled_reported.store(false, Ordering::SeqCst);
    slot.heartbeat_ms.store(shared.now_ms(), Ordering::SeqCst);
    slot.starts.fetch_add(1, Ordering::SeqCst);
    let ctx = StageCtx {
        shared: Arc::clone(shared),
        slot: Arc::clone(slot),
        generation,
    };
    let handle = thread::Builder::new()
        .name(slot.name.clone())
        .spawn(move || {
            let n = ctx.slot.live.fetch_add(1, Ordering::SeqCst) + 1;
            ctx.slot.max_live.fetch_max(n, Ordering::SeqCst);
            let body = Arc::clone(&ctx.slot.body);
            let _ = panic::catch_unwind(AssertUnwindSafe(|| body(&ctx)));
            ctx.slot.live.fetch_sub(1, Ordering::SeqCst);
        })
        .expect("spawning a stage thread");
    slot.threads.lock().push(handle);
}

impl<M: Clone + Send + 'static> Supervisor<M> {
    /// Starts every stage and the watchdog. A stage is considered dead when
    /// its heartbeat is older than `interval`; the watchdog looks four times
    /// per interval.
    pub fn start(bus: Bus<M>, stages: Vec<StageDef<M>>, interval: Duration) -> Result<Self> {
        let mut seen = BTreeMap::new();
        for s in &stages {
            if seen.insert(s.name.clone(), ()).is_some() {
                return Err(Error::Config(format!("duplicate stage name '{}'", s.name)));
            }
        }
        if interval.is_zero() {
            return Err(Error::Config("watchdog interval must be positive".into()));
        }
        let slots = stages
            .into_iter()
            .map(|s| {
                Arc::new(Slot {
                    name: s.name,
                    critical: s.critical,
                    body: s.body,
                    heartbeat_ms: AtomicU64::new(0),
                    generation: AtomicU64::new(0),
                    kill: AtomicBool::new(false),
                    live: AtomicUsize::new(0),
                    max_live: AtomicUsize::new(0),
                    starts: AtomicUsize::new(0),
                    buried: AtomicBool::new(false),
                    stalled_reported: AtomicBool::new(false),
                    threads: Mutex::new(Vec::new()),
                })
            })
            .collect();
        let shared = Arc::new(Shared {
            bus,
            epoch: Instant::now(),
            stop: AtomicBool::new(false),
            slots,
            events: Mutex::new(Vec::new()),
            interval,
        });
        for slot in &shared.slots {
            spawn_instance(&shared, slot);
        }
        let wd = {
            let shared = Arc::clone(&shared);
            thread::Builder::new()
                .name("watchdog".into())
                .spawn(move || watchdog(shared))
                .expect("spawning the watchdog")
        };
        Ok(Self {
            shared,
            watchdog: Mutex::new(Some(wd)),
            shut: AtomicBool::new(false),
        })
    }

    pub fn bus(&self) -> &Bus<M> {
        &self.shared.bus
    }

    pub fn elapsed(&self) -> Duration {
        self.shared.epoch.elapsed()
    }

    /// Fault injection: makes the current instance of `stage` exit.
    pub fn kill(&self, stage: &str) -> Result<()> {
        let slot = self.slot(stage)?;
        slot.kill.store(true, Ordering::SeqCst);
        Ok(())
    }

    fn slot(&self, stage: &str) -> Result<&Arc<Slot<M>>> {
        self.shared
            .slots
            .iter()
            .find(|s| s.name == stage)
            .ok_or_else(|| Error::Pipeline(format!("no stage named '{stage}'")))
    }

    pub fn events(&self) -> Vec<WatchdogEvent> {
        self.shared.events.lock().clone()
    }

    pub fn health(&self) -> BTreeMap<String, StageHealth> {
        self.shared
            .slots
            .iter()
            .map(|s| {
                let starts = s.starts.load(Ordering::SeqCst);
                (
                    s.name.clone(),
                    StageHealth {
                        critical: s.critical,
                        starts,
                        restarts: starts.saturating_sub(1),
                        max_live: s.max_live.load(Ordering::SeqCst),
                        alive: s.live.load(Ordering::SeqCst) > 0,
                    },
                )
            })
            .collect()
    }

    pub fn restarts(&self) -> usize {
        self.health().values().map(|h| h.restarts).sum()
    }

    /// Stops the watchdog, closes the bus and joins every stage thread
    /// within [`SHUTDOWN_BUDGET`]. Threads still running after that are
    /// left detached and reported. Calling it again does nothing.
    pub fn shutdown(&self) -> ShutdownReport {
        if self.shut.swap(true, Ordering::SeqCst) {
            return ShutdownReport::default();
        }
        let started = Instant::now();
        let deadline = started + SHUTDOWN_BUDGET;
        self.shared.stop.store(true, Ordering::SeqCst);
        self.shared.bus.shutdown();
        if let Some(wd) = self.watchdog.lock().take() {
            let _ = wd.join();
        }
        let mut pending: Vec<(String, JoinHandle<()>)> = Vec::new();
        for slot in &self.shared.slots {
            for h in slot.threads.lock().drain(..) {
                pending.push((slot.name.clone(), h));
            }
        }
        let mut joined = 0;
        while !pending.is_empty() && Instant::now() < deadline {
            let (done, rest): (Vec<_>, Vec<_>) =
                pending.into_iter().partition(|(_, h)| h.is_finished());
            for (_, h) in done {
                let _ = h.join();
                joined += 1;
            }
            pending = rest;
            if !pending.is_empty() {
                thread::sleep(Duration::from_millis(1));
            }
        }
        let mut forced: Vec<String> = pending.into_iter().map(|(n, _)| n).collect();
        forced.dedup();
        for name in &forced {
            self.shared.event(name, EventKind::ForcedStop);
        }
        ShutdownReport {
            joined,
            forced,
            elapsed_ms: started.elapsed().as_millis() as u64,
            performed: true,
        }
    }
}

impl<M: Clone + Send + 'static> Drop for Supervisor<M> {
    fn drop(&mut self) {
        self.shutdown();
    }
}

fn watchdog<M: Clone + Send + 'static>(shared: Arc<Shared<M>>) {
    let tick = shared.interval / 4;
    let limit = shared.interval.as_millis() as u64;
    while !shared.stop.load(Ordering::SeqCst) {
        thread::sleep(tick);
        if shared.stop.load(Ordering::SeqCst) {
            break;
        }
        let now = shared.now_ms();
        for slot in &shared.slots {
            if slot.buried.load(Ordering::SeqCst) {
                continue;
            }
            let age = now.saturating_sub(slot.heartbeat_ms.load(Ordering::SeqCst));
            if age <= limit {
                continue;
            }
            if !slot.stalled_reported.swap(true, Ordering::SeqCst) {
                shared.event(&slot.name, EventKind::Stalled);
            }
            let alive = slot.live.load(Ordering::SeqCst) > 0;
            if !slot.critical {
                if !alive {
                    slot.buried.store(true, Ordering::SeqCst);
                    shared.event(&slot.name, EventKind::Died);
                }
                continue;
            }
            if alive {
                // Hung: ask it to stand down and restart once it has gone,
                // so two instances never overlap.
                slot.generation.fetch_add(1, Ordering::SeqCst);
                continue;
            }
            spawn_instance(&shared, slot);
            shared.event(&slot.name, EventKind::Restarted);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ticking(name: &str, critical: bool) -> StageDef<u32> {
        StageDef::new(name, critical, |ctx: &StageCtx<u32>| loop {
            ctx.work(Duration::from_millis(3))?;
        })
    }

    #[test]
    fn healthy_run_has_no_restarts() {
        let sup = Supervisor::start(
            Bus::default(),
            vec![ticking("a", true), ticking("b", false)],
            Duration::from_millis(40),
        )
        .unwrap();
        thread::sleep(Duration::from_millis(200));
        assert_eq!(sup.restarts(), 0);
        assert!(sup.events().is_empty());
        let r = sup.shutdown();
        assert!(r.performed && r.forced.is_empty());
        assert_eq!(r.joined, 2);
        assert!(!sup.shutdown().performed);
    }

    #[test]
    fn killed_critical_stage_comes_back_within_two_intervals() {
        let interval = Duration::from_millis(60);
        let sup = Supervisor::start(Bus::default(), vec![ticking("a", true)], interval).unwrap();
        thread::sleep(Duration::from_millis(30));
        let killed_at = sup.elapsed();
        sup.kill("a").unwrap();
        let deadline = Instant::now() + interval * 4;
        while sup.restarts() == 0 && Instant::now() < deadline {
            thread::sleep(Duration::from_millis(1));
        }
        let restarted_at = sup.elapsed();
        assert_eq!(sup.restarts(), 1);
        assert!(restarted_at - killed_at <= interval * 2, "{:?}", restarted_at - killed_at);
        assert_eq!(sup.health()["a"].max_live, 1);
        sup.shutdown();
    }

    #[test]
    fn dead_non_critical_stage_is_logged_once() {
        let sup = Supervisor::start(
            Bus::default(),
            vec![ticking("side", false)],
            Duration::from_millis(20),
        )
        .unwrap();
        sup.kill("side").unwrap();
        thread::sleep(Duration::from_millis(150));
        let died: Vec<_> = sup
            .events()
            .into_iter()
            .filter(|e| e.kind == EventKind::Died)
            .collect();
        assert_eq!(died.len(), 1);
        assert_eq!(sup.restarts(), 0);
    }

    #[test]
    fn stuck_stage_is_forced_at_shutdown() {
        let stuck = StageDef::new("stuck", false, |_: &StageCtx<u32>| {
            thread::sleep(Duration::from_secs(3));
            Ok(())
        });
        let sup = Supervisor::start(Bus::default(), vec![stuck], Duration::from_secs(10)).unwrap();
        let r = sup.shutdown();
        assert_eq!(r.forced, ["stuck"]);
        assert!(r.elapsed_ms >= 2000 && r.elapsed_ms < 2500, "{}", r.elapsed_ms);
    }
}
