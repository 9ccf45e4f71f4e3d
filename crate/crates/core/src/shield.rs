//! Dual-layer protective shield over the six ToF sensors.
//!
//! Layer one subtracts a per-direction envelope offset from each clamped
//! reading before anything downstream sees it, so the decision layer works
//! against a virtual buffer around the airframe. Layer two is the reflex:
//! whenever an adjusted clearance drops to the reflex threshold the vehicle
//! is pushed the opposite way, overriding every other command.

use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::decision::{CommandSource, NavCommand};

/// Sensor axes in wire order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Direction {
    Front,
    Back,
    Right,
    Left,
    Up,
    Down,
}

impl Direction {
    /// Wire order; also the reflex tie-break order.
    pub const ALL: [Direction; 6] = [
        Direction::Front,
        Direction::Back,
        Direction::Right,
        Direction::Left,
        Direction::Up,
        Direction::Down,
    ];

    pub const fn index(self) -> usize {
        self as usize
    }

    pub const fn opposite(self) -> Direction {
        match self {
            Direction::Front => Direction::Back,
            Direction::Back => Direction::Front,
            Direction::Right => Direction::Left,
            Direction::Left => Direction::Right,
            Direction::Up => Direction::Down,
            Direction::Down => Direction::Up,
        }
    }

    /// Body-frame unit vector (x forward, y right, z up).
    pub const fn body_axis(self) -> [f64; 3] {
        match self {
            Direction::Front => [1.0, 0.0, 0.0],
            Direction::Back => [-1.0, 0.0, 0.0],
            Direction::Right => [0.0, 1.0, 0.0],
            Direction::Left => [0.0, -1.0, 0.0],
            Direction::Up => [0.0, 0.0, 1.0],
            Direction::Down => [0.0, 0.0, -1.0],
        }
    }

    pub const fn name(self) -> &'static str {
        match self {
            Direction::Front => "front",
            Direction::Back => "back",
            Direction::Right => "right",
            Direction::Left => "left",
            Direction::Up => "up",
            Direction::Down => "down",
        }
    }
}

/// Raw ToF frame, already clamped to the sensor range.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TofFrame {
    /// Millimetres, [`Direction::ALL`] order.
    pub distances: [f64; 6],
    pub valid: [bool; 6],
    pub timestamp_ms: u64,
}

impl TofFrame {
    /// Clamps raw sensor values.
    pub fn from_raw(raw: [f64; 6], timestamp_ms: u64, cfg: &EnvelopeConfig) -> Self {
        let mut distances = [0.0; 6];
        let mut valid = [false; 6];
        for i in 0..6 {
            (distances[i], valid[i]) = clamp_range(raw[i], cfg);
        }
        Self {
            distances,
            valid,
            timestamp_ms,
        }
    }

    pub fn get(&self, d: Direction) -> f64 {
        self.distances[d.index()]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct ImuFrame {
    /// m/s^2
    pub accel: [f64; 3],
    /// rad/s
    pub gyro: [f64; 3],
    pub timestamp_ms: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EnvelopeConfig {
    /// Millimetres, [`Direction::ALL`] order.
    pub offsets: [f64; 6],
    pub reflex_threshold_mm: f64,
    pub max_range_mm: f64,
    /// Raw values at or above this are sensor error codes.
    pub invalid_sentinel: f64,
    /// m/s
    pub reflex_speed: f64,
}

impl Default for EnvelopeConfig {
    fn default() -> Self {
        Self {
            // front, back, right, left, up, down
            offsets: [250.0, 250.0, 250.0, 250.0, 100.0, 200.0],
            reflex_threshold_mm: 30.0,
            max_range_mm: 4000.0,
            invalid_sentinel: 65535.0,
            reflex_speed: 0.3,
        }
    }
}

impl EnvelopeConfig {
    pub fn offset(&self, d: Direction) -> f64 {
        self.offsets[d.index()]
    }

    pub fn validate(&self) -> Result<(), &'static str> {
        if self.offsets.iter().any(|o| !(*o >= 0.0)) {
            return Err("envelope offsets must be non-negative");
        }
        let min = self.offsets.iter().copied().fold(f64::INFINITY, f64::min);
        if !(self.reflex_threshold_mm < min) {
            return Err("reflex threshold must be below the smallest offset");
        }
        if !(self.max_range_mm > 0.0) {
            return Err("max range must be positive");
        }
        Ok(())
    }
}

/// Clamps one reading into `[0, max_range]`. Sentinels and non-finite
/// values map to `max_range` and are reported invalid.
pub fn clamp_range(raw: f64, cfg: &EnvelopeConfig) -> (f64, bool) {
    if !raw.is_finite() || raw >= cfg.invalid_sentinel {
        return (cfg.max_range_mm, false);
    }
    (raw.clamp(0.0, cfg.max_range_mm), true)
}

/// Clearances after the envelope offsets.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Envelope {
    /// Millimetres, floored at zero.
    pub adjusted: [f64; 6],
    pub valid: [bool; 6],
    /// `raw < offset` on a valid reading.
    pub breached: [bool; 6],
}

impl Envelope {
    pub fn get(&self, d: Direction) -> Option<f64> {
        self.valid[d.index()].then(|| self.adjusted[d.index()])
    }

    /// Smallest valid adjusted clearance.
    pub fn min_valid(&self) -> Option<(Direction, f64)> {
        Direction::ALL
            .iter()
            .filter_map(|&d| self.get(d).map(|v| (d, v)))
            .fold(None, |best, (d, v)| match best {
                Some((_, b)) if b <= v => best,
                _ => Some((d, v)),
            })
    }
}

pub fn apply_envelope(tof: &TofFrame, cfg: &EnvelopeConfig) -> Envelope {
    let mut adjusted = [0.0; 6];
    let mut breached = [false; 6];
    for i in 0..6 {
        let diff = tof.distances[i] - cfg.offsets[i];
        adjusted[i] = diff.max(0.0);
        breached[i] = tof.valid[i] && diff < 0.0;
    }
    Envelope {
        adjusted,
        valid: tof.valid,
        breached,
    }
}

/// Reflex command: if any valid adjusted clearance is at or below the
/// threshold, move away from the closest one (ties in [`Direction::ALL`]
/// order). Invalid directions are ignored.
pub fn reflex_check(env: &Envelope, cfg: &EnvelopeConfig) -> Option<NavCommand> {
    reflex_check_masked(env, cfg, [true; 6])
}

/// [`reflex_check`] restricted to the directions enabled in `mask`.
pub fn reflex_check_masked(
    env: &Envelope,
    cfg: &EnvelopeConfig,
    mask: [bool; 6],
) -> Option<NavCommand> {
    let mut masked = env.clone();
    for i in 0..6 {
        masked.valid[i] &= mask[i];
    }
    let (dir, clearance) = masked.min_valid()?;
    if clearance > cfg.reflex_threshold_mm {
        return None;
    }
    let away = dir.opposite().body_axis();
    let s = cfg.reflex_speed;
    Some(NavCommand {
        vx: away[0] * s,
        vy: away[1] * s,
        vz: away[2] * s,
        yaw: 0.0,
        source: CommandSource::Reflex,
    })
}

/// Summary of a clearance log.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct BreachStats {
    pub breach_count: usize,
    pub per_direction: [usize; 6],
    /// Mean over all valid clamped readings; `None` for an empty log.
    pub mean_clearance_mm: Option<f64>,
    /// Valid readings count.
    pub samples: usize,
}

/// Streaming breach counter. A breach is counted when a sensor enters the
/// breached state; it must recover before it can count again.
#[derive(Debug, Clone, Default)]
pub struct BreachTracker {
    in_breach: [bool; 6],
    per_direction: [usize; 6],
    sum: f64,
    samples: usize,
}

impl BreachTracker {
    pub fn new() -> Self {
        Self::default()
    }

    /// Feeds one frame; returns which sensors started a new breach.
    pub fn push(&mut self, tof: &TofFrame, cfg: &EnvelopeConfig) -> [bool; 6] {
        let env = apply_envelope(tof, cfg);
        let mut events = [false; 6];
        for i in 0..6 {
            if env.breached[i] && !self.in_breach[i] {
                events[i] = true;
                self.per_direction[i] += 1;
            }
            self.in_breach[i] = env.breached[i];
            if tof.valid[i] {
                self.sum += tof.distances[i];
                self.samples += 1;
            }
        }
        events
    }

    pub fn stats(&self) -> BreachStats {
        BreachStats {
            breach_count: self.per_direction.iter().sum(),
            per_direction: self.per_direction,
            mean_clearance_mm: (self.samples > 0).then(|| self.sum / self.samples as f64),
            samples: self.samples,
        }
    }
}

/// Batch breach statistics plus the per-direction clearance series.
pub fn breach_stats(log: &[TofFrame], cfg: &EnvelopeConfig) -> (BreachStats, [Vec<f64>; 6]) {
    let mut tracker = BreachTracker::new();
    let mut series: [Vec<f64>; 6] = Default::default();
    for f in log {
        tracker.push(f, cfg);
        for (s, d) in series.iter_mut().zip(f.distances) {
            s.push(d);
        }
    }
    (tracker.stats(), series)
}
