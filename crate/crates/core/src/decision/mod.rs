//! Decision layer: the fused perception bundle, the reference rule policy,
//! reflex arbitration and the velocity setpoint packet.
//!
//! Body frame is x forward, y right, z up. Command yaw is in degrees,
//! positive clockwise seen from above, and means "turn this much during the
//! next control period".

pub mod setpoint;

use alloc::string::String;
use alloc::vec::Vec;

#[allow(unused_imports)] // inherent methods win whenever std is linked
use num_traits::Float;
use serde::{Deserialize, Serialize};

use crate::box3d::Box3D;
use crate::shield::{Direction, Envelope, ImuFrame};

pub use setpoint::{decode_velocity_setpoint, encode_velocity_setpoint, SetpointPacket};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CommandSource {
    Reflex,
    #[default]
    Reasoner,
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct NavCommand {
    /// m/s
    pub vx: f64,
    pub vy: f64,
    pub vz: f64,
    /// Degrees, positive clockwise.
    pub yaw: f64,
    pub source: CommandSource,
}

impl NavCommand {
    pub fn hover() -> Self {
        Self::default()
    }

    pub fn new(vx: f64, vy: f64, vz: f64, yaw: f64) -> Self {
        Self {
            vx,
            vy,
            vz,
            yaw,
            source: CommandSource::Reasoner,
        }
    }

    /// Clamps velocities to `+-v_max` and yaw to `[-180, 180]`. The flag is
    /// set when anything changed. Non-finite values become zero.
    pub fn clamped(&self, v_max: f64) -> (Self, bool) {
        let fix = |v: f64, lim: f64| {
            if !v.is_finite() {
                (0.0, true)
            } else {
                let c = v.clamp(-lim, lim);
                (c, c != v)
            }
        };
        let (vx, a) = fix(self.vx, v_max);
        let (vy, b) = fix(self.vy, v_max);
        let (vz, c) = fix(self.vz, v_max);
        let (yaw, d) = fix(self.yaw, 180.0);
        (
            Self {
                vx,
                vy,
                vz,
                yaw,
                source: self.source,
            },
            a || b || c || d,
        )
    }

    pub fn speed(&self) -> f64 {
        (self.vx * self.vx + self.vy * self.vy + self.vz * self.vz).sqrt()
    }
}

/// Input precedence: sensors, then 3D detections, then the scene text.
/// Applied as strict precedence, the weights only order the layers.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PriorityWeights {
    pub sensors: f64,
    pub detections: f64,
    pub vlm: f64,
}

impl Default for PriorityWeights {
    fn default() -> Self {
        Self {
            sensors: 0.5,
            detections: 0.3,
            vlm: 0.2,
        }
    }
}

impl PriorityWeights {
    pub fn validate(&self) -> Result<(), &'static str> {
        let all = [self.sensors, self.detections, self.vlm];
        if all.iter().any(|w| !(*w >= 0.0)) {
            return Err("weights must be non-negative");
        }
        if (all.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
            return Err("weights must sum to 1");
        }
        Ok(())
    }
}

/// A detection enriched with its 3D box.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PerceivedObject {
    pub name: String,
    pub box3d: Box3D,
}

/// Everything the reasoner sees at one decision tick.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PerceptionBundle {
    pub detections: Vec<PerceivedObject>,
    pub envelope: Envelope,
    pub imu: ImuFrame,
    pub vlm_description: String,
    pub timestamp_ms: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PolicyConfig {
    /// m/s
    pub cruise_speed: f64,
    pub v_max: f64,
    /// deg/s
    pub yaw_rate_max: f64,
    /// s
    pub control_period: f64,
    /// deg
    pub align_tolerance: f64,
    /// Detections nearer than this (camera depth, mm) block forward motion.
    pub stand_off_mm: f64,
    /// Only detections within this lateral offset (mm) count as ahead.
    pub lateral_window_mm: f64,
    /// Forward motion continues until front clearance drops below this; then
    /// a new heading is chosen.
    pub replan_mm: f64,
    /// Forward speed ramps down inside this front clearance.
    pub slow_zone_mm: f64,
    /// Vertical centering deadband on `(up - down) / 2`, mm.
    pub deadband_mm: f64,
    /// Vertical centering gain, (m/s) per mm.
    pub k_z: f64,
    /// No motion toward a direction at or below this clearance, mm.
    pub min_clearance_mm: f64,
    pub weights: PriorityWeights,
}

impl Default for PolicyConfig {
    fn default() -> Self {
        Self {
            cruise_speed: 0.5,
            v_max: 1.0,
            yaw_rate_max: 45.0,
            control_period: 0.1,
            align_tolerance: 15.0,
            stand_off_mm: 600.0,
            lateral_window_mm: 500.0,
            replan_mm: 600.0,
            slow_zone_mm: 1000.0,
            deadband_mm: 150.0,
            k_z: 0.001,
            min_clearance_mm: 30.0,
            weights: PriorityWeights::default(),
        }
    }
}

impl PolicyConfig {
    pub fn validate(&self) -> Result<(), &'static str> {
        self.weights.validate()?;
        if !(self.cruise_speed >= 0.0 && self.cruise_speed <= self.v_max) {
            return Err("cruise speed must be within [0, v_max]");
        }
        if !(self.yaw_rate_max > 0.0 && self.control_period > 0.0) {
            return Err("yaw rate and control period must be positive");
        }
        if !(self.deadband_mm >= 0.0 && self.k_z >= 0.0) {
            return Err("vertical centering parameters must be non-negative");
        }
        Ok(())
    }
}

/// Anything that turns a bundle into a command.
pub trait Policy {
    fn decide(&mut self, bundle: &PerceptionBundle) -> NavCommand;

    /// Forget per-flight state.
    fn reset(&mut self) {}
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Maneuver {
    Hover,
    Turn,
    Advance,
}

/// What the rule policy decided and why.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Decision {
    pub command: NavCommand,
    pub maneuver: Maneuver,
    /// Heading chosen at the last replan.
    pub target: Option<Direction>,
    /// A detection inside the stand-off blocked forward motion.
    pub detection_veto: bool,
    /// Scene text, carried as metadata only.
    pub vlm_note: String,
}

/// Deterministic reference reasoner.
///
/// Picks the horizontal direction with the largest adjusted clearance (ties:
/// front, right, left, back), yaws toward it in rate-limited steps, then
/// advances at cruise speed until the front clearance drops below
/// `replan_mm` or a detection blocks the way, at which point it picks
/// again among the remaining directions. The front only counts as a
/// candidate while it is open. Vertical motion keeps the vehicle centred between floor and
/// ceiling.
#[derive(Debug, Clone)]
pub struct RulePolicy {
    pub cfg: PolicyConfig,
    /// Heading change still to perform, degrees.
    remaining_turn: f64,
    heading_chosen: bool,
    target: Option<Direction>,
}

const HORIZONTAL: [Direction; 4] = [
    Direction::Front,
    Direction::Right,
    Direction::Left,
    Direction::Back,
];

fn turn_for(d: Direction) -> f64 {
    match d {
        Direction::Right => 90.0,
        Direction::Left => -90.0,
        Direction::Back => 180.0,
        _ => 0.0,
    }
}

impl RulePolicy {
    pub fn new(cfg: PolicyConfig) -> Self {
        Self {
            cfg,
            remaining_turn: 0.0,
            heading_chosen: false,
            target: None,
        }
    }

    fn detection_blocks_front(&self, bundle: &PerceptionBundle) -> bool {
        bundle.detections.iter().any(|o| {
            let p = o.box3d.position;
            p[2] > 0.0 && p[2] < self.cfg.stand_off_mm && p[0].abs() < self.cfg.lateral_window_mm
        })
    }

    fn vertical(&self, env: &Envelope) -> f64 {
        let (Some(up), Some(down)) = (env.get(Direction::Up), env.get(Direction::Down)) else {
            return 0.0;
        };
        let half = (up - down) / 2.0;
        if half.abs() <= self.cfg.deadband_mm {
            return 0.0;
        }
        let vz = (self.cfg.k_z * half).clamp(-self.cfg.v_max, self.cfg.v_max);
        let toward = if vz > 0.0 { up } else { down };
        if toward <= self.cfg.min_clearance_mm {
            0.0
        } else {
            vz
        }
    }

    fn yaw_step(&mut self) -> f64 {
        let max_step = self.cfg.yaw_rate_max * self.cfg.control_period;
        let step = self.remaining_turn.clamp(-max_step, max_step);
        self.remaining_turn -= step;
        step
    }

    pub fn decide_detailed(&mut self, bundle: &PerceptionBundle) -> Decision {
        let env = &bundle.envelope;
        let vz = self.vertical(env);
        let veto = self.detection_blocks_front(bundle);
        let vlm_note = bundle.vlm_description.clone();
        let done = |command: NavCommand, maneuver, target| Decision {
            command,
            maneuver,
            target,
            detection_veto: veto,
            vlm_note: vlm_note.clone(),
        };

        if HORIZONTAL.iter().all(|&d| env.get(d).is_none())
            && env.get(Direction::Up).is_none()
            && env.get(Direction::Down).is_none()
        {
            self.remaining_turn = 0.0;
            return done(NavCommand::hover(), Maneuver::Hover, None);
        }

        // Finish a turn in progress first.
        if self.remaining_turn.abs() > self.cfg.align_tolerance {
            let yaw = self.yaw_step();
            return done(
                NavCommand::new(0.0, 0.0, vz, yaw),
                Maneuver::Turn,
                self.target,
            );
        }

        let front = env.get(Direction::Front);
        let front_open = front.is_some_and(|f| f >= self.cfg.replan_mm) && !veto;
        if !self.heading_chosen || !front_open {
            self.heading_chosen = true;
            let mut best: Option<(Direction, f64)> = None;
            for &d in &HORIZONTAL {
                let Some(c) = env.get(d) else { continue };
                let usable = if d == Direction::Front {
                    front_open
                } else {
                    c > self.cfg.min_clearance_mm
                };
                if usable && best.is_none_or(|(_, b)| c > b) {
                    best = Some((d, c));
                }
            }
            match best {
                None => {
                    self.target = None;
                    self.remaining_turn = 0.0;
                    return done(NavCommand::new(0.0, 0.0, vz, 0.0), Maneuver::Hover, None);
                }
                Some((d, _)) if d != Direction::Front => {
                    self.target = Some(d);
                    self.remaining_turn = turn_for(d);
                    let yaw = self.yaw_step();
                    return done(
                        NavCommand::new(0.0, 0.0, vz, yaw),
                        Maneuver::Turn,
                        self.target,
                    );
                }
                Some((d, _)) => self.target = Some(d),
            }
        }

        // Only reached with the front open.
        let f = front.unwrap_or(0.0);
        let ramp = if f >= self.cfg.slow_zone_mm {
            1.0
        } else {
            (f / self.cfg.slow_zone_mm).max(0.2)
        };
        let yaw = self.yaw_step();
        let cmd = NavCommand::new(self.cfg.cruise_speed * ramp, 0.0, vz, yaw);
        done(
            cmd.clamped(self.cfg.v_max).0,
            Maneuver::Advance,
            self.target,
        )
    }
}

impl Default for RulePolicy {
    fn default() -> Self {
        Self::new(PolicyConfig::default())
    }
}

impl Policy for RulePolicy {
    fn decide(&mut self, bundle: &PerceptionBundle) -> NavCommand {
        self.decide_detailed(bundle).command
    }

    fn reset(&mut self) {
        self.remaining_turn = 0.0;
        self.heading_chosen = false;
        self.target = None;
    }
}

/// Reflex wins verbatim when present.
pub fn arbitrate(reflex: Option<NavCommand>, reasoner: NavCommand) -> NavCommand {
    match reflex {
        Some(r) => NavCommand {
            source: CommandSource::Reflex,
            ..r
        },
        None => reasoner,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::shield::{apply_envelope, EnvelopeConfig, TofFrame};
    use alloc::vec;

    /// Raw readings in front, back, right, left, up, down order.
    fn bundle(raw: [f64; 6]) -> PerceptionBundle {
        let cfg = EnvelopeConfig::default();
        PerceptionBundle {
            detections: vec![],
            envelope: apply_envelope(&TofFrame::from_raw(raw, 0, &cfg), &cfg),
            imu: ImuFrame::default(),
            vlm_description: String::from("a room"),
            timestamp_ms: 0,
        }
    }

    /// Bundle with the given adjusted clearances (offsets added back).
    fn adjusted(adj: [f64; 6]) -> PerceptionBundle {
        let off = EnvelopeConfig::default().offsets;
        bundle(core::array::from_fn(|i| adj[i] + off[i]))
    }

    #[test]
    fn sample_clearances_pick_forward() {
        // F3592 B1531 R1911 L1243 U1833 D1627
        let mut p = RulePolicy::default();
        let d = p.decide_detailed(&adjusted([3592.0, 1531.0, 1911.0, 1243.0, 1833.0, 1627.0]));
        assert_eq!(d.maneuver, Maneuver::Advance);
        assert_eq!(d.target, Some(Direction::Front));
        assert_eq!(d.command.vy, 0.0);
        assert!(d.command.vx > 0.0);
        // |1833 - 1627| / 2 = 103 < 150
        assert_eq!(d.command.vz, 0.0);
    }

    #[test]
    fn equal_clearances_go_forward() {
        let mut p = RulePolicy::default();
        let d = p.decide_detailed(&adjusted([1500.0; 6]));
        assert_eq!(d.target, Some(Direction::Front));
        assert_eq!(d.command.vx, 0.5);
    }

    #[test]
    fn turns_toward_larger_side_in_rate_limited_steps() {
        let mut p = RulePolicy::default();
        let b = adjusted([400.0, 900.0, 2500.0, 1200.0, 1000.0, 1000.0]);
        let d = p.decide_detailed(&b);
        assert_eq!(d.target, Some(Direction::Right));
        assert_eq!(d.maneuver, Maneuver::Turn);
        assert_eq!(d.command.yaw, 4.5);
        assert_eq!(d.command.vx, 0.0);
        let mut total = d.command.yaw;
        while p.remaining_turn.abs() > p.cfg.align_tolerance {
            let d = p.decide_detailed(&b);
            assert_eq!(d.maneuver, Maneuver::Turn);
            assert!(d.command.yaw <= 4.5);
            total += d.command.yaw;
        }
        assert!((90.0 - total).abs() <= 15.0);
        // Now facing the open side: advance, finishing the residual turn.
        let d = p.decide_detailed(&adjusted([2500.0, 1200.0, 900.0, 400.0, 1000.0, 1000.0]));
        assert_eq!(d.maneuver, Maneuver::Advance);
        assert!(d.command.vx > 0.0);
        assert!(d.command.yaw > 0.0);
    }

    #[test]
    fn left_turn_is_counterclockwise() {
        let mut p = RulePolicy::default();
        let d = p.decide_detailed(&adjusted([400.0, 900.0, 1000.0, 2500.0, 1000.0, 1000.0]));
        assert_eq!(d.target, Some(Direction::Left));
        assert!(d.command.yaw < 0.0);
    }

    #[test]
    fn vertical_centering() {
        let mut p = RulePolicy::default();
        let d = p.decide_detailed(&adjusted([3000.0, 1000.0, 1000.0, 1000.0, 1400.0, 800.0]));
        assert!((d.command.vz - 0.3).abs() < 1e-12);
        let d = p.decide_detailed(&adjusted([3000.0, 1000.0, 1000.0, 1000.0, 1000.0, 1250.0]));
        assert_eq!(d.command.vz, 0.0);
    }

    #[test]
    fn detection_inside_stand_off_blocks_forward() {
        let mut p = RulePolicy::default();
        let mut b = adjusted([3000.0, 1000.0, 1200.0, 1000.0, 1000.0, 1000.0]);
        b.detections.push(PerceivedObject {
            name: "chair".into(),
            box3d: Box3D {
                position: [50.0, 0.0, 400.0],
                dims: crate::box3d::Dimensions::new(500.0, 800.0, 500.0),
                yaw: 0.0,
                class_id: 1,
                track_id: Some(1),
                confidence: 0.9,
            },
        });
        let d = p.decide_detailed(&b);
        assert!(d.detection_veto);
        assert_eq!(d.target, Some(Direction::Right));
        assert_eq!(d.command.vx, 0.0);
    }

    #[test]
    fn all_invalid_hovers() {
        let mut p = RulePolicy::default();
        let d = p.decide_detailed(&bundle([65535.0; 6]));
        assert_eq!(d.command, NavCommand::hover());
        assert_eq!(d.maneuver, Maneuver::Hover);
    }

    #[test]
    fn deterministic() {
        let b = adjusted([800.0, 2000.0, 1500.0, 700.0, 900.0, 600.0]);
        let a: Vec<_> = (0..20)
            .scan(RulePolicy::default(), |p, _| Some(p.decide(&b)))
            .collect();
        let c: Vec<_> = (0..20)
            .scan(RulePolicy::default(), |p, _| Some(p.decide(&b)))
            .collect();
        assert_eq!(a, c);
    }

    #[test]
    fn arbitration() {
        let reflex = NavCommand {
            vz: -0.3,
            source: CommandSource::Reflex,
            ..NavCommand::default()
        };
        let forward = NavCommand::new(0.5, 0.0, 0.0, 0.0);
        assert_eq!(arbitrate(Some(reflex), forward), reflex);
        assert_eq!(arbitrate(None, forward), forward);
        let once = arbitrate(Some(reflex), forward);
        assert_eq!(arbitrate(Some(reflex), once), once);
    }

    #[test]
    fn clamp_flags_changes() {
        let (c, flag) = NavCommand::new(5.0, 0.0, 0.0, -200.0).clamped(1.0);
        assert!(flag);
        assert_eq!((c.vx, c.yaw), (1.0, -180.0));
        let (_, flag) = NavCommand::new(0.1, 0.2, 0.3, 10.0).clamped(1.0);
        assert!(!flag);
    }

    #[test]
    fn weights_must_sum_to_one() {
        assert!(PriorityWeights::default().validate().is_ok());
        let w = PriorityWeights {
            sensors: 0.5,
            detections: 0.5,
            vlm: 0.5,
        };
        assert!(w.validate().is_err());
    }
}
