//! Closed-loop trial: sense, fuse, decide and fly until the drone lands on
//! the pad, collides or runs out of time.
//!
//! Timing: sensors and the reflex run every sensor tick (10 ms), the
//! reasoner every control tick (100 ms) and the camera pipeline every
//! perception tick (500 ms). Clearance logs and breach statistics are kept at
//! the control period.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

#[allow(unused_imports)] // inherent methods win whenever std is linked
use num_traits::Float;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::dynamics::{step_dynamics, DroneState, DynamicsConfig};
use super::env::World;
use super::metrics::DepthSample;
use super::noise::NoiseModel;
use super::outcome::{classify_outcome, Outcome, REPETITION_THRESHOLD};
use super::perception::{synth_detections, PerceptionConfig};
use super::raycast::{sensor_axes, tof_frame_from_truth, true_clearances};
use crate::box3d::{ClassPriors, Fuser};
use crate::decision::{arbitrate, NavCommand, PerceivedObject, PerceptionBundle, Policy};
use crate::detect2d::{
    assign_tracks, nms, ClassCatalog, Detection2D, DetectionFrame, TrackIdAllocator, IOU_THRESHOLD,
    SCORE_THRESHOLD, TRACK_IOU_GATE,
};
use crate::geometry::CameraModel;
use crate::shield::{
    apply_envelope, reflex_check_masked, BreachTracker, Direction, EnvelopeConfig, ImuFrame,
    TofFrame,
};
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrialConfig {
    pub seed: u64,
    pub max_time_s: f64,
    pub sensor_period_s: f64,
    pub control_period_s: f64,
    pub perception_period_s: f64,
    /// Sensor and depth noise on or off.
    pub noise: bool,
    pub reflex: bool,
    /// Run the synthetic camera pipeline.
    pub perception: bool,
    pub spawn_altitude_mm: f64,
    /// Uniform jitter of the spawn point, mm per axis.
    pub start_jitter_mm: f64,
    /// Uniform jitter of the spawn heading, degrees either way.
    pub start_yaw_jitter_deg: f64,
    /// Landing is complete at or below this altitude.
    pub touchdown_mm: f64,
    /// Descent starts once the horizontal speed over the pad is below this,
    /// m/s.
    pub hover_speed_max: f64,
    pub descent_speed: f64,
    pub v_max: f64,
    /// Room changes count once this far inside the new room, mm.
    pub room_margin_mm: f64,
    pub repetition_threshold: usize,
    pub envelope: EnvelopeConfig,
    pub dynamics: DynamicsConfig,
    pub perception_cfg: PerceptionConfig,
    pub noise_model: NoiseModel,
    pub camera: CameraModel,
    pub priors: ClassPriors,
}

impl Default for TrialConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            max_time_s: 120.0,
            sensor_period_s: 0.01,
            control_period_s: 0.1,
            perception_period_s: 0.5,
            noise: true,
            reflex: true,
            perception: true,
            spawn_altitude_mm: 1000.0,
            start_jitter_mm: 250.0,
            start_yaw_jitter_deg: 180.0,
            touchdown_mm: 100.0,
            hover_speed_max: 0.05,
            descent_speed: 0.3,
            v_max: 1.0,
            room_margin_mm: 50.0,
            repetition_threshold: REPETITION_THRESHOLD,
            envelope: EnvelopeConfig::default(),
            dynamics: DynamicsConfig::default(),
            perception_cfg: PerceptionConfig::default(),
            noise_model: NoiseModel::default(),
            camera: CameraModel::reference(),
            priors: ClassPriors::default(),
        }
    }
}

impl TrialConfig {
    /// Noise-free, jitter-free, reflex on: for scripted scenarios.
    pub fn scripted() -> Self {
        Self {
            noise: false,
            start_jitter_mm: 0.0,
            start_yaw_jitter_deg: 0.0,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.into()));
        if !(self.sensor_period_s > 0.0 && self.sensor_period_s <= 0.1) {
            return bad("sensor period must be in (0, 0.1] s");
        }
        let ratio = |p: f64| p / self.sensor_period_s;
        for (name, p) in [
            ("control", self.control_period_s),
            ("perception", self.perception_period_s),
        ] {
            let r = ratio(p);
            if !(r >= 1.0) || (r - r.round()).abs() > 1e-6 {
                return bad(&format!(
                    "{name} period must be a whole multiple of the sensor period"
                ));
            }
        }
        if !(self.max_time_s > 0.0) {
            return bad("max trial time must be positive");
        }
        if !(self.start_jitter_mm >= 0.0 && self.start_yaw_jitter_deg >= 0.0) {
            return bad("start jitter must be non-negative");
        }
        if !(self.v_max > 0.0) {
            return bad("v_max must be positive");
        }
        self.envelope
            .validate()
            .map_err(|e| Error::Config(e.into()))?;
        self.noise_model
            .validate()
            .map_err(|e| Error::Config(e.into()))?;
        self.camera.validate()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Termination {
    Landed,
    Collision,
    Timeout,
}

/// State at one control tick.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectorySample {
    pub t_s: f64,
    pub position: [f64; 3],
    pub yaw_deg: f64,
    pub room: Option<u32>,
    /// Clamped sensor readings, [`Direction::ALL`] order.
    pub clearances: [f64; 6],
    /// Command applied at this tick (after arbitration).
    pub command: NavCommand,
    pub imu: ImuFrame,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialResult {
    pub seed: u64,
    pub environment: String,
    pub outcome: Outcome,
    pub termination: Termination,
    pub breach_count: usize,
    pub mean_clearance_mm: Option<f64>,
    /// Smallest noise-free clearance seen on any active axis, mm.
    pub min_true_clearance_mm: f64,
    /// Sensor ticks on which the reflex overrode the reasoner.
    pub reflex_ticks: usize,
    pub duration_s: f64,
    /// Start room, then every room entered.
    pub rooms: Vec<u32>,
    pub trajectory: Vec<TrajectorySample>,
    /// Reasoner output at every control tick.
    pub commands: Vec<NavCommand>,
    pub tof_log: Vec<TofFrame>,
    /// Tracked detections at every perception tick.
    pub detections: Vec<DetectionFrame>,
    pub depth_samples: Vec<DepthSample>,
}

impl TrialResult {
    pub fn landed(&self) -> bool {
        self.termination == Termination::Landed
    }
}

/// Seed of trial `index` in a batch.
pub fn trial_seed(base: u64, index: u64) -> u64 {
    base.wrapping_add(index)
}

fn collided(world: &World, prev: &DroneState, next: &DroneState, landing: bool) -> bool {
    let (p, q) = (prev.position, next.position);
    world
        .walls
        .iter()
        .any(|w| w.crossed_by([p[0], p[1]], [q[0], q[1]]))
        || world.env.objects.iter().any(|o| o.contains(q))
        || q[2] >= world.env.ceiling_mm
        || (q[2] <= 0.0 && !landing)
        || world.room_at(q[0], q[1]).is_none()
}

fn describe(world: &World, room: Option<u32>, seen: &[PerceivedObject]) -> String {
    let place = match room.and_then(|r| world.env.room(r)) {
        Some(r) if !r.name.is_empty() => format!("Room {} ({})", r.id, r.name),
        Some(r) => format!("Room {}", r.id),
        None => String::from("A doorway"),
    };
    if seen.is_empty() {
        format!("{place}. Nothing detected ahead.")
    } else {
        let names: Vec<&str> = seen.iter().map(|o| o.name.as_str()).collect();
        format!("{place}. In view: {}.", names.join(", "))
    }
}

/// Runs one trial. Faults (a state outside the free space before any
/// collision was registered, or an invalid configuration) abort with an
/// error.
pub fn run_trial(world: &World, policy: &mut dyn Policy, cfg: &TrialConfig) -> Result<TrialResult> {
    cfg.validate()?;
    policy.reset();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);

    let start = world.start_position();
    let jitter = |rng: &mut ChaCha8Rng, a: f64| {
        if a > 0.0 {
            rng.random_range(-a..=a)
        } else {
            0.0
        }
    };
    let jx = jitter(&mut rng, cfg.start_jitter_mm);
    let jy = jitter(&mut rng, cfg.start_jitter_mm);
    let jyaw = jitter(&mut rng, cfg.start_yaw_jitter_deg);
    let mut state = DroneState {
        position: [start[0] + jx, start[1] + jy, cfg.spawn_altitude_mm],
        yaw: crate::box3d::wrap_angle((world.env.start_yaw_deg + jyaw).to_radians()),
        velocity: [0.0; 3],
    };
    if !world.is_free(state.position) {
        return Err(Error::SimulationFault(format!(
            "spawn point ({:.0}, {:.0}) is not in free space",
            state.position[0], state.position[1]
        )));
    }

    let dt = cfg.sensor_period_s;
    let control_every = (cfg.control_period_s / dt).round() as u64;
    let perception_every = (cfg.perception_period_s / dt).round() as u64;
    let max_ticks = (cfg.max_time_s / dt).round() as u64;
    let cam = cfg.camera.downscaled(cfg.perception_cfg.downscale);
    let catalog = ClassCatalog::default();
    let mut fuser = Fuser::new(cfg.priors.clone(), catalog.clone());
    let ids = TrackIdAllocator::new();
    let mut prev_dets: Vec<Detection2D> = Vec::new();
    let mut perceived: Vec<PerceivedObject> = Vec::new();

    let mut tracker = BreachTracker::new();
    let mut trajectory = Vec::new();
    let mut commands = Vec::new();
    let mut tof_log = Vec::new();
    let mut depth_samples = Vec::new();
    let mut detection_log = Vec::new();
    let mut rooms = alloc::vec![world.env.start_room];
    let mut current_room = world.env.start_room;
    let mut reasoner_cmd = NavCommand::hover();
    let mut landing = false;
    let mut descending = false;
    let mut reflex_ticks = 0usize;
    let mut min_true = f64::INFINITY;
    let mut imu = ImuFrame::default();
    let mut termination = Termination::Timeout;
    let mut tick = 0u64;

    while tick < max_ticks {
        let t_ms = tick * (dt * 1000.0).round() as u64;
        let truth = true_clearances(world, &state)?;
        for (i, d) in truth.iter().enumerate() {
            if !(landing && i == Direction::Down.index()) {
                min_true = min_true.min(*d);
            }
        }
        let tof = if cfg.noise {
            tof_frame_from_truth(
                &truth,
                &cfg.envelope,
                Some((&cfg.noise_model.tof, &mut rng)),
                t_ms,
            )
        } else {
            tof_frame_from_truth::<ChaCha8Rng>(&truth, &cfg.envelope, None, t_ms)
        };
        let envelope = apply_envelope(&tof, &cfg.envelope);

        if !landing && world.on_pad(state.position[0], state.position[1]) {
            landing = true;
        }

        if cfg.perception && !world.env.objects.is_empty() && tick.is_multiple_of(perception_every) {
            let noise = cfg.noise.then_some((&cfg.noise_model.mono, &mut rng));
            let (dets, depth) =
                synth_detections(world, &state, &cam, &catalog, &cfg.perception_cfg, noise)?;
            let dets = nms(&dets, IOU_THRESHOLD, SCORE_THRESHOLD);
            let tracked = assign_tracks(&prev_dets, &dets, TRACK_IOU_GATE, &ids);
            let fused = fuser.fuse_frame(&tracked, &depth, &cam, cfg.perception_period_s);
            perceived = fused
                .into_iter()
                .filter_map(|f| {
                    let name = catalog.name(f.detection.class_id)?.into();
                    Some(PerceivedObject {
                        name,
                        box3d: f.box3d?,
                    })
                })
                .collect();
            detection_log.push(DetectionFrame {
                frame_k: tick / perception_every,
                dets: tracked.clone(),
            });
            prev_dets = tracked;
            let front = truth[Direction::Front.index()];
            if cfg.noise && (100.0..=3000.0).contains(&front) {
                depth_samples.push(DepthSample {
                    truth_mm: front,
                    tof_mm: tof.get(Direction::Front),
                    mono_mm: cfg.noise_model.mono.sample(front, &mut rng),
                });
            }
        }

        let control_tick = tick.is_multiple_of(control_every);
        if control_tick {
            reasoner_cmd = if landing {
                descending |= state.horizontal_speed_m_s() < cfg.hover_speed_max;
                let vz = if descending { -cfg.descent_speed } else { 0.0 };
                NavCommand::new(0.0, 0.0, vz, 0.0)
            } else {
                let bundle = PerceptionBundle {
                    detections: perceived.clone(),
                    envelope: envelope.clone(),
                    imu,
                    vlm_description: describe(
                        world,
                        world.room_at(state.position[0], state.position[1]),
                        &perceived,
                    ),
                    timestamp_ms: t_ms,
                };
                policy.decide(&bundle).clamped(cfg.v_max).0
            };
            commands.push(reasoner_cmd);
            tracker.push(&tof, &cfg.envelope);
            tof_log.push(tof.clone());
        }

        let mut mask = [true; 6];
        if landing {
            mask[Direction::Down.index()] = false;
        }
        let reflex = if cfg.reflex {
            reflex_check_masked(&envelope, &cfg.envelope, mask)
        } else {
            None
        };
        if reflex.is_some() {
            reflex_ticks += 1;
        }
        let applied = arbitrate(reflex, reasoner_cmd);
        if control_tick {
            trajectory.push(TrajectorySample {
                t_s: tick as f64 * dt,
                position: state.position,
                yaw_deg: state.yaw.to_degrees(),
                room: world.room_at(state.position[0], state.position[1]),
                clearances: tof.distances,
                command: applied,
                imu,
            });
        }

        let prev = state;
        state = step_dynamics(&state, &applied, dt, &cfg.dynamics)?;
        tick += 1;

        // Body-frame linear acceleration and yaw rate for the next bundle.
        let axes = sensor_axes(prev.yaw);
        let a = [
            (state.velocity[0] - prev.velocity[0]) / dt / 1000.0,
            (state.velocity[1] - prev.velocity[1]) / dt / 1000.0,
            (state.velocity[2] - prev.velocity[2]) / dt / 1000.0,
        ];
        let dot = |u: [f64; 3]| u[0] * a[0] + u[1] * a[1] + u[2] * a[2];
        imu = ImuFrame {
            accel: [dot(axes[0]), dot(axes[2]), a[2]],
            gyro: [
                0.0,
                0.0,
                crate::box3d::wrap_angle(state.yaw - prev.yaw) / dt,
            ],
            timestamp_ms: tick * (dt * 1000.0).round() as u64,
        };

        if collided(world, &prev, &state, landing) {
            termination = Termination::Collision;
            min_true = 0.0;
            break;
        }
        if landing && state.position[2] <= cfg.touchdown_mm {
            termination = Termination::Landed;
            break;
        }
        if let Some(r) =
            world.room_at_inset(state.position[0], state.position[1], cfg.room_margin_mm)
        {
            if r != current_room {
                current_room = r;
                rooms.push(r);
            }
        }
    }

    let stats = tracker.stats();
    let landed = termination == Termination::Landed;
    Ok(TrialResult {
        seed: cfg.seed,
        environment: world.env.name.clone(),
        outcome: classify_outcome(&rooms, landed, world, cfg.repetition_threshold),
        termination,
        breach_count: stats.breach_count,
        mean_clearance_mm: stats.mean_clearance_mm,
        min_true_clearance_mm: min_true,
        reflex_ticks,
        duration_s: tick as f64 * dt,
        rooms,
        trajectory,
        commands,
        tof_log,
        detections: detection_log,
        depth_samples,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::decision::RulePolicy;
    use crate::sim::testbed::{open_corridor, walled_room};

    #[test]
    fn open_corridor_is_direct() {
        let w = open_corridor();
        let r = run_trial(&w, &mut RulePolicy::default(), &TrialConfig::scripted()).unwrap();
        assert_eq!(r.termination, Termination::Landed, "rooms {:?}", r.rooms);
        assert_eq!(r.outcome, Outcome::Direct);
        assert_eq!(r.rooms, [1, 2, 3]);
    }

    #[test]
    fn walled_room_times_out() {
        let w = walled_room();
        let cfg = TrialConfig {
            max_time_s: 20.0,
            ..TrialConfig::scripted()
        };
        let r = run_trial(&w, &mut RulePolicy::default(), &cfg).unwrap();
        assert_eq!(r.termination, Termination::Timeout);
        assert_eq!(r.outcome, Outcome::Failure);
        assert!((r.duration_s - 20.0).abs() < 1e-9);
        assert!(r.min_true_clearance_mm > 0.0);
    }

    #[test]
    fn seeded_trials_repeat() {
        let w = walled_room();
        let cfg = TrialConfig {
            seed: 9,
            max_time_s: 10.0,
            ..TrialConfig::default()
        };
        let a = run_trial(&w, &mut RulePolicy::default(), &cfg).unwrap();
        let b = run_trial(&w, &mut RulePolicy::default(), &cfg).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn bad_config_is_rejected() {
        let cfg = TrialConfig {
            control_period_s: 0.015,
            ..TrialConfig::default()
        };
        assert!(run_trial(&open_corridor(), &mut RulePolicy::default(), &cfg).is_err());
    }
}
