//! Closed-loop indoor simulator.
//!
//! Plan coordinates are millimetres with `+Y` a quarter turn clockwise from
//! `+X` seen from above, and `Z` up. All headings (drone and objects) are
//! clockwise-positive in that plane, which matches the command convention
//! of the decision layer: a positive yaw command turns right.

pub mod dynamics;
pub mod env;
pub mod metrics;
pub mod noise;
pub mod outcome;
pub mod perception;
pub mod raycast;
pub mod testbed;
pub mod trial;

pub use dynamics::{step_dynamics, DroneState, DynamicsConfig};
pub use env::{Doorway, Environment, Rect, Room, Segment, SimObject, World};
pub use metrics::{depth_metrics, monte_carlo_depth, pearson, BinSpec, DepthMetrics, DepthSample};
pub use noise::{ModalityNoise, NoiseAnchor, NoiseModel};
pub use outcome::{classify_outcome, Outcome};
pub use perception::{synth_detections, PerceptionConfig};
pub use raycast::{raycast_tof, Hit};
pub use trial::{run_trial, trial_seed, Termination, TrialConfig, TrialResult};
