//! Algorithmic core of the indoor navigation stack.
//!
//! Everything in here is pure computation over caller-supplied data and builds
//! without `std` (only `alloc` is required). IO, file formats, transports, the
//! threaded pipeline and the command line live in the `indoornav` crate.
//!
//! Module map:
//!
//! - [`geometry`]: pinhole camera, projection/back-projection, depth maps.
//! - [`detect2d`]: confidence filtering, class-wise NMS and IoU track IDs.
//! - [`box3d`]: 2D to 3D lifting, class priors, yaw heuristics and the
//!   11-state constant-velocity Kalman tracker.
//! - [`shield`]: ToF envelope offsets, breach accounting and the reflex rule.
//! - [`decision`]: perception bundle, rule policy, arbitration and the
//!   velocity setpoint packet.
//! - [`sim`]: ray-cast indoor world, noise models, synthetic perception,
//!   kinematics, trial runner and evaluation metrics.

#![no_std]
#![allow(clippy::neg_cmp_op_on_partial_ord)]

extern crate alloc;

#[cfg(test)]
extern crate std;

pub mod box3d;
pub mod decision;
pub mod detect2d;
pub mod error;
pub mod geometry;
pub mod shield;
pub mod sim;

pub use error::{Error, Result};
