//! Kinematic stand-in for the flight controller: each velocity axis tracks
//! its setpoint with a first-order lag, yaw follows the commanded turn at a
//! bounded rate.

#[allow(unused_imports)] // inherent methods win whenever std is linked
use num_traits::Float;
use serde::{Deserialize, Serialize};

use crate::decision::NavCommand;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct DroneState {
    /// World frame, mm.
    pub position: [f64; 3],
    /// Clockwise heading, rad.
    pub yaw: f64,
    /// World frame, mm/s.
    pub velocity: [f64; 3],
}

impl DroneState {
    pub fn speed_m_s(&self) -> f64 {
        let v = self.velocity;
        (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt() / 1000.0
    }

    pub fn horizontal_speed_m_s(&self) -> f64 {
        let v = self.velocity;
        (v[0] * v[0] + v[1] * v[1]).sqrt() / 1000.0
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DynamicsConfig {
    /// Velocity time constant, s.
    pub tau_s: f64,
    /// deg/s
    pub yaw_rate_max: f64,
    /// The period a command's yaw is spread over, s.
    pub command_period_s: f64,
}

impl Default for DynamicsConfig {
    fn default() -> Self {
        Self {
            tau_s: 0.3,
            yaw_rate_max: 45.0,
            command_period_s: 0.1,
        }
    }
}

/// Advances the state by `dt` seconds (`0 < dt <= 0.1`) under a body-frame
/// command. The body-to-world rotation uses the heading at the start of the
/// step; each axis integrates the exact first-order response.
pub fn step_dynamics(
    state: &DroneState,
    cmd: &NavCommand,
    dt: f64,
    cfg: &DynamicsConfig,
) -> Result<DroneState> {
    if !(dt > 0.0 && dt <= 0.1) {
        return Err(Error::SimulationFault(alloc::format!(
            "time step {dt} s is outside (0, 0.1]"
        )));
    }
    let (s, c) = state.yaw.sin_cos();
    // mm/s; forward is (c, s), right is (-s, c).
    let target = [
        1000.0 * (cmd.vx * c - cmd.vy * s),
        1000.0 * (cmd.vx * s + cmd.vy * c),
        1000.0 * cmd.vz,
    ];
    let decay = (-dt / cfg.tau_s).exp();
    let mut next = *state;
    for i in 0..3 {
        let v0 = state.velocity[i];
        let vt = target[i];
        next.velocity[i] = vt + (v0 - vt) * decay;
        next.position[i] += vt * dt + (v0 - vt) * cfg.tau_s * (1.0 - decay);
    }
    if next.position[2] < 0.0 {
        next.position[2] = 0.0;
        next.velocity[2] = next.velocity[2].max(0.0);
    }
    let rate = (cmd.yaw / cfg.command_period_s).clamp(-cfg.yaw_rate_max, cfg.yaw_rate_max);
    next.yaw = crate::box3d::wrap_angle(state.yaw + rate.to_radians() * dt);
    Ok(next)
}
