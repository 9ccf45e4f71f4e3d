//! Ray casting against walls, floor, ceiling and furniture.

#[allow(unused_imports)] // inherent methods win whenever std is linked
use num_traits::Float;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::dynamics::DroneState;
use super::env::{SimObject, World};
use super::noise::ModalityNoise;
use crate::shield::{Direction, EnvelopeConfig, TofFrame};
use crate::{Error, Result};

const T_EPS: f64 = 1e-9;

/// What a ray ran into.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Hit {
    Wall,
    Floor,
    Ceiling,
    Object(usize),
}

fn slab(o: f64, d: f64, lo: f64, hi: f64, t0: &mut f64, t1: &mut f64) -> bool {
    if d.abs() < 1e-15 {
        return o >= lo && o <= hi;
    }
    let (mut a, mut b) = ((lo - o) / d, (hi - o) / d);
    if a > b {
        core::mem::swap(&mut a, &mut b);
    }
    *t0 = t0.max(a);
    *t1 = t1.min(b);
    t0 <= t1
}

fn cast_object(obj: &SimObject, o: [f64; 3], d: [f64; 3]) -> Option<f64> {
    let lo = obj.to_local(o);
    let (s, c) = obj.yaw.sin_cos();
    let ld = [c * d[0] + s * d[1], -s * d[0] + c * d[1], d[2]];
    let (hw, hl) = (obj.dims[1] / 2.0, obj.dims[2] / 2.0);
    let (mut t0, mut t1) = (f64::NEG_INFINITY, f64::INFINITY);
    let hit = slab(lo[0], ld[0], -hw, hw, &mut t0, &mut t1)
        && slab(lo[1], ld[1], -hl, hl, &mut t0, &mut t1)
        && slab(
            lo[2],
            ld[2],
            obj.base_z,
            obj.base_z + obj.dims[0],
            &mut t0,
            &mut t1,
        );
    if !hit || t1 < 0.0 {
        return None;
    }
    Some(t0.max(0.0))
}

impl World {
    /// First hit along `origin + t * dir`, `t > 0`. `dir` need not be unit
    /// length; the returned `t` is in units of `dir`.
    pub fn cast(&self, origin: [f64; 3], dir: [f64; 3]) -> Option<(f64, Hit)> {
        let mut best: Option<(f64, Hit)> = None;
        let mut offer = |t: f64, h: Hit| {
            if t.is_finite() && t >= 0.0 && best.is_none_or(|(b, _)| t < b) {
                best = Some((t, h));
            }
        };
        let ceiling = self.env.ceiling_mm;
        if dir[2] < 0.0 {
            offer(-origin[2] / dir[2], Hit::Floor);
        } else if dir[2] > 0.0 {
            offer((ceiling - origin[2]) / dir[2], Hit::Ceiling);
        }
        for w in &self.walls {
            // Walls are axis aligned: one coordinate fixed, the other spans.
            let (axis, other) = if (w.a[0] - w.b[0]).abs() < 1e-9 {
                (0, 1)
            } else {
                (1, 0)
            };
            if dir[axis].abs() < 1e-15 {
                continue;
            }
            let t = (w.a[axis] - origin[axis]) / dir[axis];
            if t <= T_EPS {
                continue;
            }
            let s = origin[other] + t * dir[other];
            let (lo, hi) = if w.a[other] <= w.b[other] {
                (w.a[other], w.b[other])
            } else {
                (w.b[other], w.a[other])
            };
            let z = origin[2] + t * dir[2];
            if s >= lo - 1e-9 && s <= hi + 1e-9 && (0.0..=ceiling).contains(&z) {
                offer(t, Hit::Wall);
            }
        }
        for (i, obj) in self.env.objects.iter().enumerate() {
            if let Some(t) = cast_object(obj, origin, dir) {
                offer(t, Hit::Object(i));
            }
        }
        best
    }
}

/// World-frame unit vectors of the six sensor axes, [`Direction::ALL`]
/// order.
pub fn sensor_axes(yaw: f64) -> [[f64; 3]; 6] {
    let (s, c) = yaw.sin_cos();
    let fwd = [c, s, 0.0];
    let right = [-s, c, 0.0];
    Direction::ALL.map(|d| match d {
        Direction::Front => fwd,
        Direction::Back => [-fwd[0], -fwd[1], 0.0],
        Direction::Right => right,
        Direction::Left => [-right[0], -right[1], 0.0],
        Direction::Up => [0.0, 0.0, 1.0],
        Direction::Down => [0.0, 0.0, -1.0],
    })
}

/// Noise-free first-hit distance along each sensor axis (mm); infinite when
/// nothing is hit.
pub fn true_clearances(world: &World, state: &DroneState) -> Result<[f64; 6]> {
    if !world.is_free(state.position) {
        return Err(Error::SimulationFault(alloc::format!(
            "drone at ({:.1}, {:.1}, {:.1}) is outside the free space",
            state.position[0],
            state.position[1],
            state.position[2]
        )));
    }
    let axes = sensor_axes(state.yaw);
    Ok(axes.map(|a| {
        world
            .cast(state.position, a)
            .map_or(f64::INFINITY, |(t, _)| t)
    }))
}

/// Turns true distances into one sensor frame: adds noise (when given),
/// then applies the range clamp. Distances beyond the range read as the
/// range limit.
pub fn tof_frame_from_truth<R: Rng + ?Sized>(
    truth: &[f64; 6],
    cfg: &EnvelopeConfig,
    noise: Option<(&ModalityNoise, &mut R)>,
    timestamp_ms: u64,
) -> TofFrame {
    let mut raw = *truth;
    match noise {
        Some((model, rng)) => {
            for r in raw.iter_mut() {
                *r = if *r > cfg.max_range_mm {
                    cfg.max_range_mm
                } else {
                    model.sample(*r, rng)
                };
            }
        }
        None => {
            for r in raw.iter_mut() {
                *r = r.min(cfg.max_range_mm);
            }
        }
    }
    TofFrame::from_raw(raw, timestamp_ms, cfg)
}

/// Six axis rays from the drone, yawed with the body for the horizontal
/// four, with optional noise and the range clamp.
pub fn raycast_tof<R: Rng + ?Sized>(
    world: &World,
    state: &DroneState,
    cfg: &EnvelopeConfig,
    noise: Option<(&ModalityNoise, &mut R)>,
    timestamp_ms: u64,
) -> Result<TofFrame> {
    let truth = true_clearances(world, state)?;
    Ok(tof_frame_from_truth(&truth, cfg, noise, timestamp_ms))
}
