//! Structural stand-in for the camera pipeline: renders a depth grid by ray
//! casting and produces 2D detections for the furniture in view.
//!
//! The body-mounted camera looks along the drone's forward axis from the
//! drone's position. Detection boxes are the tight projection of the
//! object's corners grown about their centre by `overestimate`, which is how
//! the dimension overestimate of the real detector is reproduced.

use alloc::vec;
use alloc::vec::Vec;

use nalgebra::Vector3;
#[allow(unused_imports)] // inherent methods win whenever std is linked
use num_traits::Float;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::dynamics::DroneState;
use super::env::World;
use super::noise::ModalityNoise;
use super::raycast::Hit;
use crate::detect2d::{ClassCatalog, Detection2D};
use crate::geometry::{normalize_depth, CameraModel, DepthMap, PixelBox};
use crate::Result;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PerceptionConfig {
    /// Horizontal field of view, degrees.
    pub fov_deg: f64,
    /// Objects farther than this are not detected, mm.
    pub max_range_mm: f64,
    /// Growth factor applied to every detection box.
    pub overestimate: f64,
    pub score: f64,
    /// Depth reported where a ray hits nothing, mm.
    pub background_mm: f64,
    /// Smallest fraction of the tight box that must show the object.
    pub min_visible_fraction: f64,
    /// Rendering resolution divisor relative to the calibrated camera.
    pub downscale: u32,
}

impl Default for PerceptionConfig {
    fn default() -> Self {
        Self {
            fov_deg: 69.0,
            max_range_mm: 6000.0,
            overestimate: 1.15,
            score: 0.9,
            background_mm: 6000.0,
            min_visible_fraction: 0.25,
            downscale: 8,
        }
    }
}

fn axes(state: &DroneState) -> ([f64; 3], [f64; 3]) {
    let (s, c) = state.yaw.sin_cos();
    ([c, s, 0.0], [-s, c, 0.0])
}

/// World point to camera frame (x right, y down, z forward), mm.
pub fn world_to_camera(state: &DroneState, p: [f64; 3]) -> Vector3<f64> {
    let (fwd, right) = axes(state);
    let d = [
        p[0] - state.position[0],
        p[1] - state.position[1],
        p[2] - state.position[2],
    ];
    let dot = |a: [f64; 3]| a[0] * d[0] + a[1] * d[1] + a[2] * d[2];
    Vector3::new(dot(right), -d[2], dot(fwd))
}

/// Camera-frame direction to world frame.
pub fn camera_to_world_dir(state: &DroneState, c: &Vector3<f64>) -> [f64; 3] {
    let (fwd, right) = axes(state);
    [
        right[0] * c.x + fwd[0] * c.z,
        right[1] * c.x + fwd[1] * c.z,
        -c.y,
    ]
}

/// Z-depth per pixel (mm) and the object each pixel sees, row-major at the
/// camera's resolution. Rays pass through pixel centres.
pub fn render_depth<R: Rng + ?Sized>(
    world: &World,
    state: &DroneState,
    cam: &CameraModel,
    cfg: &PerceptionConfig,
    mut noise: Option<(&ModalityNoise, &mut R)>,
) -> (Vec<f64>, Vec<Option<usize>>) {
    let (w, h) = (cam.width as usize, cam.height as usize);
    let mut depth = vec![cfg.background_mm; w * h];
    let mut ids = vec![None; w * h];
    for v in 0..h {
        for u in 0..w {
            // Unit z-component, so the ray parameter is the z-depth.
            let c = Vector3::new(
                (u as f64 + 0.5 - cam.cx) / cam.fx,
                (v as f64 + 0.5 - cam.cy) / cam.fy,
                1.0,
            );
            let dir = camera_to_world_dir(state, &c);
            let i = v * w + u;
            if let Some((t, hit)) = world.cast(state.position, dir) {
                depth[i] = t.min(cfg.background_mm);
                if let Hit::Object(k) = hit {
                    ids[i] = Some(k);
                }
            }
            if let Some((model, rng)) = noise.as_mut() {
                depth[i] = model.sample(depth[i], &mut **rng).max(1.0);
            }
        }
    }
    (depth, ids)
}

/// Detections for visible, in-range, in-view objects of known classes, and
/// the normalized depth map they should be fused against. Output follows
/// object order.
pub fn synth_detections<R: Rng + ?Sized>(
    world: &World,
    state: &DroneState,
    cam: &CameraModel,
    catalog: &ClassCatalog,
    cfg: &PerceptionConfig,
    noise: Option<(&ModalityNoise, &mut R)>,
) -> Result<(Vec<Detection2D>, DepthMap)> {
    let (raw, ids) = render_depth(world, state, cam, cfg, noise);
    let (w, h) = (cam.width as f64, cam.height as f64);
    let half_fov = (cfg.fov_deg / 2.0).to_radians();
    let mut dets = Vec::new();
    for (k, obj) in world.env.objects.iter().enumerate() {
        let Some(class_id) = catalog.id(&obj.class) else {
            continue;
        };
        let centre = world_to_camera(
            state,
            [
                obj.center[0],
                obj.center[1],
                obj.base_z + obj.height() / 2.0,
            ],
        );
        if !(centre.z > 0.0)
            || centre.norm() > cfg.max_range_mm
            || centre.x.atan2(centre.z).abs() > half_fov
        {
            continue;
        }
        let mut pts = Vec::with_capacity(8);
        for c in obj.corners() {
            match cam.project(&world_to_camera(state, c)) {
                Some(p) => pts.push(p),
                None => break,
            }
        }
        if pts.len() < 8 {
            continue;
        }
        let fold = |f: fn(f64, f64) -> f64, init: f64, pick: fn(&nalgebra::Vector2<f64>) -> f64| {
            pts.iter().map(pick).fold(init, f)
        };
        let tight = PixelBox {
            x_min: fold(f64::min, f64::INFINITY, |p| p.x),
            y_min: fold(f64::min, f64::INFINITY, |p| p.y),
            x_max: fold(f64::max, f64::NEG_INFINITY, |p| p.x),
            y_max: fold(f64::max, f64::NEG_INFINITY, |p| p.y),
        };
        let seen = tight.clamped(w, h);
        if seen.area() <= 0.0 {
            continue;
        }
        // Occlusion: enough of the on-screen box must show this object.
        let (x0, x1) = (
            seen.x_min.floor() as usize,
            (seen.x_max.ceil() as usize).min(cam.width as usize),
        );
        let (y0, y1) = (
            seen.y_min.floor() as usize,
            (seen.y_max.ceil() as usize).min(cam.height as usize),
        );
        let mut total = 0usize;
        let mut mine = 0usize;
        for y in y0..y1.max(y0 + 1).min(cam.height as usize) {
            for x in x0..x1.max(x0 + 1).min(cam.width as usize) {
                total += 1;
                if ids[y * cam.width as usize + x] == Some(k) {
                    mine += 1;
                }
            }
        }
        if total == 0 || (mine as f64) < cfg.min_visible_fraction * total as f64 {
            continue;
        }
        let bbox = tight.scaled(cfg.overestimate).clamped(w, h);
        dets.push(Detection2D::new(bbox, cfg.score, class_id));
    }
    let depth = normalize_depth(cam.width as usize, cam.height as usize, &raw)?;
    Ok((dets, depth))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sim::env::{Environment, Rect, Room, SimObject};
    use rand_chacha::ChaCha8Rng;

    fn world(objects: Vec<SimObject>) -> World {
        Environment {
            name: "t".into(),
            rooms: vec![Room {
                id: 1,
                name: "a".into(),
                bounds: Rect::new(0.0, 0.0, 5000.0, 4000.0),
            }],
            doorways: vec![],
            objects,
            landing_pad: None,
            ceiling_mm: 2500.0,
            start_room: 1,
            start_position: None,
            start_yaw_deg: 0.0,
        }
        .build()
        .unwrap()
    }

    fn drone() -> DroneState {
        DroneState {
            position: [500.0, 2000.0, 1000.0],
            yaw: 0.0,
            velocity: [0.0; 3],
        }
    }

    #[test]
    fn camera_frame_convention() {
        let s = drone();
        let c = world_to_camera(&s, [1500.0, 2100.0, 900.0]);
        assert!((c - Vector3::new(100.0, 100.0, 1000.0)).norm() < 1e-9);
    }

    #[test]
    fn empty_view_gives_wall_depth() {
        let w = world(vec![]);
        let cam = CameraModel::reference().downscaled(8);
        let (dets, depth) = synth_detections::<ChaCha8Rng>(
            &w,
            &drone(),
            &cam,
            &ClassCatalog::default(),
            &PerceptionConfig::default(),
            None,
        )
        .unwrap();
        assert!(dets.is_empty());
        // Centre pixel looks straight at the far wall 4500 mm away.
        let v = depth.at(cam.width as i64 / 2, cam.height as i64 / 2);
        assert!((depth.to_metric(v) - 4500.0).abs() < 50.0);
    }

    #[test]
    fn object_behind_or_outside_view_is_skipped() {
        let chair = |x: f64, y: f64| SimObject {
            class: "chair".into(),
            dims: [900.0, 500.0, 500.0],
            center: [x, y],
            base_z: 0.0,
            yaw: 0.0,
        };
        let w = world(vec![
            chair(2500.0, 2000.0),
            chair(250.0, 2000.0),
            chair(1000.0, 3800.0),
        ]);
        let cam = CameraModel::reference().downscaled(4);
        let (dets, _) = synth_detections::<ChaCha8Rng>(
            &w,
            &drone(),
            &cam,
            &ClassCatalog::default(),
            &PerceptionConfig::default(),
            None,
        )
        .unwrap();
        assert_eq!(dets.len(), 1);
        assert_eq!(
            dets[0].class_id,
            ClassCatalog::default().id("chair").unwrap()
        );
    }

    #[test]
    fn occluded_object_is_skipped() {
        let block = |x: f64, class: &str, dims: [f64; 3]| SimObject {
            class: class.into(),
            dims,
            center: [x, 2000.0],
            base_z: 0.0,
            yaw: 0.0,
        };
        let w = world(vec![
            block(2000.0, "cabinet", [2400.0, 1500.0, 300.0]),
            block(3500.0, "chair", [900.0, 500.0, 500.0]),
        ]);
        let cam = CameraModel::reference().downscaled(4);
        let (dets, _) = synth_detections::<ChaCha8Rng>(
            &w,
            &drone(),
            &cam,
            &ClassCatalog::default(),
            &PerceptionConfig::default(),
            None,
        )
        .unwrap();
        assert_eq!(dets.len(), 1);
        assert_eq!(
            dets[0].class_id,
            ClassCatalog::default().id("cabinet").unwrap()
        );
    }
}
