//! Ready-made environments.
//!
//! The six-room layout approximates the physical test house: three rooms
//! along the front, three behind, the porch (room 1) in a corner and the
//! landing pad in room 6. Room sizes and doorway positions are our own
//! estimates.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use core::f64::consts::FRAC_PI_2;

use super::dynamics::DroneState;
use super::env::{Doorway, Environment, Rect, Room, SimObject, World};

fn room(id: u32, name: &str, x0: f64, y0: f64, x1: f64, y1: f64) -> Room {
    Room {
        id,
        name: name.into(),
        bounds: Rect::new(x0, y0, x1, y1),
    }
}

fn door(a: u32, b: u32, width: f64, center: Option<f64>) -> Doorway {
    Doorway {
        rooms: [a, b],
        width,
        center,
    }
}

fn object(class: &str, hwl: [f64; 3], center: [f64; 2]) -> SimObject {
    SimObject {
        class: class.into(),
        dims: hwl,
        center,
        base_z: 0.0,
        yaw: 0.0,
    }
}

/// Six 3 m x 3 m rooms, 2.5 m ceiling. Doorways 1-2, 1-4, 4-6, 2-3, 3-5,
/// 5-6; the shortest route from the porch to the pad is 1, 4, 6.
pub fn default_environment() -> Environment {
    Environment {
        name: "six-room testbed".into(),
        rooms: vec![
            room(1, "porch", 0.0, 0.0, 3000.0, 3000.0),
            room(2, "living room", 3000.0, 0.0, 6000.0, 3000.0),
            room(3, "dining room", 6000.0, 0.0, 9000.0, 3000.0),
            room(4, "hall", 0.0, 3000.0, 3000.0, 6000.0),
            room(5, "bedroom", 6000.0, 3000.0, 9000.0, 6000.0),
            room(6, "kitchen", 3000.0, 3000.0, 6000.0, 6000.0),
        ],
        doorways: vec![
            door(1, 2, 900.0, Some(2200.0)),
            door(1, 4, 900.0, Some(1500.0)),
            door(4, 6, 900.0, Some(5000.0)),
            door(2, 3, 900.0, Some(1500.0)),
            door(3, 5, 900.0, Some(7500.0)),
            door(5, 6, 900.0, Some(4500.0)),
        ],
        objects: vec![
            object("plant", [1200.0, 400.0, 400.0], [400.0, 400.0]),
            object("sofa", [850.0, 2000.0, 800.0], [4500.0, 400.0]),
            object("table", [750.0, 1200.0, 800.0], [7500.0, 1500.0]),
            object("chair", [900.0, 500.0, 500.0], [400.0, 4500.0]),
            object("bed", [600.0, 1500.0, 2000.0], [8000.0, 4900.0]),
            object("cabinet", [1800.0, 500.0, 500.0], [5700.0, 3300.0]),
        ],
        landing_pad: Some(Rect::new(3800.0, 4400.0, 5200.0, 5600.0)),
        ceiling_mm: 2500.0,
        start_room: 1,
        start_position: None,
        start_yaw_deg: 0.0,
    }
}

pub fn default_testbed() -> World {
    default_environment()
        .build()
        .expect("built-in testbed is valid")
}

/// Three rooms in a straight line joined by wide doorways, pad in the last
/// one, start facing down the corridor.
pub fn open_corridor() -> World {
    Environment {
        name: "open corridor".into(),
        rooms: vec![
            room(1, "a", 0.0, 0.0, 3000.0, 2000.0),
            room(2, "b", 3000.0, 0.0, 6000.0, 2000.0),
            room(3, "c", 6000.0, 0.0, 9000.0, 2000.0),
        ],
        doorways: vec![door(1, 2, 1600.0, None), door(2, 3, 1600.0, None)],
        objects: vec![],
        landing_pad: Some(Rect::new(6500.0, 400.0, 8000.0, 1600.0)),
        ceiling_mm: 2500.0,
        start_room: 1,
        start_position: None,
        start_yaw_deg: 0.0,
    }
    .build()
    .expect("built-in corridor is valid")
}

/// Two rooms with no doorway; the pad sits in the unreachable one.
pub fn walled_room() -> World {
    Environment {
        name: "walled room".into(),
        rooms: vec![
            room(1, "a", 0.0, 0.0, 4000.0, 4000.0),
            room(2, "b", 4000.0, 0.0, 8000.0, 4000.0),
        ],
        doorways: vec![],
        objects: vec![],
        landing_pad: Some(Rect::new(5500.0, 1500.0, 6500.0, 2500.0)),
        ceiling_mm: 2500.0,
        start_room: 1,
        start_position: None,
        start_yaw_deg: 0.0,
    }
    .build()
    .expect("built-in walled room is valid")
}

/// A straight corridor of two or three rooms with random width, doorways,
/// full-height pillars along the walls and a random start heading.
pub fn random_corridor(seed: u64) -> World {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let width: f64 = rng.random_range(1200.0..2400.0);
    let n_rooms: u32 = rng.random_range(2..=3);
    let ceiling: f64 = rng.random_range(2200.0..3000.0);

    let mut rooms = Vec::new();
    let mut x = 0.0;
    for id in 1..=n_rooms {
        let len: f64 = rng.random_range(2500.0..4500.0);
        rooms.push(room(id, &format!("segment {id}"), x, 0.0, x + len, width));
        x += len;
    }
    let mut doorways = Vec::new();
    for id in 1..n_rooms {
        let w: f64 = width * rng.random_range(0.6..0.9);
        let slack = (width - w) / 2.0 - 1.0;
        let c = width / 2.0 + rng.random_range(-slack..slack);
        doorways.push(door(id, id + 1, w, Some(c)));
    }

    let start_x = rooms[0].bounds.width() / 2.0;
    let start = [start_x, width / 2.0];
    let mut objects: Vec<SimObject> = Vec::new();
    let n_pillars = rng.random_range(0..=3);
    for _ in 0..n_pillars {
        let w: f64 = rng.random_range(200.0..400.0);
        let l: f64 = rng.random_range(200.0..width / 4.0);
        let r = &rooms[rng.random_range(0..rooms.len())].bounds;
        let cx = rng.random_range(r.x_min + 400.0 + w..r.x_max - 400.0 - w);
        let cy = if rng.random_bool(0.5) {
            l / 2.0
        } else {
            width - l / 2.0
        };
        let far_from_start = (cx - start[0]).abs() > 600.0 + w || (cy - start[1]).abs() > 600.0 + l;
        if far_from_start {
            objects.push(SimObject {
                class: String::from("cabinet"),
                dims: [ceiling, w, l],
                center: [cx, cy],
                base_z: 0.0,
                yaw: 0.0,
            });
        }
    }
    let start_yaw_deg = rng.random_range(0.0..360.0);

    Environment {
        name: format!("random corridor {seed}"),
        rooms,
        doorways,
        objects,
        landing_pad: None,
        ceiling_mm: ceiling,
        start_room: 1,
        start_position: Some(start),
        start_yaw_deg,
    }
    .build()
    .expect("random corridor generator produces valid worlds")
}

/// A single object of real size `hwl` facing the camera: centred on the
/// optical axis at camera height with its front face `range_mm` ahead, width
/// across the view and length along it. Returns the world and the drone
/// state (1 m up, heading along +x).
pub fn frontal_object_scene(class: &str, hwl: [f64; 3], range_mm: f64) -> (World, DroneState) {
    let eye = [500.0, 2000.0, 1000.0];
    let world = Environment {
        name: format!("frontal {class}"),
        rooms: vec![room(1, "lab", 0.0, 0.0, 4000.0 + range_mm, 4000.0)],
        doorways: vec![],
        objects: vec![SimObject {
            class: class.into(),
            dims: hwl,
            center: [eye[0] + range_mm + hwl[2] / 2.0, eye[1]],
            base_z: eye[2] - hwl[0] / 2.0,
            yaw: FRAC_PI_2,
        }],
        landing_pad: None,
        ceiling_mm: 2500.0_f64.max(eye[2] + hwl[0]),
        start_room: 1,
        start_position: Some([eye[0], eye[1]]),
        start_yaw_deg: 0.0,
    }
    .build()
    .expect("frontal scene is valid");
    let state = DroneState {
        position: eye,
        ..DroneState::default()
    };
    (world, state)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn testbed_graph() {
        let w = default_testbed();
        assert_eq!(w.env.rooms.len(), 6);
        assert_eq!(w.pad_room, Some(6));
        assert_eq!(w.room_distance(1, 6), Some(2));
        assert!(w.are_adjacent(1, 4) && w.are_adjacent(4, 6));
        assert!(!w.are_adjacent(1, 6));
    }

    #[test]
    fn objects_sit_inside_rooms() {
        let w = default_testbed();
        for o in &w.env.objects {
            for c in o.corners() {
                assert!(w.room_at(c[0], c[1]).is_some(), "{} pokes out", o.class);
            }
        }
    }

    #[test]
    fn random_corridors_are_valid_and_seeded() {
        for seed in 0..50 {
            let a = random_corridor(seed);
            let b = random_corridor(seed);
            assert_eq!(a, b);
            let s = a.start_position();
            assert!(a.is_free([s[0], s[1], 1000.0]));
        }
    }
}
