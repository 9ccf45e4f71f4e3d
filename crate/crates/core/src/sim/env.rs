//! Environment description and the derived wall geometry.

use alloc::collections::VecDeque;
use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

#[allow(unused_imports)] // inherent methods win whenever std is linked
use num_traits::Float;
use serde::{Deserialize, Serialize};

use crate::{Error, Result};

const EPS: f64 = 1e-6;

/// Axis-aligned rectangle in plan coordinates (mm).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Rect {
    pub x_min: f64,
    pub y_min: f64,
    pub x_max: f64,
    pub y_max: f64,
}

impl Rect {
    pub fn new(x_min: f64, y_min: f64, x_max: f64, y_max: f64) -> Self {
        Self {
            x_min,
            y_min,
            x_max,
            y_max,
        }
    }

    pub fn contains(&self, x: f64, y: f64) -> bool {
        x >= self.x_min && x <= self.x_max && y >= self.y_min && y <= self.y_max
    }

    /// Strictly inside, at least `margin` from every edge.
    pub fn contains_inset(&self, x: f64, y: f64, margin: f64) -> bool {
        x > self.x_min + margin
            && x < self.x_max - margin
            && y > self.y_min + margin
            && y < self.y_max - margin
    }

    pub fn center(&self) -> [f64; 2] {
        [
            (self.x_min + self.x_max) / 2.0,
            (self.y_min + self.y_max) / 2.0,
        ]
    }

    pub fn width(&self) -> f64 {
        self.x_max - self.x_min
    }

    pub fn height(&self) -> f64 {
        self.y_max - self.y_min
    }

    fn is_valid(&self) -> bool {
        [self.x_min, self.y_min, self.x_max, self.y_max]
            .iter()
            .all(|v| v.is_finite())
            && self.x_max > self.x_min
            && self.y_max > self.y_min
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Room {
    pub id: u32,
    #[serde(default)]
    pub name: String,
    pub bounds: Rect,
}

/// Opening in the wall two rooms share.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Doorway {
    pub rooms: [u32; 2],
    /// mm
    pub width: f64,
    /// Position of the opening's centre along the shared edge; defaults to
    /// the middle of the overlap.
    #[serde(default)]
    pub center: Option<f64>,
}

/// A furniture item: an upright box.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimObject {
    pub class: String,
    /// Height, width, length (mm). Width runs along the object's own x axis,
    /// length along its y axis.
    pub dims: [f64; 3],
    /// Plan position of the footprint centre (mm).
    pub center: [f64; 2],
    /// Height of the underside above the floor (mm).
    #[serde(default)]
    pub base_z: f64,
    /// Clockwise heading of the object's x axis (rad).
    #[serde(default)]
    pub yaw: f64,
}

impl SimObject {
    pub fn height(&self) -> f64 {
        self.dims[0]
    }

    /// Converts a world point into the object's frame (x along width,
    /// y along length, z above the floor).
    pub fn to_local(&self, p: [f64; 3]) -> [f64; 3] {
        let (s, c) = self.yaw.sin_cos();
        let dx = p[0] - self.center[0];
        let dy = p[1] - self.center[1];
        [c * dx + s * dy, -s * dx + c * dy, p[2]]
    }

    pub fn from_local_dir(&self, d: [f64; 3]) -> [f64; 3] {
        let (s, c) = self.yaw.sin_cos();
        [c * d[0] - s * d[1], s * d[0] + c * d[1], d[2]]
    }

    pub fn contains(&self, p: [f64; 3]) -> bool {
        let l = self.to_local(p);
        l[0].abs() < self.dims[1] / 2.0
            && l[1].abs() < self.dims[2] / 2.0
            && l[2] > self.base_z
            && l[2] < self.base_z + self.dims[0]
    }

    /// The eight corners in world coordinates.
    pub fn corners(&self) -> [[f64; 3]; 8] {
        let (hw, hl) = (self.dims[1] / 2.0, self.dims[2] / 2.0);
        core::array::from_fn(|i| {
            let lx = if i & 1 == 0 { hw } else { -hw };
            let ly = if i & 2 == 0 { hl } else { -hl };
            let z = if i & 4 == 0 {
                self.base_z
            } else {
                self.base_z + self.dims[0]
            };
            let d = self.from_local_dir([lx, ly, 0.0]);
            [self.center[0] + d[0], self.center[1] + d[1], z]
        })
    }
}

/// Serializable world description.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Environment {
    #[serde(default)]
    pub name: String,
    pub rooms: Vec<Room>,
    #[serde(default)]
    pub doorways: Vec<Doorway>,
    #[serde(default)]
    pub objects: Vec<SimObject>,
    #[serde(default)]
    pub landing_pad: Option<Rect>,
    /// mm above the floor (the floor is at 0).
    pub ceiling_mm: f64,
    pub start_room: u32,
    /// Plan position; defaults to the start room centre.
    #[serde(default)]
    pub start_position: Option<[f64; 2]>,
    /// Initial clockwise heading, degrees.
    #[serde(default)]
    pub start_yaw_deg: f64,
}

/// Axis-aligned wall piece, full height.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Segment {
    pub a: [f64; 2],
    pub b: [f64; 2],
}

impl Segment {
    fn vertical(&self) -> bool {
        (self.a[0] - self.b[0]).abs() < EPS
    }

    fn touches(&self, p: [f64; 2]) -> bool {
        let (x0, x1) = minmax(self.a[0], self.b[0]);
        let (y0, y1) = minmax(self.a[1], self.b[1]);
        p[0] >= x0 - EPS && p[0] <= x1 + EPS && p[1] >= y0 - EPS && p[1] <= y1 + EPS
    }

    /// Whether the plan segment `p -> q` touches this wall.
    pub fn crossed_by(&self, p: [f64; 2], q: [f64; 2]) -> bool {
        let d = [q[0] - p[0], q[1] - p[1]];
        let e = [self.b[0] - self.a[0], self.b[1] - self.a[1]];
        let denom = d[0] * e[1] - d[1] * e[0];
        let w = [self.a[0] - p[0], self.a[1] - p[1]];
        if d[0].abs() < 1e-12 && d[1].abs() < 1e-12 {
            return self.touches(p);
        }
        if denom.abs() < 1e-12 {
            // Parallel: only colinear overlap counts.
            if (w[0] * d[1] - w[1] * d[0]).abs() > 1e-9 {
                return false;
            }
            let along = |v: [f64; 2]| if self.vertical() { v[1] } else { v[0] };
            let (s0, s1) = minmax(along(self.a), along(self.b));
            let (m0, m1) = minmax(along(p), along(q));
            return m1 >= s0 && m0 <= s1;
        }
        let t = (w[0] * e[1] - w[1] * e[0]) / denom;
        let u = (w[0] * d[1] - w[1] * d[0]) / denom;
        (0.0..=1.0).contains(&t) && (0.0..=1.0).contains(&u)
    }
}

fn minmax(a: f64, b: f64) -> (f64, f64) {
    if a <= b {
        (a, b)
    } else {
        (b, a)
    }
}

/// Shared boundary of two rooms: fixed coordinate, whether it is a line of
/// constant x, and the overlap interval along it.
fn shared_edge(a: &Rect, b: &Rect) -> Option<(f64, bool, f64, f64)> {
    let overlap = |a0: f64, a1: f64, b0: f64, b1: f64| {
        let lo = a0.max(b0);
        let hi = a1.min(b1);
        (hi - lo > EPS).then_some((lo, hi))
    };
    for (ea, eb) in [(a.x_max, b.x_min), (a.x_min, b.x_max)] {
        if (ea - eb).abs() < EPS {
            if let Some((lo, hi)) = overlap(a.y_min, a.y_max, b.y_min, b.y_max) {
                return Some((ea, true, lo, hi));
            }
        }
    }
    for (ea, eb) in [(a.y_max, b.y_min), (a.y_min, b.y_max)] {
        if (ea - eb).abs() < EPS {
            if let Some((lo, hi)) = overlap(a.x_min, a.x_max, b.x_min, b.x_max) {
                return Some((ea, false, lo, hi));
            }
        }
    }
    None
}

/// Validated environment with walls cut and the room graph built.
#[derive(Debug, Clone, PartialEq)]
pub struct World {
    pub env: Environment,
    pub walls: Vec<Segment>,
    /// Adjacency via doorways, indexed like `env.rooms`.
    pub adjacency: Vec<Vec<usize>>,
    pub pad_room: Option<u32>,
}

struct Gap {
    fixed: f64,
    vertical: bool,
    lo: f64,
    hi: f64,
}

impl Environment {
    pub fn room(&self, id: u32) -> Option<&Room> {
        self.rooms.iter().find(|r| r.id == id)
    }

    fn room_index(&self, id: u32) -> Result<usize> {
        self.rooms
            .iter()
            .position(|r| r.id == id)
            .ok_or_else(|| Error::Config(format!("unknown room {id}")))
    }

    /// Checks the description and derives walls and the room graph.
    pub fn build(self) -> Result<World> {
        if self.rooms.is_empty() {
            return Err(Error::Config("environment has no rooms".into()));
        }
        if !(self.ceiling_mm > 0.0) {
            return Err(Error::Config("ceiling must be above the floor".into()));
        }
        for (i, r) in self.rooms.iter().enumerate() {
            if !r.bounds.is_valid() {
                return Err(Error::Config(format!(
                    "room {} has an empty or invalid rectangle",
                    r.id
                )));
            }
            if self.rooms[..i].iter().any(|o| o.id == r.id) {
                return Err(Error::Config(format!("duplicate room id {}", r.id)));
            }
            for o in &self.rooms[..i] {
                let b = &o.bounds;
                let a = &r.bounds;
                let ix = a.x_max.min(b.x_max) - a.x_min.max(b.x_min);
                let iy = a.y_max.min(b.y_max) - a.y_min.max(b.y_min);
                if ix > EPS && iy > EPS {
                    return Err(Error::Config(format!(
                        "rooms {} and {} overlap",
                        o.id, r.id
                    )));
                }
            }
        }

        let mut adjacency = vec![Vec::new(); self.rooms.len()];
        let mut gaps = Vec::new();
        for d in &self.doorways {
            let ia = self.room_index(d.rooms[0])?;
            let ib = self.room_index(d.rooms[1])?;
            let (fixed, vertical, lo, hi) =
                shared_edge(&self.rooms[ia].bounds, &self.rooms[ib].bounds).ok_or_else(|| {
                    Error::Config(format!(
                        "rooms {} and {} share no wall",
                        d.rooms[0], d.rooms[1]
                    ))
                })?;
            let c = d.center.unwrap_or((lo + hi) / 2.0);
            let (g0, g1) = (c - d.width / 2.0, c + d.width / 2.0);
            if !(d.width > 0.0) || g0 < lo || g1 > hi || !(d.width < hi - lo) {
                return Err(Error::Config(format!(
                    "doorway {}-{} must be narrower than and inside the shared wall",
                    d.rooms[0], d.rooms[1]
                )));
            }
            gaps.push(Gap {
                fixed,
                vertical,
                lo: g0,
                hi: g1,
            });
            if !adjacency[ia].contains(&ib) {
                adjacency[ia].push(ib);
                adjacency[ib].push(ia);
            }
        }
        for a in adjacency.iter_mut() {
            a.sort_unstable();
        }

        let mut walls = Vec::new();
        for r in &self.rooms {
            let b = &r.bounds;
            let edges = [
                (b.y_min, false, b.x_min, b.x_max),
                (b.y_max, false, b.x_min, b.x_max),
                (b.x_min, true, b.y_min, b.y_max),
                (b.x_max, true, b.y_min, b.y_max),
            ];
            for (fixed, vertical, lo, hi) in edges {
                let mut pieces = vec![(lo, hi)];
                for g in gaps
                    .iter()
                    .filter(|g| g.vertical == vertical && (g.fixed - fixed).abs() < EPS)
                {
                    pieces = pieces
                        .into_iter()
                        .flat_map(|(p0, p1)| {
                            let mut out = Vec::new();
                            if g.hi <= p0 || g.lo >= p1 {
                                out.push((p0, p1));
                            } else {
                                if g.lo > p0 {
                                    out.push((p0, g.lo));
                                }
                                if g.hi < p1 {
                                    out.push((g.hi, p1));
                                }
                            }
                            out
                        })
                        .collect();
                }
                for (p0, p1) in pieces {
                    let seg = if vertical {
                        Segment {
                            a: [fixed, p0],
                            b: [fixed, p1],
                        }
                    } else {
                        Segment {
                            a: [p0, fixed],
                            b: [p1, fixed],
                        }
                    };
                    if !walls.contains(&seg) {
                        walls.push(seg);
                    }
                }
            }
        }

        for o in &self.objects {
            if o.dims.iter().any(|d| !(*d > 0.0)) {
                return Err(Error::Config(format!(
                    "object '{}' has non-positive dimensions",
                    o.class
                )));
            }
        }
        let pad_room = match &self.landing_pad {
            Some(p) => {
                if !p.is_valid() {
                    return Err(Error::Config("landing pad rectangle is invalid".into()));
                }
                let c = p.center();
                Some(
                    self.rooms
                        .iter()
                        .find(|r| r.bounds.contains(c[0], c[1]))
                        .ok_or_else(|| Error::Config("landing pad lies outside every room".into()))?
                        .id,
                )
            }
            None => None,
        };
        self.room_index(self.start_room)?;
        let world = World {
            env: self,
            walls,
            adjacency,
            pad_room,
        };
        let s = world.start_position();
        if world.room_at(s[0], s[1]).is_none() {
            return Err(Error::Config(
                "start position lies outside every room".into(),
            ));
        }
        Ok(world)
    }
}

impl World {
    pub fn start_position(&self) -> [f64; 2] {
        self.env.start_position.unwrap_or_else(|| {
            self.env
                .room(self.env.start_room)
                .map(|r| r.bounds.center())
                .unwrap_or([0.0, 0.0])
        })
    }

    /// First room containing the point (edges inclusive).
    pub fn room_at(&self, x: f64, y: f64) -> Option<u32> {
        self.env
            .rooms
            .iter()
            .find(|r| r.bounds.contains(x, y))
            .map(|r| r.id)
    }

    /// Room containing the point at least `margin` from its edges.
    pub fn room_at_inset(&self, x: f64, y: f64, margin: f64) -> Option<u32> {
        self.env
            .rooms
            .iter()
            .find(|r| r.bounds.contains_inset(x, y, margin))
            .map(|r| r.id)
    }

    /// Inside a room, between floor and ceiling and outside every object.
    pub fn is_free(&self, p: [f64; 3]) -> bool {
        self.room_at(p[0], p[1]).is_some()
            && p[2] >= 0.0
            && p[2] < self.env.ceiling_mm
            && !self.env.objects.iter().any(|o| o.contains(p))
    }

    pub fn on_pad(&self, x: f64, y: f64) -> bool {
        self.env.landing_pad.is_some_and(|p| p.contains(x, y))
    }

    /// Doorway hops between two rooms, `None` if unreachable.
    pub fn room_distance(&self, from: u32, to: u32) -> Option<usize> {
        let start = self.env.rooms.iter().position(|r| r.id == from)?;
        let goal = self.env.rooms.iter().position(|r| r.id == to)?;
        let mut dist = vec![usize::MAX; self.env.rooms.len()];
        dist[start] = 0;
        let mut queue = VecDeque::from([start]);
        while let Some(i) = queue.pop_front() {
            if i == goal {
                return Some(dist[i]);
            }
            for &j in &self.adjacency[i] {
                if dist[j] == usize::MAX {
                    dist[j] = dist[i] + 1;
                    queue.push_back(j);
                }
            }
        }
        None
    }

    pub fn are_adjacent(&self, a: u32, b: u32) -> bool {
        let ia = self.env.rooms.iter().position(|r| r.id == a);
        let ib = self.env.rooms.iter().position(|r| r.id == b);
        matches!((ia, ib), (Some(i), Some(j)) if self.adjacency[i].contains(&j))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn two_rooms(door: Option<f64>) -> Environment {
        Environment {
            name: "pair".into(),
            rooms: vec![
                Room {
                    id: 1,
                    name: String::new(),
                    bounds: Rect::new(0.0, 0.0, 3000.0, 3000.0),
                },
                Room {
                    id: 2,
                    name: String::new(),
                    bounds: Rect::new(3000.0, 0.0, 6000.0, 3000.0),
                },
            ],
            doorways: door
                .map(|w| Doorway {
                    rooms: [1, 2],
                    width: w,
                    center: None,
                })
                .into_iter()
                .collect(),
            objects: vec![],
            landing_pad: Some(Rect::new(4000.0, 1000.0, 5000.0, 2000.0)),
            ceiling_mm: 2500.0,
            start_room: 1,
            start_position: None,
            start_yaw_deg: 0.0,
        }
    }

    #[test]
    fn doorway_cuts_shared_wall() {
        let w = two_rooms(Some(1000.0)).build().unwrap();
        // Crossing at the door centre passes, crossing near a corner does not.
        assert!(!w
            .walls
            .iter()
            .any(|s| s.crossed_by([2900.0, 1500.0], [3100.0, 1500.0])));
        assert!(w
            .walls
            .iter()
            .any(|s| s.crossed_by([2900.0, 500.0], [3100.0, 500.0])));
        assert_eq!(w.room_distance(1, 2), Some(1));
        assert_eq!(w.pad_room, Some(2));
    }

    #[test]
    fn standing_still_crosses_nothing() {
        let w = two_rooms(Some(1000.0)).build().unwrap();
        assert!(!w
            .walls
            .iter()
            .any(|s| s.crossed_by([1500.0, 1500.0], [1500.0, 1500.0])));
        assert!(w
            .walls
            .iter()
            .any(|s| s.crossed_by([3000.0, 200.0], [3000.0, 200.0])));
        // Sliding along a wall line but away from it.
        assert!(!w
            .walls
            .iter()
            .any(|s| s.crossed_by([100.0, 1500.0], [200.0, 1500.0])));
    }

    #[test]
    fn no_doorway_means_unreachable() {
        let w = two_rooms(None).build().unwrap();
        assert_eq!(w.room_distance(1, 2), None);
        assert!(w
            .walls
            .iter()
            .any(|s| s.crossed_by([2900.0, 1500.0], [3100.0, 1500.0])));
    }

    #[test]
    fn doorway_wider_than_wall_is_rejected() {
        assert!(two_rooms(Some(3000.0)).build().is_err());
        assert!(two_rooms(Some(0.0)).build().is_err());
    }

    #[test]
    fn overlapping_rooms_are_rejected() {
        let mut e = two_rooms(None);
        e.rooms[1].bounds.x_min = 2000.0;
        assert!(e.build().is_err());
    }

    #[test]
    fn object_containment_respects_yaw() {
        let o = SimObject {
            class: "table".into(),
            dims: [750.0, 2000.0, 200.0],
            center: [1000.0, 1000.0],
            base_z: 0.0,
            yaw: core::f64::consts::FRAC_PI_2,
        };
        // Rotated a quarter turn, the long side runs along y.
        assert!(o.contains([1000.0, 1900.0, 300.0]));
        assert!(!o.contains([1900.0, 1000.0, 300.0]));
        assert!(!o.contains([1000.0, 1000.0, 800.0]));
    }
}
