//! Lifting 2D detections to 3D boxes.
//!
//! Positions come from back-projecting the box centroid at the region depth,
//! sizes from class priors or from the measured pixel height, and yaw from
//! the viewing ray plus an elongation heuristic. Temporal smoothing is done by
//! [`kalman::KalmanTrack`], and [`fusion::Fuser`] ties the steps together per
//! frame.
//!
//! All lengths in this module are millimetres; the Kalman state is kept in
//! metres and the conversion happens inside the fuser.

pub mod fusion;
pub mod kalman;

use alloc::collections::BTreeMap;
use alloc::string::String;
use alloc::vec::Vec;
use core::f64::consts::{FRAC_PI_2, PI};

use nalgebra::{Matrix3, Vector2, Vector3};
#[allow(unused_imports)] // inherent methods win whenever std is linked
use num_traits::Float;
use serde::{Deserialize, Serialize};

use crate::geometry::{back_project, CameraModel, PixelBox};
use crate::{Error, Result};

pub use fusion::{FusedDetection, Fuser};
pub use kalman::{KalmanTrack, Measurement};

/// Object extents in millimetres.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Dimensions {
    pub width: f64,
    pub height: f64,
    pub length: f64,
}

impl Dimensions {
    pub fn new(width: f64, height: f64, length: f64) -> Self {
        Self {
            width,
            height,
            length,
        }
    }

    /// From the `(height, width, length)` ordering used by prior tables.
    pub fn from_hwl(h: f64, w: f64, l: f64) -> Self {
        Self::new(w, h, l)
    }

    pub fn scaled(&self, s: f64) -> Self {
        Self::new(self.width * s, self.height * s, self.length * s)
    }

    pub fn diagonal(&self) -> f64 {
        (self.width * self.width + self.height * self.height + self.length * self.length).sqrt()
    }
}

/// How yaw is derived for a class.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OrientationRule {
    /// Viewing-ray angle only.
    RayOnly,
    /// Viewing-ray angle, elongation correction forced to zero.
    Person,
    /// Viewing-ray angle plus the elongation correction.
    #[default]
    Default,
}

/// Size source for a class.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum SizeRule {
    /// Fixed real-world extents, used verbatim.
    Fixed(Dimensions),
    /// Height measured from the pixel box; width and length as ratios of it.
    Proportional { width_ratio: f64, length_ratio: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClassPrior {
    pub size: SizeRule,
    pub orientation: OrientationRule,
}

/// Footprint for classes without an entry: square base at 0.6 of the height.
pub const DEFAULT_FOOTPRINT: SizeRule = SizeRule::Proportional {
    width_ratio: 0.6,
    length_ratio: 0.6,
};

/// Per-class size and orientation priors, keyed by class name.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassPriors {
    entries: BTreeMap<String, ClassPrior>,
}

impl ClassPriors {
    pub fn empty() -> Self {
        Self {
            entries: BTreeMap::new(),
        }
    }

    pub fn insert(&mut self, class: &str, prior: ClassPrior) -> Result<()> {
        let ok = match prior.size {
            SizeRule::Fixed(d) => d.width > 0.0 && d.height > 0.0 && d.length > 0.0,
            SizeRule::Proportional {
                width_ratio,
                length_ratio,
            } => width_ratio > 0.0 && length_ratio > 0.0,
        };
        if !ok {
            return Err(Error::Config(alloc::format!(
                "prior for '{class}' must have positive dimensions"
            )));
        }
        self.entries.insert(class.into(), prior);
        Ok(())
    }

    pub fn get(&self, class: &str) -> Option<&ClassPrior> {
        self.entries.get(class)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &ClassPrior)> {
        self.entries.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn size_rule(&self, class: &str) -> SizeRule {
        self.get(class).map_or(DEFAULT_FOOTPRINT, |p| p.size)
    }

    /// Falls back to the name-based rule for classes without an entry.
    pub fn orientation_rule(&self, class: &str) -> OrientationRule {
        match self.get(class) {
            Some(p) => p.orientation,
            None => match class {
                "sofa" | "table" => OrientationRule::RayOnly,
                "person" => OrientationRule::Person,
                _ => OrientationRule::Default,
            },
        }
    }
}

impl Default for ClassPriors {
    /// Ships the bed prior plus the plant/person proportion rules and the
    /// ray-only orientation for sofas and tables.
    fn default() -> Self {
        let mut p = Self::empty();
        let ins = |p: &mut Self, c: &str, size, orientation| {
            p.insert(c, ClassPrior { size, orientation })
                .expect("valid default prior")
        };
        ins(
            &mut p,
            "bed",
            SizeRule::Fixed(Dimensions::from_hwl(600.0, 1500.0, 2000.0)),
            OrientationRule::Default,
        );
        ins(&mut p, "plant", DEFAULT_FOOTPRINT, OrientationRule::Default);
        ins(
            &mut p,
            "person",
            SizeRule::Proportional {
                width_ratio: 0.6,
                length_ratio: 0.3,
            },
            OrientationRule::Person,
        );
        ins(&mut p, "sofa", DEFAULT_FOOTPRINT, OrientationRule::RayOnly);
        ins(&mut p, "table", DEFAULT_FOOTPRINT, OrientationRule::RayOnly);
        p
    }
}

/// A 3D box in the camera frame.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Box3D {
    /// Centre position (mm), camera frame.
    pub position: [f64; 3],
    pub dims: Dimensions,
    /// Rotation about the camera y axis, in `(-pi, pi]`.
    pub yaw: f64,
    pub class_id: u32,
    pub track_id: Option<u32>,
    pub confidence: f64,
}

impl Box3D {
    pub fn position(&self) -> Vector3<f64> {
        Vector3::from(self.position)
    }

    /// Euclidean distance from the camera centre (mm).
    pub fn distance(&self) -> f64 {
        self.position().norm()
    }
}

/// Wraps an angle into `(-pi, pi]`.
pub fn wrap_angle(a: f64) -> f64 {
    let mut w = a % (2.0 * PI);
    if w <= -PI {
        w += 2.0 * PI;
    } else if w > PI {
        w -= 2.0 * PI;
    }
    w
}

pub fn centroid(b: &PixelBox) -> Vector2<f64> {
    b.center()
}

/// Back-projects the box centroid at `depth_mm`.
pub fn estimate_position(b: &PixelBox, depth_mm: f64, cam: &CameraModel) -> Result<Vector3<f64>> {
    back_project(&centroid(b), depth_mm, cam)
}

/// Prior dimensions verbatim when the class has a fixed prior, otherwise the
/// height `(y_max - y_min) * z / K11` scaled into a footprint.
pub fn estimate_dimensions(
    class: &str,
    b: &PixelBox,
    depth_mm: f64,
    cam: &CameraModel,
    priors: &ClassPriors,
) -> Result<Dimensions> {
    if !(depth_mm > 0.0) {
        return Err(Error::NonPositiveDepth(depth_mm));
    }
    match priors.size_rule(class) {
        SizeRule::Fixed(d) => Ok(d),
        SizeRule::Proportional {
            width_ratio,
            length_ratio,
        } => {
            if !(cam.fy.is_finite() && cam.fy > 0.0) {
                return Err(Error::InvalidCamera(
                    "vertical focal length K11 is required",
                ));
            }
            let h = b.height() * depth_mm / cam.fy;
            Ok(Dimensions::new(width_ratio * h, h, length_ratio * h))
        }
    }
}

/// Elongation correction: a quarter turn for boxes wider than 1.5x their
/// height, sign by which side of `cx` the box centre falls on.
pub fn elongation_offset(b: &PixelBox, cx: f64) -> Result<f64> {
    if b.height() <= 0.0 {
        return Err(Error::ZeroHeightBox);
    }
    let aspect = b.width() / b.height();
    if aspect <= 1.5 {
        return Ok(0.0);
    }
    Ok(if b.center().x < cx {
        FRAC_PI_2
    } else {
        -FRAC_PI_2
    })
}

pub fn estimate_yaw(
    b: &PixelBox,
    position: &Vector3<f64>,
    class: &str,
    cam: &CameraModel,
    priors: &ClassPriors,
) -> Result<f64> {
    if b.height() <= 0.0 {
        return Err(Error::ZeroHeightBox);
    }
    if !(position.z > 0.0) {
        return Err(Error::NonPositiveDepth(position.z));
    }
    let ray = position.x.atan2(position.z);
    let yaw = match priors.orientation_rule(class) {
        OrientationRule::RayOnly | OrientationRule::Person => ray,
        OrientationRule::Default => ray + elongation_offset(b, cam.cx)?,
    };
    Ok(wrap_angle(yaw))
}

/// Rotation about the camera y axis.
pub fn yaw_rotation(yaw: f64) -> Matrix3<f64> {
    let (s, c) = yaw.sin_cos();
    Matrix3::new(
        c, 0.0, s, //
        0.0, 1.0, 0.0, //
        -s, 0.0, c,
    )
}

/// The eight corners `R_y * (+-l/2, +-h/2, +-w/2) + p`.
pub fn corners_3d(b: &Box3D) -> [Vector3<f64>; 8] {
    let r = yaw_rotation(b.yaw);
    let p = b.position();
    let half = Vector3::new(b.dims.length / 2.0, b.dims.height / 2.0, b.dims.width / 2.0);
    core::array::from_fn(|i| {
        let sign = |bit: usize| if i & bit == 0 { 1.0 } else { -1.0 };
        let local = Vector3::new(sign(1) * half.x, sign(2) * half.y, sign(4) * half.z);
        r * local + p
    })
}

/// Projects corners through `P`. Corners behind the camera come back as
/// `None`.
pub fn project_corners(corners: &[Vector3<f64>], cam: &CameraModel) -> Vec<Option<Vector2<f64>>> {
    let p = cam.projection_matrix();
    corners
        .iter()
        .map(|c| crate::geometry::project(&p, c))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cam() -> CameraModel {
        CameraModel::reference()
    }

    fn bx(x0: f64, y0: f64, x1: f64, y1: f64) -> PixelBox {
        PixelBox::new(x0, y0, x1, y1).unwrap()
    }

    #[test]
    fn centroids() {
        assert_eq!(centroid(&bx(0.0, 0.0, 10.0, 20.0)), Vector2::new(5.0, 10.0));
        assert_eq!(centroid(&bx(5.0, 5.0, 5.0, 5.0)), Vector2::new(5.0, 5.0));
        assert_eq!(
            centroid(&bx(100.0, 40.0, 300.0, 240.0)),
            Vector2::new(200.0, 140.0)
        );
    }

    #[test]
    fn position_from_centroid() {
        let c = cam();
        let b = bx(c.cx - 10.0, c.cy - 10.0, c.cx + 10.0, c.cy + 10.0);
        assert_eq!(
            estimate_position(&b, 1500.0, &c).unwrap(),
            Vector3::new(0.0, 0.0, 1500.0)
        );
        let b = bx(870.594, 230.0, 890.594, 250.0);
        let p = estimate_position(&b, 1040.0, &c).unwrap();
        assert!((p.x - 1040.0).abs() < 1e-9);
        let p2 = estimate_position(&b, 2080.0, &c).unwrap();
        assert!((p2 - p * 2.0).norm() < 1e-9);
        assert!(estimate_position(&b, 0.0, &c).is_err());
    }

    #[test]
    fn bed_prior_is_used_verbatim() {
        let d = estimate_dimensions(
            "bed",
            &bx(0.0, 0.0, 10.0, 10.0),
            3000.0,
            &cam(),
            &ClassPriors::default(),
        )
        .unwrap();
        assert_eq!(d, Dimensions::new(1500.0, 600.0, 2000.0));
    }

    #[test]
    fn plant_height_from_pixels() {
        let d = estimate_dimensions(
            "plant",
            &bx(0.0, 0.0, 100.0, 520.0),
            1000.0,
            &cam(),
            &ClassPriors::default(),
        )
        .unwrap();
        assert!((d.height - 1000.0).abs() < 1e-9);
        assert!((d.width - 600.0).abs() < 1e-9);
        assert!((d.length - 600.0).abs() < 1e-9);
    }

    #[test]
    fn person_proportions() {
        // 936 px at 1000 mm with K11 = 520 gives 1800 mm.
        let d = estimate_dimensions(
            "person",
            &bx(0.0, 0.0, 100.0, 936.0),
            1000.0,
            &cam(),
            &ClassPriors::default(),
        )
        .unwrap();
        assert!((d.height - 1800.0).abs() < 1e-9);
        assert!((d.width - 1080.0).abs() < 1e-9);
        assert!((d.length - 540.0).abs() < 1e-9);
    }

    #[test]
    fn unknown_class_uses_square_footprint() {
        let d = estimate_dimensions(
            "lamp",
            &bx(0.0, 0.0, 10.0, 52.0),
            1000.0,
            &cam(),
            &ClassPriors::default(),
        )
        .unwrap();
        assert!((d.height - 100.0).abs() < 1e-9);
        assert!((d.width - 60.0).abs() < 1e-9 && (d.length - 60.0).abs() < 1e-9);
    }

    #[test]
    fn yaw_on_axis_is_zero() {
        let y = estimate_yaw(
            &bx(350.0, 200.0, 370.0, 280.0),
            &Vector3::new(0.0, 5.0, 900.0),
            "chair",
            &cam(),
            &ClassPriors::default(),
        )
        .unwrap();
        assert_eq!(y, 0.0);
    }

    #[test]
    fn elongated_door_left_of_centre_gets_quarter_turn() {
        // centre x = 300 < 360.594, aspect 2.0
        let b = bx(250.0, 200.0, 350.0, 250.0);
        let p = Vector3::new(-100.0, 0.0, 2000.0);
        let ray = p.x.atan2(p.z);
        let y = estimate_yaw(&b, &p, "door", &cam(), &ClassPriors::default()).unwrap();
        assert!((y - (ray + FRAC_PI_2)).abs() < 1e-15);
        let sofa = estimate_yaw(&b, &p, "sofa", &cam(), &ClassPriors::default()).unwrap();
        assert_eq!(sofa, ray);
        let person = estimate_yaw(&b, &p, "person", &cam(), &ClassPriors::default()).unwrap();
        assert_eq!(person, ray);
    }

    #[test]
    fn elongated_right_of_centre_turns_negative() {
        let b = bx(400.0, 200.0, 500.0, 250.0);
        assert_eq!(elongation_offset(&b, 360.594).unwrap(), -FRAC_PI_2);
        let square = bx(400.0, 200.0, 450.0, 250.0);
        assert_eq!(elongation_offset(&square, 360.594).unwrap(), 0.0);
    }

    #[test]
    fn zero_height_box_is_rejected() {
        let b = bx(0.0, 5.0, 10.0, 5.0);
        assert_eq!(
            estimate_yaw(
                &b,
                &Vector3::new(0.0, 0.0, 1.0),
                "door",
                &cam(),
                &ClassPriors::default()
            ),
            Err(Error::ZeroHeightBox)
        );
    }

    #[test]
    fn wrap_angle_range() {
        assert_eq!(wrap_angle(PI), PI);
        assert!((wrap_angle(-PI) - PI).abs() < 1e-15);
        assert!((wrap_angle(3.0 * PI / 2.0) + FRAC_PI_2).abs() < 1e-12);
        assert!((wrap_angle(-3.0 * PI / 2.0) - FRAC_PI_2).abs() < 1e-12);
    }

    fn unit_box(yaw: f64) -> Box3D {
        Box3D {
            position: [0.0; 3],
            dims: Dimensions::new(200.0, 400.0, 600.0),
            yaw,
            class_id: 0,
            track_id: None,
            confidence: 1.0,
        }
    }

    #[test]
    fn corners_at_zero_yaw() {
        let cs = corners_3d(&unit_box(0.0));
        for c in &cs {
            assert_eq!(c.x.abs(), 300.0);
            assert_eq!(c.y.abs(), 200.0);
            assert_eq!(c.z.abs(), 100.0);
        }
        let mut uniq = cs.to_vec();
        uniq.sort_by(|a, b| (a.x, a.y, a.z).partial_cmp(&(b.x, b.y, b.z)).unwrap());
        uniq.dedup();
        assert_eq!(uniq.len(), 8);
    }

    #[test]
    fn quarter_yaw_maps_length_axis_to_negative_z() {
        let v = yaw_rotation(FRAC_PI_2) * Vector3::new(1.0, 0.0, 0.0);
        assert!((v - Vector3::new(0.0, 0.0, -1.0)).norm() < 1e-15);
    }

    #[test]
    fn corner_on_axis_projects_to_principal_point() {
        let c = cam();
        let px = project_corners(&[Vector3::new(0.0, 0.0, 1234.0)], &c);
        let p = px[0].unwrap();
        assert!((p.x - c.cx).abs() < 1e-12 && (p.y - c.cy).abs() < 1e-12);
    }

    #[test]
    fn doubling_depth_halves_pixel_offset() {
        let c = cam();
        let a = project_corners(
            &[
                Vector3::new(100.0, -50.0, 1000.0),
                Vector3::new(100.0, -50.0, 2000.0),
            ],
            &c,
        );
        let near = a[0].unwrap() - Vector2::new(c.cx, c.cy);
        let far = a[1].unwrap() - Vector2::new(c.cx, c.cy);
        assert!((near / 2.0 - far).norm() < 1e-12);
    }

    #[test]
    fn behind_camera_corners_are_excluded() {
        let out = project_corners(&[Vector3::new(0.0, 0.0, -5.0)], &cam());
        assert_eq!(out[0], None);
    }
}
