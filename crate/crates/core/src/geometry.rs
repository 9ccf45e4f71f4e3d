//! Pinhole camera model, projection and depth-map queries.
//!
//! Pixel coordinates follow the usual image convention: `u` grows to the
//! right, `v` grows downwards, and the camera frame is x right, y down,
//! z along the optical axis. Lens distortion coefficients are carried for
//! completeness but never applied to pixels.

use alloc::vec::Vec;

use nalgebra::{Matrix3, Matrix3x4, Vector2, Vector3};
#[allow(unused_imports)] // inherent methods win whenever std is linked
use num_traits::Float;
use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Intrinsics, (unapplied) distortion and extrinsics of a calibrated camera.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CameraModel {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    /// Brown-Conrady coefficients `k1, k2, p1, p2, k3`. Stored only.
    pub dist: [f64; 5],
    /// Rotation vector (axis times angle, radians).
    pub rvec: [f64; 3],
    /// Translation, same length unit as the points being projected.
    pub tvec: [f64; 3],
    pub width: u32,
    pub height: u32,
}

impl CameraModel {
    /// Vertical focal length used by the reference calibration (px).
    pub const REFERENCE_FOCAL: f64 = 520.0;
    /// Horizontal principal point of the reference calibration (px).
    pub const REFERENCE_CX: f64 = 360.594;

    pub fn new(fx: f64, fy: f64, cx: f64, cy: f64, width: u32, height: u32) -> Result<Self> {
        let cam = Self {
            fx,
            fy,
            cx,
            cy,
            dist: [0.0; 5],
            rvec: [0.0; 3],
            tvec: [0.0; 3],
            width,
            height,
        };
        cam.validate()?;
        Ok(cam)
    }

    /// The 720x480 reference camera: `fx = fy = 520`, `cx = 360.594` and
    /// `cy` at half the frame height.
    pub fn reference() -> Self {
        Self::new(
            Self::REFERENCE_FOCAL,
            Self::REFERENCE_FOCAL,
            Self::REFERENCE_CX,
            240.0,
            720,
            480,
        )
        .expect("reference camera is valid")
    }

    pub fn with_extrinsics(mut self, rvec: [f64; 3], tvec: [f64; 3]) -> Self {
        self.rvec = rvec;
        self.tvec = tvec;
        self
    }

    pub fn with_distortion(mut self, dist: [f64; 5]) -> Self {
        self.dist = dist;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.fx.is_finite() && self.fx > 0.0) {
            return Err(Error::InvalidCamera("fx must be positive"));
        }
        if !(self.fy.is_finite() && self.fy > 0.0) {
            return Err(Error::InvalidCamera("fy must be positive"));
        }
        if !(self.cx.is_finite() && self.cy.is_finite()) {
            return Err(Error::InvalidCamera("principal point must be finite"));
        }
        if self.width == 0 || self.height == 0 {
            return Err(Error::InvalidCamera("frame size must be non-zero"));
        }
        if self
            .rvec
            .iter()
            .chain(self.tvec.iter())
            .any(|v| !v.is_finite())
        {
            return Err(Error::InvalidCamera("extrinsics must be finite"));
        }
        Ok(())
    }

    /// Intrinsic matrix `K`.
    pub fn intrinsics(&self) -> Matrix3<f64> {
        Matrix3::new(
            self.fx, 0.0, self.cx, //
            0.0, self.fy, self.cy, //
            0.0, 0.0, 1.0,
        )
    }

    /// `K * [R | t]` with `R` from the rotation vector.
    pub fn projection_matrix(&self) -> Matrix3x4<f64> {
        projection_matrix(self)
    }

    /// Projects a point through `P`. `None` when the point is not in front of
    /// the camera.
    pub fn project(&self, point: &Vector3<f64>) -> Option<Vector2<f64>> {
        project(&self.projection_matrix(), point)
    }

    /// Same camera with intrinsics and frame size divided by `factor`.
    /// Used to render cheaper depth grids.
    pub fn downscaled(&self, factor: u32) -> Self {
        let f = factor.max(1);
        let s = f as f64;
        Self {
            fx: self.fx / s,
            fy: self.fy / s,
            cx: self.cx / s,
            cy: self.cy / s,
            width: (self.width / f).max(1),
            height: (self.height / f).max(1),
            ..self.clone()
        }
    }
}

/// Rodrigues' formula: rotation vector to rotation matrix.
pub fn rotation_from_vector(r: &Vector3<f64>) -> Matrix3<f64> {
    let theta = r.norm();
    let k = Matrix3::new(
        0.0, -r.z, r.y, //
        r.z, 0.0, -r.x, //
        -r.y, r.x, 0.0,
    );
    if theta < 1e-12 {
        return Matrix3::identity() + k;
    }
    let a = theta.sin() / theta;
    let b = (1.0 - theta.cos()) / (theta * theta);
    Matrix3::identity() + k * a + k * k * b
}

pub fn projection_matrix(cam: &CameraModel) -> Matrix3x4<f64> {
    let r = rotation_from_vector(&Vector3::from(cam.rvec));
    let mut rt = Matrix3x4::zeros();
    rt.fixed_view_mut::<3, 3>(0, 0).copy_from(&r);
    rt.set_column(3, &Vector3::from(cam.tvec));
    cam.intrinsics() * rt
}

/// Homogeneous projection with perspective divide. `None` if the third
/// homogeneous coordinate is not positive.
pub fn project(p: &Matrix3x4<f64>, point: &Vector3<f64>) -> Option<Vector2<f64>> {
    let h = p * point.push(1.0);
    if h.z <= 0.0 || !h.z.is_finite() {
        return None;
    }
    Some(Vector2::new(h.x / h.z, h.y / h.z))
}

/// `z * K^-1 * [u, v, 1]^T`.
pub fn back_project(pixel: &Vector2<f64>, z: f64, cam: &CameraModel) -> Result<Vector3<f64>> {
    if !(z > 0.0) || !z.is_finite() {
        return Err(Error::NonPositiveDepth(z));
    }
    Ok(Vector3::new(
        z * (pixel.x - cam.cx) / cam.fx,
        z * (pixel.y - cam.cy) / cam.fy,
        z,
    ))
}

/// Axis-aligned pixel rectangle.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PixelBox {
    pub x_min: f64,
    pub y_min: f64,
    pub x_max: f64,
    pub y_max: f64,
}

impl PixelBox {
    pub fn new(x_min: f64, y_min: f64, x_max: f64, y_max: f64) -> Result<Self> {
        let b = Self {
            x_min,
            y_min,
            x_max,
            y_max,
        };
        if b.is_valid() {
            Ok(b)
        } else {
            Err(Error::InvalidBox)
        }
    }

    pub fn is_valid(&self) -> bool {
        [self.x_min, self.y_min, self.x_max, self.y_max]
            .iter()
            .all(|v| v.is_finite())
            && self.x_min <= self.x_max
            && self.y_min <= self.y_max
    }

    pub fn width(&self) -> f64 {
        self.x_max - self.x_min
    }

    pub fn height(&self) -> f64 {
        self.y_max - self.y_min
    }

    pub fn area(&self) -> f64 {
        self.width().max(0.0) * self.height().max(0.0)
    }

    pub fn center(&self) -> Vector2<f64> {
        Vector2::new(
            (self.x_min + self.x_max) / 2.0,
            (self.y_min + self.y_max) / 2.0,
        )
    }

    /// Grows (or shrinks) the box about its center.
    pub fn scaled(&self, factor: f64) -> Self {
        let c = self.center();
        let hw = self.width() * factor / 2.0;
        let hh = self.height() * factor / 2.0;
        Self {
            x_min: c.x - hw,
            y_min: c.y - hh,
            x_max: c.x + hw,
            y_max: c.y + hh,
        }
    }

    pub fn clamped(&self, width: f64, height: f64) -> Self {
        Self {
            x_min: self.x_min.clamp(0.0, width),
            y_min: self.y_min.clamp(0.0, height),
            x_max: self.x_max.clamp(0.0, width),
            y_max: self.y_max.clamp(0.0, height),
        }
    }

    pub fn translated(&self, dx: f64, dy: f64) -> Self {
        Self {
            x_min: self.x_min + dx,
            y_min: self.y_min + dy,
            x_max: self.x_max + dx,
            y_max: self.y_max + dy,
        }
    }
}

/// Min-max normalized depth image, row-major.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DepthMap {
    pub width: usize,
    pub height: usize,
    pub values: Vec<f64>,
    /// Raw range the values were normalized from.
    pub z_min: f64,
    pub z_max: f64,
    /// Set when the raw input was constant; all values are then zero.
    pub degenerate: bool,
}

/// Region aggregation used by [`depth_in_region`].
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RegionMethod {
    #[default]
    Median,
    Mean,
    Min,
}

pub fn normalize_depth(width: usize, height: usize, raw: &[f64]) -> Result<DepthMap> {
    if raw.is_empty() || width == 0 || height == 0 {
        return Err(Error::EmptyDepthMap);
    }
    if raw.len() != width * height {
        return Err(Error::DimensionMismatch {
            expected: width * height,
            actual: raw.len(),
        });
    }
    let (lo, hi) = raw
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| {
            (lo.min(v), hi.max(v))
        });
    let range = hi - lo;
    let degenerate = !(range > 0.0) || !range.is_finite();
    let values = if degenerate {
        alloc::vec![0.0; raw.len()]
    } else {
        raw.iter()
            .map(|&v| ((v - lo) / range).clamp(0.0, 1.0))
            .collect()
    };
    Ok(DepthMap {
        width,
        height,
        values,
        z_min: lo,
        z_max: hi,
        degenerate,
    })
}

impl DepthMap {
    /// Normalized value at an integer pixel, `0` outside the frame.
    pub fn at(&self, x: i64, y: i64) -> f64 {
        depth_at_point(self, x, y)
    }

    /// Normalized to metric: `z_min + v * (z_max - z_min)`.
    pub fn to_metric(&self, normalized: f64) -> f64 {
        self.z_min + normalized * (self.z_max - self.z_min)
    }
}

pub fn depth_at_point(map: &DepthMap, x: i64, y: i64) -> f64 {
    if x < 0 || y < 0 || x as usize >= map.width || y as usize >= map.height {
        return 0.0;
    }
    map.values[y as usize * map.width + x as usize]
}

/// Integer pixel span `[lo, hi)` of all pixels a `[min, max]` interval
/// overlaps, clamped to `[0, limit)`. A zero-width interval still covers
/// the pixel it sits in.
fn pixel_span(min: f64, max: f64, limit: usize) -> (usize, usize) {
    let lo = min.floor();
    let hi = max.ceil().max(lo + 1.0);
    let lo = lo.max(0.0).min(limit as f64) as usize;
    let hi = hi.max(0.0).min(limit as f64) as usize;
    (lo, hi)
}

/// Aggregates every pixel the (clamped) box overlaps. Even-sized regions use
/// the lower median.
pub fn depth_in_region(map: &DepthMap, region: &PixelBox, method: RegionMethod) -> Result<f64> {
    if !region.is_valid() {
        return Err(Error::InvalidBox);
    }
    let (x0, x1) = pixel_span(region.x_min, region.x_max, map.width);
    let (y0, y1) = pixel_span(region.y_min, region.y_max, map.height);
    if x0 >= x1 || y0 >= y1 {
        return Err(Error::EmptyRegion);
    }
    let rows = (y0..y1).map(|y| &map.values[y * map.width + x0..y * map.width + x1]);
    match method {
        RegionMethod::Min => Ok(rows.flatten().fold(f64::INFINITY, |m, &v| m.min(v))),
        RegionMethod::Mean => {
            let n = ((x1 - x0) * (y1 - y0)) as f64;
            Ok(rows.flatten().sum::<f64>() / n)
        }
        RegionMethod::Median => {
            let mut vals: Vec<f64> = rows.flatten().copied().collect();
            let mid = (vals.len() - 1) / 2;
            let (_, m, _) = vals.select_nth_unstable_by(mid, |a, b| a.total_cmp(b));
            Ok(*m)
        }
    }
}
