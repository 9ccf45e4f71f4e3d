//! Per-frame 2D to 3D fusion with a track table.

use alloc::collections::BTreeMap;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use super::kalman::{KalmanTrack, Measurement};
use super::{estimate_dimensions, estimate_position, estimate_yaw, Box3D, ClassPriors, Dimensions};
use crate::detect2d::{ClassCatalog, Detection2D};
use crate::geometry::{depth_in_region, CameraModel, DepthMap, RegionMethod};

/// Tracks without an update for this many consecutive frames are dropped.
pub const MAX_MISSES: u32 = 30;

const MM_PER_M: f64 = 1000.0;

/// Why a detection came out of fusion without 3D fields.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FuseFlag {
    /// Region depth could not be computed or was not positive.
    DepthUnavailable,
    /// The box geometry made size or yaw undefined.
    DegenerateBox,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FusedDetection {
    pub detection: Detection2D,
    /// Filtered box (or the raw estimate when the detection has no track ID).
    pub box3d: Option<Box3D>,
    /// Snapshot of the track after this frame's update.
    pub track: Option<KalmanTrack>,
    pub flag: Option<FuseFlag>,
}

/// Owns the track table. Single writer: call [`Fuser::fuse_frame`] from one
/// thread.
#[derive(Debug, Clone)]
pub struct Fuser {
    pub priors: ClassPriors,
    pub catalog: ClassCatalog,
    pub method: RegionMethod,
    pub max_misses: u32,
    tracks: BTreeMap<u32, KalmanTrack>,
}

impl Fuser {
    pub fn new(priors: ClassPriors, catalog: ClassCatalog) -> Self {
        Self {
            priors,
            catalog,
            method: RegionMethod::Median,
            max_misses: MAX_MISSES,
            tracks: BTreeMap::new(),
        }
    }

    pub fn tracks(&self) -> impl Iterator<Item = &KalmanTrack> {
        self.tracks.values()
    }

    pub fn track(&self, id: u32) -> Option<&KalmanTrack> {
        self.tracks.get(&id)
    }

    /// Raw (unfiltered) 3D estimate for one detection, millimetres.
    pub fn measure(
        &self,
        det: &Detection2D,
        depth: &DepthMap,
        cam: &CameraModel,
    ) -> Result<(Box3D, Measurement), FuseFlag> {
        let v = depth_in_region(depth, &det.bbox, self.method)
            .map_err(|_| FuseFlag::DepthUnavailable)?;
        let z = depth.to_metric(v);
        if !(z > 0.0) || !z.is_finite() {
            return Err(FuseFlag::DepthUnavailable);
        }
        let class = self.catalog.name(det.class_id).unwrap_or("");
        let p = estimate_position(&det.bbox, z, cam).map_err(|_| FuseFlag::DepthUnavailable)?;
        let dims = estimate_dimensions(class, &det.bbox, z, cam, &self.priors)
            .map_err(|_| FuseFlag::DegenerateBox)?;
        let yaw = estimate_yaw(&det.bbox, &p, class, cam, &self.priors)
            .map_err(|_| FuseFlag::DegenerateBox)?;
        let raw = Box3D {
            position: [p.x, p.y, p.z],
            dims,
            yaw,
            class_id: det.class_id,
            track_id: det.track_id,
            confidence: det.score,
        };
        let m = Measurement {
            position: [p.x / MM_PER_M, p.y / MM_PER_M, p.z / MM_PER_M],
            dims: [
                dims.width / MM_PER_M,
                dims.height / MM_PER_M,
                dims.length / MM_PER_M,
            ],
            yaw,
        };
        Ok((raw, m))
    }

    /// Fuses one frame. `dt` is the time since the previous frame (s).
    /// Output order matches `dets`.
    pub fn fuse_frame(
        &mut self,
        dets: &[Detection2D],
        depth: &DepthMap,
        cam: &CameraModel,
        dt: f64,
    ) -> Vec<FusedDetection> {
        for t in self.tracks.values_mut() {
            t.misses += 1;
        }
        let mut out = Vec::with_capacity(dets.len());
        for det in dets {
            let (raw, m) = match self.measure(det, depth, cam) {
                Ok(v) => v,
                Err(flag) => {
                    out.push(FusedDetection {
                        detection: det.clone(),
                        box3d: None,
                        track: None,
                        flag: Some(flag),
                    });
                    continue;
                }
            };
            let Some(id) = det.track_id else {
                out.push(FusedDetection {
                    detection: det.clone(),
                    box3d: Some(raw),
                    track: None,
                    flag: None,
                });
                continue;
            };
            let track = match self.tracks.get_mut(&id) {
                Some(t) if t.class_id == det.class_id => {
                    if dt > 0.0 {
                        t.predict(dt);
                    }
                    t.update(&m);
                    t
                }
                _ => {
                    self.tracks
                        .insert(id, KalmanTrack::new(id, det.class_id, &m));
                    self.tracks.get_mut(&id).expect("just inserted")
                }
            };
            let filtered = box_from_track(track, det);
            out.push(FusedDetection {
                detection: det.clone(),
                box3d: Some(filtered),
                track: Some(track.clone()),
                flag: None,
            });
        }
        // Coast the tracks nobody matched, retire stale ones.
        for t in self.tracks.values_mut() {
            if t.misses > 0 && dt > 0.0 {
                t.predict(dt);
            }
        }
        let max = self.max_misses;
        self.tracks.retain(|_, t| t.misses < max);
        out
    }
}

fn box_from_track(t: &KalmanTrack, det: &Detection2D) -> Box3D {
    let p = t.position();
    let d = t.dims();
    Box3D {
        position: [p[0] * MM_PER_M, p[1] * MM_PER_M, p[2] * MM_PER_M],
        dims: Dimensions::new(d[0] * MM_PER_M, d[1] * MM_PER_M, d[2] * MM_PER_M),
        yaw: t.yaw(),
        class_id: det.class_id,
        track_id: Some(t.track_id),
        confidence: det.score,
    }
}
