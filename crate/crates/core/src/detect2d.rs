//! 2D detection post-processing: confidence gating, class-wise non-maximum
//! suppression and persistent track IDs from greedy IoU matching.

use alloc::string::String;
use alloc::vec::Vec;
use core::sync::atomic::{AtomicU32, Ordering};

use serde::{Deserialize, Serialize};

use crate::geometry::PixelBox;

/// Default NMS IoU threshold.
pub const IOU_THRESHOLD: f64 = 0.45;
/// Default confidence threshold.
pub const SCORE_THRESHOLD: f64 = 0.25;
/// Default IoU gate for track association.
pub const TRACK_IOU_GATE: f64 = 0.3;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Detection2D {
    #[serde(rename = "box")]
    pub bbox: PixelBox,
    pub score: f64,
    pub class_id: u32,
    #[serde(default)]
    pub track_id: Option<u32>,
}

impl Detection2D {
    pub fn new(bbox: PixelBox, score: f64, class_id: u32) -> Self {
        Self {
            bbox,
            score,
            class_id,
            track_id: None,
        }
    }
}

/// One line of the detections log: the post-processed set for frame `k`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectionFrame {
    pub frame_k: u64,
    pub dets: Vec<Detection2D>,
}

/// Class names indexed by `class_id`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassCatalog {
    names: Vec<String>,
}

impl ClassCatalog {
    pub fn new<I, S>(names: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        Self {
            names: names.into_iter().map(Into::into).collect(),
        }
    }

    pub fn name(&self, class_id: u32) -> Option<&str> {
        self.names.get(class_id as usize).map(String::as_str)
    }

    pub fn id(&self, name: &str) -> Option<u32> {
        self.names.iter().position(|n| n == name).map(|i| i as u32)
    }

    /// Returns the id of `name`, appending it if unknown.
    pub fn intern(&mut self, name: &str) -> u32 {
        match self.id(name) {
            Some(id) => id,
            None => {
                self.names.push(name.into());
                (self.names.len() - 1) as u32
            }
        }
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }
}

impl Default for ClassCatalog {
    fn default() -> Self {
        Self::new([
            "person",
            "chair",
            "table",
            "sofa",
            "bed",
            "door",
            "plant",
            "tv",
            "cabinet",
            "refrigerator",
            "book",
            "pillows",
            "table_decors",
            "fire",
            "pet",
        ])
    }
}

/// Intersection over union; `0` for disjoint or zero-area boxes.
pub fn iou(a: &PixelBox, b: &PixelBox) -> f64 {
    let iw = a.x_max.min(b.x_max) - a.x_min.max(b.x_min);
    let ih = a.y_max.min(b.y_max) - a.y_min.max(b.y_min);
    if iw <= 0.0 || ih <= 0.0 {
        return 0.0;
    }
    let inter = iw * ih;
    let union = a.area() + b.area() - inter;
    if union <= 0.0 {
        0.0
    } else {
        inter / union
    }
}

/// Drops detections scoring below `score_threshold`, then for every class
/// greedily keeps the best remaining box and suppresses same-class boxes with
/// IoU above `iou_threshold`. Output is sorted by descending score; equal
/// scores keep their input order.
pub fn nms(dets: &[Detection2D], iou_threshold: f64, score_threshold: f64) -> Vec<Detection2D> {
    let mut order: Vec<usize> = (0..dets.len())
        .filter(|&i| dets[i].score >= score_threshold)
        .collect();
    order.sort_by(|&a, &b| dets[b].score.total_cmp(&dets[a].score));

    let mut kept: Vec<usize> = Vec::new();
    for &i in &order {
        let suppressed = kept.iter().any(|&k| {
            dets[k].class_id == dets[i].class_id
                && iou(&dets[k].bbox, &dets[i].bbox) > iou_threshold
        });
        if !suppressed {
            kept.push(i);
        }
    }
    kept.into_iter().map(|i| dets[i].clone()).collect()
}

/// Monotone source of fresh track IDs, starting at 1. Shareable across
/// threads.
#[derive(Debug)]
pub struct TrackIdAllocator {
    next: AtomicU32,
}

impl TrackIdAllocator {
    pub fn new() -> Self {
        Self::starting_at(1)
    }

    pub fn starting_at(first: u32) -> Self {
        Self {
            next: AtomicU32::new(first),
        }
    }

    pub fn next_id(&self) -> u32 {
        self.next.fetch_add(1, Ordering::Relaxed)
    }

    pub fn peek(&self) -> u32 {
        self.next.load(Ordering::Relaxed)
    }
}

impl Default for TrackIdAllocator {
    fn default() -> Self {
        Self::new()
    }
}

/// Carries track IDs from `prev` onto `curr`.
///
/// Candidate pairs are same-class with IoU strictly above `iou_gate`. Pairs
/// are taken greedily by descending IoU; ties go to the lower previous track
/// ID, then the earlier current detection. Unmatched current detections get
/// fresh IDs in input order.
pub fn assign_tracks(
    prev: &[Detection2D],
    curr: &[Detection2D],
    iou_gate: f64,
    ids: &TrackIdAllocator,
) -> Vec<Detection2D> {
    let mut pairs: Vec<(f64, u32, usize)> = Vec::new();
    for p in prev {
        let Some(pid) = p.track_id else { continue };
        for (j, c) in curr.iter().enumerate() {
            if c.class_id != p.class_id {
                continue;
            }
            let o = iou(&p.bbox, &c.bbox);
            if o > iou_gate {
                pairs.push((o, pid, j));
            }
        }
    }
    pairs.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));

    let mut out: Vec<Detection2D> = curr.to_vec();
    let mut matched = alloc::vec![false; curr.len()];
    let mut used: Vec<u32> = Vec::new();
    for (_, pid, j) in pairs {
        if matched[j] || used.contains(&pid) {
            continue;
        }
        matched[j] = true;
        used.push(pid);
        out[j].track_id = Some(pid);
    }
    for (j, det) in out.iter_mut().enumerate() {
        if !matched[j] {
            det.track_id = Some(ids.next_id());
        }
    }
    out
}
