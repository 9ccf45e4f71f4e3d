//! Distance-dependent sensor noise: Gaussian with bias and spread taken
//! from two measured anchors and interpolated linearly between them.
//! Outside the anchors the nearest anchor's bias and spread are held.

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NoiseAnchor {
    /// True distance, mm.
    pub distance_mm: f64,
    /// Mean reading at that distance, mm.
    pub mean_mm: f64,
    /// Standard deviation of readings, mm.
    pub sd_mm: f64,
}

impl NoiseAnchor {
    pub const fn new(distance_mm: f64, mean_mm: f64, sd_mm: f64) -> Self {
        Self {
            distance_mm,
            mean_mm,
            sd_mm,
        }
    }

    fn bias(&self) -> f64 {
        self.mean_mm - self.distance_mm
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ModalityNoise {
    pub near: NoiseAnchor,
    pub far: NoiseAnchor,
}

impl ModalityNoise {
    /// Interpolation weight of the far anchor, clamped to `[0, 1]`.
    fn weight(&self, d: f64) -> f64 {
        let span = self.far.distance_mm - self.near.distance_mm;
        ((d - self.near.distance_mm) / span).clamp(0.0, 1.0)
    }

    pub fn bias(&self, d: f64) -> f64 {
        let w = self.weight(d);
        self.near.bias() + w * (self.far.bias() - self.near.bias())
    }

    pub fn sd(&self, d: f64) -> f64 {
        let w = self.weight(d);
        self.near.sd_mm + w * (self.far.sd_mm - self.near.sd_mm)
    }

    /// Expected reading at true distance `d`.
    pub fn mean(&self, d: f64) -> f64 {
        d + self.bias(d)
    }

    pub fn sample<R: Rng + ?Sized>(&self, d: f64, rng: &mut R) -> f64 {
        let z: f64 = StandardNormal.sample(rng);
        self.mean(d) + self.sd(d) * z
    }

    pub fn validate(&self) -> Result<(), &'static str> {
        if !(self.near.distance_mm < self.far.distance_mm) {
            return Err("noise anchors must be in increasing distance order");
        }
        if !(self.near.sd_mm >= 0.0 && self.far.sd_mm >= 0.0) {
            return Err("noise standard deviations must be non-negative");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct NoiseModel {
    pub tof: ModalityNoise,
    pub mono: ModalityNoise,
}

impl Default for NoiseModel {
    fn default() -> Self {
        Self {
            tof: ModalityNoise {
                near: NoiseAnchor::new(100.0, 112.2, 10.1),
                far: NoiseAnchor::new(3000.0, 2983.2, 92.3),
            },
            mono: ModalityNoise {
                near: NoiseAnchor::new(100.0, 95.5, 7.6),
                far: NoiseAnchor::new(3000.0, 2893.3, 219.8),
            },
        }
    }
}

impl NoiseModel {
    pub fn validate(&self) -> Result<(), &'static str> {
        self.tof.validate()?;
        self.mono.validate()
    }
}
