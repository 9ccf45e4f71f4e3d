//! Depth accuracy of the two ranging modalities against ground truth.

use alloc::vec;
use alloc::vec::Vec;

#[allow(unused_imports)] // inherent methods win whenever std is linked
use num_traits::Float;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::noise::NoiseModel;
use crate::{Error, Result};

/// One ground-truth distance with a reading from each modality (mm).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DepthSample {
    pub truth_mm: f64,
    pub tof_mm: f64,
    pub mono_mm: f64,
}

/// Evenly spaced bin centres `lo, lo + step, ..., hi`; a sample belongs to
/// the nearest centre within half a step.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BinSpec {
    pub lo_mm: f64,
    pub hi_mm: f64,
    pub count: usize,
}

impl Default for BinSpec {
    fn default() -> Self {
        Self {
            lo_mm: 100.0,
            hi_mm: 3000.0,
            count: 30,
        }
    }
}

impl BinSpec {
    pub fn step(&self) -> f64 {
        if self.count < 2 {
            return 0.0;
        }
        (self.hi_mm - self.lo_mm) / (self.count - 1) as f64
    }

    pub fn center(&self, i: usize) -> f64 {
        self.lo_mm + i as f64 * self.step()
    }

    pub fn bin_of(&self, d: f64) -> Option<usize> {
        if self.count == 0 || !d.is_finite() {
            return None;
        }
        let step = self.step();
        if step == 0.0 {
            return ((d - self.lo_mm).abs() <= f64::EPSILON).then_some(0);
        }
        let i = ((d - self.lo_mm) / step).round();
        if i < 0.0 || i >= self.count as f64 {
            return None;
        }
        let i = i as usize;
        ((d - self.center(i)).abs() <= step / 2.0).then_some(i)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DepthMetrics {
    /// Mean absolute error over all samples.
    pub tof_mae_mm: f64,
    pub mono_mae_mm: f64,
    /// Pearson r between ToF and monocular bin means.
    pub pearson_r: f64,
    pub bins_used: usize,
    /// Per bin: centre, ToF mean, monocular mean, sample count.
    pub bins: Vec<(f64, f64, f64, usize)>,
}

/// Pearson correlation: covariance over the product of standard deviations.
pub fn pearson(x: &[f64], y: &[f64]) -> Result<f64> {
    if x.len() != y.len() || x.len() < 2 {
        return Err(Error::UndefinedCorrelation);
    }
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx) * (a - mx);
        syy += (b - my) * (b - my);
    }
    if !(sxx > 0.0 && syy > 0.0) {
        return Err(Error::UndefinedCorrelation);
    }
    Ok(sxy / (sxx.sqrt() * syy.sqrt()))
}

pub fn depth_metrics(samples: &[DepthSample], bins: &BinSpec) -> Result<DepthMetrics> {
    let mut acc = vec![(0.0, 0.0, 0usize); bins.count];
    for s in samples {
        if let Some(i) = bins.bin_of(s.truth_mm) {
            acc[i].0 += s.tof_mm;
            acc[i].1 += s.mono_mm;
            acc[i].2 += 1;
        }
    }
    let table: Vec<(f64, f64, f64, usize)> = acc
        .iter()
        .enumerate()
        .filter(|(_, a)| a.2 > 0)
        .map(|(i, a)| (bins.center(i), a.0 / a.2 as f64, a.1 / a.2 as f64, a.2))
        .collect();
    if table.len() < 2 {
        return Err(Error::UndefinedCorrelation);
    }
    let xs: Vec<f64> = table.iter().map(|b| b.1).collect();
    let ys: Vec<f64> = table.iter().map(|b| b.2).collect();
    let r = pearson(&xs, &ys)?;
    let n = samples.len() as f64;
    let tof_mae = samples
        .iter()
        .map(|s| (s.tof_mm - s.truth_mm).abs())
        .sum::<f64>()
        / n;
    let mono_mae = samples
        .iter()
        .map(|s| (s.mono_mm - s.truth_mm).abs())
        .sum::<f64>()
        / n;
    Ok(DepthMetrics {
        tof_mae_mm: tof_mae,
        mono_mae_mm: mono_mae,
        pearson_r: r,
        bins_used: table.len(),
        bins: table,
    })
}

/// Draws `per_bin` paired readings at every bin centre.
pub fn monte_carlo_depth(
    noise: &NoiseModel,
    bins: &BinSpec,
    per_bin: usize,
    seed: u64,
) -> Vec<DepthSample> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(bins.count * per_bin);
    for i in 0..bins.count {
        let d = bins.center(i);
        for _ in 0..per_bin {
            out.push(DepthSample {
                truth_mm: d,
                tof_mm: noise.tof.sample(d, &mut rng),
                mono_mm: noise.mono.sample(d, &mut rng),
            });
        }
    }
    out
}
