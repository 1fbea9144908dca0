//! Per-subarray reconstruction error and scatterer-detection scoring.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::estimators::EstimatedPath;
use crate::scene::Scene;
use crate::wavefield::{norm_sqr, ChannelVector};

/// Distance below which an estimated path counts as finding a scatterer.
pub const DEFAULT_DETECTION_RADIUS: f64 = 10.0;

/// `||h~_n - h_n||^2 / ||h_n||^2` for every subarray that sees at least one
/// scatterer. Subarrays with an empty view are skipped.
pub fn mse_metric(
    truth: &ChannelVector,
    estimate: &ChannelVector,
    scene: &Scene,
) -> Result<Vec<(usize, f64)>> {
    let g = &scene.geometry;
    if truth.len() != g.elements() || estimate.len() != g.elements() {
        return Err(Error::domain("channel length does not match the scene geometry"));
    }
    (1..=g.subarrays())
        .filter(|&n| !scene.subarray_view(n).is_empty())
        .map(|n| {
            let r = g.element_range(n)?;
            let h = &truth.0[r.clone()];
            let e = &estimate.0[r];
            let denom = norm_sqr(h);
            if !(denom > 0.0) {
                return Err(Error::Internal(format!(
                    "subarray {n} sees a scatterer but its channel is zero"
                )));
            }
            let num: f64 = h.iter().zip(e).map(|(a, b)| (b - a).norm_sqr()).sum();
            Ok((n, num / denom))
        })
        .collect()
}

/// Outcome for one true (subarray, scatterer) mapping.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PairOutcome {
    pub subarray: usize,
    pub scatterer: usize,
    pub detected: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectionOutcome {
    pub pairs: Vec<PairOutcome>,
}

impl DetectionOutcome {
    pub fn detected(&self) -> usize {
        self.pairs.iter().filter(|p| p.detected).count()
    }

    /// Detected share of the true mappings; `None` when there are none.
    pub fn ratio(&self) -> Option<f64> {
        (!self.pairs.is_empty()).then(|| self.detected() as f64 / self.pairs.len() as f64)
    }
}

/// Scores every true mapping `(n, s)`: detected when some estimated path lies
/// within `radius` of scatterer `s` and lists `n` in its visible set.
pub fn detection_metric(scene: &Scene, paths: &[EstimatedPath], radius: f64) -> DetectionOutcome {
    let pairs = (1..=scene.geometry.subarrays())
        .flat_map(|n| {
            scene.subarray_view(n).into_iter().map(move |s| {
                let truth = scene.scatterers[s - 1].position;
                let detected = paths
                    .iter()
                    .any(|p| p.visible.contains(n) && p.position.distance(&truth) < radius);
                PairOutcome {
                    subarray: n,
                    scatterer: s,
                    detected,
                }
            })
        })
        .collect();
    DetectionOutcome { pairs }
}
