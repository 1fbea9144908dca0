//! Scatterer-wise estimation: one refined OMP over the whole aperture that
//! positions each scatterer jointly across the subarrays that see it and
//! decides which subarrays those are.

use std::cmp::Ordering;
use std::time::Instant;

use num_complex::Complex64;

use super::{
    check_snapshot, superpose, Estimate, EstimatedPath, EstimationOutput, EstimatorParams, Method,
    NoiseTest, PhaseTimings,
};
use crate::error::Result;
use crate::scene::{ArrayGeometry, Point, SubarraySet};
use crate::search::{amplitude_projection, grid_argmax, subarray_correlations};
use crate::wavefield::{apply_mask, distance_to, norm_sqr, ChannelVector, PilotSnapshot};

/// What one iteration decided, kept for inspection and tests.
#[derive(Debug, Clone, PartialEq)]
pub struct IterationTrace {
    /// Subarrays whose residual failed the noise test.
    pub candidates: SubarraySet,
    pub coarse_position: Point,
    /// Normalized per-subarray power at the coarse position.
    pub gamma: Vec<(usize, f64)>,
    pub coarse_set: SubarraySet,
    pub fine_position: Point,
    pub coarse_amplitude: Complex64,
    pub refined_set: SubarraySet,
    /// No candidate passed the power gate; the coarse set was used instead.
    pub gate_fallback: bool,
    pub residual_energy_before: f64,
    pub residual_energy_after: f64,
}

#[derive(Debug, Clone)]
pub struct ScattererEstimate {
    pub paths: Vec<EstimatedPath>,
    pub iterations: usize,
    pub truncated: bool,
    pub trace: Vec<IterationTrace>,
    pub channel: ChannelVector,
    pub timings: PhaseTimings,
}

impl ScattererEstimate {
    pub fn into_estimate(self, geometry: &ArrayGeometry) -> Estimate {
        let counts = (1..=geometry.subarrays())
            .map(|n| self.paths.iter().filter(|p| p.visible.contains(n)).count())
            .collect();
        Estimate {
            output: EstimationOutput {
                method: Method::Scatterer,
                paths: self.paths,
                per_subarray_path_counts: counts,
                iterations: vec![self.iterations],
                truncated: vec![self.truncated],
            },
            channel: self.channel,
            timings: self.timings,
        }
    }
}

fn masked(geometry: &ArrayGeometry, set: &SubarraySet, v: &[Complex64]) -> Vec<Complex64> {
    let mut out = v.to_vec();
    apply_mask(geometry, set, &mut out).expect("set checked");
    out
}

/// Normalizes per-subarray powers and keeps the smallest group of strongest
/// subarrays whose share reaches `delta`.
pub(crate) fn coarse_visible_set(powers: &[(usize, f64)], delta: f64) -> (Vec<(usize, f64)>, SubarraySet) {
    let total: f64 = powers.iter().map(|(_, p)| p).sum();
    let gamma: Vec<(usize, f64)> = if total > 0.0 {
        powers.iter().map(|&(n, p)| (n, p / total)).collect()
    } else {
        let u = 1.0 / powers.len().max(1) as f64;
        powers.iter().map(|&(n, _)| (n, u)).collect()
    };
    let mut order = gamma.clone();
    order.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap_or(Ordering::Equal).then(a.0.cmp(&b.0)));
    let mut set = SubarraySet::new();
    let mut acc = 0.0;
    for (n, g) in order {
        set.insert(n);
        acc += g;
        if acc >= delta - 1e-12 {
            break;
        }
    }
    (gamma, set)
}

/// `sum_{m in n} x / D_m`, which equals `b_n^H a_n` at the same point.
fn coherent_gain(geometry: &ArrayGeometry, n: usize, p: Point) -> f64 {
    geometry
        .element_range(n)
        .expect("subarray checked")
        .map(|i| p.x / distance_to(p.x, p.y, geometry.element_y(i)))
        .sum()
}

/// Runs the joint refined OMP over the whole snapshot.
///
/// Per iteration: the subarrays failing the noise test form the candidate
/// set; the coarse position maximizes their joint radiation power; the
/// strongest candidates (normalized power reaching `delta`) form the coarse
/// visible set, which drives the fine search and a first amplitude. Each
/// candidate then joins the refined visible set when its measured power
/// clears `alpha` times the power that amplitude predicts plus the expected
/// noise energy `M/N`. The refined amplitude is fitted on that set and the
/// atom is removed from the residual.
pub fn scatterer_wise_estimate(
    snapshot: &PilotSnapshot,
    geometry: &ArrayGeometry,
    params: &EstimatorParams,
) -> Result<ScattererEstimate> {
    check_snapshot(snapshot, geometry)?;
    params.validate()?;
    let g = geometry;
    let coarse_grid = params.coarse_grid()?;
    let test = NoiseTest::new(g.subarray_len(), params.stopping.false_alarm_rate)?;
    let noise_energy = g.subarray_len() as f64;
    let received = &snapshot.entries;

    let mut timings = PhaseTimings::default();
    let mut paths: Vec<EstimatedPath> = Vec::new();
    let mut trace = Vec::new();
    let mut residual = received.clone();
    let mut truncated = false;

    loop {
        let t = Instant::now();
        let candidates: SubarraySet = (1..=g.subarrays())
            .filter(|&n| !test.is_noise(&residual[g.element_range(n).expect("in range")]))
            .collect();
        timings.stopping += t.elapsed();
        if candidates.is_empty() {
            break;
        }
        if paths.len() >= params.stopping.max_iterations {
            truncated = true;
            break;
        }
        let energy_before = norm_sqr(&residual);
        let z = masked(g, &candidates, &residual);

        let t = Instant::now();
        let (coarse, _) = grid_argmax(g, &candidates, &z, &coarse_grid)?;
        timings.coarse_position += t.elapsed();

        let t = Instant::now();
        let powers: Vec<(usize, f64)> = subarray_correlations(g, &candidates, &z, coarse)?
            .into_iter()
            .map(|(n, c)| (n, c.norm_sqr()))
            .collect();
        let (gamma, coarse_set) = coarse_visible_set(&powers, params.delta);
        let z_coarse = masked(g, &coarse_set, &residual);
        timings.coarse_set += t.elapsed();

        let t = Instant::now();
        let local = params.local_grid(coarse)?;
        let (fine, _) = grid_argmax(g, &coarse_set, &z_coarse, local.grid())?;
        timings.fine_position += t.elapsed();

        let t = Instant::now();
        let coarse_amplitude = amplitude_projection(g, &coarse_set, &z_coarse, fine)?;
        timings.coarse_amplitude += t.elapsed();

        let t = Instant::now();
        let mut refined_set: SubarraySet = subarray_correlations(g, &candidates, &z, fine)?
            .into_iter()
            .filter(|&(n, c)| {
                let model = (coarse_amplitude * coherent_gain(g, n, fine)).norm_sqr();
                c.norm_sqr() >= params.alpha * model + noise_energy
            })
            .map(|(n, _)| n)
            .collect();
        let gate_fallback = refined_set.is_empty();
        if gate_fallback {
            refined_set = coarse_set.clone();
        }
        timings.refined_set += t.elapsed();

        let t = Instant::now();
        let z_refined = masked(g, &refined_set, &residual);
        let amplitude = amplitude_projection(g, &refined_set, &z_refined, fine)?;
        timings.amplitude += t.elapsed();
        if amplitude.norm_sqr() == 0.0 {
            break;
        }

        paths.push(EstimatedPath {
            position: fine,
            amplitude,
            visible: refined_set.clone(),
        });
        let model = superpose(g, &paths, 1.0)?;
        for ((r, y), m) in residual.iter_mut().zip(received).zip(&model) {
            *r = y - m;
        }
        trace.push(IterationTrace {
            candidates,
            coarse_position: coarse,
            gamma,
            coarse_set,
            fine_position: fine,
            coarse_amplitude,
            refined_set,
            gate_fallback,
            residual_energy_before: energy_before,
            residual_energy_after: norm_sqr(&residual),
        });
    }

    let channel = ChannelVector(superpose(g, &paths, 1.0 / snapshot.power.sqrt())?);
    Ok(ScattererEstimate {
        iterations: paths.len(),
        paths,
        truncated,
        trace,
        channel,
        timings,
    })
}
