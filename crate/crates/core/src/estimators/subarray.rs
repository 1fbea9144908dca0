//! Subarray-wise estimation: an independent refined OMP per subarray.

use std::time::Instant;

use num_complex::Complex64;

use super::{
    check_snapshot, Estimate, EstimatedPath, EstimationOutput, EstimatorParams, Method, NoiseTest,
    PhaseTimings,
};
use crate::error::Result;
use crate::scene::{ArrayGeometry, SubarraySet};
use crate::search::{amplitude_projection, grid_argmax, SpatialGrid};
use crate::wavefield::{array_response, norm_sqr, ChannelVector, PilotSnapshot};

/// Paths extracted from one subarray's residual.
#[derive(Debug, Clone, PartialEq)]
pub struct SubarrayPaths {
    pub subarray: usize,
    pub paths: Vec<EstimatedPath>,
    pub iterations: usize,
    /// The iteration cap was hit before the residual looked like noise.
    pub truncated: bool,
    /// Residual energy before the first iteration and after each extraction.
    pub residual_energy: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct SubarrayEstimate {
    pub subarrays: Vec<SubarrayPaths>,
    pub channel: ChannelVector,
    pub timings: PhaseTimings,
}

impl SubarrayEstimate {
    pub fn paths(&self) -> impl Iterator<Item = &EstimatedPath> {
        self.subarrays.iter().flat_map(|s| s.paths.iter())
    }

    pub fn into_estimate(self) -> Estimate {
        let output = EstimationOutput {
            method: Method::Subarray,
            paths: self.paths().cloned().collect(),
            per_subarray_path_counts: self.subarrays.iter().map(|s| s.paths.len()).collect(),
            iterations: self.subarrays.iter().map(|s| s.iterations).collect(),
            truncated: self.subarrays.iter().map(|s| s.truncated).collect(),
        };
        Estimate {
            output,
            channel: self.channel,
            timings: self.timings,
        }
    }
}

/// Segment `n` of `a(p)`.
fn segment_response(
    geometry: &ArrayGeometry,
    n: usize,
    p: crate::scene::Point,
) -> Result<Vec<Complex64>> {
    let range = geometry.element_range(n)?;
    Ok(array_response(geometry, p)?[range].to_vec())
}

struct SubarrayContext<'a> {
    geometry: &'a ArrayGeometry,
    params: &'a EstimatorParams,
    coarse: &'a SpatialGrid,
    test: &'a NoiseTest,
}

impl SubarrayContext<'_> {
    fn run(
        &self,
        n: usize,
        received: &[Complex64],
        timings: &mut PhaseTimings,
    ) -> Result<(SubarrayPaths, Vec<Complex64>)> {
        let g = self.geometry;
        let range = g.element_range(n)?;
        let set = SubarraySet::single(n);
        let mut paths: Vec<EstimatedPath> = Vec::new();
        let mut atoms: Vec<Vec<Complex64>> = Vec::new();
        let mut residual = received.to_vec();
        let mut energies = vec![norm_sqr(&residual)];
        let mut truncated = false;
        let mut z = vec![Complex64::new(0.0, 0.0); g.elements()];

        loop {
            let t = Instant::now();
            let noise = self.test.is_noise(&residual);
            timings.stopping += t.elapsed();
            if noise {
                break;
            }
            if paths.len() >= self.params.stopping.max_iterations {
                truncated = true;
                break;
            }
            z[range.clone()].copy_from_slice(&residual);

            let t = Instant::now();
            let (coarse, _) = grid_argmax(g, &set, &z, self.coarse)?;
            timings.coarse_position += t.elapsed();

            let t = Instant::now();
            let local = self.params.local_grid(coarse)?;
            let (fine, _) = grid_argmax(g, &set, &z, local.grid())?;
            timings.fine_position += t.elapsed();

            let t = Instant::now();
            let amplitude = amplitude_projection(g, &set, &z, fine)?;
            timings.amplitude += t.elapsed();
            if amplitude.norm_sqr() == 0.0 {
                break;
            }

            atoms.push(segment_response(g, n, fine)?);
            paths.push(EstimatedPath {
                position: fine,
                amplitude,
                visible: set.clone(),
            });
            // residual from the original segment and all extracted paths
            residual.copy_from_slice(received);
            for (p, atom) in paths.iter().zip(&atoms) {
                for (r, a) in residual.iter_mut().zip(atom) {
                    *r -= p.amplitude * a;
                }
            }
            energies.push(norm_sqr(&residual));
        }

        let mut reconstructed = vec![Complex64::new(0.0, 0.0); range.len()];
        for (p, atom) in paths.iter().zip(&atoms) {
            for (h, a) in reconstructed.iter_mut().zip(atom) {
                *h += p.amplitude * a;
            }
        }
        let iterations = paths.len();
        Ok((
            SubarrayPaths {
                subarray: n,
                paths,
                iterations,
                truncated,
                residual_energy: energies,
            },
            reconstructed,
        ))
    }
}

/// Runs refined OMP independently on each subarray segment of the snapshot.
///
/// Each iteration tests the residual segment for noise, picks the coarse
/// grid point with the largest radiation power, refines it on the local
/// grid, projects the amplitude and subtracts the fitted atom. The channel of
/// subarray `n` is rebuilt from its own paths only, scaled by `1/sqrt(P)`.
pub fn subarray_wise_estimate(
    snapshot: &PilotSnapshot,
    geometry: &ArrayGeometry,
    params: &EstimatorParams,
) -> Result<SubarrayEstimate> {
    check_snapshot(snapshot, geometry)?;
    params.validate()?;
    let coarse = params.coarse_grid()?;
    let test = NoiseTest::new(geometry.subarray_len(), params.stopping.false_alarm_rate)?;
    let ctx = SubarrayContext {
        geometry,
        params,
        coarse: &coarse,
        test: &test,
    };

    let mut timings = PhaseTimings::default();
    let mut subarrays = Vec::with_capacity(geometry.subarrays());
    let mut channel = Vec::with_capacity(geometry.elements());
    let scale = 1.0 / snapshot.power.sqrt();
    for n in 1..=geometry.subarrays() {
        let received = &snapshot.entries[geometry.element_range(n)?];
        let (paths, segment) = ctx.run(n, received, &mut timings)?;
        channel.extend(segment.into_iter().map(|c| c * scale));
        subarrays.push(paths);
    }
    Ok(SubarrayEstimate {
        subarrays,
        channel: ChannelVector(channel),
        timings,
    })
}

#[cfg(test)]
mod tests {
    use num_complex::Complex64;

    use super::*;
    use crate::estimators::fixtures::*;
    use crate::wavefield::{receive_pilot, ChannelVector};

    fn two_block_scene() -> crate::scene::Scene {
        let g = ArrayGeometry::new(256, 4, 0.5).unwrap();
        scene(
            g,
            vec![
                scatterer(on_grid(40.0, -48.0, 3, -7), Complex64::from_polar(0.8, 0.3), &[1, 2]),
                scatterer(on_grid(48.0, 32.0, 2, -4), Complex64::from_polar(0.9, -2.0), &[3, 4]),
            ],
        )
    }

    #[test]
    fn noiseless_exact_recovery() {
        let sc = two_block_scene();
        let power = 100.0;
        let (h, snap) = noiseless(&sc, power);
        let est = subarray_wise_estimate(&snap, &sc.geometry, &EstimatorParams::default()).unwrap();
        for sub in &est.subarrays {
            let truth = &sc.scatterers[if sub.subarray <= 2 { 0 } else { 1 }];
            assert_eq!(sub.paths.len(), 1, "subarray {}", sub.subarray);
            let p = &sub.paths[0];
            assert!(p.position.distance(&truth.position) < 1e-9, "{:?}", p.position);
            assert!((p.gain(power) - truth.gain).norm() / truth.gain.norm() < 1e-8);
            assert_eq!(p.visible, SubarraySet::single(sub.subarray));
            assert!(!sub.truncated);
        }
        assert!(rel_err(&est.channel.0, &h.0) < 1e-8);
    }

    #[test]
    fn unseen_subarrays_reconstruct_to_zero() {
        let g = ArrayGeometry::new(256, 4, 0.5).unwrap();
        let sc = scene(g, vec![scatterer(on_grid(40.0, -48.0, 1, 1), Complex64::new(0.7, 0.1), &[1])]);
        let (_, snap) = noiseless(&sc, 100.0);
        let est = subarray_wise_estimate(&snap, &g, &EstimatorParams::default()).unwrap();
        let counts: Vec<usize> = est.subarrays.iter().map(|s| s.paths.len()).collect();
        assert_eq!(counts, vec![1, 0, 0, 0]);
        assert!(est.channel.0[64..].iter().all(|c| c.norm() == 0.0));
    }

    #[test]
    fn pure_noise_rarely_extracts() {
        let g = ArrayGeometry::new(256, 4, 0.5).unwrap();
        let zero = ChannelVector::zeros(256);
        let params = EstimatorParams::default();
        let mut empty = 0;
        for seed in 0..50 {
            let snap = receive_pilot(&zero, 1.0, seed).unwrap();
            let est = subarray_wise_estimate(&snap, &g, &params).unwrap();
            empty += est.subarrays.iter().filter(|s| s.paths.is_empty()).count();
        }
        // 200 segments, each empty with probability 0.99
        assert!(empty >= 192, "{empty}");
    }

    #[test]
    fn residual_energy_decreases_and_cap_holds() {
        let sc = two_block_scene();
        let snap = receive_pilot(&crate::wavefield::synthesize_channel(&sc).unwrap(), 10.0, 3).unwrap();
        let mut params = EstimatorParams::default();
        params.stopping.max_iterations = 3;
        let est = subarray_wise_estimate(&snap, &sc.geometry, &params).unwrap();
        for sub in &est.subarrays {
            assert!(sub.iterations <= 3);
            assert_eq!(sub.residual_energy.len(), sub.paths.len() + 1);
            assert!(sub.residual_energy.windows(2).all(|w| w[1] < w[0]), "{:?}", sub.residual_energy);
        }
    }

    #[test]
    fn truncation_is_reported() {
        let g = ArrayGeometry::new(256, 4, 0.5).unwrap();
        let sc = scene(
            g,
            vec![
                scatterer(on_grid(40.0, -48.0, 0, 0), Complex64::new(0.9, 0.0), &[1]),
                scatterer(on_grid(120.0, 200.0, 0, 0), Complex64::new(0.0, 0.8), &[1]),
            ],
        );
        let (_, snap) = noiseless(&sc, 100.0);
        let mut params = EstimatorParams::default();
        params.stopping.max_iterations = 1;
        let est = subarray_wise_estimate(&snap, &g, &params).unwrap();
        assert!(est.subarrays[0].truncated);
        assert_eq!(est.subarrays[0].paths.len(), 1);
        assert!(!est.subarrays[1].truncated);
    }

    #[test]
    fn subarrays_are_independent_and_deterministic() {
        let sc = two_block_scene();
        let snap = receive_pilot(&crate::wavefield::synthesize_channel(&sc).unwrap(), 30.0, 11).unwrap();
        let params = EstimatorParams::default();
        let a = subarray_wise_estimate(&snap, &sc.geometry, &params).unwrap();
        let b = subarray_wise_estimate(&snap, &sc.geometry, &params).unwrap();
        assert_eq!(a.subarrays, b.subarrays);
        assert_eq!(a.channel, b.channel);

        let mut shuffled = snap.clone();
        shuffled.entries[128..192].reverse();
        let c = subarray_wise_estimate(&shuffled, &sc.geometry, &params).unwrap();
        for n in [0, 1, 3] {
            assert_eq!(a.subarrays[n], c.subarrays[n]);
        }
    }
}
