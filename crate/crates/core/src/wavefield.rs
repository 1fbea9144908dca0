//! Spherical-wavefront array responses, channel synthesis and pilot
//! reception.

use std::f64::consts::TAU;
use std::io::{Read, Write};

use num_complex::Complex64;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scene::{ArrayGeometry, Point, Scene, SubarraySet};

/// Complex channel `h`, one coefficient per array element.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ChannelVector(pub Vec<Complex64>);

impl ChannelVector {
    pub fn zeros(len: usize) -> Self {
        ChannelVector(vec![Complex64::new(0.0, 0.0); len])
    }

    pub fn as_slice(&self) -> &[Complex64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn norm_sqr(&self) -> f64 {
        norm_sqr(&self.0)
    }
}

/// Received pilot `r = sqrt(P) h + w` with unit-variance complex noise.
#[derive(Debug, Clone, PartialEq)]
pub struct PilotSnapshot {
    pub entries: Vec<Complex64>,
    /// Transmit power `P` (linear).
    pub power: f64,
}

pub(crate) fn norm_sqr(v: &[Complex64]) -> f64 {
    v.iter().map(|c| c.norm_sqr()).sum()
}

#[inline]
pub(crate) fn distance_to(x: f64, y: f64, element_y: f64) -> f64 {
    (x * x + (y - element_y) * (y - element_y)).sqrt()
}

/// Distance `D_m` from element `m` (1-based) to `point`.
pub fn element_distance(geometry: &ArrayGeometry, m: usize, point: Point) -> Result<f64> {
    let e = geometry.element_coordinate(m)?;
    Ok(distance_to(point.x, point.y, e.y))
}

/// Array response `a(x, y)`: entry `m` is `(x / D_m) exp(j 2 pi D_m)`.
pub fn array_response(geometry: &ArrayGeometry, point: Point) -> Result<Vec<Complex64>> {
    if !(point.x > 0.0) || !point.y.is_finite() || !point.x.is_finite() {
        return Err(Error::domain(format!(
            "array response needs finite x > 0, got ({}, {})",
            point.x, point.y
        )));
    }
    Ok((0..geometry.elements())
        .map(|i| {
            let dm = distance_to(point.x, point.y, geometry.element_y(i));
            Complex64::cis(TAU * dm) * (point.x / dm)
        })
        .collect())
}

/// Unit-modulus steering phases `b(x, y)`: entry `m` is `exp(j 2 pi D_m)`.
pub fn steering_phase(geometry: &ArrayGeometry, point: Point) -> Vec<Complex64> {
    (0..geometry.elements())
        .map(|i| Complex64::cis(TAU * distance_to(point.x, point.y, geometry.element_y(i))))
        .collect()
}

/// 0/1 mask `p(Phi)` over elements.
pub fn selection_vector(geometry: &ArrayGeometry, set: &SubarraySet) -> Result<Vec<f64>> {
    set.check(geometry.subarrays())?;
    let k = geometry.subarray_len();
    Ok((0..geometry.elements())
        .map(|i| if set.contains(i / k + 1) { 1.0 } else { 0.0 })
        .collect())
}

/// Atom `a(x, y) ⊙ p(Phi)`.
pub fn masked_response(
    geometry: &ArrayGeometry,
    point: Point,
    set: &SubarraySet,
) -> Result<Vec<Complex64>> {
    let mut a = array_response(geometry, point)?;
    apply_mask(geometry, set, &mut a)?;
    Ok(a)
}

/// Zeroes every subarray segment of `v` not in `set`.
pub fn apply_mask(geometry: &ArrayGeometry, set: &SubarraySet, v: &mut [Complex64]) -> Result<()> {
    set.check(geometry.subarrays())?;
    let k = geometry.subarray_len();
    for (n, chunk) in v.chunks_mut(k).enumerate() {
        if !set.contains(n + 1) {
            chunk.fill(Complex64::new(0.0, 0.0));
        }
    }
    Ok(())
}

/// `h = sum_s g_s a(x_s, y_s) ⊙ p(Phi_s)`.
pub fn synthesize_channel(scene: &Scene) -> Result<ChannelVector> {
    let g = &scene.geometry;
    let mut h = ChannelVector::zeros(g.elements());
    for s in &scene.scatterers {
        let atom = masked_response(g, s.position, &s.visible)?;
        for (hm, am) in h.0.iter_mut().zip(&atom) {
            *hm += s.gain * am;
        }
    }
    Ok(h)
}

/// Draws `r = sqrt(P) h + w`, `w ~ CN(0, I)`, from a stream seeded by `seed`.
pub fn receive_pilot(channel: &ChannelVector, power: f64, seed: u64) -> Result<PilotSnapshot> {
    if !(power > 0.0 && power.is_finite()) {
        return Err(Error::domain(format!("transmit power {power} must be positive")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let scale = std::f64::consts::FRAC_1_SQRT_2;
    let amp = power.sqrt();
    let entries = channel
        .0
        .iter()
        .map(|h| {
            let re: f64 = StandardNormal.sample(&mut rng);
            let im: f64 = StandardNormal.sample(&mut rng);
            h * amp + Complex64::new(re * scale, im * scale)
        })
        .collect();
    Ok(PilotSnapshot { entries, power })
}

/// Segment `n` (1-based) of a length-`M` vector.
pub fn subvector<'a, T>(geometry: &ArrayGeometry, v: &'a [T], n: usize) -> Result<&'a [T]> {
    if v.len() != geometry.elements() {
        return Err(Error::domain(format!(
            "vector length {} != element count {}",
            v.len(),
            geometry.elements()
        )));
    }
    Ok(&v[geometry.element_range(n)?])
}

impl PilotSnapshot {
    pub fn new(entries: Vec<Complex64>, power: f64) -> Result<Self> {
        if !(power > 0.0 && power.is_finite()) {
            return Err(Error::domain(format!("transmit power {power} must be positive")));
        }
        if entries.iter().any(|c| !(c.re.is_finite() && c.im.is_finite())) {
            return Err(Error::domain("snapshot contains non-finite entries"));
        }
        Ok(PilotSnapshot { entries, power })
    }

    /// Interleaved little-endian `f64` pairs `(re, im)`.
    pub fn write_binary<W: Write>(&self, mut w: W) -> Result<()> {
        for c in &self.entries {
            w.write_all(&c.re.to_le_bytes())?;
            w.write_all(&c.im.to_le_bytes())?;
        }
        Ok(())
    }

    pub fn read_binary<R: Read>(mut r: R, power: f64) -> Result<Self> {
        let mut bytes = Vec::new();
        r.read_to_end(&mut bytes)?;
        if bytes.len() % 16 != 0 {
            return Err(Error::domain(format!(
                "binary snapshot length {} is not a multiple of 16 bytes",
                bytes.len()
            )));
        }
        let entries = bytes
            .chunks_exact(16)
            .map(|c| {
                let re = f64::from_le_bytes(c[..8].try_into().unwrap());
                let im = f64::from_le_bytes(c[8..].try_into().unwrap());
                Complex64::new(re, im)
            })
            .collect();
        PilotSnapshot::new(entries, power)
    }

    /// Flat JSON array `[re0, im0, re1, im1, ...]`.
    pub fn to_json(&self) -> Result<String> {
        let flat: Vec<f64> = self.entries.iter().flat_map(|c| [c.re, c.im]).collect();
        Ok(serde_json::to_string(&flat)?)
    }

    pub fn from_json(text: &str, power: f64) -> Result<Self> {
        let flat: Vec<f64> = serde_json::from_str(text)?;
        if !flat.len().is_multiple_of(2) {
            return Err(Error::domain("odd number of values in interleaved snapshot"));
        }
        let entries = flat
            .chunks_exact(2)
            .map(|p| Complex64::new(p[0], p[1]))
            .collect();
        PilotSnapshot::new(entries, power)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scene::{RegionBounds, Scatterer};

    fn geom(m: usize, n: usize, d: f64) -> ArrayGeometry {
        ArrayGeometry::new(m, n, d).unwrap()
    }

    fn close(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol * b.abs().max(1.0)
    }

    #[test]
    fn distances() {
        let g = geom(2, 1, 0.5);
        let p = Point::new(3.0, 0.0);
        let d1 = element_distance(&g, 1, p).unwrap();
        let d2 = element_distance(&g, 2, p).unwrap();
        assert_eq!(d1, d2);
        assert!(close(d1, 9.0625f64.sqrt(), 1e-15));
        assert!(close(d1, 3.010398, 1e-6));

        let g = geom(1024, 8, 0.5);
        let e = g.element_coordinate(37).unwrap();
        assert_eq!(element_distance(&g, 37, Point::new(42.0, e.y)).unwrap(), 42.0);
        let d = element_distance(&g, 1, Point::new(120.0, 120.0)).unwrap();
        assert!(close(d, (120.0f64.powi(2) + 375.75f64.powi(2)).sqrt(), 1e-15));
        assert!(element_distance(&g, 1025, Point::new(1.0, 0.0)).is_err());
    }

    #[test]
    fn response_amplitudes_and_phases() {
        let g = geom(64, 4, 0.5);
        let p = Point::new(17.0, 3.0);
        let a = array_response(&g, p).unwrap();
        let b = steering_phase(&g, p);
        for m in 1..=64 {
            let dm = element_distance(&g, m, p).unwrap();
            let am = a[m - 1];
            assert!(close(am.norm(), 17.0 / dm, 1e-14));
            assert!(am.norm() <= 1.0);
            assert!(close(b[m - 1].norm(), 1.0, 1e-14));
            let ratio = am / b[m - 1];
            assert!(close(ratio.re, 17.0 / dm, 1e-12) && ratio.im.abs() < 1e-12);
        }
        let sum: Complex64 = b.iter().zip(&a).map(|(b, a)| b.conj() * a).sum();
        let expect: f64 = (1..=64)
            .map(|m| 17.0 / element_distance(&g, m, p).unwrap())
            .sum();
        assert!(close(sum.re, expect, 1e-12) && sum.im.abs() < 1e-10);

        // broadside element has unit amplitude
        let e = g.element_coordinate(10).unwrap();
        let a = array_response(&g, Point::new(5.0, e.y)).unwrap();
        let expected = Complex64::cis(TAU * 5.0);
        assert!((a[9] - expected).norm() < 1e-12);

        assert!(array_response(&g, Point::new(0.0, 1.0)).is_err());
        assert!(array_response(&g, Point::new(-1.0, 1.0)).is_err());
    }

    #[test]
    fn two_element_response() {
        let g = geom(2, 1, 0.5);
        let a = array_response(&g, Point::new(3.0, 0.0)).unwrap();
        let d = 9.0625f64.sqrt();
        let expect = Complex64::cis(TAU * d) * (3.0 / d);
        assert!((a[0] - expect).norm() < 1e-14);
        assert_eq!(a[0], a[1]);
    }

    #[test]
    fn selection_masks() {
        let g = geom(8, 4, 0.5);
        let p = selection_vector(&g, &[1, 3].into_iter().collect()).unwrap();
        assert_eq!(p, vec![1.0, 1.0, 0.0, 0.0, 1.0, 1.0, 0.0, 0.0]);
        assert!(selection_vector(&g, &SubarraySet::new())
            .unwrap()
            .iter()
            .all(|&v| v == 0.0));
        assert!(selection_vector(&g, &SubarraySet::full(4))
            .unwrap()
            .iter()
            .all(|&v| v == 1.0));
        assert!(selection_vector(&g, &[5].into_iter().collect()).is_err());
        assert!(selection_vector(&g, &[0].into_iter().collect()).is_err());
    }

    fn one_scatterer_scene(g: ArrayGeometry, vis: SubarraySet, gain: Complex64) -> Scene {
        Scene::new(
            g,
            RegionBounds::new(1.0, 200.0, -600.0, 600.0).unwrap(),
            vec![Scatterer {
                position: Point::new(50.0, 10.0),
                gain,
                visible: vis,
            }],
            0,
        )
        .unwrap()
    }

    #[test]
    fn channel_masks_and_superposition() {
        let g = geom(64, 4, 0.5);
        let scene = one_scatterer_scene(g, SubarraySet::single(1), Complex64::new(0.3, -0.4));
        let h = synthesize_channel(&scene).unwrap();
        assert!(h.0[16..].iter().all(|c| *c == Complex64::new(0.0, 0.0)));
        assert!(h.0[..16].iter().all(|c| c.norm() > 0.0));

        let scene = one_scatterer_scene(g, SubarraySet::full(4), Complex64::new(1.0, 0.0));
        let h = synthesize_channel(&scene).unwrap();
        assert_eq!(h.0, array_response(&g, Point::new(50.0, 10.0)).unwrap());

        // disjoint supports add energies
        let bounds = RegionBounds::new(1.0, 200.0, -600.0, 600.0).unwrap();
        let s1 = Scatterer {
            position: Point::new(30.0, -20.0),
            gain: Complex64::new(0.6, 0.2),
            visible: [1, 2].into_iter().collect(),
        };
        let s2 = Scatterer {
            position: Point::new(80.0, 40.0),
            gain: Complex64::new(-0.1, 0.9),
            visible: [3].into_iter().collect(),
        };
        let e1 = s1.gain.norm_sqr()
            * norm_sqr(&masked_response(&g, s1.position, &s1.visible).unwrap());
        let e2 = s2.gain.norm_sqr()
            * norm_sqr(&masked_response(&g, s2.position, &s2.visible).unwrap());
        let scene = Scene::new(g, bounds, vec![s1, s2], 0).unwrap();
        let h = synthesize_channel(&scene).unwrap();
        assert!(close(h.norm_sqr(), e1 + e2, 1e-12));
    }

    #[test]
    fn pilot_noise_and_determinism() {
        let g = geom(64, 4, 0.5);
        let scene = one_scatterer_scene(g, SubarraySet::full(4), Complex64::new(0.7, 0.1));
        let h = synthesize_channel(&scene).unwrap();

        let r = receive_pilot(&h, 1e12, 5).unwrap();
        for (rm, hm) in r.entries.iter().zip(&h.0) {
            assert!((rm / 1e6 - hm).norm() / hm.norm() < 1e-5);
        }
        assert_eq!(r, receive_pilot(&h, 1e12, 5).unwrap());
        assert!(receive_pilot(&h, 0.0, 5).is_err());
        assert!(receive_pilot(&h, -1.0, 5).is_err());
    }

    #[test]
    fn noise_energy_matches_chi_square() {
        let m = 64;
        let zero = ChannelVector::zeros(m);
        let draws: Vec<f64> = (0..10_000u64)
            .map(|s| norm_sqr(&receive_pilot(&zero, 1.0, s).unwrap().entries))
            .collect();
        let n = draws.len() as f64;
        let mean = draws.iter().sum::<f64>() / n;
        let var = draws.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
        let se = (var / n).sqrt();
        assert!((mean - m as f64).abs() < 3.0 * se, "mean {mean} se {se}");
    }

    #[test]
    fn subvectors() {
        let g = geom(8, 4, 0.5);
        let v: Vec<u32> = (1..=8).collect();
        assert_eq!(subvector(&g, &v, 1).unwrap(), &[1, 2]);
        let joined: Vec<u32> = (1..=4)
            .flat_map(|n| subvector(&g, &v, n).unwrap().to_vec())
            .collect();
        assert_eq!(joined, v);
        assert!(subvector(&g, &v, 5).is_err());
        assert!(subvector(&g, &v, 0).is_err());

        let p = selection_vector(&g, &SubarraySet::single(3)).unwrap();
        assert!(subvector(&g, &p, 3).unwrap().iter().all(|&x| x == 1.0));
        let rest: SubarraySet = [1, 2, 4].into_iter().collect();
        let q = selection_vector(&g, &rest).unwrap();
        assert!(subvector(&g, &q, 3).unwrap().iter().all(|&x| x == 0.0));
    }

    #[test]
    fn snapshot_formats() {
        let snap = PilotSnapshot::new(
            vec![Complex64::new(1.5, -2.0), Complex64::new(0.1, 1e-300)],
            3.0,
        )
        .unwrap();
        let mut buf = Vec::new();
        snap.write_binary(&mut buf).unwrap();
        assert_eq!(buf.len(), 32);
        assert_eq!(&buf[..8], &1.5f64.to_le_bytes());
        assert_eq!(PilotSnapshot::read_binary(&buf[..], 3.0).unwrap(), snap);
        assert!(PilotSnapshot::read_binary(&buf[..31], 3.0).is_err());

        let text = snap.to_json().unwrap();
        assert!(text.starts_with("[1.5,-2.0,0.1,"));
        assert_eq!(PilotSnapshot::from_json(&text, 3.0).unwrap(), snap);
        assert!(PilotSnapshot::from_json("[1.0]", 3.0).is_err());
    }
}
