//! Spatial grids and the radiation-power objective shared by both
//! estimators.
//!
//! Grid maps are evaluated row by row. When the y-step is a rational
//! multiple `p/q` of the element spacing, the steering phases of one x-row
//! are shifted copies of a single phase table: moving `p` element spacings
//! along y is the same as moving `p` elements along the array. Each row then
//! costs one table of `sqrt`/`sincos` evaluations plus a dot product per
//! sample, instead of a `sincos` per (sample, element) pair.

use std::f64::consts::TAU;
use std::ops::Range;

use num_complex::Complex64;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::scene::{ArrayGeometry, Point, RegionBounds, SubarraySet};
use crate::wavefield::{distance_to, masked_response, norm_sqr};

const GRID_EPS: f64 = 1e-9;
const MAX_PHASE_DENOMINATOR: usize = 64;

/// Rectangular lattice of candidate positions, enumerated x-major.
#[derive(Debug, Clone, PartialEq)]
pub struct SpatialGrid {
    xs: Vec<f64>,
    ys: Vec<f64>,
    step_x: f64,
    step_y: f64,
}

impl SpatialGrid {
    pub fn xs(&self) -> &[f64] {
        &self.xs
    }

    pub fn ys(&self) -> &[f64] {
        &self.ys
    }

    pub fn steps(&self) -> (f64, f64) {
        (self.step_x, self.step_y)
    }

    pub fn len(&self) -> usize {
        self.xs.len() * self.ys.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Point at flat index `i` (x-major: `i = ix * ys.len() + iy`).
    pub fn point(&self, i: usize) -> Point {
        let ny = self.ys.len();
        Point::new(self.xs[i / ny], self.ys[i % ny])
    }

    pub fn points(&self) -> impl Iterator<Item = Point> + '_ {
        self.xs
            .iter()
            .flat_map(move |&x| self.ys.iter().map(move |&y| Point::new(x, y)))
    }
}

/// Fine grid centered on a coarse estimate.
#[derive(Debug, Clone, PartialEq)]
pub struct LocalGrid {
    pub center: Point,
    pub half_x: f64,
    pub half_y: f64,
    grid: SpatialGrid,
}

impl LocalGrid {
    pub fn grid(&self) -> &SpatialGrid {
        &self.grid
    }
}

fn check_step(name: &str, step: f64) -> Result<()> {
    if !(step.is_finite() && step > 0.0) {
        return Err(Error::config(name, format!("step {step} must be positive")));
    }
    Ok(())
}

fn axis(lo: f64, hi: f64, step: f64) -> Vec<f64> {
    let count = ((hi - lo) / step + GRID_EPS).floor() as usize + 1;
    (0..count).map(|i| lo + i as f64 * step).collect()
}

/// Coarse lattice from the lower bounds in steps of `(dx, dy)`, keeping
/// samples up to and including the upper bounds.
pub fn build_coarse_grid(bounds: &RegionBounds, dx: f64, dy: f64) -> Result<SpatialGrid> {
    check_step("coarse_step_x", dx)?;
    check_step("coarse_step_y", dy)?;
    if bounds.x_max < bounds.x_min || bounds.y_max < bounds.y_min {
        return Err(Error::config("bounds", "empty grid"));
    }
    Ok(SpatialGrid {
        xs: axis(bounds.x_min, bounds.x_max, dx),
        ys: axis(bounds.y_min, bounds.y_max, dy),
        step_x: dx,
        step_y: dy,
    })
}

fn local_axis(center: f64, half: f64, step: f64, lo: f64, hi: f64, positive: bool) -> Vec<f64> {
    let k = (half / step + GRID_EPS).floor() as i64;
    let tol = GRID_EPS * center.abs().max(1.0);
    (-k..=k)
        .map(|i| center + i as f64 * step)
        .filter(|&v| v >= lo - tol && v <= hi + tol && (!positive || v > 0.0))
        .collect()
}

/// Fine lattice `center ± k * step` out to the half extents, clipped to the
/// bounds and to `x > 0`.
pub fn build_local_grid(
    center: Point,
    half_x: f64,
    half_y: f64,
    dx: f64,
    dy: f64,
    bounds: &RegionBounds,
) -> Result<LocalGrid> {
    check_step("fine_step_x", dx)?;
    check_step("fine_step_y", dy)?;
    if !(half_x >= 0.0 && half_y >= 0.0) {
        return Err(Error::config("local_half_extent", "must be non-negative"));
    }
    let xs = local_axis(center.x, half_x, dx, bounds.x_min, bounds.x_max, true);
    let ys = local_axis(center.y, half_y, dy, bounds.y_min, bounds.y_max, false);
    if xs.is_empty() || ys.is_empty() {
        return Err(Error::domain(format!(
            "local grid around ({}, {}) is empty",
            center.x, center.y
        )));
    }
    Ok(LocalGrid {
        center,
        half_x,
        half_y,
        grid: SpatialGrid {
            xs,
            ys,
            step_x: dx,
            step_y: dy,
        },
    })
}

fn check_len(geometry: &ArrayGeometry, z: &[Complex64]) -> Result<()> {
    if z.len() != geometry.elements() {
        return Err(Error::domain(format!(
            "signal length {} != element count {}",
            z.len(),
            geometry.elements()
        )));
    }
    Ok(())
}

/// Correlation `sum_{m in n} conj(z_m) b_m(x, y)` for each subarray `n` in
/// `set`, in ascending subarray order.
pub fn subarray_correlations(
    geometry: &ArrayGeometry,
    set: &SubarraySet,
    z: &[Complex64],
    point: Point,
) -> Result<Vec<(usize, Complex64)>> {
    check_len(geometry, z)?;
    set.check(geometry.subarrays())?;
    Ok(set
        .iter()
        .map(|n| {
            let range = geometry.element_range(n).expect("checked");
            let c = range
                .map(|i| {
                    let d = distance_to(point.x, point.y, geometry.element_y(i));
                    z[i].conj() * Complex64::cis(TAU * d)
                })
                .sum();
            (n, c)
        })
        .collect())
}

/// `| (z ⊙ p(Phi))^H b(x, y) |^2`.
pub fn radiation_power(
    geometry: &ArrayGeometry,
    set: &SubarraySet,
    z: &[Complex64],
    point: Point,
) -> Result<f64> {
    let total: Complex64 = subarray_correlations(geometry, set, z, point)?
        .into_iter()
        .map(|(_, c)| c)
        .sum();
    Ok(total.norm_sqr())
}

/// Least-squares coefficient of the atom `a(x, y) ⊙ p(Phi)` fitted to `z`.
pub fn amplitude_projection(
    geometry: &ArrayGeometry,
    set: &SubarraySet,
    z: &[Complex64],
    point: Point,
) -> Result<Complex64> {
    check_len(geometry, z)?;
    let atom = masked_response(geometry, point, set)?;
    let energy = norm_sqr(&atom);
    if !(energy > 0.0) {
        return Err(Error::domain("atom has zero norm"));
    }
    let inner: Complex64 = atom.iter().zip(z).map(|(a, z)| a.conj() * z).sum();
    Ok(inner / energy)
}

/// Conjugated signal restricted to the active subarrays.
struct ActiveSignal {
    blocks: Vec<Range<usize>>,
    conj: Vec<Complex64>,
    lo: usize,
    hi: usize,
}

impl ActiveSignal {
    fn new(geometry: &ArrayGeometry, set: &SubarraySet, z: &[Complex64]) -> Self {
        let mut blocks: Vec<Range<usize>> = Vec::new();
        for n in set.iter() {
            let r = geometry.element_range(n).expect("checked");
            match blocks.last_mut() {
                Some(last) if last.end == r.start => last.end = r.end,
                _ => blocks.push(r),
            }
        }
        let lo = blocks.first().map_or(0, |b| b.start);
        let hi = blocks.last().map_or(0, |b| b.end);
        let conj = z.iter().map(|c| c.conj()).collect();
        ActiveSignal {
            blocks,
            conj,
            lo,
            hi,
        }
    }

    fn direct(&self, geometry: &ArrayGeometry, x: f64, y: f64) -> f64 {
        let mut acc = Complex64::new(0.0, 0.0);
        for b in &self.blocks {
            for i in b.clone() {
                let d = distance_to(x, y, geometry.element_y(i));
                acc += self.conj[i] * Complex64::cis(TAU * d);
            }
        }
        acc.norm_sqr()
    }
}

/// Finds `p, q` with `step / spacing = p / q`, `q` small.
fn phase_shift_ratio(step: f64, spacing: f64) -> Option<(usize, usize)> {
    let ratio = step / spacing;
    (1..=MAX_PHASE_DENOMINATOR).find_map(|q| {
        let pq = ratio * q as f64;
        let p = pq.round();
        (p >= 1.0 && (pq - p).abs() < GRID_EPS * p).then_some((p as usize, q))
    })
}

fn row_direct(geometry: &ArrayGeometry, active: &ActiveSignal, x: f64, ys: &[f64]) -> Vec<f64> {
    ys.iter().map(|&y| active.direct(geometry, x, y)).collect()
}

fn row_shifted(
    geometry: &ArrayGeometry,
    active: &ActiveSignal,
    x: f64,
    ys: &[f64],
    p: usize,
    q: usize,
) -> Vec<f64> {
    let d = geometry.spacing();
    let y_first = geometry.element_y(0);
    let mut out = vec![0.0; ys.len()];
    let mut table = Vec::new();
    for r in 0..q.min(ys.len()) {
        let count = (ys.len() - r).div_ceil(q);
        // Steering phase for element i at sample t of this class depends only
        // on e = i - t p, through y_t - y_i = base - e d.
        let base = ys[r] - y_first;
        let e_min = active.lo as i64 - ((count - 1) * p) as i64;
        let e_max = active.hi as i64 - 1;
        table.clear();
        table.extend((e_min..=e_max).map(|e| {
            let dy = base - e as f64 * d;
            Complex64::cis(TAU * (x * x + dy * dy).sqrt())
        }));
        for t in 0..count {
            let shift = (t * p) as i64 + e_min;
            let mut acc = Complex64::new(0.0, 0.0);
            for b in &active.blocks {
                let start = (b.start as i64 - shift) as usize;
                let phases = &table[start..start + b.len()];
                for (zc, bp) in active.conj[b.clone()].iter().zip(phases) {
                    acc += zc * bp;
                }
            }
            out[r + t * q] = acc.norm_sqr();
        }
    }
    out
}

/// Radiation power at every grid point, x-major.
pub fn radiation_map(
    geometry: &ArrayGeometry,
    set: &SubarraySet,
    z: &[Complex64],
    grid: &SpatialGrid,
) -> Result<Vec<f64>> {
    check_len(geometry, z)?;
    set.check(geometry.subarrays())?;
    if set.is_empty() {
        return Ok(vec![0.0; grid.len()]);
    }
    let active = ActiveSignal::new(geometry, set, z);
    let ratio = if grid.ys.len() > 1 {
        phase_shift_ratio(grid.step_y, geometry.spacing())
    } else {
        Some((1, 1))
    };
    let rows: Vec<Vec<f64>> = grid
        .xs
        .par_iter()
        .map(|&x| match ratio {
            Some((p, q)) => row_shifted(geometry, &active, x, &grid.ys, p, q),
            None => row_direct(geometry, &active, x, &grid.ys),
        })
        .collect();
    Ok(rows.concat())
}

/// Grid point with the largest radiation power. Ties go to the smallest x,
/// then the smallest y.
pub fn grid_argmax(
    geometry: &ArrayGeometry,
    set: &SubarraySet,
    z: &[Complex64],
    grid: &SpatialGrid,
) -> Result<(Point, f64)> {
    if grid.is_empty() {
        return Err(Error::domain("empty grid"));
    }
    let map = radiation_map(geometry, set, z, grid)?;
    let (best, value) = map
        .iter()
        .enumerate()
        .fold((0, map[0]), |(bi, bv), (i, &v)| if v > bv { (i, v) } else { (bi, bv) });
    Ok((grid.point(best), value))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::wavefield::{array_response, steering_phase};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn geom(m: usize, n: usize) -> ArrayGeometry {
        ArrayGeometry::new(m, n, 0.5).unwrap()
    }

    fn bounds() -> RegionBounds {
        RegionBounds::new(20.0, 200.0, -600.0, 600.0).unwrap()
    }

    fn random_signal(m: usize, seed: u64) -> Vec<Complex64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..m)
            .map(|_| Complex64::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)))
            .collect()
    }

    #[test]
    fn coarse_grid_sizes() {
        let g = build_coarse_grid(&bounds(), 4.0, 4.0).unwrap();
        assert_eq!(g.xs().len(), 46);
        assert_eq!(g.ys().len(), 301);
        assert_eq!(*g.xs().last().unwrap(), 200.0);
        assert_eq!(*g.ys().last().unwrap(), 600.0);
        let flat = RegionBounds::new(50.0, 50.0, 3.0, 3.0).unwrap();
        assert_eq!(build_coarse_grid(&flat, 4.0, 4.0).unwrap().len(), 1);
        assert!(build_coarse_grid(&bounds(), 0.0, 4.0).is_err());
        let g = build_coarse_grid(&bounds(), 7.0, 7.0).unwrap();
        assert_eq!(*g.xs().last().unwrap(), 195.0);
    }

    #[test]
    fn local_grid_shapes() {
        let lg = build_local_grid(Point::new(100.0, 0.0), 4.0, 4.0, 0.1, 0.1, &bounds()).unwrap();
        assert_eq!(lg.grid().xs().len(), 81);
        assert_eq!(lg.grid().ys().len(), 81);
        assert!(lg.grid().xs().contains(&100.0));

        let lg = build_local_grid(Point::new(100.0, 0.0), 4.0, 4.0, 4.0, 4.0, &bounds()).unwrap();
        assert_eq!(lg.grid().xs(), &[96.0, 100.0, 104.0]);
        assert_eq!(lg.grid().ys(), &[-4.0, 0.0, 4.0]);

        let lg = build_local_grid(Point::new(20.0, 600.0), 4.0, 4.0, 1.0, 1.0, &bounds()).unwrap();
        assert_eq!(lg.grid().xs(), &[20.0, 21.0, 22.0, 23.0, 24.0]);
        assert_eq!(lg.grid().ys(), &[596.0, 597.0, 598.0, 599.0, 600.0]);

        let loose = RegionBounds::pattern_window(0.0, 10.0, -5.0, 5.0).unwrap();
        let lg = build_local_grid(Point::new(1.0, 0.0), 2.0, 1.0, 0.5, 0.5, &loose).unwrap();
        assert!(lg.grid().xs().iter().all(|&x| x > 0.0));
        assert_eq!(lg.grid().xs()[0], 0.5);
    }

    #[test]
    fn aligned_signal_power() {
        let g = geom(64, 4);
        let p = Point::new(30.0, 5.0);
        let set: SubarraySet = [1, 3].into_iter().collect();
        let mut z = steering_phase(&g, p);
        crate::wavefield::apply_mask(&g, &set, &mut z).unwrap();
        let rho = radiation_power(&g, &set, &z, p).unwrap();
        assert!((rho - 32.0f64.powi(2)).abs() < 1e-9);
        assert_eq!(radiation_power(&g, &SubarraySet::new(), &z, p).unwrap(), 0.0);

        let a = array_response(&g, p).unwrap();
        let full = SubarraySet::full(4);
        let expect: f64 = a.iter().map(|c| c.norm()).sum::<f64>().powi(2);
        let rho = radiation_power(&g, &full, &a, p).unwrap();
        assert!((rho - expect).abs() < 1e-9 * expect);
    }

    #[test]
    fn masking_commutes_and_phase_invariance() {
        let g = geom(64, 8);
        let z = random_signal(64, 1);
        let set: SubarraySet = [2, 5, 6].into_iter().collect();
        let p = Point::new(40.0, -7.0);
        let mut zm = z.clone();
        crate::wavefield::apply_mask(&g, &set, &mut zm).unwrap();
        let a = radiation_power(&g, &set, &z, p).unwrap();
        let b = radiation_power(&g, &SubarraySet::full(8), &zm, p).unwrap();
        assert!((a - b).abs() < 1e-10 * a.max(1.0));
        let rot: Vec<Complex64> = z.iter().map(|c| c * Complex64::cis(1.234)).collect();
        let c = radiation_power(&g, &set, &rot, p).unwrap();
        assert!((a - c).abs() < 1e-10 * a.max(1.0));
    }

    #[test]
    fn projection_recovers_scaled_atom() {
        let g = geom(64, 4);
        let p = Point::new(25.0, 8.0);
        let set: SubarraySet = [2, 3].into_iter().collect();
        let atom = masked_response(&g, p, &set).unwrap();
        let c = Complex64::new(-0.4, 1.7);
        let z: Vec<Complex64> = atom.iter().map(|a| a * c).collect();
        let est = amplitude_projection(&g, &set, &z, p).unwrap();
        assert!((est - c).norm() < 1e-13);

        // z supported off the atom's subarrays is orthogonal to it
        let mut other = random_signal(64, 3);
        crate::wavefield::apply_mask(&g, &[1, 4].into_iter().collect(), &mut other).unwrap();
        assert_eq!(amplitude_projection(&g, &set, &other, p).unwrap().norm(), 0.0);

        assert!(amplitude_projection(&g, &SubarraySet::new(), &z, p).is_err());
        assert!(amplitude_projection(&g, &set, &z, Point::new(0.0, 1.0)).is_err());
    }

    #[test]
    fn shifted_rows_match_direct_evaluation() {
        let g = geom(128, 8);
        let z = random_signal(128, 9);
        let region = RegionBounds::new(5.0, 30.0, -40.0, 40.0).unwrap();
        let sets: [SubarraySet; 3] = [
            SubarraySet::full(8),
            [2, 3, 7].into_iter().collect(),
            SubarraySet::single(8),
        ];
        let grids = [
            build_coarse_grid(&region, 4.0, 4.0).unwrap(),
            build_local_grid(Point::new(17.0, 3.0), 1.0, 1.0, 0.1, 0.1, &region)
                .unwrap()
                .grid()
                .clone(),
            build_coarse_grid(&region, 2.5, 1.0).unwrap(),
            // irrational-ish step falls back to direct evaluation
            build_coarse_grid(&region, 3.0, std::f64::consts::PI).unwrap(),
        ];
        for set in &sets {
            for grid in &grids {
                let map = radiation_map(&g, set, &z, grid).unwrap();
                for (v, p) in map.iter().zip(grid.points()) {
                    let direct = radiation_power(&g, set, &z, p).unwrap();
                    assert!(
                        (v - direct).abs() <= 1e-9 * direct.max(1.0),
                        "{v} vs {direct} at {p:?}"
                    );
                }
            }
        }
    }

    #[test]
    fn argmax_at_on_grid_truth() {
        let g = geom(256, 4);
        let grid = build_coarse_grid(&bounds(), 4.0, 4.0).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..100 {
            let truth = grid.point(rng.gen_range(0..grid.len()));
            let n = rng.gen_range(1..=4);
            let set: SubarraySet = (1..=n).collect();
            let z = masked_response(&g, truth, &set).unwrap();
            let (best, _) = grid_argmax(&g, &set, &z, &grid).unwrap();
            assert_eq!(best, truth);
        }
    }

    #[test]
    fn argmax_tie_break_on_zero_signal() {
        let g = geom(64, 4);
        let grid = build_coarse_grid(&bounds(), 4.0, 4.0).unwrap();
        let z = vec![Complex64::new(0.0, 0.0); 64];
        let (p, v) = grid_argmax(&g, &SubarraySet::full(4), &z, &grid).unwrap();
        assert_eq!(v, 0.0);
        assert_eq!(p, Point::new(20.0, -600.0));
    }

    #[test]
    fn ratio_detection() {
        assert_eq!(phase_shift_ratio(4.0, 0.5), Some((8, 1)));
        assert_eq!(phase_shift_ratio(0.1, 0.5), Some((1, 5)));
        assert_eq!(phase_shift_ratio(1.0, 0.5), Some((2, 1)));
        assert_eq!(phase_shift_ratio(std::f64::consts::PI, 0.5), None);
    }
}
