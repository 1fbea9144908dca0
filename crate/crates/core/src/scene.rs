//! Array geometry and randomized ground-truth scenes.
//!
//! All lengths are in carrier wavelengths. Element and subarray indices are
//! 1-based throughout the public API, matching the usual channel-model
//! notation; slices are indexed 0-based internally.

use std::collections::BTreeSet;
use std::f64::consts::TAU;
use std::ops::Range;

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A point in the array plane, `(x, y)` in wavelengths.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Point {
    pub x: f64,
    pub y: f64,
}

impl Point {
    pub const fn new(x: f64, y: f64) -> Self {
        Point { x, y }
    }

    pub fn distance(&self, other: &Point) -> f64 {
        (self.x - other.x).hypot(self.y - other.y)
    }
}

/// Uniform linear array along the y-axis, centered on the origin and split
/// into `subarrays` equal contiguous blocks.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawGeometry", into = "RawGeometry")]
pub struct ArrayGeometry {
    elements: usize,
    subarrays: usize,
    spacing: f64,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawGeometry {
    elements: usize,
    subarrays: usize,
    spacing: f64,
}

impl TryFrom<RawGeometry> for ArrayGeometry {
    type Error = Error;

    fn try_from(raw: RawGeometry) -> Result<Self> {
        ArrayGeometry::new(raw.elements, raw.subarrays, raw.spacing)
    }
}

impl From<ArrayGeometry> for RawGeometry {
    fn from(g: ArrayGeometry) -> Self {
        RawGeometry {
            elements: g.elements,
            subarrays: g.subarrays,
            spacing: g.spacing,
        }
    }
}

impl ArrayGeometry {
    pub fn new(elements: usize, subarrays: usize, spacing: f64) -> Result<Self> {
        if subarrays == 0 {
            return Err(Error::config("subarrays", "must be positive"));
        }
        if elements == 0 || !elements.is_multiple_of(subarrays) {
            return Err(Error::config(
                "elements",
                format!("{elements} is not a positive multiple of subarrays ({subarrays})"),
            ));
        }
        if elements / subarrays < 2 {
            return Err(Error::config(
                "subarrays",
                format!("subarray size {} is below 2", elements / subarrays),
            ));
        }
        if !(spacing.is_finite() && spacing > 0.0) {
            return Err(Error::config("spacing", format!("{spacing} is not positive")));
        }
        Ok(ArrayGeometry {
            elements,
            subarrays,
            spacing,
        })
    }

    /// Number of elements `M`.
    pub fn elements(&self) -> usize {
        self.elements
    }

    /// Number of subarrays `N`.
    pub fn subarrays(&self) -> usize {
        self.subarrays
    }

    /// Element spacing `d` in wavelengths.
    pub fn spacing(&self) -> f64 {
        self.spacing
    }

    /// Elements per subarray, `M / N`.
    pub fn subarray_len(&self) -> usize {
        self.elements / self.subarrays
    }

    /// Same aperture split into a different number of subarrays.
    pub fn with_subarrays(&self, subarrays: usize) -> Result<Self> {
        ArrayGeometry::new(self.elements, subarrays, self.spacing)
    }

    fn check_element(&self, m: usize) -> Result<()> {
        if m == 0 || m > self.elements {
            return Err(Error::Index {
                index: m,
                max: self.elements,
            });
        }
        Ok(())
    }

    pub(crate) fn check_subarray(&self, n: usize) -> Result<()> {
        if n == 0 || n > self.subarrays {
            return Err(Error::Index {
                index: n,
                max: self.subarrays,
            });
        }
        Ok(())
    }

    /// y-coordinate of the element at 0-based slot `i`.
    #[inline]
    pub(crate) fn element_y(&self, i: usize) -> f64 {
        (i as f64 - (self.elements as f64 - 1.0) / 2.0) * self.spacing
    }

    /// Coordinate of element `m` (1-based): `(0, (m - 1 - (M - 1)/2) d)`.
    pub fn element_coordinate(&self, m: usize) -> Result<Point> {
        self.check_element(m)?;
        Ok(Point::new(0.0, self.element_y(m - 1)))
    }

    /// Subarray holding element `m`, i.e. `ceil(m N / M)`.
    pub fn subarray_of_element(&self, m: usize) -> Result<usize> {
        self.check_element(m)?;
        Ok((m * self.subarrays).div_ceil(self.elements))
    }

    /// 0-based slice range of subarray `n` (1-based).
    pub fn element_range(&self, n: usize) -> Result<Range<usize>> {
        self.check_subarray(n)?;
        let k = self.subarray_len();
        Ok((n - 1) * k..n * k)
    }
}

/// Rectangle of admissible scatterer positions.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RegionBounds {
    pub x_min: f64,
    pub x_max: f64,
    pub y_min: f64,
    pub y_max: f64,
}

impl RegionBounds {
    /// Bounds used for estimation and scene generation; requires `x_min > 0`.
    pub fn new(x_min: f64, x_max: f64, y_min: f64, y_max: f64) -> Result<Self> {
        let b = RegionBounds {
            x_min,
            x_max,
            y_min,
            y_max,
        };
        b.validate()?;
        Ok(b)
    }

    /// Looser bounds for pattern maps, where `x_min = 0` is allowed.
    pub fn pattern_window(x_min: f64, x_max: f64, y_min: f64, y_max: f64) -> Result<Self> {
        let b = RegionBounds {
            x_min,
            x_max,
            y_min,
            y_max,
        };
        b.validate_ordering(0.0)?;
        Ok(b)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.x_min > 0.0) {
            return Err(Error::config("x_min", "must be strictly positive"));
        }
        self.validate_ordering(self.x_min)
    }

    fn validate_ordering(&self, x_floor: f64) -> Result<()> {
        let all_finite = [self.x_min, self.x_max, self.y_min, self.y_max]
            .iter()
            .all(|v| v.is_finite());
        if !all_finite {
            return Err(Error::config("bounds", "non-finite value"));
        }
        if self.x_min < x_floor {
            return Err(Error::config("x_min", "must not be negative"));
        }
        if self.x_max < self.x_min {
            return Err(Error::config("x_max", "must not be below x_min"));
        }
        if self.y_max < self.y_min {
            return Err(Error::config("y_max", "must not be below y_min"));
        }
        Ok(())
    }

    pub fn contains(&self, p: &Point) -> bool {
        p.x >= self.x_min && p.x <= self.x_max && p.y >= self.y_min && p.y <= self.y_max
    }

    pub fn contains_strictly(&self, p: &Point) -> bool {
        p.x > self.x_min && p.x < self.x_max && p.y > self.y_min && p.y < self.y_max
    }
}

/// Set of 1-based subarray indices, kept sorted.
#[derive(Debug, Clone, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct SubarraySet(BTreeSet<usize>);

impl SubarraySet {
    pub fn new() -> Self {
        SubarraySet(BTreeSet::new())
    }

    /// `{1, ..., n}`.
    pub fn full(n: usize) -> Self {
        (1..=n).collect()
    }

    pub fn single(n: usize) -> Self {
        std::iter::once(n).collect()
    }

    pub fn insert(&mut self, n: usize) -> bool {
        self.0.insert(n)
    }

    pub fn contains(&self, n: usize) -> bool {
        self.0.contains(&n)
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = usize> + '_ {
        self.0.iter().copied()
    }

    pub fn is_subset(&self, other: &SubarraySet) -> bool {
        self.0.is_subset(&other.0)
    }

    /// Checks every index lies in `1..=n`.
    pub fn check(&self, n: usize) -> Result<()> {
        match self.0.iter().find(|&&i| i == 0 || i > n) {
            Some(&bad) => Err(Error::domain(format!(
                "subarray index {bad} outside 1..={n}"
            ))),
            None => Ok(()),
        }
    }
}

impl FromIterator<usize> for SubarraySet {
    fn from_iter<I: IntoIterator<Item = usize>>(iter: I) -> Self {
        SubarraySet(iter.into_iter().collect())
    }
}

pub(crate) mod complex_parts {
    use num_complex::Complex64;
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    #[derive(Serialize, Deserialize)]
    #[serde(deny_unknown_fields)]
    struct Parts {
        re: f64,
        im: f64,
    }

    pub fn serialize<S: Serializer>(c: &Complex64, s: S) -> Result<S::Ok, S::Error> {
        Parts { re: c.re, im: c.im }.serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Complex64, D::Error> {
        let p = Parts::deserialize(d)?;
        Ok(Complex64::new(p.re, p.im))
    }
}

/// One last-hop scatterer: position, complex gain and the subarrays it
/// illuminates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scatterer {
    pub position: Point,
    #[serde(with = "complex_parts")]
    pub gain: Complex64,
    pub visible: SubarraySet,
}

/// Ground truth for one trial.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scene {
    pub geometry: ArrayGeometry,
    pub bounds: RegionBounds,
    pub scatterers: Vec<Scatterer>,
    pub seed: u64,
}

impl Scene {
    /// Builds a scene from explicit scatterers, checking every invariant.
    pub fn new(
        geometry: ArrayGeometry,
        bounds: RegionBounds,
        scatterers: Vec<Scatterer>,
        seed: u64,
    ) -> Result<Self> {
        let scene = Scene {
            geometry,
            bounds,
            scatterers,
            seed,
        };
        scene.validate()?;
        Ok(scene)
    }

    pub fn validate(&self) -> Result<()> {
        self.bounds.validate()?;
        if self.scatterers.is_empty() {
            return Err(Error::config("scatterers", "at least one scatterer required"));
        }
        for (i, s) in self.scatterers.iter().enumerate() {
            if !self.bounds.contains_strictly(&s.position) {
                return Err(Error::config(
                    format!("scatterers[{i}].position"),
                    "outside the open region bounds",
                ));
            }
            if s.visible.is_empty() {
                return Err(Error::config(
                    format!("scatterers[{i}].visible"),
                    "visible set is empty",
                ));
            }
            s.visible.check(self.geometry.subarrays())?;
            if !(s.gain.re.is_finite() && s.gain.im.is_finite()) {
                return Err(Error::config(format!("scatterers[{i}].gain"), "non-finite"));
            }
        }
        Ok(())
    }

    /// Scatterers seen by subarray `n` (1-based scatterer indices).
    pub fn subarray_view(&self, n: usize) -> Vec<usize> {
        self.scatterers
            .iter()
            .enumerate()
            .filter(|(_, s)| s.visible.contains(n))
            .map(|(i, _)| i + 1)
            .collect()
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let scene: Scene = serde_json::from_str(text)?;
        scene.validate()?;
        Ok(scene)
    }
}

/// Parameters for [`generate_scene`].
#[derive(Debug, Clone, PartialEq)]
pub struct SceneConfig {
    pub geometry: ArrayGeometry,
    pub bounds: RegionBounds,
    /// Number of scatterers `S`.
    pub scatterer_count: usize,
    /// Subarrays seen by each scatterer, `N_s`.
    pub visible_count: usize,
    /// Range of `|g|^2`.
    pub gain_power: (f64, f64),
    /// Minimum pairwise distance between scatterers.
    pub min_separation: f64,
    pub max_retries: usize,
}

impl SceneConfig {
    /// Evaluation defaults: two scatterers, half the subarrays visible,
    /// `0.5 < |g|^2 < 1`.
    pub fn with_defaults(geometry: ArrayGeometry, bounds: RegionBounds) -> Self {
        SceneConfig {
            geometry,
            bounds,
            scatterer_count: 2,
            visible_count: (geometry.subarrays() / 2).max(1),
            gain_power: (0.5, 1.0),
            min_separation: 20.0,
            max_retries: 1000,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.bounds.validate()?;
        if self.scatterer_count == 0 {
            return Err(Error::config("scatterer_count", "must be at least 1"));
        }
        if self.visible_count == 0 || self.visible_count > self.geometry.subarrays() {
            return Err(Error::config(
                "visible_count",
                format!(
                    "{} not in 1..={}",
                    self.visible_count,
                    self.geometry.subarrays()
                ),
            ));
        }
        let (lo, hi) = self.gain_power;
        if !(lo > 0.0 && hi >= lo && hi.is_finite()) {
            return Err(Error::config("gain_power", format!("({lo}, {hi}) invalid")));
        }
        if !(self.min_separation >= 0.0) {
            return Err(Error::config("min_separation", "must be non-negative"));
        }
        Ok(())
    }
}

fn open_uniform(rng: &mut ChaCha8Rng, lo: f64, hi: f64) -> f64 {
    if hi <= lo {
        return lo;
    }
    loop {
        let v = rng.gen_range(lo..hi);
        if v > lo {
            return v;
        }
    }
}

/// Draws a random scene. The result is a pure function of `(config, seed)`.
///
/// Positions are uniform over the bounds, rejected and redrawn as a batch
/// while any pair is closer than `min_separation`. Each visible set is a
/// contiguous block of `visible_count` subarrays with a uniform start.
pub fn generate_scene(config: &SceneConfig, seed: u64) -> Result<Scene> {
    config.validate()?;
    let b = &config.bounds;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    let mut positions = Vec::with_capacity(config.scatterer_count);
    let mut attempt = 0;
    loop {
        positions.clear();
        for _ in 0..config.scatterer_count {
            let x = open_uniform(&mut rng, b.x_min, b.x_max);
            let y = open_uniform(&mut rng, b.y_min, b.y_max);
            positions.push(Point::new(x, y));
        }
        let separated = positions.iter().enumerate().all(|(i, p)| {
            positions[i + 1..]
                .iter()
                .all(|q| p.distance(q) >= config.min_separation)
        });
        if separated {
            break;
        }
        attempt += 1;
        if attempt >= config.max_retries {
            return Err(Error::Generation(format!(
                "no placement with separation {} after {} retries",
                config.min_separation, config.max_retries
            )));
        }
    }

    let n = config.geometry.subarrays();
    let span = config.visible_count;
    let scatterers = positions
        .into_iter()
        .map(|position| {
            let (lo, hi) = config.gain_power;
            let power = if hi > lo { rng.gen_range(lo..hi) } else { lo };
            let phase = rng.gen_range(0.0..TAU);
            let gain = Complex64::from_polar(power.sqrt(), phase);
            let start = rng.gen_range(1..=n - span + 1);
            Scatterer {
                position,
                gain,
                visible: (start..start + span).collect(),
            }
        })
        .collect();

    Scene::new(config.geometry, config.bounds, scatterers, seed)
}
