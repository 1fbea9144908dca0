//! Greedy hierarchical-grid channel estimators and the LS baseline.

mod ls;
mod scatterer;
mod stopping;
mod subarray;

use std::time::Duration;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scene::{ArrayGeometry, Point, RegionBounds, SubarraySet};
use crate::search::{build_coarse_grid, build_local_grid, LocalGrid, SpatialGrid};
use crate::wavefield::{ChannelVector, PilotSnapshot};

pub use ls::ls_estimate;
pub use scatterer::{scatterer_wise_estimate, IterationTrace, ScattererEstimate};
pub use stopping::{noise_floor_threshold, residual_is_noise, NoiseTest};
pub use subarray::{subarray_wise_estimate, SubarrayEstimate, SubarrayPaths};

/// One extracted path. `amplitude` estimates `sqrt(P) g`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimatedPath {
    pub position: Point,
    #[serde(with = "crate::scene::complex_parts")]
    pub amplitude: Complex64,
    pub visible: SubarraySet,
}

impl EstimatedPath {
    /// Gain estimate `amplitude / sqrt(P)`.
    pub fn gain(&self, power: f64) -> Complex64 {
        self.amplitude / power.sqrt()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StoppingConfig {
    pub false_alarm_rate: f64,
    pub max_iterations: usize,
}

impl Default for StoppingConfig {
    fn default() -> Self {
        StoppingConfig {
            false_alarm_rate: 0.01,
            max_iterations: 20,
        }
    }
}

/// Coarse and fine lattice settings. The local half extents default to one
/// coarse step.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GridParams {
    pub coarse_step_x: f64,
    pub coarse_step_y: f64,
    pub fine_step_x: f64,
    pub fine_step_y: f64,
    pub local_half_x: Option<f64>,
    pub local_half_y: Option<f64>,
}

impl Default for GridParams {
    fn default() -> Self {
        GridParams {
            coarse_step_x: 4.0,
            coarse_step_y: 4.0,
            fine_step_x: 0.1,
            fine_step_y: 0.1,
            local_half_x: None,
            local_half_y: None,
        }
    }
}

impl GridParams {
    pub fn half_extents(&self) -> (f64, f64) {
        (
            self.local_half_x.unwrap_or(self.coarse_step_x),
            self.local_half_y.unwrap_or(self.coarse_step_y),
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EstimatorParams {
    pub bounds: RegionBounds,
    pub grid: GridParams,
    /// Cumulative normalized-power threshold for the coarse visible set.
    pub delta: f64,
    /// Gate factor for the refined visible set.
    pub alpha: f64,
    pub stopping: StoppingConfig,
}

impl Default for EstimatorParams {
    fn default() -> Self {
        EstimatorParams {
            bounds: RegionBounds {
                x_min: 20.0,
                x_max: 200.0,
                y_min: -600.0,
                y_max: 600.0,
            },
            grid: GridParams::default(),
            delta: 0.5,
            alpha: 0.8,
            stopping: StoppingConfig::default(),
        }
    }
}

fn open_unit(name: &str, v: f64) -> Result<()> {
    if !(v > 0.0 && v < 1.0) {
        return Err(Error::config(name, format!("{v} not in (0, 1)")));
    }
    Ok(())
}

impl EstimatorParams {
    pub fn validate(&self) -> Result<()> {
        self.bounds.validate()?;
        open_unit("delta", self.delta)?;
        open_unit("alpha", self.alpha)?;
        open_unit("false_alarm_rate", self.stopping.false_alarm_rate)?;
        if self.stopping.max_iterations == 0 {
            return Err(Error::config("max_iterations", "must be positive"));
        }
        let g = &self.grid;
        for (name, v) in [
            ("coarse_step_x", g.coarse_step_x),
            ("coarse_step_y", g.coarse_step_y),
            ("fine_step_x", g.fine_step_x),
            ("fine_step_y", g.fine_step_y),
        ] {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::config(name, format!("{v} must be positive")));
            }
        }
        let (hx, hy) = g.half_extents();
        if !(hx >= 0.0 && hy >= 0.0) {
            return Err(Error::config("local_half_extent", "must be non-negative"));
        }
        Ok(())
    }

    pub(crate) fn coarse_grid(&self) -> Result<SpatialGrid> {
        build_coarse_grid(&self.bounds, self.grid.coarse_step_x, self.grid.coarse_step_y)
    }

    pub(crate) fn local_grid(&self, center: Point) -> Result<LocalGrid> {
        let (hx, hy) = self.grid.half_extents();
        build_local_grid(
            center,
            hx,
            hy,
            self.grid.fine_step_x,
            self.grid.fine_step_y,
            &self.bounds,
        )
    }
}

/// Wall-clock time per estimator phase, summed over iterations.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct PhaseTimings {
    pub stopping: Duration,
    pub coarse_position: Duration,
    pub coarse_set: Duration,
    pub fine_position: Duration,
    pub coarse_amplitude: Duration,
    pub refined_set: Duration,
    pub amplitude: Duration,
}

impl PhaseTimings {
    pub fn total(&self) -> Duration {
        self.stopping
            + self.coarse_position
            + self.coarse_set
            + self.fine_position
            + self.coarse_amplitude
            + self.refined_set
            + self.amplitude
    }

    /// `(phase name, seconds)` pairs.
    pub fn as_seconds(&self) -> [(&'static str, f64); 7] {
        [
            ("stopping", self.stopping.as_secs_f64()),
            ("coarse_position", self.coarse_position.as_secs_f64()),
            ("coarse_set", self.coarse_set.as_secs_f64()),
            ("fine_position", self.fine_position.as_secs_f64()),
            ("coarse_amplitude", self.coarse_amplitude.as_secs_f64()),
            ("refined_set", self.refined_set.as_secs_f64()),
            ("amplitude", self.amplitude.as_secs_f64()),
        ]
    }
}

/// Estimator identifier used by the harness and the CLI.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Subarray,
    Scatterer,
    Ls,
}

impl Method {
    pub const ALL: [Method; 3] = [Method::Subarray, Method::Scatterer, Method::Ls];

    pub fn name(&self) -> &'static str {
        match self {
            Method::Subarray => "subarray",
            Method::Scatterer => "scatterer",
            Method::Ls => "ls",
        }
    }
}

impl std::fmt::Display for Method {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "subarray" => Ok(Method::Subarray),
            "scatterer" => Ok(Method::Scatterer),
            "ls" => Ok(Method::Ls),
            other => Err(Error::config("method", format!("unknown method {other:?}"))),
        }
    }
}

/// Serializable summary of one estimator run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimationOutput {
    pub method: Method,
    pub paths: Vec<EstimatedPath>,
    pub per_subarray_path_counts: Vec<usize>,
    /// Iterations per independent loop: one per subarray for the
    /// subarray-wise method, a single entry otherwise.
    pub iterations: Vec<usize>,
    pub truncated: Vec<bool>,
}

/// Full result of one estimator run.
#[derive(Debug, Clone)]
pub struct Estimate {
    pub output: EstimationOutput,
    pub channel: ChannelVector,
    pub timings: PhaseTimings,
}

/// Runs `method` on `snapshot`.
pub fn run_method(
    method: Method,
    snapshot: &PilotSnapshot,
    geometry: &ArrayGeometry,
    params: &EstimatorParams,
) -> Result<Estimate> {
    check_snapshot(snapshot, geometry)?;
    match method {
        Method::Subarray => Ok(subarray_wise_estimate(snapshot, geometry, params)?.into_estimate()),
        Method::Scatterer => Ok(scatterer_wise_estimate(snapshot, geometry, params)?.into_estimate(geometry)),
        Method::Ls => {
            let channel = ls_estimate(snapshot)?;
            Ok(Estimate {
                output: EstimationOutput {
                    method,
                    paths: Vec::new(),
                    per_subarray_path_counts: vec![0; geometry.subarrays()],
                    iterations: Vec::new(),
                    truncated: Vec::new(),
                },
                channel,
                timings: PhaseTimings::default(),
            })
        }
    }
}

pub(crate) fn check_snapshot(snapshot: &PilotSnapshot, geometry: &ArrayGeometry) -> Result<()> {
    if snapshot.entries.len() != geometry.elements() {
        return Err(Error::domain(format!(
            "snapshot length {} != element count {}",
            snapshot.entries.len(),
            geometry.elements()
        )));
    }
    if !(snapshot.power > 0.0) {
        return Err(Error::domain("snapshot transmit power must be positive"));
    }
    Ok(())
}

/// `sum_i amplitude_i * a(p_i) ⊙ p(Phi_i)`, scaled by `scale`.
pub(crate) fn superpose(
    geometry: &ArrayGeometry,
    paths: &[EstimatedPath],
    scale: f64,
) -> Result<Vec<Complex64>> {
    let mut out = vec![Complex64::new(0.0, 0.0); geometry.elements()];
    for p in paths {
        let atom = crate::wavefield::masked_response(geometry, p.position, &p.visible)?;
        for (o, a) in out.iter_mut().zip(&atom) {
            *o += p.amplitude * scale * a;
        }
    }
    Ok(out)
}

#[cfg(test)]
pub(crate) mod fixtures {
    use num_complex::Complex64;

    use crate::scene::{ArrayGeometry, Point, RegionBounds, Scatterer, Scene, SubarraySet};
    use crate::wavefield::{synthesize_channel, ChannelVector, PilotSnapshot};

    pub fn bounds() -> RegionBounds {
        RegionBounds::new(20.0, 200.0, -600.0, 600.0).unwrap()
    }

    /// A coarse-lattice point shifted by whole fine steps.
    pub fn on_grid(cx: f64, cy: f64, kx: i32, ky: i32) -> Point {
        Point::new(cx + kx as f64 * 0.1, cy + ky as f64 * 0.1)
    }

    pub fn scatterer(p: Point, gain: Complex64, visible: &[usize]) -> Scatterer {
        Scatterer {
            position: p,
            gain,
            visible: visible.iter().copied().collect::<SubarraySet>(),
        }
    }

    pub fn scene(geometry: ArrayGeometry, scatterers: Vec<Scatterer>) -> Scene {
        Scene::new(geometry, bounds(), scatterers, 0).unwrap()
    }

    pub fn noiseless(scene: &Scene, power: f64) -> (ChannelVector, PilotSnapshot) {
        let h = synthesize_channel(scene).unwrap();
        let r = h.0.iter().map(|c| c * power.sqrt()).collect();
        (h, PilotSnapshot::new(r, power).unwrap())
    }

    pub fn rel_err(a: &[Complex64], b: &[Complex64]) -> f64 {
        let num: f64 = a.iter().zip(b).map(|(x, y)| (x - y).norm_sqr()).sum();
        let den: f64 = b.iter().map(|y| y.norm_sqr()).sum();
        (num / den).sqrt()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn method_names_roundtrip() {
        for m in Method::ALL {
            assert_eq!(m.name().parse::<Method>().unwrap(), m);
            assert_eq!(serde_json::to_string(&m).unwrap(), format!("\"{m}\""));
        }
        assert!("omp".parse::<Method>().is_err());
    }

    #[test]
    fn params_validation() {
        assert!(EstimatorParams::default().validate().is_ok());
        let p = EstimatorParams {
            delta: 1.0,
            ..EstimatorParams::default()
        };
        assert!(matches!(p.validate(), Err(Error::Config { ref field, .. }) if field == "delta"));
        let mut p = EstimatorParams::default();
        p.grid.fine_step_y = 0.0;
        assert!(p.validate().is_err());
        let mut p = EstimatorParams::default();
        p.stopping.max_iterations = 0;
        assert!(p.validate().is_err());
        assert_eq!(GridParams::default().half_extents(), (4.0, 4.0));
    }

    #[test]
    fn snapshot_shape_is_checked() {
        let g = ArrayGeometry::new(64, 4, 0.5).unwrap();
        let short = PilotSnapshot::new(vec![Complex64::new(0.0, 0.0); 32], 1.0).unwrap();
        let p = EstimatorParams::default();
        for m in Method::ALL {
            assert!(run_method(m, &short, &g, &p).is_err());
        }
    }
}
