//! Simulation and estimation of near-field, spatially non-stationary
//! channels on extremely large aperture arrays.
//!
//! A uniform linear array of `M` elements is split into `N` subarrays. Each
//! last-hop scatterer sits at `(x, y)` in front of the array, reaches the
//! array with a spherical wavefront, and is seen only by some subarrays.
//! [`estimators`] recovers positions, visible sets and the channel from one
//! noisy pilot with two greedy hierarchical-grid methods:
//!
//! * subarray-wise: an independent refined OMP per subarray;
//! * scatterer-wise: one joint refined OMP that also decides which
//!   subarrays see each scatterer.
//!
//! ```
//! use xlmimo::prelude::*;
//!
//! let geometry = ArrayGeometry::new(256, 4, 0.5)?;
//! let bounds = RegionBounds::new(20.0, 100.0, -100.0, 100.0)?;
//! let scene = generate_scene(&SceneConfig::with_defaults(geometry, bounds), 7)?;
//! let h = synthesize_channel(&scene)?;
//! let r = receive_pilot(&h, 100.0, 8)?;
//! let params = EstimatorParams { bounds, ..EstimatorParams::default() };
//! let est = subarray_wise_estimate(&r, &geometry, &params)?;
//! assert_eq!(est.channel.len(), 256);
//! # Ok::<(), xlmimo::Error>(())
//! ```

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod cli;
pub mod config;
mod error;
pub mod estimators;
pub mod harness;
pub mod metrics;
pub mod scene;
pub mod search;
pub mod wavefield;

pub use error::{Error, Result};

pub mod prelude {
    pub use crate::config::{parse_config, RunConfig};
    pub use crate::error::{Error, Result};
    pub use crate::estimators::{
        ls_estimate, noise_floor_threshold, residual_is_noise, run_method,
        scatterer_wise_estimate, subarray_wise_estimate, EstimatedPath, EstimatorParams,
        GridParams, Method, NoiseTest, StoppingConfig,
    };
    pub use crate::harness::{run_sweep, ExperimentConfig, SweepResult, TrialRecord};
    pub use crate::metrics::{detection_metric, mse_metric};
    pub use crate::scene::{
        generate_scene, ArrayGeometry, Point, RegionBounds, Scatterer, Scene, SceneConfig,
        SubarraySet,
    };
    pub use crate::search::{
        amplitude_projection, build_coarse_grid, build_local_grid, grid_argmax,
        radiation_map, radiation_power, SpatialGrid,
    };
    pub use crate::wavefield::{
        array_response, receive_pilot, selection_vector, steering_phase, subvector,
        synthesize_channel, ChannelVector, PilotSnapshot,
    };
}

#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/introduction.md")]
    mod introduction {}
    #[doc = include_str!("../../../book/src/geometry.md")]
    mod geometry {}
    #[doc = include_str!("../../../book/src/radiation.md")]
    mod radiation {}
    #[doc = include_str!("../../../book/src/stopping.md")]
    mod stopping {}
    #[doc = include_str!("../../../book/src/estimators.md")]
    mod estimators {}
    #[doc = include_str!("../../../book/src/experiments.md")]
    mod experiments {}
}
