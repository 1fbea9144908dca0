//! Run configuration: one JSON document covering scenes, estimators, sweeps
//! and the CLI subcommands. Every field is optional; omitted fields take the
//! evaluation defaults (M = 1024, d = 0.5, coarse step 4, fine step 0.1,
//! P_fa = 0.01, delta = 0.5, alpha = 0.8, S = 2).

use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::estimators::EstimatorParams;
use crate::harness::{ArrayConfig, ExperimentConfig, SceneParams, SweepParams};
use crate::scene::{Point, RegionBounds, SubarraySet};

/// Array pattern map settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PatternParams {
    pub subarrays: usize,
    pub visible: SubarraySet,
    pub scatterer: Point,
    /// Evaluation window; `x_min = 0` is allowed here.
    pub window: RegionBounds,
    pub step: f64,
}

impl Default for PatternParams {
    fn default() -> Self {
        PatternParams {
            subarrays: 8,
            visible: SubarraySet::single(4),
            scatterer: Point::new(120.0, 120.0),
            window: RegionBounds {
                x_min: 0.0,
                x_max: 200.0,
                y_min: -600.0,
                y_max: 600.0,
            },
            step: 1.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EstimateParams {
    pub snr_db: f64,
}

impl Default for EstimateParams {
    fn default() -> Self {
        EstimateParams { snr_db: 20.0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub array: ArrayConfig,
    pub scene: SceneParams,
    pub estimator: EstimatorParams,
    pub sweep: SweepParams,
    pub pattern: PatternParams,
    pub estimate: EstimateParams,
    pub output_dir: PathBuf,
    pub workers: usize,
    pub seed: u64,
    pub record_timings: bool,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            array: ArrayConfig::default(),
            scene: SceneParams::default(),
            estimator: EstimatorParams::default(),
            sweep: SweepParams::default(),
            pattern: PatternParams::default(),
            estimate: EstimateParams::default(),
            output_dir: PathBuf::from("out"),
            workers: 0,
            seed: 0,
            record_timings: false,
        }
    }
}

impl RunConfig {
    pub fn validate(&self) -> Result<()> {
        self.estimator
            .validate()
            .map_err(|e| e.in_section("estimator"))?;
        self.array
            .geometry(self.array.subarrays)
            .map_err(|e| e.in_section("array"))?;
        self.experiment()
            .validate()
            .map_err(|e| e.in_section("sweep"))?;

        let p = &self.pattern;
        let g = self
            .array
            .geometry(p.subarrays)
            .map_err(|e| e.in_section("pattern"))?;
        p.visible
            .check(g.subarrays())
            .map_err(|e| Error::config("pattern.visible", e.to_string()))?;
        RegionBounds::pattern_window(p.window.x_min, p.window.x_max, p.window.y_min, p.window.y_max)
            .map_err(|e| e.in_section("pattern.window"))?;
        if !(p.step.is_finite() && p.step > 0.0) {
            return Err(Error::config("pattern.step", "must be positive"));
        }
        if !(p.scatterer.x > 0.0) {
            return Err(Error::config("pattern.scatterer", "x must be positive"));
        }
        if !self.estimate.snr_db.is_finite() {
            return Err(Error::config("estimate.snr_db", "must be finite"));
        }
        Ok(())
    }

    pub fn experiment(&self) -> ExperimentConfig {
        ExperimentConfig {
            array: self.array,
            scene: self.scene,
            estimator: self.estimator,
            sweep: self.sweep.clone(),
            seed: self.seed,
            workers: self.workers,
            record_timings: self.record_timings,
        }
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

/// Parses and validates a configuration document. Empty input yields the
/// defaults.
pub fn parse_config(text: &str) -> Result<RunConfig> {
    if text.trim().is_empty() {
        return Ok(RunConfig::default());
    }
    let cfg: RunConfig = serde_json::from_str(text).map_err(|e| {
        let line = e.line();
        Error::Parse {
            line,
            column: e.column(),
            context: text
                .lines()
                .nth(line.saturating_sub(1))
                .unwrap_or("")
                .to_string(),
            message: e.to_string(),
        }
    })?;
    cfg.validate()?;
    Ok(cfg)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_means_defaults() {
        assert_eq!(parse_config("").unwrap(), RunConfig::default());
        assert_eq!(parse_config("  \n").unwrap(), RunConfig::default());
        assert_eq!(parse_config("{}").unwrap(), RunConfig::default());
        let d = RunConfig::default();
        assert_eq!(d.array.elements, 1024);
        assert_eq!(d.estimator.grid.coarse_step_x, 4.0);
        assert_eq!(d.estimator.grid.fine_step_y, 0.1);
        assert_eq!(d.estimator.stopping.false_alarm_rate, 0.01);
        assert_eq!((d.estimator.delta, d.estimator.alpha), (0.5, 0.8));
        assert_eq!(d.scene.scatterers, 2);
    }

    #[test]
    fn defaults_roundtrip() {
        let d = RunConfig::default();
        let text = d.to_json().unwrap();
        assert_eq!(parse_config(&text).unwrap(), d);
        assert_eq!(parse_config(&text).unwrap().to_json().unwrap(), text);
    }

    #[test]
    fn bad_alpha_is_named() {
        let err = parse_config(r#"{"estimator": {"alpha": 1.5}}"#).unwrap_err();
        match err {
            Error::Config { field, .. } => assert_eq!(field, "estimator.alpha"),
            other => panic!("unexpected {other}"),
        }
    }

    #[test]
    fn unknown_keys_rejected_with_line() {
        let text = "{\n  \"seed\": 3,\n  \"sede\": 4\n}";
        match parse_config(text).unwrap_err() {
            Error::Parse { line, context, .. } => {
                assert_eq!(line, 3);
                assert!(context.contains("sede"));
            }
            other => panic!("unexpected {other}"),
        }
        assert!(parse_config(r#"{"estimator": {"grid": {"coarse": 1}}}"#).is_err());
    }

    #[test]
    fn partial_override() {
        let cfg = parse_config(r#"{"sweep": {"trials": 3, "methods": ["ls"]}, "seed": 9}"#).unwrap();
        assert_eq!(cfg.sweep.trials, 3);
        assert_eq!(cfg.seed, 9);
        assert_eq!(cfg.sweep.subarrays, vec![4, 16]);
        assert!(parse_config(r#"{"sweep": {"subarrays": [3]}}"#).is_err());
        assert!(parse_config(r#"{"pattern": {"visible": [9]}}"#).is_err());
    }
}
