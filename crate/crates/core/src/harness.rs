//! Seeded Monte-Carlo sweeps over SNR and subarray count.

use std::io::Write;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::estimators::{run_method, EstimatorParams, Method};
use crate::metrics::{detection_metric, mse_metric, PairOutcome, DEFAULT_DETECTION_RADIUS};
use crate::scene::{generate_scene, ArrayGeometry, SceneConfig};
use crate::wavefield::{receive_pilot, synthesize_channel};

/// Aperture shared by every sweep point; the subarray count varies.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ArrayConfig {
    pub elements: usize,
    pub spacing: f64,
    /// Subarray count for single-shot runs (`estimate`).
    pub subarrays: usize,
}

impl Default for ArrayConfig {
    fn default() -> Self {
        ArrayConfig {
            elements: 1024,
            spacing: 0.5,
            subarrays: 4,
        }
    }
}

impl ArrayConfig {
    pub fn geometry(&self, subarrays: usize) -> Result<ArrayGeometry> {
        ArrayGeometry::new(self.elements, subarrays, self.spacing)
    }
}

/// Random scene settings independent of the subarray count.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SceneParams {
    pub scatterers: usize,
    /// Visible subarrays per scatterer as a share of `N`, rounded, at least 1.
    pub visible_fraction: f64,
    pub gain_power_min: f64,
    pub gain_power_max: f64,
    pub min_separation: f64,
    pub max_retries: usize,
}

impl Default for SceneParams {
    fn default() -> Self {
        SceneParams {
            scatterers: 2,
            visible_fraction: 0.5,
            gain_power_min: 0.5,
            gain_power_max: 1.0,
            min_separation: 20.0,
            max_retries: 1000,
        }
    }
}

impl SceneParams {
    pub fn scene_config(&self, geometry: ArrayGeometry, params: &EstimatorParams) -> Result<SceneConfig> {
        if !(self.visible_fraction > 0.0 && self.visible_fraction <= 1.0) {
            return Err(Error::config("visible_fraction", "must be in (0, 1]"));
        }
        let n = geometry.subarrays();
        let visible = ((n as f64 * self.visible_fraction).round() as usize).clamp(1, n);
        let cfg = SceneConfig {
            geometry,
            bounds: params.bounds,
            scatterer_count: self.scatterers,
            visible_count: visible,
            gain_power: (self.gain_power_min, self.gain_power_max),
            min_separation: self.min_separation,
            max_retries: self.max_retries,
        };
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepParams {
    pub snr_db: Vec<f64>,
    pub subarrays: Vec<usize>,
    pub trials: usize,
    pub methods: Vec<Method>,
    pub detection_radius: f64,
}

impl Default for SweepParams {
    fn default() -> Self {
        SweepParams {
            snr_db: vec![0.0, 5.0, 10.0, 15.0, 20.0, 25.0],
            subarrays: vec![4, 16],
            trials: 10,
            methods: Method::ALL.to_vec(),
            detection_radius: DEFAULT_DETECTION_RADIUS,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct ExperimentConfig {
    pub array: ArrayConfig,
    pub scene: SceneParams,
    pub estimator: EstimatorParams,
    pub sweep: SweepParams,
    pub seed: u64,
    /// Worker threads; 0 uses the rayon default.
    pub workers: usize,
    pub record_timings: bool,
}

impl ExperimentConfig {
    /// Checks everything a sweep needs before any trial runs.
    pub fn validate(&self) -> Result<()> {
        self.estimator.validate()?;
        let s = &self.sweep;
        if s.trials == 0 {
            return Err(Error::config("trials", "must be at least 1"));
        }
        if s.snr_db.is_empty() || s.snr_db.iter().any(|v| !v.is_finite()) {
            return Err(Error::config("snr_db", "need at least one finite value"));
        }
        if s.subarrays.is_empty() {
            return Err(Error::config("subarrays", "need at least one value"));
        }
        if s.methods.is_empty() {
            return Err(Error::config("methods", "need at least one method"));
        }
        if !(s.detection_radius > 0.0) {
            return Err(Error::config("detection_radius", "must be positive"));
        }
        for &n in &s.subarrays {
            let g = self.array.geometry(n)?;
            self.scene.scene_config(g, &self.estimator)?;
        }
        Ok(())
    }
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Order-sensitive hash of a seed path.
pub fn derive_seed(parts: &[u64]) -> u64 {
    parts
        .iter()
        .fold(0x5eed_u64, |acc, &p| splitmix64(acc ^ splitmix64(p)))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SubarrayError {
    pub subarray: usize,
    pub mse: f64,
}

/// Phase timings in seconds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimingRecord {
    pub total: f64,
    pub phases: Vec<(String, f64)>,
}

/// Outcome of one method on one trial.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialRecord {
    pub method: Method,
    pub subarrays: usize,
    pub snr_db: f64,
    pub trial: usize,
    pub scene_seed: u64,
    pub noise_seed: u64,
    pub mse: Vec<SubarrayError>,
    /// Absent for methods that do not locate scatterers.
    pub detection: Option<Vec<PairOutcome>>,
    pub paths: usize,
    pub truncated: bool,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub timings: Option<TimingRecord>,
}

impl TrialRecord {
    pub fn detection_ratio(&self) -> Option<f64> {
        let pairs = self.detection.as_ref()?;
        (!pairs.is_empty())
            .then(|| pairs.iter().filter(|p| p.detected).count() as f64 / pairs.len() as f64)
    }
}

/// Aggregate for one (method, N, SNR) point.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub method: Method,
    pub subarrays: usize,
    pub snr_db: f64,
    pub mean_mse: f64,
    pub se_mse: f64,
    pub detection_ratio: Option<f64>,
    pub se_detection: Option<f64>,
    pub trials: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepResult {
    pub rows: Vec<SweepRow>,
}

impl SweepResult {
    pub fn row(&self, method: Method, subarrays: usize, snr_db: f64) -> Option<&SweepRow> {
        self.rows
            .iter()
            .find(|r| r.method == method && r.subarrays == subarrays && r.snr_db == snr_db)
    }

    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(
            w,
            "method,N,snr_db,mean_mse,se_mse,detection_ratio,se_detection,trials"
        )?;
        let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
        for r in &self.rows {
            writeln!(
                w,
                "{},{},{},{},{},{},{},{}",
                r.method,
                r.subarrays,
                r.snr_db,
                r.mean_mse,
                r.se_mse,
                opt(r.detection_ratio),
                opt(r.se_detection),
                r.trials
            )?;
        }
        Ok(())
    }
}

/// Mean and standard error of the mean.
pub fn mean_se(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    if values.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

/// Pools trial records into per-point means. MSE terms are pooled over
/// (trial, subarray); detection ratios are averaged per trial.
pub fn aggregate(config: &ExperimentConfig, records: &[TrialRecord]) -> SweepResult {
    let mut rows = Vec::new();
    for &n in &config.sweep.subarrays {
        for &snr in &config.sweep.snr_db {
            for &method in &config.sweep.methods {
                let group: Vec<&TrialRecord> = records
                    .iter()
                    .filter(|r| r.method == method && r.subarrays == n && r.snr_db == snr)
                    .collect();
                let mse: Vec<f64> = group.iter().flat_map(|r| r.mse.iter().map(|e| e.mse)).collect();
                let (mean_mse, se_mse) = mean_se(&mse);
                let det: Vec<f64> = group.iter().filter_map(|r| r.detection_ratio()).collect();
                let (detection_ratio, se_detection) = if det.is_empty() {
                    (None, None)
                } else {
                    let (m, s) = mean_se(&det);
                    (Some(m), Some(s))
                };
                rows.push(SweepRow {
                    method,
                    subarrays: n,
                    snr_db: snr,
                    mean_mse,
                    se_mse,
                    detection_ratio,
                    se_detection,
                    trials: group.len(),
                });
            }
        }
    }
    SweepResult { rows }
}

struct Job {
    n_index: usize,
    snr_index: usize,
    trial: usize,
}

fn run_trial(config: &ExperimentConfig, job: &Job) -> Result<Vec<TrialRecord>> {
    let n = config.sweep.subarrays[job.n_index];
    let snr_db = config.sweep.snr_db[job.snr_index];
    let trial_seed = derive_seed(&[
        config.seed,
        job.snr_index as u64,
        job.n_index as u64,
        job.trial as u64,
    ]);
    let scene_seed = derive_seed(&[trial_seed, 0]);
    let noise_seed = derive_seed(&[trial_seed, 1]);

    let geometry = config.array.geometry(n)?;
    let scene_cfg = config.scene.scene_config(geometry, &config.estimator)?;
    let scene = generate_scene(&scene_cfg, scene_seed)?;
    let truth = synthesize_channel(&scene)?;
    let power = 10f64.powf(snr_db / 10.0);
    let snapshot = receive_pilot(&truth, power, noise_seed)?;

    config
        .sweep
        .methods
        .iter()
        .map(|&method| {
            let start = Instant::now();
            let est = run_method(method, &snapshot, &geometry, &config.estimator)?;
            let wall = start.elapsed();
            let mse = mse_metric(&truth, &est.channel, &scene)?
                .into_iter()
                .map(|(subarray, mse)| SubarrayError { subarray, mse })
                .collect();
            let detection = (method != Method::Ls).then(|| {
                detection_metric(&scene, &est.output.paths, config.sweep.detection_radius).pairs
            });
            let timings = config.record_timings.then(|| TimingRecord {
                total: wall.as_secs_f64(),
                phases: est
                    .timings
                    .as_seconds()
                    .iter()
                    .map(|(k, v)| (k.to_string(), *v))
                    .collect(),
            });
            Ok(TrialRecord {
                method,
                subarrays: n,
                snr_db,
                trial: job.trial,
                scene_seed,
                noise_seed,
                mse,
                detection,
                paths: est.output.paths.len(),
                truncated: est.output.truncated.iter().any(|&t| t),
                timings,
            })
        })
        .collect()
}

/// Runs every (N, SNR, trial) point and aggregates. Records come back in
/// (N, SNR, trial, method) order regardless of the worker count.
pub fn run_sweep(config: &ExperimentConfig) -> Result<(SweepResult, Vec<TrialRecord>)> {
    config.validate()?;
    let jobs: Vec<Job> = (0..config.sweep.subarrays.len())
        .flat_map(|n_index| {
            (0..config.sweep.snr_db.len()).flat_map(move |snr_index| {
                (0..config.sweep.trials).map(move |trial| Job {
                    n_index,
                    snr_index,
                    trial,
                })
            })
        })
        .collect();

    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(config.workers)
        .build()
        .map_err(|e| Error::Internal(format!("thread pool: {e}")))?;
    let per_job: Vec<Result<Vec<TrialRecord>>> =
        pool.install(|| jobs.par_iter().map(|j| run_trial(config, j)).collect());
    let mut records = Vec::new();
    for r in per_job {
        records.extend(r?);
    }
    Ok((aggregate(config, &records), records))
}

/// One JSON object per line.
pub fn write_jsonl<W: Write>(records: &[TrialRecord], mut w: W) -> Result<()> {
    for r in records {
        serde_json::to_writer(&mut w, r)?;
        w.write_all(b"\n")?;
    }
    Ok(())
}
