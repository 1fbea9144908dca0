//! Command-line front end: `pattern`, `estimate` and `sweep`.

use std::fs;
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use crate::config::{parse_config, RunConfig};
use crate::error::{Error, Result};
use crate::estimators::{run_method, EstimationOutput, Method};
use crate::harness::{derive_seed, run_sweep, write_jsonl};
use crate::metrics::{detection_metric, mse_metric};
use crate::scene::{generate_scene, Point, RegionBounds, Scene};
use crate::search::{build_coarse_grid, radiation_map};
use crate::wavefield::{array_response, receive_pilot, synthesize_channel, PilotSnapshot};

#[derive(Debug, Parser)]
#[command(name = "xlmimo", version, about = "Near-field non-stationary channel estimation experiments")]
pub struct Cli {
    /// JSON configuration file; omitted keys take defaults.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Overrides the configured base seed.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Worker threads for sweeps (0 = all cores).
    #[arg(long, global = true)]
    pub workers: Option<usize>,
    /// Output directory.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Radiation-power map for one scatterer as CSV rows (x, y, rho).
    Pattern(PatternArgs),
    /// Run the estimators once on a snapshot file or a seeded scene.
    Estimate(EstimateArgs),
    /// Monte-Carlo sweep over SNR and subarray count.
    Sweep(SweepArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum MethodArg {
    Subarray,
    Scatterer,
    Ls,
    All,
}

impl MethodArg {
    fn methods(self) -> Vec<Method> {
        match self {
            MethodArg::Subarray => vec![Method::Subarray],
            MethodArg::Scatterer => vec![Method::Scatterer],
            MethodArg::Ls => vec![Method::Ls],
            MethodArg::All => Method::ALL.to_vec(),
        }
    }
}

fn parse_point(s: &str) -> std::result::Result<Point, String> {
    let (x, y) = s.split_once(',').ok_or_else(|| format!("expected x,y, got {s:?}"))?;
    let coord = |v: &str| v.trim().parse::<f64>().map_err(|e| format!("{v:?}: {e}"));
    Ok(Point::new(coord(x)?, coord(y)?))
}

#[derive(Debug, Args)]
pub struct PatternArgs {
    #[arg(long)]
    pub subarrays: Option<usize>,
    /// Visible subarrays, e.g. `2,3,4,5`.
    #[arg(long, value_delimiter = ',')]
    pub visible: Option<Vec<usize>>,
    /// Scatterer position `x,y`.
    #[arg(long, value_parser = parse_point, allow_hyphen_values = true)]
    pub scatterer: Option<Point>,
    #[arg(long)]
    pub step: Option<f64>,
}

#[derive(Debug, Args)]
pub struct EstimateArgs {
    /// Snapshot file: `.json` flat interleaved array, otherwise raw
    /// little-endian f64 pairs. Without it a scene is drawn from the seed.
    #[arg(long)]
    pub snapshot: Option<PathBuf>,
    /// Ground-truth scene to score a snapshot file against.
    #[arg(long)]
    pub scene: Option<PathBuf>,
    #[arg(long)]
    pub snr_db: Option<f64>,
    #[arg(long)]
    pub subarrays: Option<usize>,
    #[arg(long, value_enum, default_value = "all")]
    pub method: MethodArg,
}

#[derive(Debug, Args)]
pub struct SweepArgs {
    #[arg(long, value_delimiter = ',')]
    pub snr_db: Option<Vec<f64>>,
    #[arg(long, value_delimiter = ',')]
    pub subarrays: Option<Vec<usize>>,
    #[arg(long)]
    pub trials: Option<usize>,
    #[arg(long, value_enum)]
    pub method: Option<MethodArg>,
    /// Add per-phase wall-clock timings to the trial records.
    #[arg(long)]
    pub timings: bool,
}

/// Loads the config file (if any) and applies the global flags.
pub fn load_config(cli: &Cli) -> Result<RunConfig> {
    let mut cfg = match &cli.config {
        Some(path) => parse_config(&fs::read_to_string(path).map_err(|e| {
            Error::Io(std::io::Error::new(
                e.kind(),
                format!("{}: {e}", path.display()),
            ))
        })?)?,
        None => RunConfig::default(),
    };
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    if let Some(w) = cli.workers {
        cfg.workers = w;
    }
    if let Some(out) = &cli.out {
        cfg.output_dir = out.clone();
    }
    Ok(cfg)
}

fn prepare_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| {
        Error::Io(std::io::Error::new(
            e.kind(),
            format!("cannot create output directory {}: {e}", dir.display()),
        ))
    })
}

fn create(path: &Path) -> Result<BufWriter<fs::File>> {
    let f = fs::File::create(path).map_err(|e| {
        Error::Io(std::io::Error::new(
            e.kind(),
            format!("cannot write {}: {e}", path.display()),
        ))
    })?;
    Ok(BufWriter::new(f))
}

/// Writes `pattern.csv`; returns its path and the strongest point.
pub fn cmd_pattern(cfg: &RunConfig) -> Result<(PathBuf, (f64, f64, f64))> {
    cfg.validate()?;
    let p = &cfg.pattern;
    let geometry = cfg.array.geometry(p.subarrays)?;
    let w = p.window;
    let window = RegionBounds::pattern_window(w.x_min, w.x_max, w.y_min, w.y_max)?;
    let grid = build_coarse_grid(&window, p.step, p.step)?;
    let z = array_response(&geometry, p.scatterer)?;
    let map = radiation_map(&geometry, &p.visible, &z, &grid)?;

    prepare_dir(&cfg.output_dir)?;
    let path = cfg.output_dir.join("pattern.csv");
    let mut out = create(&path)?;
    use std::io::Write;
    writeln!(out, "x,y,rho")?;
    let mut best = (0.0, 0.0, f64::NEG_INFINITY);
    for (pt, rho) in grid.points().zip(&map) {
        writeln!(out, "{},{},{}", pt.x, pt.y, rho)?;
        if *rho > best.2 {
            best = (pt.x, pt.y, *rho);
        }
    }
    out.flush()?;
    Ok((path, best))
}

#[derive(Debug, Serialize)]
struct MethodReport {
    #[serde(flatten)]
    output: EstimationOutput,
    #[serde(skip_serializing_if = "Option::is_none")]
    mse: Option<Vec<(usize, f64)>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    detection_ratio: Option<f64>,
}

#[derive(Debug, Serialize)]
struct EstimateReport {
    subarrays: usize,
    snr_db: f64,
    power: f64,
    scene_seed: Option<u64>,
    noise_seed: Option<u64>,
    results: Vec<MethodReport>,
}

/// Writes `estimate.json` (and `scene.json` / `snapshot.bin` for seeded
/// runs); returns the report path.
pub fn cmd_estimate(cfg: &RunConfig, args: &EstimateArgs) -> Result<PathBuf> {
    let mut cfg = cfg.clone();
    if let Some(n) = args.subarrays {
        cfg.array.subarrays = n;
    }
    if let Some(s) = args.snr_db {
        cfg.estimate.snr_db = s;
    }
    cfg.validate()?;
    let geometry = cfg.array.geometry(cfg.array.subarrays)?;
    let snr_db = cfg.estimate.snr_db;
    let power = 10f64.powf(snr_db / 10.0);
    prepare_dir(&cfg.output_dir)?;

    let (snapshot, scene, seeds): (PilotSnapshot, Option<Scene>, _) = match &args.snapshot {
        Some(path) => {
            let snap = if path.extension().is_some_and(|e| e == "json") {
                PilotSnapshot::from_json(&fs::read_to_string(path)?, power)?
            } else {
                PilotSnapshot::read_binary(fs::File::open(path)?, power)?
            };
            let scene = match &args.scene {
                Some(p) => Some(Scene::from_json(&fs::read_to_string(p)?)?),
                None => None,
            };
            (snap, scene, (None, None))
        }
        None => {
            let scene_seed = derive_seed(&[cfg.seed, 0]);
            let noise_seed = derive_seed(&[cfg.seed, 1]);
            let scene_cfg = cfg.scene.scene_config(geometry, &cfg.estimator)?;
            let scene = generate_scene(&scene_cfg, scene_seed)?;
            let h = synthesize_channel(&scene)?;
            let snap = receive_pilot(&h, power, noise_seed)?;
            fs::write(cfg.output_dir.join("scene.json"), scene.to_json()?)?;
            let mut f = create(&cfg.output_dir.join("snapshot.bin"))?;
            snap.write_binary(&mut f)?;
            use std::io::Write;
            f.flush()?;
            (snap, Some(scene), (Some(scene_seed), Some(noise_seed)))
        }
    };
    if snapshot.entries.len() != geometry.elements() {
        return Err(Error::domain(format!(
            "snapshot has {} entries, array has {}",
            snapshot.entries.len(),
            geometry.elements()
        )));
    }
    let truth = scene.as_ref().map(synthesize_channel).transpose()?;

    let mut results = Vec::new();
    for method in args.method.methods() {
        let est = run_method(method, &snapshot, &geometry, &cfg.estimator)?;
        let (mse, detection_ratio) = match (&scene, &truth) {
            (Some(scene), Some(h)) => (
                Some(mse_metric(h, &est.channel, scene)?),
                (method != Method::Ls)
                    .then(|| detection_metric(scene, &est.output.paths, cfg.sweep.detection_radius).ratio())
                    .flatten(),
            ),
            _ => (None, None),
        };
        results.push(MethodReport {
            output: est.output,
            mse,
            detection_ratio,
        });
    }
    let report = EstimateReport {
        subarrays: geometry.subarrays(),
        snr_db,
        power,
        scene_seed: seeds.0,
        noise_seed: seeds.1,
        results,
    };
    let path = cfg.output_dir.join("estimate.json");
    fs::write(&path, serde_json::to_string_pretty(&report)?)?;
    Ok(path)
}

/// Writes `sweep.csv` and `trials.jsonl`; returns the CSV path.
pub fn cmd_sweep(cfg: &RunConfig, args: &SweepArgs) -> Result<PathBuf> {
    let mut cfg = cfg.clone();
    if let Some(v) = &args.snr_db {
        cfg.sweep.snr_db = v.clone();
    }
    if let Some(v) = &args.subarrays {
        cfg.sweep.subarrays = v.clone();
    }
    if let Some(t) = args.trials {
        cfg.sweep.trials = t;
    }
    if let Some(m) = args.method {
        cfg.sweep.methods = m.methods();
    }
    if args.timings {
        cfg.record_timings = true;
    }
    cfg.validate()?;
    prepare_dir(&cfg.output_dir)?;
    let (result, records) = run_sweep(&cfg.experiment())?;

    let csv = cfg.output_dir.join("sweep.csv");
    let mut out = create(&csv)?;
    result.write_csv(&mut out)?;
    use std::io::Write;
    out.flush()?;
    let mut jl = create(&cfg.output_dir.join("trials.jsonl"))?;
    write_jsonl(&records, &mut jl)?;
    jl.flush()?;
    Ok(csv)
}

/// Entry point shared by the binary; returns the process exit code.
pub fn run(cli: Cli) -> Result<()> {
    let cfg = load_config(&cli)?;
    match &cli.command {
        Command::Pattern(a) => {
            let mut cfg = cfg;
            if let Some(n) = a.subarrays {
                cfg.pattern.subarrays = n;
            }
            if let Some(v) = &a.visible {
                cfg.pattern.visible = v.iter().copied().collect();
            }
            if let Some(p) = a.scatterer {
                cfg.pattern.scatterer = p;
            }
            if let Some(s) = a.step {
                cfg.pattern.step = s;
            }
            let (path, best) = cmd_pattern(&cfg)?;
            eprintln!(
                "wrote {} (peak rho {} at ({}, {}))",
                path.display(),
                best.2,
                best.0,
                best.1
            );
        }
        Command::Estimate(a) => {
            let path = cmd_estimate(&cfg, a)?;
            eprintln!("wrote {}", path.display());
        }
        Command::Sweep(a) => {
            let path = cmd_sweep(&cfg, a)?;
            eprintln!("wrote {}", path.display());
        }
    }
    Ok(())
}
