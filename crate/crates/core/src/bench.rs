//! Monte Carlo harness: offset sweeps over noisy synthetic scenes.
//!
//! Every trial `i` uses noise seed `seed + i`, shared by all offsets and
//! estimators of the run, so cells differ only in what they vary. Each
//! `(offset, trial)` pair owns its scene; results are gathered in a fixed
//! order so that output does not depend on the thread count.

use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::time::Instant;

use rayon::prelude::*;
use serde::{de::DeserializeOwned, Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::estimators::{reconstruct, LiOptions, Method, MethodOptions, GAUGE_CAMERA};
use crate::io::{format_sig9, read_json};
use crate::motion::PolyTrajectory;
use crate::nlls::SolveOptions;
use crate::simulator::{
    apply_noise, localization_error, observation_times, synthesize_scene, NoiseConfig, SceneConfig, SceneSpec,
};

/// A config given inline or as a path relative to the spec file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ConfigRef<T> {
    Path(PathBuf),
    Inline(T),
}

impl<T: DeserializeOwned + Clone> ConfigRef<T> {
    pub fn resolve(&self, base: &Path) -> Result<T> {
        match self {
            ConfigRef::Inline(v) => Ok(v.clone()),
            ConfigRef::Path(p) => read_json(&base.join(p)),
        }
    }
}

fn default_trials() -> usize {
    1
}

fn default_offset_camera() -> usize {
    1
}

fn default_orders() -> Vec<usize> {
    vec![1]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchOutputs {
    pub offset_curve: Option<PathBuf>,
    pub error_curve: Option<PathBuf>,
    pub trajectory_overlay: Option<PathBuf>,
    /// One line per trial and estimator, including timing.
    pub trials: Option<PathBuf>,
}

impl Default for BenchOutputs {
    fn default() -> Self {
        Self {
            offset_curve: Some("offset_curve.csv".into()),
            error_curve: Some("error_curve.csv".into()),
            trajectory_overlay: Some("trajectory_overlay.csv".into()),
            trials: Some("trials.csv".into()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchSpec {
    pub scene: ConfigRef<SceneSpec>,
    pub noise: ConfigRef<NoiseConfig>,
    pub estimators: Vec<String>,
    /// Offsets in frames applied to `offset_camera`.
    pub offsets: Vec<f64>,
    #[serde(default = "default_trials")]
    pub trials: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_offset_camera")]
    pub offset_camera: usize,
    #[serde(default = "default_orders")]
    pub orders: Vec<usize>,
    /// Frame rate reported by the non-gauge cameras instead of the true one.
    #[serde(default)]
    pub nominal_fps: Option<f64>,
    #[serde(default)]
    pub optimize_fps: bool,
    #[serde(default)]
    pub rotation_prior: f64,
    /// Target whose localization error is reported.
    #[serde(default)]
    pub eval_target: usize,
    #[serde(default)]
    pub outputs: BenchOutputs,
}

/// A spec with its config references loaded.
#[derive(Debug, Clone, PartialEq)]
pub struct ResolvedSpec {
    pub scene: SceneConfig,
    pub noise: NoiseConfig,
    pub estimators: Vec<Method>,
    pub offsets: Vec<f64>,
    pub trials: usize,
    pub seed: u64,
    pub offset_camera: usize,
    pub orders: Vec<usize>,
    pub nominal_fps: Option<f64>,
    pub method_options: MethodOptions,
    pub eval_target: usize,
    pub outputs: BenchOutputs,
}

impl BenchSpec {
    pub fn load(path: &Path) -> Result<ResolvedSpec> {
        let spec: BenchSpec = read_json(path)?;
        spec.resolve(path.parent().unwrap_or(Path::new(".")))
    }

    pub fn resolve(&self, base: &Path) -> Result<ResolvedSpec> {
        let estimators = self
            .estimators
            .iter()
            .map(|s| Method::from_str(s))
            .collect::<Result<Vec<_>>>()?;
        let resolved = ResolvedSpec {
            scene: self.scene.resolve(base)?.build(),
            noise: self.noise.resolve(base)?,
            estimators,
            offsets: self.offsets.clone(),
            trials: self.trials,
            seed: self.seed,
            offset_camera: self.offset_camera,
            orders: self.orders.clone(),
            nominal_fps: self.nominal_fps,
            method_options: MethodOptions {
                optimize_fps: self.optimize_fps,
                rotation_prior_weight: self.rotation_prior,
                solve: SolveOptions::default(),
                li: LiOptions::default(),
            },
            eval_target: self.eval_target,
            outputs: self.outputs.clone(),
        };
        resolved.validate()?;
        Ok(resolved)
    }
}

impl ResolvedSpec {
    pub fn validate(&self) -> Result<()> {
        if self.trials == 0 {
            return Err(Error::InvalidInput("trials must be at least 1".into()));
        }
        if self.estimators.is_empty() {
            return Err(Error::InvalidInput("no estimators given".into()));
        }
        if self.offsets.is_empty() {
            return Err(Error::InvalidInput("no offsets given".into()));
        }
        if self.offset_camera == GAUGE_CAMERA || self.offset_camera >= self.scene.cameras.len() {
            return Err(Error::InvalidInput(format!(
                "offset camera must be a non-gauge camera below {}, got {}",
                self.scene.cameras.len(),
                self.offset_camera
            )));
        }
        if self.eval_target >= self.scene.targets.len() {
            return Err(Error::InvalidInput(format!("eval target {} does not exist", self.eval_target)));
        }
        if let Some(fps) = self.nominal_fps {
            if !(fps.is_finite() && fps > 0.0) {
                return Err(Error::InvalidInput(format!("nominal fps must be positive, got {fps}")));
            }
        }
        if self.method_options.rotation_prior_weight < 0.0 || !self.method_options.rotation_prior_weight.is_finite() {
            return Err(Error::InvalidInput("rotation prior must be finite and non-negative".into()));
        }
        self.noise.validate()?;
        self.scene.validate()
    }

    /// Scene of one sweep cell before noise.
    pub fn cell_scene(&self, offset_frames: f64) -> SceneConfig {
        let scene = self.scene.clone().with_offset(self.offset_camera, offset_frames);
        match self.nominal_fps {
            Some(fps) => scene.with_nominal_fps(fps),
            None => scene,
        }
    }

    pub fn nominal_rate(&self) -> f64 {
        self.nominal_fps.unwrap_or(self.scene.frame_rate_hz)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialRow {
    pub estimator: Method,
    pub offset_frames: f64,
    pub trial: usize,
    pub seed: u64,
    /// Camera whose offset was swept.
    pub offset_camera: usize,
    /// Failure message; metrics are absent when set.
    pub error: Option<String>,
    pub sigma_3d: Option<f64>,
    /// Estimated offset of the offset camera minus the truth, seconds.
    pub offset_error_s: Option<f64>,
    pub offsets_recovered: Vec<f64>,
    pub fps_recovered: Vec<f64>,
    pub iterations: usize,
    pub monotone: bool,
    pub wall_seconds: f64,
}

impl TrialRow {
    pub fn succeeded(&self) -> bool {
        self.error.is_none()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellSummary {
    pub estimator: Method,
    pub offset_frames: f64,
    pub trials: usize,
    pub failures: usize,
    /// More than a tenth of the trials failed.
    pub flagged: bool,
    pub mean_err_m: f64,
    pub std_err_m: f64,
    pub mean_offset_err_s: f64,
    pub fps_nominal: f64,
    pub fps_recovered: f64,
    pub mean_wall_seconds: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Overlay {
    pub offset_frames: f64,
    pub seed: u64,
    pub window: (f64, f64),
    pub truth: PolyTrajectory,
    pub estimates: Vec<(Method, PolyTrajectory)>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchResult {
    pub rows: Vec<TrialRow>,
    pub cells: Vec<CellSummary>,
    pub overlay: Option<Overlay>,
}

struct TrialOutput {
    rows: Vec<TrialRow>,
    overlay: Option<Overlay>,
}

fn run_trial(spec: &ResolvedSpec, offset_frames: f64, trial: usize, want_overlay: bool) -> Result<TrialOutput> {
    let seed = spec.seed.wrapping_add(trial as u64);
    let scene = synthesize_scene(&spec.cell_scene(offset_frames))?;
    let noisy = apply_noise(&scene.observations, &spec.noise.with_seed(seed))?;
    let times = observation_times(&noisy, &scene.truth, spec.eval_target);
    let truth_traj = &scene.truth.trajectories[&spec.eval_target];
    let true_beta = scene.truth.time_models[spec.offset_camera].beta;

    let mut rows = Vec::with_capacity(spec.estimators.len());
    let mut estimates = Vec::new();
    for &method in &spec.estimators {
        let start = Instant::now();
        let outcome = reconstruct(method, &noisy, &spec.orders, &spec.method_options);
        let wall_seconds = start.elapsed().as_secs_f64();
        let mut row = TrialRow {
            estimator: method,
            offset_frames,
            trial,
            seed,
            offset_camera: spec.offset_camera,
            error: None,
            sigma_3d: None,
            offset_error_s: None,
            offsets_recovered: Vec::new(),
            fps_recovered: Vec::new(),
            iterations: 0,
            monotone: true,
            wall_seconds,
        };
        let scored = outcome.and_then(|r| {
            let est = r
                .trajectories
                .get(&spec.eval_target)
                .ok_or_else(|| Error::InvalidInput("eval target was not reconstructed".into()))?;
            let err = localization_error(est, truth_traj, &times)?;
            Ok((r.clone(), est.clone(), err.sigma_3d))
        });
        match scored {
            Ok((r, est, sigma)) => {
                row.sigma_3d = Some(sigma);
                row.offset_error_s = Some(r.time_models[spec.offset_camera].beta - true_beta);
                row.offsets_recovered = r.time_models.iter().map(|t| t.beta).collect();
                row.fps_recovered = r.time_models.iter().map(|t| t.alpha).collect();
                row.iterations = r.report.iterations;
                row.monotone = r.report.is_monotone();
                if want_overlay {
                    estimates.push((method, est));
                }
            }
            Err(e) => row.error = Some(e.to_string()),
        }
        rows.push(row);
    }
    let overlay = want_overlay.then(|| {
        let (lo, hi) = times
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &t| (lo.min(t), hi.max(t)));
        Overlay {
            offset_frames,
            seed,
            window: (lo, hi),
            truth: truth_traj.clone(),
            estimates,
        }
    });
    Ok(TrialOutput { rows, overlay })
}

fn mean(values: &[f64]) -> f64 {
    if values.is_empty() {
        f64::NAN
    } else {
        values.iter().sum::<f64>() / values.len() as f64
    }
}

fn sample_std(values: &[f64]) -> f64 {
    if values.len() < 2 {
        return 0.0;
    }
    let m = mean(values);
    (values.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (values.len() - 1) as f64).sqrt()
}

/// Aggregates rows into one summary per `(offset, estimator)` in sweep order.
pub fn summarize(spec: &ResolvedSpec, rows: &[TrialRow]) -> Vec<CellSummary> {
    let mut cells = Vec::new();
    for &offset in &spec.offsets {
        for &method in &spec.estimators {
            let cell: Vec<&TrialRow> = rows
                .iter()
                .filter(|r| r.estimator == method && r.offset_frames == offset)
                .collect();
            let ok: Vec<&TrialRow> = cell.iter().copied().filter(|r| r.succeeded()).collect();
            let failures = cell.len() - ok.len();
            let errs: Vec<f64> = ok.iter().filter_map(|r| r.sigma_3d).collect();
            let offs: Vec<f64> = ok.iter().filter_map(|r| r.offset_error_s.map(f64::abs)).collect();
            let fps: Vec<f64> = ok.iter().map(|r| r.fps_recovered[spec.offset_camera]).collect();
            let wall: Vec<f64> = cell.iter().map(|r| r.wall_seconds).collect();
            cells.push(CellSummary {
                estimator: method,
                offset_frames: offset,
                trials: cell.len(),
                failures,
                flagged: failures * 10 > cell.len(),
                mean_err_m: mean(&errs),
                std_err_m: sample_std(&errs),
                mean_offset_err_s: mean(&offs),
                fps_nominal: spec.nominal_rate(),
                fps_recovered: mean(&fps),
                mean_wall_seconds: mean(&wall),
            });
        }
    }
    cells
}

/// Runs every `(offset, trial)` job on up to `parallel` threads.
pub fn run_monte_carlo(spec: &ResolvedSpec, parallel: usize) -> Result<BenchResult> {
    spec.validate()?;
    let jobs: Vec<(usize, f64, usize)> = spec
        .offsets
        .iter()
        .enumerate()
        .flat_map(|(i, &off)| (0..spec.trials).map(move |t| (i, off, t)))
        .collect();
    let work = |&(i, off, t): &(usize, f64, usize)| run_trial(spec, off, t, i == 0 && t == 0);
    let outputs: Vec<Result<TrialOutput>> = if parallel <= 1 {
        jobs.iter().map(work).collect()
    } else {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(parallel)
            .build()
            .map_err(|e| Error::InvalidInput(format!("cannot start thread pool: {e}")))?;
        pool.install(|| jobs.par_iter().map(work).collect())
    };

    let mut rows = Vec::with_capacity(jobs.len() * spec.estimators.len());
    let mut overlay = None;
    for out in outputs {
        let out = out?;
        rows.extend(out.rows);
        if out.overlay.is_some() {
            overlay = out.overlay;
        }
    }
    let cells = summarize(spec, &rows);
    Ok(BenchResult { rows, cells, overlay })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PlotKind {
    OffsetCurve,
    ErrorCurve,
    TrajectoryOverlay,
}

impl FromStr for PlotKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "offset_curve" => Ok(PlotKind::OffsetCurve),
            "error_curve" => Ok(PlotKind::ErrorCurve),
            "trajectory_overlay" => Ok(PlotKind::TrajectoryOverlay),
            other => Err(Error::InvalidInput(format!(
                "unknown plot kind '{other}', expected offset_curve, error_curve or trajectory_overlay"
            ))),
        }
    }
}

/// Samples in the overlay CSV.
pub const OVERLAY_SAMPLES: usize = 101;

fn csv_error(e: impl std::fmt::Display) -> Error {
    Error::InvalidInput(format!("csv output: {e}"))
}

/// Renders one plot table as CSV text.
pub fn plot_csv(result: &BenchResult, kind: PlotKind) -> Result<String> {
    if result.rows.is_empty() {
        return Err(Error::InvalidInput("bench result has no rows".into()));
    }
    let mut w = csv::Writer::from_writer(Vec::new());
    match kind {
        PlotKind::OffsetCurve | PlotKind::ErrorCurve => {
            let mut header = vec!["offset_frames", "estimator", "mean_err_m", "std_err_m", "mean_offset_err_s"];
            if kind == PlotKind::ErrorCurve {
                header.extend(["fps_nominal", "fps_recovered"]);
            }
            w.write_record(&header).map_err(csv_error)?;
            for c in &result.cells {
                let mut rec = vec![
                    format_sig9(c.offset_frames),
                    c.estimator.to_string(),
                    format_sig9(c.mean_err_m),
                    format_sig9(c.std_err_m),
                    format_sig9(c.mean_offset_err_s),
                ];
                if kind == PlotKind::ErrorCurve {
                    rec.push(format_sig9(c.fps_nominal));
                    rec.push(format_sig9(c.fps_recovered));
                }
                w.write_record(&rec).map_err(csv_error)?;
            }
        }
        PlotKind::TrajectoryOverlay => {
            let overlay = result
                .overlay
                .as_ref()
                .ok_or_else(|| Error::InvalidInput("bench result has no overlay".into()))?;
            let mut header = vec!["t".to_string(), "truth_x".into(), "truth_y".into(), "truth_z".into()];
            for (m, _) in &overlay.estimates {
                header.extend(["x", "y", "z"].map(|a| format!("{m}_{a}")));
            }
            w.write_record(&header).map_err(csv_error)?;
            let (lo, hi) = overlay.window;
            for i in 0..OVERLAY_SAMPLES {
                let t = lo + (hi - lo) * i as f64 / (OVERLAY_SAMPLES - 1) as f64;
                let mut rec = vec![format_sig9(t)];
                rec.extend(overlay.truth.eval(t).iter().map(|&v| format_sig9(v)));
                for (_, est) in &overlay.estimates {
                    rec.extend(est.eval(t).iter().map(|&v| format_sig9(v)));
                }
                w.write_record(&rec).map_err(csv_error)?;
            }
        }
    }
    String::from_utf8(w.into_inner().map_err(csv_error)?).map_err(csv_error)
}

/// Raw per-trial table. `wall_s` is the only column that varies between runs.
pub fn trials_csv(result: &BenchResult) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record([
        "estimator",
        "offset_frames",
        "trial",
        "seed",
        "status",
        "sigma_3d_m",
        "offset_err_s",
        "fps_recovered",
        "iterations",
        "monotone",
        "wall_s",
    ])
    .map_err(csv_error)?;
    for r in &result.rows {
        let opt = |v: Option<f64>| v.map(format_sig9).unwrap_or_default();
        let fps = r.fps_recovered.get(r.offset_camera).copied();
        w.write_record([
            r.estimator.to_string(),
            format_sig9(r.offset_frames),
            r.trial.to_string(),
            r.seed.to_string(),
            r.error.clone().map(|e| format!("failed: {e}")).unwrap_or_else(|| "ok".into()),
            opt(r.sigma_3d),
            opt(r.offset_error_s),
            opt(fps),
            r.iterations.to_string(),
            r.monotone.to_string(),
            format_sig9(r.wall_seconds),
        ])
        .map_err(csv_error)?;
    }
    String::from_utf8(w.into_inner().map_err(csv_error)?).map_err(csv_error)
}

pub fn emit_plot_data(result: &BenchResult, kind: &str, path: &Path) -> Result<()> {
    let text = plot_csv(result, PlotKind::from_str(kind)?)?;
    std::fs::write(path, text).map_err(|e| Error::InvalidInput(format!("cannot write {}: {e}", path.display())))
}

/// Writes every configured output below `dir` and returns the paths written.
pub fn write_outputs(result: &BenchResult, outputs: &BenchOutputs, dir: &Path) -> Result<Vec<PathBuf>> {
    std::fs::create_dir_all(dir).map_err(|e| Error::InvalidInput(format!("cannot create {}: {e}", dir.display())))?;
    let mut written = Vec::new();
    let plots = [
        (&outputs.offset_curve, "offset_curve"),
        (&outputs.error_curve, "error_curve"),
        (&outputs.trajectory_overlay, "trajectory_overlay"),
    ];
    for (path, kind) in plots {
        if let Some(p) = path {
            if kind == "trajectory_overlay" && result.overlay.is_none() {
                continue;
            }
            let full = dir.join(p);
            emit_plot_data(result, kind, &full)?;
            written.push(full);
        }
    }
    if let Some(p) = &outputs.trials {
        let full = dir.join(p);
        std::fs::write(&full, trials_csv(result)?)
            .map_err(|e| Error::InvalidInput(format!("cannot write {}: {e}", full.display())))?;
        written.push(full);
    }
    Ok(written)
}
