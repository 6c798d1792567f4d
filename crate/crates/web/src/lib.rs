//! Browser bindings for the static demo page in `www/`.
//!
//! Every export takes and returns a JSON string. The `*_json` functions hold
//! the logic and are what the native tests call.

use serde::{Deserialize, Serialize};
use trajsync::estimators::{reconstruct, LiOptions, Method, MethodOptions};
use trajsync::intersection::check_solvability;
use trajsync::nlls::SolveOptions;
use trajsync::simulator::{
    apply_noise, localization_error, observation_times, synthesize_scene, NoiseConfig, SceneConfig,
};
use wasm_bindgen::prelude::*;

const PATH_SAMPLES: usize = 60;

fn default_targets() -> usize {
    4
}
fn default_order() -> usize {
    1
}
fn default_offset() -> f64 {
    5.0
}
fn default_scale() -> f64 {
    1.0
}
fn default_prior() -> f64 {
    100.0
}
fn default_methods() -> Vec<Method> {
    Method::ALL.to_vec()
}
fn default_trials() -> usize {
    20
}

#[derive(Debug, Deserialize)]
pub struct DemoRequest {
    #[serde(default = "default_targets")]
    pub targets: usize,
    #[serde(default = "default_order")]
    pub order: usize,
    #[serde(default = "default_offset")]
    pub offset_frames: f64,
    /// Multiplier on the reference noise levels; 0 gives exact data.
    #[serde(default = "default_scale")]
    pub noise_scale: f64,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_methods")]
    pub methods: Vec<Method>,
    #[serde(default = "default_prior")]
    pub rotation_prior: f64,
    #[serde(default)]
    pub optimize_fps: bool,
    #[serde(default)]
    pub nominal_fps: Option<f64>,
}

#[derive(Debug, Serialize)]
pub struct EstimateView {
    pub method: Method,
    pub error: Option<String>,
    /// Mean 3D error per target, meters.
    pub sigma_3d: Vec<f64>,
    pub offsets_s: Vec<f64>,
    pub fps: Vec<f64>,
    pub paths: Vec<Vec<[f64; 3]>>,
}

#[derive(Debug, Serialize)]
pub struct DemoResponse {
    pub window: [f64; 2],
    pub true_offsets_s: Vec<f64>,
    pub cameras: Vec<Vec<[f64; 3]>>,
    pub truth: Vec<Vec<[f64; 3]>>,
    pub estimates: Vec<EstimateView>,
}

fn options(rotation_prior: f64, optimize_fps: bool) -> MethodOptions {
    MethodOptions {
        optimize_fps,
        rotation_prior_weight: rotation_prior,
        solve: SolveOptions::default(),
        li: LiOptions::default(),
    }
}

fn scene_config(targets: usize, order: usize, offset: f64, nominal_fps: Option<f64>) -> SceneConfig {
    let cfg = SceneConfig::replica(order, targets, offset);
    match nominal_fps {
        Some(f) => cfg.with_nominal_fps(f),
        None => cfg,
    }
}

fn sample(window: [f64; 2], f: impl Fn(f64) -> [f64; 3]) -> Vec<[f64; 3]> {
    (0..PATH_SAMPLES)
        .map(|i| f(window[0] + (window[1] - window[0]) * i as f64 / (PATH_SAMPLES - 1) as f64))
        .collect()
}

pub fn simulate_and_reconstruct_json(input: &str) -> Result<String, String> {
    let req: DemoRequest = serde_json::from_str(input).map_err(|e| e.to_string())?;
    if req.targets == 0 || req.targets > 12 {
        return Err("targets must be between 1 and 12".into());
    }
    let cfg = scene_config(req.targets, req.order, req.offset_frames, req.nominal_fps);
    let scene = synthesize_scene(&cfg).map_err(|e| e.to_string())?;
    let noise = NoiseConfig::high(req.seed).scaled(req.noise_scale);
    let obs = apply_noise(&scene.observations, &noise).map_err(|e| e.to_string())?;
    let times: Vec<Vec<f64>> = (0..req.targets).map(|t| observation_times(&obs, &scene.truth, t)).collect();
    let (lo, hi) = times
        .iter()
        .flatten()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &t| (lo.min(t), hi.max(t)));
    let window = [lo, hi];

    let truth = (0..req.targets)
        .map(|t| sample(window, |s| scene.truth.trajectories[&t].eval(s).into()))
        .collect();
    let cameras = scene
        .truth
        .poses
        .iter()
        .map(|poses| poses.iter().map(|p| p.optical_center().into()).collect())
        .collect();
    let opts = options(req.rotation_prior, req.optimize_fps);
    let estimates = req
        .methods
        .iter()
        .map(|&method| match reconstruct(method, &obs, &[req.order], &opts) {
            Ok(r) => EstimateView {
                method,
                error: None,
                sigma_3d: (0..req.targets)
                    .map(|t| {
                        localization_error(&r.trajectories[&t], &scene.truth.trajectories[&t], &times[t])
                            .map(|e| e.sigma_3d)
                            .unwrap_or(f64::NAN)
                    })
                    .collect(),
                offsets_s: r.time_models.iter().map(|t| t.beta).collect(),
                fps: r.time_models.iter().map(|t| t.alpha).collect(),
                paths: (0..req.targets)
                    .map(|t| sample(window, |s| r.trajectories[&t].eval(s).into()))
                    .collect(),
            },
            Err(e) => EstimateView {
                method,
                error: Some(e.to_string()),
                sigma_3d: Vec::new(),
                offsets_s: Vec::new(),
                fps: Vec::new(),
                paths: Vec::new(),
            },
        })
        .collect();
    let response = DemoResponse {
        window,
        true_offsets_s: scene.truth.time_models.iter().map(|t| t.beta).collect(),
        cameras,
        truth,
        estimates,
    };
    serde_json::to_string(&response).map_err(|e| e.to_string())
}

#[derive(Debug, Deserialize)]
pub struct SweepRequest {
    pub offsets: Vec<f64>,
    #[serde(default = "default_trials")]
    pub trials: usize,
    #[serde(default = "default_order")]
    pub order: usize,
    #[serde(default = "default_scale")]
    pub noise_scale: f64,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub methods: Option<Vec<Method>>,
}

#[derive(Debug, Serialize)]
pub struct SweepSeries {
    pub method: Method,
    /// Mean error of target 0 per offset; NaN when every trial failed.
    pub mean_err_m: Vec<f64>,
    pub failures: Vec<usize>,
}

#[derive(Debug, Serialize)]
pub struct SweepResponse {
    pub offsets: Vec<f64>,
    pub series: Vec<SweepSeries>,
}

/// Small in-page version of the offset sweep; trial `i` uses seed `seed + i`.
pub fn offset_sweep_json(input: &str) -> Result<String, String> {
    let req: SweepRequest = serde_json::from_str(input).map_err(|e| e.to_string())?;
    if req.trials == 0 || req.trials > 500 {
        return Err("trials must be between 1 and 500".into());
    }
    let methods = req.methods.unwrap_or_else(|| vec![Method::MultiTi, Method::Algorithm1]);
    let opts = options(0.0, false);
    let mut series: Vec<SweepSeries> = methods
        .iter()
        .map(|&method| SweepSeries { method, mean_err_m: Vec::new(), failures: Vec::new() })
        .collect();
    for &offset in &req.offsets {
        let scene = synthesize_scene(&SceneConfig::replica(req.order, 1, offset)).map_err(|e| e.to_string())?;
        let mut sums = vec![(0.0, 0usize, 0usize); methods.len()];
        for trial in 0..req.trials {
            let noise = NoiseConfig::high(req.seed.wrapping_add(trial as u64)).scaled(req.noise_scale);
            let obs = apply_noise(&scene.observations, &noise).map_err(|e| e.to_string())?;
            let times = observation_times(&obs, &scene.truth, 0);
            for (m, &method) in methods.iter().enumerate() {
                let err = reconstruct(method, &obs, &[req.order], &opts)
                    .and_then(|r| localization_error(&r.trajectories[&0], &scene.truth.trajectories[&0], &times));
                match err {
                    Ok(e) => {
                        sums[m].0 += e.sigma_3d;
                        sums[m].1 += 1;
                    }
                    Err(_) => sums[m].2 += 1,
                }
            }
        }
        for (s, (total, ok, failed)) in series.iter_mut().zip(sums) {
            s.mean_err_m.push(if ok > 0 { total / ok as f64 } else { f64::NAN });
            s.failures.push(failed);
        }
    }
    serde_json::to_string(&SweepResponse { offsets: req.offsets, series }).map_err(|e| e.to_string())
}

#[derive(Debug, Deserialize)]
pub struct SolvabilityRequest {
    /// Observed frames of each camera.
    pub frames: Vec<usize>,
    /// Polynomial order of each target.
    pub orders: Vec<usize>,
    #[serde(default)]
    pub rotations: bool,
}

pub fn solvability_json(input: &str) -> Result<String, String> {
    let req: SolvabilityRequest = serde_json::from_str(input).map_err(|e| e.to_string())?;
    let report = check_solvability(req.frames.len(), &req.frames, &req.orders, req.rotations);
    serde_json::to_string(&report).map_err(|e| e.to_string())
}

/// Simulates the two-camera scene at the given offset, runs the chosen
/// estimators and returns sampled true and estimated paths.
#[wasm_bindgen]
pub fn simulate_and_reconstruct(input: &str) -> Result<String, JsError> {
    simulate_and_reconstruct_json(input).map_err(|e| JsError::new(&e))
}

/// Mean error against offset for a handful of estimators.
#[wasm_bindgen]
pub fn offset_sweep(input: &str) -> Result<String, JsError> {
    offset_sweep_json(input).map_err(|e| JsError::new(&e))
}

/// Equation and unknown counts for a camera and target configuration.
#[wasm_bindgen]
pub fn solvability(input: &str) -> Result<String, JsError> {
    solvability_json(input).map_err(|e| JsError::new(&e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::Value;

    #[test]
    fn noise_free_demo_recovers_paths() {
        let out = simulate_and_reconstruct_json(r#"{"noise_scale": 0, "targets": 4}"#).unwrap();
        let v: Value = serde_json::from_str(&out).unwrap();
        assert_eq!(v["truth"].as_array().unwrap().len(), 4);
        for est in v["estimates"].as_array().unwrap() {
            // Multi-TI ignores the offset and Li stops after 20 linear-rate rounds.
            if est["method"] == "multi-ti" || est["method"] == "li" {
                continue;
            }
            assert!(est["error"].is_null(), "{est}");
            for s in est["sigma_3d"].as_array().unwrap() {
                assert!(s.as_f64().unwrap() < 1e-6, "{}: {s}", est["method"]);
            }
        }
    }

    #[test]
    fn demo_reports_estimator_failures_inline() {
        let out = simulate_and_reconstruct_json(r#"{"targets": 1, "methods": ["alg2", "alg1"]}"#).unwrap();
        let v: Value = serde_json::from_str(&out).unwrap();
        assert!(v["estimates"][0]["error"].as_str().unwrap().contains("underdetermined"));
        assert!(v["estimates"][1]["error"].is_null());
    }

    #[test]
    fn sweep_shows_multi_ti_growing() {
        let out = offset_sweep_json(r#"{"offsets": [1, 8], "trials": 5}"#).unwrap();
        let v: Value = serde_json::from_str(&out).unwrap();
        let multi = &v["series"][0]["mean_err_m"];
        assert!(multi[1].as_f64().unwrap() > 2.0 * multi[0].as_f64().unwrap());
    }

    #[test]
    fn solvability_counts() {
        let out = solvability_json(r#"{"frames": [50, 50], "orders": [1]}"#).unwrap();
        let v: Value = serde_json::from_str(&out).unwrap();
        assert_eq!(v["equations"], 200);
        assert_eq!(v["unknowns"], 10);
        assert_eq!(v["solvable"], true);
        let out = solvability_json(r#"{"frames": [50, 50], "orders": [1], "rotations": true}"#).unwrap();
        assert!(out.contains("\"solvable\":false"));
    }

    #[test]
    fn bad_requests_are_errors() {
        assert!(simulate_and_reconstruct_json("{").is_err());
        assert!(simulate_and_reconstruct_json(r#"{"targets": 0}"#).is_err());
        assert!(offset_sweep_json(r#"{"offsets": [1], "trials": 0}"#).is_err());
        assert!(solvability_json(r#"{"frames": [1]}"#).is_err());
    }
}
