//! Synthetic scenes and the pose/pixel noise model.
//!
//! A scene is a set of cameras flying along smooth paths while looking at a
//! fixed point, each sampling at the true frame rate with its own offset, and
//! a set of targets moving along polynomial trajectories. Synthesis produces
//! exact projections; [`apply_noise`] then corrupts pixels and measured poses.
//!
//! Noise draws come from ChaCha8 seeded with the noise seed, one stream per
//! channel, so enabling one channel never changes the draws of another:
//! pixels use stream 1, systematic and random rotation 2 and 3, systematic and
//! random position 4 and 5.

use std::collections::BTreeMap;

use nalgebra::{Vector2, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::estimators::{CameraTrack, Observation, ObservationSet};
use crate::geometry::{project_point, FramePose, PinholeCamera, UnitQuaternion, DEPTH_EPSILON};
use crate::motion::{PolyTrajectory, TimeModel};

/// Smooth camera path in global time.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum CameraPath {
    /// `p0 + v t + ½ a t²`.
    Quadratic {
        p0: [f64; 3],
        v: [f64; 3],
        a: [f64; 3],
    },
    /// Piecewise-linear through `points` at `times`, held constant outside.
    Polyline { times: Vec<f64>, points: Vec<[f64; 3]> },
}

impl CameraPath {
    pub fn position(&self, t: f64) -> Vector3<f64> {
        match self {
            CameraPath::Quadratic { p0, v, a } => {
                Vector3::from(*p0) + Vector3::from(*v) * t + Vector3::from(*a) * (0.5 * t * t)
            }
            CameraPath::Polyline { times, points } => {
                let i = times.partition_point(|&ti| ti <= t);
                if i == 0 {
                    Vector3::from(points[0])
                } else if i == times.len() {
                    Vector3::from(points[times.len() - 1])
                } else {
                    let w = (t - times[i - 1]) / (times[i] - times[i - 1]);
                    Vector3::from(points[i - 1]) * (1.0 - w) + Vector3::from(points[i]) * w
                }
            }
        }
    }

    fn validate(&self) -> Result<()> {
        if let CameraPath::Polyline { times, points } = self {
            if times.is_empty() || times.len() != points.len() {
                return Err(Error::Config("polyline needs one time per waypoint".into()));
            }
            if times.windows(2).any(|w| !(w[1] > w[0])) {
                return Err(Error::Config("polyline times must increase".into()));
            }
        }
        Ok(())
    }

    fn translated(&self, d: &Vector3<f64>) -> Self {
        let shift = |p: &[f64; 3]| [p[0] + d.x, p[1] + d.y, p[2] + d.z];
        match self {
            CameraPath::Quadratic { p0, v, a } => CameraPath::Quadratic {
                p0: shift(p0),
                v: *v,
                a: *a,
            },
            CameraPath::Polyline { times, points } => CameraPath::Polyline {
                times: times.clone(),
                points: points.iter().map(shift).collect(),
            },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CameraConfig {
    pub intrinsics: PinholeCamera,
    /// Offset of frame 0 from global time zero, in frames of the true rate.
    pub offset_frames: f64,
    pub path: CameraPath,
    pub look_at: [f64; 3],
    /// Frame rate the camera reports; defaults to the true rate.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub nominal_fps: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TargetConfig {
    pub trajectory: PolyTrajectory,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneConfig {
    pub frame_rate_hz: f64,
    pub frames_per_camera: usize,
    pub cameras: Vec<CameraConfig>,
    pub targets: Vec<TargetConfig>,
    #[serde(default = "default_up")]
    pub up: [f64; 3],
}

fn default_up() -> [f64; 3] {
    [0.0, 0.0, 1.0]
}

#[derive(Debug, Clone, PartialEq)]
pub struct GroundTruth {
    pub trajectories: BTreeMap<usize, PolyTrajectory>,
    pub time_models: Vec<TimeModel>,
    pub poses: Vec<Vec<FramePose>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Scene {
    pub observations: ObservationSet,
    pub truth: GroundTruth,
}

impl SceneConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.frame_rate_hz.is_finite() && self.frame_rate_hz > 0.0) {
            return Err(Error::Config(format!("frame rate must be positive, got {}", self.frame_rate_hz)));
        }
        if self.cameras.is_empty() || self.targets.is_empty() || self.frames_per_camera == 0 {
            return Err(Error::Config("scene needs cameras, targets and frames".into()));
        }
        for (i, cam) in self.cameras.iter().enumerate() {
            cam.path.validate()?;
            if !cam.offset_frames.is_finite() {
                return Err(Error::Config(format!("camera {i} has a non-finite offset")));
            }
            if let Some(fps) = cam.nominal_fps {
                if !(fps.is_finite() && fps > 0.0) {
                    return Err(Error::Config(format!("camera {i} nominal fps must be positive")));
                }
            }
        }
        Ok(())
    }

    pub fn true_time_models(&self) -> Vec<TimeModel> {
        self.cameras
            .iter()
            .map(|c| TimeModel {
                alpha: self.frame_rate_hz,
                beta: c.offset_frames / self.frame_rate_hz,
            })
            .collect()
    }

    /// Sets camera `cam`'s offset, keeping the others.
    pub fn with_offset(mut self, cam: usize, offset_frames: f64) -> Self {
        self.cameras[cam].offset_frames = offset_frames;
        self
    }

    /// Reports `fps` as the nominal rate of every non-gauge camera.
    pub fn with_nominal_fps(mut self, fps: f64) -> Self {
        for cam in self.cameras.iter_mut().skip(1) {
            cam.nominal_fps = Some(fps);
        }
        self
    }

    /// Two fast platforms flying past the scene about 500 m out, 50 frames
    /// at 10 Hz, observing `targets` fast ground targets spread over 400 m.
    pub fn replica(order: usize, targets: usize, offset_frames: f64) -> Self {
        let intrinsics = PinholeCamera::new(1200.0, 1200.0, 640.0, 360.0).expect("valid intrinsics");
        let cameras = vec![
            CameraConfig {
                intrinsics,
                offset_frames: 0.0,
                path: CameraPath::Quadratic {
                    p0: [-260.0, -340.0, 240.0],
                    v: [90.0, 18.0, 0.0],
                    a: [0.0, 12.0, 0.0],
                },
                look_at: [0.0, 0.0, 0.0],
                nominal_fps: None,
            },
            CameraConfig {
                intrinsics,
                offset_frames,
                path: CameraPath::Quadratic {
                    p0: [300.0, -280.0, 220.0],
                    v: [-72.0, 36.0, 0.0],
                    a: [0.0, -9.0, 0.0],
                },
                look_at: [0.0, 0.0, 0.0],
                nominal_fps: None,
            },
        ];
        // start, velocity, half acceleration
        let motions = [
            ([-120.0, -40.0, 0.0], [50.0, 30.0, 0.0], [2.0, 1.5, 0.0]),
            ([160.0, -120.0, 0.0], [-40.0, 36.0, 0.0], [-1.6, 1.0, 0.0]),
            ([-180.0, 140.0, 4.0], [30.0, -44.0, 0.0], [1.2, -1.8, 0.0]),
            ([120.0, 180.0, 8.0], [-50.0, -24.0, 0.0], [1.8, 1.2, 0.0]),
        ];
        let targets = (0..targets)
            .map(|i| {
                let (p, v, a) = motions[i % motions.len()];
                let ring = (i / motions.len()) as f64 * 50.0;
                let mut terms = vec![Vector3::new(p[0] + ring, p[1] - ring, p[2])];
                if order >= 1 {
                    terms.push(Vector3::from(v));
                }
                if order >= 2 {
                    terms.push(Vector3::from(a));
                }
                terms.extend((3..=order).map(|_| Vector3::zeros()));
                TargetConfig {
                    trajectory: PolyTrajectory::from_terms(&terms).expect("order within range"),
                }
            })
            .collect();
        Self {
            frame_rate_hz: 10.0,
            frames_per_camera: 50,
            cameras,
            targets,
            up: default_up(),
        }
    }

    /// A platform flying a curve 15 to 20 km from highway traffic, plus a
    /// virtual twin on the same path shape 20 km away, 25 Hz, 40-frame
    /// offset, one real target and three virtual ones at about 60 km/h.
    pub fn flight_replica() -> Self {
        let intrinsics = PinholeCamera::new(2000.0, 2000.0, 640.0, 360.0).expect("valid intrinsics");
        let path = CameraPath::Quadratic {
            p0: [-10_000.0, -15_000.0, 3000.0],
            v: [60.0, 25.0, 0.0],
            a: [-1.5, 3.0, 0.0],
        };
        let twin = path.translated(&Vector3::new(20_000.0, 0.0, 0.0));
        let cameras = vec![
            CameraConfig {
                intrinsics,
                offset_frames: 0.0,
                path,
                look_at: [0.0, 0.0, 0.0],
                nominal_fps: None,
            },
            CameraConfig {
                intrinsics,
                offset_frames: 40.0,
                path: twin,
                look_at: [0.0, 0.0, 0.0],
                nominal_fps: None,
            },
        ];
        let speed = 60.0 / 3.6;
        let targets = [
            ([0.0, 0.0, 0.0], [1.0, 0.2]),
            ([150.0, 40.0, 0.0], [0.9, 0.4]),
            ([-120.0, -80.0, 0.0], [1.0, -0.1]),
            ([60.0, -150.0, 0.0], [0.8, 0.6]),
        ]
        .into_iter()
        .map(|(p, dir)| {
            let d = Vector3::new(dir[0], dir[1], 0.0).normalize() * speed;
            TargetConfig {
                trajectory: PolyTrajectory::from_terms(&[Vector3::from(p), d]).expect("linear"),
            }
        })
        .collect();
        Self {
            frame_rate_hz: 25.0,
            frames_per_camera: 150,
            cameras,
            targets,
            up: default_up(),
        }
    }

    /// Random non-degenerate scene: cameras on random arcs around the origin
    /// at 300 to 900 m, targets near the origin with random motion.
    pub fn random<R: Rng + ?Sized>(rng: &mut R, cameras: usize, targets: usize, order: usize) -> Self {
        let intrinsics = PinholeCamera::new(1500.0, 1500.0, 640.0, 360.0).expect("valid intrinsics");
        let cameras = (0..cameras)
            .map(|i| {
                let azimuth = i as f64 * std::f64::consts::TAU / cameras as f64 + rng.random_range(-0.4..0.4);
                let range = rng.random_range(300.0..900.0);
                let height = rng.random_range(150.0..500.0);
                let p0 = [range * azimuth.cos(), range * azimuth.sin(), height];
                let offset_frames = if i == 0 { 0.0 } else { rng.random_range(0.0..10.0) };
                let mut vec3 = |s: f64| [rng.random_range(-s..s), rng.random_range(-s..s), rng.random_range(-s / 4.0..s / 4.0)];
                CameraConfig {
                    intrinsics,
                    offset_frames,
                    path: CameraPath::Quadratic {
                        p0,
                        v: vec3(30.0),
                        a: vec3(4.0),
                    },
                    look_at: [0.0, 0.0, 0.0],
                    nominal_fps: None,
                }
            })
            .collect();
        let targets = (0..targets)
            .map(|_| {
                let scales = [40.0, 15.0, 1.0, 0.2, 0.05];
                let terms: Vec<Vector3<f64>> = (0..=order)
                    .map(|k| {
                        let s = scales[k];
                        Vector3::new(rng.random_range(-s..s), rng.random_range(-s..s), rng.random_range(-s..s) * 0.3)
                    })
                    .collect();
                TargetConfig {
                    trajectory: PolyTrajectory::from_terms(&terms).expect("order within range"),
                }
            })
            .collect();
        Self {
            frame_rate_hz: 10.0,
            frames_per_camera: 50,
            cameras,
            targets,
            up: default_up(),
        }
    }
}

/// Named scene presets for config files.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "preset", rename_all = "snake_case")]
pub enum ScenePreset {
    Replica {
        #[serde(default = "default_preset_order")]
        order: usize,
        #[serde(default = "default_preset_targets")]
        targets: usize,
        #[serde(default)]
        offset_frames: f64,
    },
    Flight,
}

fn default_preset_order() -> usize {
    1
}

fn default_preset_targets() -> usize {
    1
}

/// A scene given by preset name or spelled out in full.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum SceneSpec {
    Preset(ScenePreset),
    Explicit(SceneConfig),
}

impl SceneSpec {
    pub fn build(&self) -> SceneConfig {
        match self {
            SceneSpec::Preset(ScenePreset::Replica { order, targets, offset_frames }) => {
                SceneConfig::replica(*order, *targets, *offset_frames)
            }
            SceneSpec::Preset(ScenePreset::Flight) => SceneConfig::flight_replica(),
            SceneSpec::Explicit(cfg) => cfg.clone(),
        }
    }
}

/// Input of one simulation run: a scene and optional noise.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimulationConfig {
    pub scene: SceneSpec,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub noise: Option<NoiseConfig>,
}

/// Exact projections of every target in every frame of every camera.
pub fn synthesize_scene(cfg: &SceneConfig) -> Result<Scene> {
    cfg.validate()?;
    let time_models = cfg.true_time_models();
    let up = Vector3::from(cfg.up);
    let mut tracks = Vec::with_capacity(cfg.cameras.len());
    let mut observations = Vec::new();
    for (c, cam) in cfg.cameras.iter().enumerate() {
        let look_at = Vector3::from(cam.look_at);
        let mut poses = Vec::with_capacity(cfg.frames_per_camera);
        for f in 0..cfg.frames_per_camera {
            let t = time_models[c].global_time(f);
            let center = cam.path.position(t);
            let pose = FramePose::look_at(&center, &look_at, &up)
                .map_err(|e| Error::Config(format!("camera {c} frame {f}: {e}")))?;
            for (n, target) in cfg.targets.iter().enumerate() {
                let x = target.trajectory.eval(t);
                let pixel = project_point(&x, &cam.intrinsics, &pose).map_err(|_| {
                    Error::Config(format!("target {n} is behind camera {c} at frame {f}"))
                })?;
                debug_assert!(pose.to_camera(&x).z > DEPTH_EPSILON);
                observations.push(Observation {
                    camera: c,
                    frame: f,
                    target: n,
                    pixel,
                });
            }
            poses.push(pose);
        }
        tracks.push(CameraTrack {
            intrinsics: cam.intrinsics,
            nominal: TimeModel {
                alpha: cam.nominal_fps.unwrap_or(cfg.frame_rate_hz),
                beta: 0.0,
            },
            poses,
        });
    }
    let truth = GroundTruth {
        trajectories: cfg
            .targets
            .iter()
            .enumerate()
            .map(|(n, t)| (n, t.trajectory.clone()))
            .collect(),
        time_models,
        poses: tracks.iter().map(|t| t.poses.clone()).collect(),
    };
    Ok(Scene {
        observations: ObservationSet {
            cameras: tracks,
            observations,
        },
        truth,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NoiseConfig {
    /// Pixels.
    pub pixel_sigma: f64,
    /// Degrees.
    pub rotation_systematic_sigma: f64,
    /// Degrees.
    pub rotation_random_sigma: f64,
    /// Meters.
    pub position_systematic_sigma: f64,
    /// Meters.
    pub position_random_sigma: f64,
    #[serde(default)]
    pub seed: u64,
}

impl NoiseConfig {
    pub fn none(seed: u64) -> Self {
        Self {
            pixel_sigma: 0.0,
            rotation_systematic_sigma: 0.0,
            rotation_random_sigma: 0.0,
            position_systematic_sigma: 0.0,
            position_random_sigma: 0.0,
            seed,
        }
    }

    /// 2 px, 0.5° systematic and random rotation, 3 m systematic and 1 m
    /// random position.
    pub fn high(seed: u64) -> Self {
        Self {
            pixel_sigma: 2.0,
            rotation_systematic_sigma: 0.5,
            rotation_random_sigma: 0.5,
            position_systematic_sigma: 3.0,
            position_random_sigma: 1.0,
            seed,
        }
    }

    /// A quarter of every sigma of [`NoiseConfig::high`].
    pub fn low(seed: u64) -> Self {
        Self::high(seed).scaled(0.25)
    }

    pub fn scaled(self, s: f64) -> Self {
        Self {
            pixel_sigma: self.pixel_sigma * s,
            rotation_systematic_sigma: self.rotation_systematic_sigma * s,
            rotation_random_sigma: self.rotation_random_sigma * s,
            position_systematic_sigma: self.position_systematic_sigma * s,
            position_random_sigma: self.position_random_sigma * s,
            seed: self.seed,
        }
    }

    pub fn with_seed(self, seed: u64) -> Self {
        Self { seed, ..self }
    }

    pub fn validate(&self) -> Result<()> {
        let sigmas = [
            self.pixel_sigma,
            self.rotation_systematic_sigma,
            self.rotation_random_sigma,
            self.position_systematic_sigma,
            self.position_random_sigma,
        ];
        if sigmas.iter().all(|s| s.is_finite() && *s >= 0.0) {
            Ok(())
        } else {
            Err(Error::Config("noise sigmas must be finite and non-negative".into()))
        }
    }
}

const PIXEL_STREAM: u64 = 1;
const ROTATION_SYSTEMATIC_STREAM: u64 = 2;
const ROTATION_RANDOM_STREAM: u64 = 3;
const POSITION_SYSTEMATIC_STREAM: u64 = 4;
const POSITION_RANDOM_STREAM: u64 = 5;

fn channel(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

fn gaussian_vector(rng: &mut ChaCha8Rng, sigma: f64) -> Vector3<f64> {
    Vector3::from_fn(|_, _| {
        let z: f64 = StandardNormal.sample(rng);
        sigma * z
    })
}

/// Rotation about a uniformly random axis by a normal angle (degrees).
fn small_rotation(rng: &mut ChaCha8Rng, sigma_deg: f64) -> UnitQuaternion {
    let axis = loop {
        let v = gaussian_vector(rng, 1.0);
        let n = v.norm();
        if n > 1e-12 {
            break v / n;
        }
    };
    let z: f64 = StandardNormal.sample(rng);
    UnitQuaternion::exp(&(axis * (sigma_deg.to_radians() * z)))
}

/// Perturbs pixels and measured poses; zero-sigma channels are untouched.
pub fn apply_noise(obs: &ObservationSet, noise: &NoiseConfig) -> Result<ObservationSet> {
    noise.validate()?;
    let mut out = obs.clone();
    if noise.pixel_sigma > 0.0 {
        let mut rng = channel(noise.seed, PIXEL_STREAM);
        let normal = Normal::new(0.0, noise.pixel_sigma).expect("validated sigma");
        for o in &mut out.observations {
            o.pixel += Vector2::new(normal.sample(&mut rng), normal.sample(&mut rng));
        }
    }

    let rotate = noise.rotation_systematic_sigma > 0.0 || noise.rotation_random_sigma > 0.0;
    let shift = noise.position_systematic_sigma > 0.0 || noise.position_random_sigma > 0.0;
    if !(rotate || shift) {
        return Ok(out);
    }
    let mut rot_sys = channel(noise.seed, ROTATION_SYSTEMATIC_STREAM);
    let mut rot_rand = channel(noise.seed, ROTATION_RANDOM_STREAM);
    let mut pos_sys = channel(noise.seed, POSITION_SYSTEMATIC_STREAM);
    let mut pos_rand = channel(noise.seed, POSITION_RANDOM_STREAM);
    for cam in &mut out.cameras {
        let bias_rotation = (noise.rotation_systematic_sigma > 0.0)
            .then(|| small_rotation(&mut rot_sys, noise.rotation_systematic_sigma));
        let bias_position = (noise.position_systematic_sigma > 0.0)
            .then(|| gaussian_vector(&mut pos_sys, noise.position_systematic_sigma));
        for pose in &mut cam.poses {
            let mut rotation = pose.rotation;
            if let Some(b) = &bias_rotation {
                rotation = b.compose(&rotation);
            }
            if noise.rotation_random_sigma > 0.0 {
                rotation = small_rotation(&mut rot_rand, noise.rotation_random_sigma).compose(&rotation);
            }
            let mut center = pose.optical_center();
            if let Some(b) = &bias_position {
                center += b;
            }
            if noise.position_random_sigma > 0.0 {
                center += gaussian_vector(&mut pos_rand, noise.position_random_sigma);
            }
            *pose = FramePose::from_center(rotation, &center);
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LocalizationError {
    pub sigma_x: f64,
    pub sigma_y: f64,
    pub sigma_z: f64,
    pub sigma_3d: f64,
}

/// Mean absolute per-axis and mean Euclidean deviation over `times`.
pub fn localization_error(est: &PolyTrajectory, truth: &PolyTrajectory, times: &[f64]) -> Result<LocalizationError> {
    if times.is_empty() {
        return Err(Error::InvalidInput("localization error needs sample times".into()));
    }
    let mut sum = Vector3::zeros();
    let mut sum_3d = 0.0;
    for &t in times {
        let d = est.eval(t) - truth.eval(t);
        sum += d.abs();
        sum_3d += d.norm();
    }
    let n = times.len() as f64;
    Ok(LocalizationError {
        sigma_x: sum.x / n,
        sigma_y: sum.y / n,
        sigma_z: sum.z / n,
        sigma_3d: sum_3d / n,
    })
}

/// True global times of every observation of `target`, in observation order.
pub fn observation_times(obs: &ObservationSet, truth: &GroundTruth, target: usize) -> Vec<f64> {
    obs.observations
        .iter()
        .filter(|o| o.target == target)
        .map(|o| truth.time_models[o.camera].global_time(o.frame))
        .collect()
}
