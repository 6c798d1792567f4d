//! Trajectory reconstruction from unsynchronized cameras.
//!
//! Four estimators share one observation model. Every observation is a sight
//! ray of camera `c` at frame `f`, timed `t = f / α_c + β_c`, and the target's
//! position `X(t)` should lie on it; the residual is `(I - L Lᵀ)(X(t) - C)`.
//!
//! - [`reconstruct_multi_ti`] trusts the nominal clocks and solves the linear
//!   known-time fit per target.
//! - [`reconstruct_li`] alternates the linear fit with per-camera offset
//!   searches until the offsets settle.
//! - [`reconstruct_algorithm1`] refines motion and clocks jointly with LM.
//! - [`reconstruct_algorithm2`] additionally refines every observed frame's
//!   rotation, which needs several targets to be observable.
//!
//! Camera 0 is the time gauge: its clock is never changed, which removes the
//! affine time ambiguity that polynomial re-expansion would otherwise absorb.
//! Polynomials are fitted in time centered on the middle of the nominal
//! observation window and shifted back before they are returned.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::str::FromStr;

use nalgebra::{Matrix3, Vector2, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{sight_ray, skew, FramePose, PinholeCamera, SightRay, UnitQuaternion};
use crate::intersection::{check_solvability, fit_trajectory_known_time, RayBundle};
use crate::motion::{PolyTrajectory, TimeModel, MAX_ORDER};
use crate::nlls::{
    solve_nlls, BlockJacobian, NllsProblem, ParameterBlock, ResidualBlock, Residuals,
    SolveOptions, SolveReport, Termination,
};

/// Index of the camera whose clock defines global time.
pub const GAUGE_CAMERA: usize = 0;

#[derive(Debug, Clone, PartialEq)]
pub struct CameraTrack {
    pub intrinsics: PinholeCamera,
    /// Clock as reported by the camera; offsets are usually zero here.
    pub nominal: TimeModel,
    /// Measured pose for every frame index.
    pub poses: Vec<FramePose>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Observation {
    pub camera: usize,
    pub frame: usize,
    pub target: usize,
    pub pixel: Vector2<f64>,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct ObservationSet {
    pub cameras: Vec<CameraTrack>,
    pub observations: Vec<Observation>,
}

impl ObservationSet {
    pub fn validate(&self) -> Result<()> {
        for (i, o) in self.observations.iter().enumerate() {
            let cam = self.cameras.get(o.camera).ok_or_else(|| {
                Error::InvalidInput(format!("observation {i} references unknown camera {}", o.camera))
            })?;
            if o.frame >= cam.poses.len() {
                return Err(Error::InvalidInput(format!(
                    "observation {i} references frame {} but camera {} has {} poses",
                    o.frame,
                    o.camera,
                    cam.poses.len()
                )));
            }
            if !o.pixel.iter().all(|v| v.is_finite()) {
                return Err(Error::InvalidInput(format!("observation {i} has a non-finite pixel")));
            }
        }
        Ok(())
    }

    pub fn target_ids(&self) -> Vec<usize> {
        self.observations
            .iter()
            .map(|o| o.target)
            .collect::<BTreeSet<_>>()
            .into_iter()
            .collect()
    }

    pub fn nominal_time_models(&self) -> Vec<TimeModel> {
        self.cameras.iter().map(|c| c.nominal).collect()
    }

    /// Number of distinct frames of each camera that carry an observation.
    pub fn observed_frames_per_camera(&self) -> Vec<usize> {
        let mut frames = vec![BTreeSet::new(); self.cameras.len()];
        for o in &self.observations {
            frames[o.camera].insert(o.frame);
        }
        frames.iter().map(|s| s.len()).collect()
    }

    pub fn sight_ray(&self, o: &Observation) -> SightRay {
        let cam = &self.cameras[o.camera];
        sight_ray(&o.pixel, &cam.intrinsics, &cam.poses[o.frame])
    }

    /// Sight rays of one target timed with the given clocks.
    pub fn bundle(&self, target: usize, time_models: &[TimeModel]) -> Result<RayBundle> {
        let (rays, times) = self
            .observations
            .iter()
            .filter(|o| o.target == target)
            .map(|o| (self.sight_ray(o), time_models[o.camera].global_time(o.frame)))
            .unzip();
        RayBundle::new(rays, times, target)
    }

    /// Midpoint of the global time window spanned by all observations.
    pub fn mid_time(&self, time_models: &[TimeModel]) -> f64 {
        let (lo, hi) = self
            .observations
            .iter()
            .map(|o| time_models[o.camera].global_time(o.frame))
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), t| (lo.min(t), hi.max(t)));
        if lo.is_finite() {
            0.5 * (lo + hi)
        } else {
            0.0
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReconstructionResult {
    pub trajectories: BTreeMap<usize, PolyTrajectory>,
    /// Estimated clock per camera index.
    pub time_models: Vec<TimeModel>,
    /// Refined rotation per observed `(camera, frame)`, rotation refinement only.
    pub rotations: Option<BTreeMap<(usize, usize), UnitQuaternion>>,
    pub report: SolveReport,
}

/// Polynomial order per target id.
pub type Orders = BTreeMap<usize, usize>;

/// Expands an order list onto the observed targets: a single entry applies
/// to every target, otherwise one entry per target in ascending id order.
pub fn orders_for(obs: &ObservationSet, orders: &[usize]) -> Result<Orders> {
    let targets = obs.target_ids();
    let expanded: Vec<usize> = match orders.len() {
        1 => vec![orders[0]; targets.len()],
        n if n == targets.len() => orders.to_vec(),
        n => {
            return Err(Error::InvalidInput(format!(
                "{n} orders given for {} targets",
                targets.len()
            )))
        }
    };
    if let Some(k) = expanded.iter().find(|&&k| k > MAX_ORDER) {
        return Err(Error::InvalidInput(format!(
            "order {k} exceeds the maximum of {MAX_ORDER}"
        )));
    }
    Ok(targets.into_iter().zip(expanded).collect())
}

/// The joint cost `½ Σ ‖(I - L Lᵀ)(X(t) - C)‖²` over all observations.
pub fn joint_cost(
    obs: &ObservationSet,
    trajectories: &BTreeMap<usize, PolyTrajectory>,
    time_models: &[TimeModel],
) -> f64 {
    obs.observations
        .iter()
        .filter_map(|o| {
            let traj = trajectories.get(&o.target)?;
            let x = traj.eval(time_models[o.camera].global_time(o.frame));
            Some(0.5 * obs.sight_ray(o).distance(&x).powi(2))
        })
        .sum()
}

fn static_report(cost: f64) -> SolveReport {
    SolveReport {
        converged: true,
        iterations: 0,
        initial_cost: cost,
        final_cost: cost,
        termination: Termination::GradientTolerance,
        cost_history: vec![cost],
    }
}

fn check_observations(obs: &ObservationSet) -> Result<()> {
    obs.validate()?;
    if obs.observations.is_empty() {
        return Err(Error::Underdetermined {
            equations: 0,
            unknowns: 3,
        });
    }
    Ok(())
}

fn fit_all(
    obs: &ObservationSet,
    orders: &Orders,
    time_models: &[TimeModel],
) -> Result<BTreeMap<usize, PolyTrajectory>> {
    orders
        .iter()
        .map(|(&target, &k)| Ok((target, fit_trajectory_known_time(&obs.bundle(target, time_models)?, k)?)))
        .collect()
}

/// Known-time fit per target using the nominal clocks.
pub fn reconstruct_multi_ti(obs: &ObservationSet, order: usize) -> Result<ReconstructionResult> {
    check_observations(obs)?;
    multi_ti_with_orders(obs, &orders_for(obs, &[order])?)
}

pub fn multi_ti_with_orders(obs: &ObservationSet, orders: &Orders) -> Result<ReconstructionResult> {
    check_observations(obs)?;
    let time_models = obs.nominal_time_models();
    let trajectories = fit_all(obs, orders, &time_models)?;
    let cost = joint_cost(obs, &trajectories, &time_models);
    Ok(ReconstructionResult {
        trajectories,
        time_models,
        rotations: None,
        report: static_report(cost),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LiOptions {
    pub max_outer_iterations: usize,
    /// Largest offset change, in seconds, that counts as settled.
    pub tol: f64,
}

impl Default for LiOptions {
    fn default() -> Self {
        Self {
            max_outer_iterations: 20,
            tol: 1e-8,
        }
    }
}

/// Alternates known-time fits with per-camera offset searches.
///
/// Frame rates stay at their nominal values. When the outer loop hits its cap
/// the last iterate is returned with `report.converged == false`.
pub fn reconstruct_li(obs: &ObservationSet, order: usize, options: &LiOptions) -> Result<ReconstructionResult> {
    check_observations(obs)?;
    li_with_orders(obs, &orders_for(obs, &[order])?, options)
}

pub fn li_with_orders(obs: &ObservationSet, orders: &Orders, options: &LiOptions) -> Result<ReconstructionResult> {
    check_observations(obs)?;
    let orders = orders.clone();
    let mut time_models = obs.nominal_time_models();
    let mut trajectories = fit_all(obs, &orders, &time_models)?;
    let initial_cost = joint_cost(obs, &trajectories, &time_models);
    let mut history = vec![initial_cost];

    // one search window for every camera: half the nominal observation span
    let span = {
        let times: Vec<f64> = obs
            .observations
            .iter()
            .map(|o| time_models[o.camera].global_time(o.frame))
            .collect();
        let lo = times.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = times.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        (hi - lo).max(1.0 / time_models[GAUGE_CAMERA].alpha)
    };

    let mut converged = false;
    let mut iterations = 0;
    for outer in 1..=options.max_outer_iterations {
        iterations = outer;
        let mut largest_change: f64 = 0.0;
        for cam in 0..obs.cameras.len() {
            if cam == GAUGE_CAMERA {
                continue;
            }
            let search = OffsetSearch::new(obs, cam, &trajectories, time_models[cam].alpha);
            if search.is_empty() {
                continue;
            }
            let beta = search.minimize(time_models[cam].beta, 0.5 * span);
            largest_change = largest_change.max((beta - time_models[cam].beta).abs());
            time_models[cam].beta = beta;
        }
        trajectories = fit_all(obs, &orders, &time_models)?;
        history.push(joint_cost(obs, &trajectories, &time_models));
        if largest_change < options.tol {
            converged = true;
            break;
        }
    }

    let final_cost = *history.last().unwrap_or(&initial_cost);
    Ok(ReconstructionResult {
        trajectories,
        time_models,
        rotations: None,
        report: SolveReport {
            converged,
            iterations,
            initial_cost,
            final_cost,
            termination: if converged {
                Termination::StepTolerance
            } else {
                Termination::MaxIterations
            },
            cost_history: history,
        },
    })
}

/// One camera's share of the joint cost as a function of its offset, with
/// the trajectories held fixed.
struct OffsetSearch<'a> {
    items: Vec<(SightRay, f64, &'a PolyTrajectory)>,
}

impl<'a> OffsetSearch<'a> {
    fn new(
        obs: &ObservationSet,
        cam: usize,
        trajectories: &'a BTreeMap<usize, PolyTrajectory>,
        alpha: f64,
    ) -> Self {
        let items = obs
            .observations
            .iter()
            .filter(|o| o.camera == cam)
            .filter_map(|o| {
                let traj = trajectories.get(&o.target)?;
                Some((obs.sight_ray(o), o.frame as f64 / alpha, traj))
            })
            .collect();
        Self { items }
    }

    fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    fn cost(&self, beta: f64) -> f64 {
        self.items
            .iter()
            .map(|(ray, local, traj)| 0.5 * ray.distance(&traj.eval(local + beta)).powi(2))
            .sum()
    }

    /// First and second derivative of the cost in `beta`.
    fn derivatives(&self, beta: f64) -> (f64, f64) {
        let mut d1 = 0.0;
        let mut d2 = 0.0;
        for (ray, local, traj) in &self.items {
            let t = local + beta;
            let d = traj.eval(t) - ray.origin;
            let r = d - ray.direction * ray.direction.dot(&d);
            let v = traj.derivative(t, 1);
            let a = traj.derivative(t, 2);
            let pv = v - ray.direction * ray.direction.dot(&v);
            d1 += r.dot(&v);
            d2 += pv.norm_squared() + r.dot(&a);
        }
        (d1, d2)
    }

    /// Golden-section search on `[center - half, center + half]`, then Newton.
    fn minimize(&self, center: f64, half: f64) -> f64 {
        const INV_PHI: f64 = 0.618_033_988_749_894_8;
        let (mut a, mut b) = (center - half, center + half);
        let mut x1 = b - INV_PHI * (b - a);
        let mut x2 = a + INV_PHI * (b - a);
        let (mut f1, mut f2) = (self.cost(x1), self.cost(x2));
        while b - a > 1e-6 * half.max(1e-3) {
            if f1 <= f2 {
                b = x2;
                x2 = x1;
                f2 = f1;
                x1 = b - INV_PHI * (b - a);
                f1 = self.cost(x1);
            } else {
                a = x1;
                x1 = x2;
                f1 = f2;
                x2 = a + INV_PHI * (b - a);
                f2 = self.cost(x2);
            }
        }
        let mut beta = 0.5 * (a + b);
        let mut cost = self.cost(beta);
        for _ in 0..20 {
            let (d1, d2) = self.derivatives(beta);
            if !(d2 > 0.0) {
                break;
            }
            let next = beta - d1 / d2;
            let next_cost = self.cost(next);
            if !(next_cost <= cost) {
                break;
            }
            let step = (next - beta).abs();
            beta = next;
            cost = next_cost;
            if step < 1e-13 * (1.0 + beta.abs()) {
                break;
            }
        }
        beta
    }
}

/// Which parameter groups the joint refinement may move.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct JointConfig {
    pub optimize_offsets: bool,
    pub optimize_fps: bool,
    pub optimize_rotations: bool,
    /// Weight (meters per radian) of the pull towards measured rotations.
    pub rotation_prior_weight: f64,
    pub solve: SolveOptions,
}

impl Default for JointConfig {
    fn default() -> Self {
        Self {
            optimize_offsets: true,
            optimize_fps: false,
            optimize_rotations: false,
            rotation_prior_weight: 0.0,
            solve: SolveOptions::default(),
        }
    }
}

/// Joint refinement of motion and clocks from Multi-TI initial values.
pub fn reconstruct_algorithm1(
    obs: &ObservationSet,
    order: usize,
    optimize_fps: bool,
    options: &SolveOptions,
) -> Result<ReconstructionResult> {
    check_observations(obs)?;
    algorithm1_with_orders(obs, &orders_for(obs, &[order])?, optimize_fps, options)
}

pub fn algorithm1_with_orders(
    obs: &ObservationSet,
    orders: &Orders,
    optimize_fps: bool,
    options: &SolveOptions,
) -> Result<ReconstructionResult> {
    check_observations(obs)?;
    let order_list: Vec<usize> = orders.values().copied().collect();
    let count = check_solvability(
        obs.cameras.len(),
        &obs.observed_frames_per_camera(),
        &order_list,
        false,
    );
    if !count.solvable {
        return Err(Error::Underdetermined {
            equations: count.equations,
            unknowns: count.unknowns,
        });
    }
    let init = multi_ti_with_orders(obs, orders)?;
    let config = JointConfig {
        optimize_fps,
        solve: *options,
        ..Default::default()
    };
    bundle_adjust(obs, &init.trajectories, &init.time_models, &config)
}

/// Joint refinement of motion, clocks and per-frame rotations.
///
/// Initialized from [`algorithm1_with_orders`] and the measured rotations.
/// Optical centers stay at their measured positions.
pub fn reconstruct_algorithm2(
    obs: &ObservationSet,
    orders: &[usize],
    optimize_fps: bool,
    rotation_prior_weight: f64,
    options: &SolveOptions,
) -> Result<ReconstructionResult> {
    check_observations(obs)?;
    let orders = orders_for(obs, orders)?;
    let order_list: Vec<usize> = orders.values().copied().collect();
    let count = check_solvability(
        obs.cameras.len(),
        &obs.observed_frames_per_camera(),
        &order_list,
        true,
    );
    if !count.solvable {
        return Err(Error::Underdetermined {
            equations: count.equations,
            unknowns: count.unknowns,
        });
    }
    if !(rotation_prior_weight >= 0.0) {
        return Err(Error::InvalidInput(format!(
            "rotation prior weight must be non-negative, got {rotation_prior_weight}"
        )));
    }
    let init = algorithm1_with_orders(obs, &orders, optimize_fps, options)?;
    let config = JointConfig {
        optimize_fps,
        optimize_rotations: true,
        rotation_prior_weight,
        solve: *options,
        ..Default::default()
    };
    bundle_adjust(obs, &init.trajectories, &init.time_models, &config)
}

/// Levenberg–Marquardt refinement of the joint cost from the given initial
/// trajectories (one per target to reconstruct) and clocks.
pub fn bundle_adjust(
    obs: &ObservationSet,
    trajectories: &BTreeMap<usize, PolyTrajectory>,
    time_models: &[TimeModel],
    config: &JointConfig,
) -> Result<ReconstructionResult> {
    check_observations(obs)?;
    if time_models.len() != obs.cameras.len() {
        return Err(Error::InvalidInput(format!(
            "{} clocks for {} cameras",
            time_models.len(),
            obs.cameras.len()
        )));
    }
    let (mut problem, layout) = JointProblem::build(obs, trajectories, time_models, config)?;
    let report = solve_nlls(&mut problem, &config.solve)?;
    Ok(layout.extract(&problem.blocks, report))
}

/// Block indices of the joint problem.
struct JointLayout {
    targets: Vec<usize>,
    coef_blocks: Vec<usize>,
    alpha_blocks: Vec<usize>,
    beta_blocks: Vec<usize>,
    rotation_blocks: BTreeMap<(usize, usize), usize>,
    t_mid: f64,
}

impl JointLayout {
    fn extract(&self, blocks: &[ParameterBlock], report: SolveReport) -> ReconstructionResult {
        let trajectories = self
            .targets
            .iter()
            .zip(&self.coef_blocks)
            .map(|(&t, &b)| {
                let centered = PolyTrajectory::from_flat(&blocks[b].values)
                    .expect("coefficient blocks keep their shape");
                (t, centered.shifted(-self.t_mid))
            })
            .collect();
        let time_models = self
            .alpha_blocks
            .iter()
            .zip(&self.beta_blocks)
            .map(|(&a, &b)| TimeModel {
                alpha: blocks[a].values[0],
                beta: blocks[b].values[0],
            })
            .collect();
        let rotations = (!self.rotation_blocks.is_empty()).then(|| {
            self.rotation_blocks
                .iter()
                .map(|(&key, &b)| (key, blocks[b].as_quaternion()))
                .collect()
        });
        ReconstructionResult {
            trajectories,
            time_models,
            rotations,
            report,
        }
    }
}

struct ObservationTerm {
    camera: usize,
    frame: f64,
    slot: usize,
    center: Vector3<f64>,
    /// Unit ray direction in camera coordinates.
    camera_direction: Vector3<f64>,
    /// World direction under the measured rotation.
    measured_direction: Vector3<f64>,
    rotation_block: Option<usize>,
}

struct JointProblem {
    terms: Vec<ObservationTerm>,
    orders: Vec<usize>,
    coef_blocks: Vec<usize>,
    alpha_blocks: Vec<usize>,
    beta_blocks: Vec<usize>,
    t_mid: f64,
    prior_weight: f64,
    priors: Vec<(usize, UnitQuaternion)>,
}

impl JointProblem {
    fn build(
        obs: &ObservationSet,
        trajectories: &BTreeMap<usize, PolyTrajectory>,
        time_models: &[TimeModel],
        config: &JointConfig,
    ) -> Result<(NllsProblem<JointProblem>, JointLayout)> {
        let t_mid = obs.mid_time(&obs.nominal_time_models());
        let mut blocks = Vec::new();
        let mut targets = Vec::new();
        let mut coef_blocks = Vec::new();
        let mut orders = Vec::new();
        let mut slot_of = BTreeMap::new();
        for (slot, (&target, traj)) in trajectories.iter().enumerate() {
            slot_of.insert(target, slot);
            targets.push(target);
            orders.push(traj.order());
            coef_blocks.push(blocks.len());
            blocks.push(ParameterBlock::euclidean(traj.shifted(t_mid).to_flat()));
        }
        let mut alpha_blocks = Vec::new();
        let mut beta_blocks = Vec::new();
        for (cam, tm) in time_models.iter().enumerate() {
            let gauge = cam == GAUGE_CAMERA;
            alpha_blocks.push(blocks.len());
            blocks.push(ParameterBlock::euclidean(vec![tm.alpha]).frozen(gauge || !config.optimize_fps));
            beta_blocks.push(blocks.len());
            blocks.push(ParameterBlock::euclidean(vec![tm.beta]).frozen(gauge || !config.optimize_offsets));
        }

        let mut rotation_blocks = BTreeMap::new();
        let mut priors = Vec::new();
        if config.optimize_rotations {
            let keys: BTreeSet<(usize, usize)> = obs
                .observations
                .iter()
                .filter(|o| slot_of.contains_key(&o.target))
                .map(|o| (o.camera, o.frame))
                .collect();
            for (cam, frame) in keys {
                let q = obs.cameras[cam].poses[frame].rotation;
                rotation_blocks.insert((cam, frame), blocks.len());
                if config.rotation_prior_weight > 0.0 {
                    priors.push((blocks.len(), q));
                }
                blocks.push(ParameterBlock::quaternion(&q));
            }
        }

        let terms = obs
            .observations
            .iter()
            .filter_map(|o| {
                let slot = *slot_of.get(&o.target)?;
                let cam = &obs.cameras[o.camera];
                let pose = &cam.poses[o.frame];
                let camera_direction = cam.intrinsics.unproject(&o.pixel).normalize();
                Some(ObservationTerm {
                    camera: o.camera,
                    frame: o.frame as f64,
                    slot,
                    center: pose.optical_center(),
                    camera_direction,
                    measured_direction: pose.rotation_matrix().transpose() * camera_direction,
                    rotation_block: rotation_blocks.get(&(o.camera, o.frame)).copied(),
                })
            })
            .collect();

        let residuals = JointProblem {
            terms,
            orders,
            coef_blocks: coef_blocks.clone(),
            alpha_blocks: alpha_blocks.clone(),
            beta_blocks: beta_blocks.clone(),
            t_mid,
            prior_weight: config.rotation_prior_weight,
            priors,
        };
        let layout = JointLayout {
            targets,
            coef_blocks,
            alpha_blocks,
            beta_blocks,
            rotation_blocks,
            t_mid,
        };
        Ok((NllsProblem::new(blocks, residuals), layout))
    }
}

fn row_major(m: &Matrix3<f64>) -> Vec<f64> {
    m.transpose().as_slice().to_vec()
}

/// Inverse of the right Jacobian of SO(3).
fn right_jacobian_inverse(phi: &Vector3<f64>) -> Matrix3<f64> {
    let theta = phi.norm();
    let k = skew(phi);
    let coeff = if theta < 1e-6 {
        1.0 / 12.0 + theta * theta / 720.0
    } else {
        1.0 / (theta * theta) - (1.0 + theta.cos()) / (2.0 * theta * theta.sin())
    };
    Matrix3::identity() + 0.5 * k + coeff * k * k
}

impl Residuals for JointProblem {
    fn evaluate(&self, blocks: &[ParameterBlock], with_jacobians: bool) -> Vec<ResidualBlock> {
        let mut out = Vec::with_capacity(self.terms.len() + self.priors.len());
        for term in &self.terms {
            let alpha = blocks[self.alpha_blocks[term.camera]].values[0];
            let beta = blocks[self.beta_blocks[term.camera]].values[0];
            let s = term.frame / alpha + beta - self.t_mid;
            let k1 = self.orders[term.slot] + 1;
            let coefs = &blocks[self.coef_blocks[term.slot]].values;

            let mut x = Vector3::zeros();
            let mut v = Vector3::zeros();
            for k in (0..k1).rev() {
                let c = Vector3::new(coefs[k], coefs[k1 + k], coefs[2 * k1 + k]);
                v = v * s + x;
                x = x * s + c;
            }
            let direction = match term.rotation_block {
                Some(b) => blocks[b].as_quaternion().rotation_matrix().transpose() * term.camera_direction,
                None => term.measured_direction,
            };
            let d = x - term.center;
            let along = direction.dot(&d);
            let r = d - direction * along;

            let mut jacobians = Vec::new();
            if with_jacobians {
                let proj = Matrix3::identity() - direction * direction.transpose();
                let mut jc = vec![0.0; 3 * 3 * k1];
                let mut power = 1.0;
                for k in 0..k1 {
                    for row in 0..3 {
                        for axis in 0..3 {
                            jc[row * 3 * k1 + axis * k1 + k] = proj[(row, axis)] * power;
                        }
                    }
                    power *= s;
                }
                jacobians.push(BlockJacobian {
                    block: self.coef_blocks[term.slot],
                    values: jc,
                });
                let pv = proj * v;
                jacobians.push(BlockJacobian {
                    block: self.beta_blocks[term.camera],
                    values: pv.as_slice().to_vec(),
                });
                let dalpha = pv * (-term.frame / (alpha * alpha));
                jacobians.push(BlockJacobian {
                    block: self.alpha_blocks[term.camera],
                    values: dalpha.as_slice().to_vec(),
                });
                if let Some(b) = term.rotation_block {
                    // L ← Exp(-δ) L under q ← q ⊗ exp(δ), so dL/dδ = [L]×
                    let dl = skew(&direction);
                    let jq = -(Matrix3::identity() * along + direction * d.transpose()) * dl;
                    jacobians.push(BlockJacobian {
                        block: b,
                        values: row_major(&jq),
                    });
                }
            }
            out.push(ResidualBlock {
                residuals: vec![r.x, r.y, r.z],
                jacobians,
            });
        }
        for &(b, measured) in &self.priors {
            let q = blocks[b].as_quaternion();
            let phi = measured.inverse().compose(&q).log();
            let r = phi * self.prior_weight;
            let jacobians = if with_jacobians {
                vec![BlockJacobian {
                    block: b,
                    values: row_major(&(right_jacobian_inverse(&phi) * self.prior_weight)),
                }]
            } else {
                Vec::new()
            };
            out.push(ResidualBlock {
                residuals: vec![r.x, r.y, r.z],
                jacobians,
            });
        }
        out
    }
}

/// Builds the joint least-squares problem without solving it, so callers can
/// inspect residuals and Jacobians at arbitrary parameter values.
pub fn joint_problem(
    obs: &ObservationSet,
    trajectories: &BTreeMap<usize, PolyTrajectory>,
    time_models: &[TimeModel],
    config: &JointConfig,
) -> Result<NllsProblem<impl Residuals>> {
    check_observations(obs)?;
    Ok(JointProblem::build(obs, trajectories, time_models, config)?.0)
}

/// Estimator selector shared by the command line, the bench and the demo.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Method {
    #[serde(rename = "multi-ti")]
    MultiTi,
    #[serde(rename = "li")]
    Li,
    #[serde(rename = "alg1")]
    Algorithm1,
    #[serde(rename = "alg2")]
    Algorithm2,
}

impl Method {
    pub const ALL: [Method; 4] = [Method::MultiTi, Method::Li, Method::Algorithm1, Method::Algorithm2];

    pub fn name(self) -> &'static str {
        match self {
            Method::MultiTi => "multi-ti",
            Method::Li => "li",
            Method::Algorithm1 => "alg1",
            Method::Algorithm2 => "alg2",
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Method::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| Error::InvalidInput(format!("unknown method '{s}', expected multi-ti, li, alg1 or alg2")))
    }
}

/// Settings that apply to whichever estimator runs.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct MethodOptions {
    pub optimize_fps: bool,
    pub rotation_prior_weight: f64,
    pub solve: SolveOptions,
    pub li: LiOptions,
}

/// Runs `method` with one order per target (or a single shared order).
pub fn reconstruct(
    method: Method,
    obs: &ObservationSet,
    orders: &[usize],
    options: &MethodOptions,
) -> Result<ReconstructionResult> {
    check_observations(obs)?;
    let expanded = orders_for(obs, orders)?;
    match method {
        Method::MultiTi => multi_ti_with_orders(obs, &expanded),
        Method::Li => li_with_orders(obs, &expanded, &options.li),
        Method::Algorithm1 => algorithm1_with_orders(obs, &expanded, options.optimize_fps, &options.solve),
        Method::Algorithm2 => reconstruct_algorithm2(
            obs,
            orders,
            options.optimize_fps,
            options.rotation_prior_weight,
            &options.solve,
        ),
    }
}
