//! Closed-form ray intersection: synchronized triangulation, known-time
//! trajectory fitting, degeneracy detection and equation counting.

use nalgebra::{DMatrix, DVector, Matrix3, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{projector, SightRay};
use crate::motion::{PolyTrajectory, MAX_ORDER};

/// Singular value ratio below which the triangulation system is rank deficient.
const RANK_TOL: f64 = 1e-10;

/// Tolerances for the degenerate configurations. None of these have a
/// physical meaning; they only separate exact degeneracy from generic geometry.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IntersectionConfig {
    /// RMS point-to-ray distance per unit depth under which rays are concurrent.
    pub point_tol: f64,
    /// Relative smallest singular value under which rays share a plane.
    pub plane_tol: f64,
    /// Largest accepted condition number of the trajectory design matrix.
    pub cond_max: f64,
}

impl Default for IntersectionConfig {
    fn default() -> Self {
        Self {
            point_tol: 1e-6,
            plane_tol: 1e-8,
            cond_max: 1e12,
        }
    }
}

/// Sight rays of one target with the global time of each ray.
#[derive(Debug, Clone, PartialEq)]
pub struct RayBundle {
    pub rays: Vec<SightRay>,
    pub times: Vec<f64>,
    pub target_id: usize,
}

impl RayBundle {
    pub fn new(rays: Vec<SightRay>, times: Vec<f64>, target_id: usize) -> Result<Self> {
        if rays.len() != times.len() {
            return Err(Error::InvalidInput(format!(
                "{} rays but {} timestamps",
                rays.len(),
                times.len()
            )));
        }
        if times.iter().any(|t| !t.is_finite()) {
            return Err(Error::InvalidInput("ray timestamps must be finite".into()));
        }
        Ok(Self {
            rays,
            times,
            target_id,
        })
    }

    pub fn len(&self) -> usize {
        self.rays.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rays.is_empty()
    }

    /// Midpoint of the time span covered by the bundle.
    pub fn mid_time(&self) -> f64 {
        let (lo, hi) = self
            .times
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &t| (lo.min(t), hi.max(t)));
        if lo.is_finite() {
            0.5 * (lo + hi)
        } else {
            0.0
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum CommonPoint {
    Finite(Vector3<f64>),
    /// All rays are parallel to this direction.
    AtInfinity(Vector3<f64>),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DegeneracyReport {
    pub common_point: Option<CommonPoint>,
    /// Unit normal of the shared plane, if the rays are coplanar.
    pub plane_normal: Option<Vector3<f64>>,
    /// Smallest over largest singular value of the stacked triangulation system.
    pub min_singular_ratio: f64,
}

impl DegeneracyReport {
    pub fn is_common_point(&self) -> bool {
        self.common_point.is_some()
    }

    pub fn is_coplanar(&self) -> bool {
        self.plane_normal.is_some()
    }
}

struct LeastSquares {
    solution: DVector<f64>,
    singular_values: DVector<f64>,
}

impl LeastSquares {
    fn condition(&self) -> f64 {
        let max = self.singular_values.max();
        let min = self.singular_values.min();
        if min > 0.0 {
            max / min
        } else {
            f64::INFINITY
        }
    }
}

/// Solves `min ‖A x - b‖` through an SVD of the column-equilibrated design.
fn solve_stacked(mut a: DMatrix<f64>, b: &DVector<f64>) -> LeastSquares {
    let scales: Vec<f64> = a
        .column_iter()
        .map(|c| {
            let n = c.norm();
            if n > 0.0 {
                1.0 / n
            } else {
                1.0
            }
        })
        .collect();
    for (j, s) in scales.iter().enumerate() {
        a.column_mut(j).scale_mut(*s);
    }
    let svd = a.svd(true, true);
    let singular_values = svd.singular_values.clone();
    let tol = singular_values.max() * 1e-15;
    let mut solution = svd
        .solve(b, tol)
        .unwrap_or_else(|_| DVector::zeros(scales.len()));
    for (j, s) in scales.iter().enumerate() {
        solution[j] *= s;
    }
    LeastSquares {
        solution,
        singular_values,
    }
}

fn triangulation_system(rays: &[SightRay]) -> (DMatrix<f64>, DVector<f64>) {
    let mut a = DMatrix::zeros(3 * rays.len(), 3);
    let mut b = DVector::zeros(3 * rays.len());
    for (i, ray) in rays.iter().enumerate() {
        let v = projector(&ray.direction);
        a.fixed_view_mut::<3, 3>(3 * i, 0).copy_from(&v);
        b.fixed_rows_mut::<3>(3 * i).copy_from(&(v * ray.origin));
    }
    (a, b)
}

fn singular_ratio(s: &DVector<f64>) -> f64 {
    let max = s.max();
    if max > 0.0 {
        s.min() / max
    } else {
        0.0
    }
}

/// Least-squares point closest to all rays.
pub fn triangulate_synchronized(rays: &[SightRay]) -> Result<Vector3<f64>> {
    if rays.len() < 2 {
        return Err(Error::InvalidInput(format!(
            "triangulation needs at least two rays, got {}",
            rays.len()
        )));
    }
    let (a, b) = triangulation_system(rays);
    let ls = solve_stacked(a, &b);
    let ratio = singular_ratio(&ls.singular_values);
    if ratio < RANK_TOL {
        return Err(Error::DegenerateGeometry {
            min_singular_ratio: ratio,
        });
    }
    Ok(Vector3::new(ls.solution[0], ls.solution[1], ls.solution[2]))
}

pub fn fit_trajectory_known_time(bundle: &RayBundle, order: usize) -> Result<PolyTrajectory> {
    fit_trajectory_known_time_with(bundle, order, &IntersectionConfig::default())
}

/// Fits the order-`order` polynomial minimizing the summed squared
/// point-to-ray residuals at the bundle's known times.
///
/// Time is centered on the bundle's mid time while solving; the returned
/// coefficients are in the bundle's own time axis.
pub fn fit_trajectory_known_time_with(
    bundle: &RayBundle,
    order: usize,
    config: &IntersectionConfig,
) -> Result<PolyTrajectory> {
    if order > MAX_ORDER {
        return Err(Error::InvalidInput(format!(
            "order {order} exceeds the maximum of {MAX_ORDER}"
        )));
    }
    let n_coef = order + 1;
    let unknowns = 3 * n_coef;
    let equations = 2 * bundle.len();
    if equations < unknowns {
        return Err(Error::Underdetermined {
            equations,
            unknowns,
        });
    }

    // rows in a canonical order, so the solution does not depend on input order
    let mut order_idx: Vec<usize> = (0..bundle.len()).collect();
    order_idx.sort_by(|&i, &j| {
        let key = |k: usize| {
            let r = &bundle.rays[k];
            [
                bundle.times[k],
                r.origin.x,
                r.origin.y,
                r.origin.z,
                r.direction.x,
                r.direction.y,
                r.direction.z,
            ]
        };
        key(i)
            .iter()
            .zip(key(j).iter())
            .map(|(a, b)| a.total_cmp(b))
            .find(|o| o.is_ne())
            .unwrap_or(std::cmp::Ordering::Equal)
    });

    let t_mid = bundle.mid_time();
    let mut a = DMatrix::zeros(3 * bundle.len(), unknowns);
    let mut b = DVector::zeros(3 * bundle.len());
    for (i, &obs) in order_idx.iter().enumerate() {
        let (ray, t) = (&bundle.rays[obs], bundle.times[obs]);
        let v: Matrix3<f64> = projector(&ray.direction);
        let s = t - t_mid;
        let mut power = 1.0;
        for k in 0..n_coef {
            for axis in 0..3 {
                a.view_mut((3 * i, axis * n_coef + k), (3, 1))
                    .copy_from(&(v.column(axis) * power));
            }
            power *= s;
        }
        b.fixed_rows_mut::<3>(3 * i).copy_from(&(v * ray.origin));
    }

    let ls = solve_stacked(a, &b);
    let condition = ls.condition();
    if !(condition <= config.cond_max) {
        return Err(Error::IllConditioned {
            condition,
            report: Box::new(detect_degeneracy_with(bundle, config)),
        });
    }
    let centered = PolyTrajectory::from_flat(ls.solution.as_slice())?;
    Ok(centered.shifted(-t_mid))
}

pub fn detect_degeneracy(bundle: &RayBundle) -> DegeneracyReport {
    detect_degeneracy_with(bundle, &IntersectionConfig::default())
}

pub fn detect_degeneracy_with(bundle: &RayBundle, config: &IntersectionConfig) -> DegeneracyReport {
    let rays = &bundle.rays;
    if rays.is_empty() {
        return DegeneracyReport {
            common_point: None,
            plane_normal: None,
            min_singular_ratio: 0.0,
        };
    }

    let (a, b) = triangulation_system(rays);
    let ls = solve_stacked(a, &b);
    let min_singular_ratio = singular_ratio(&ls.singular_values);

    let common_point = if min_singular_ratio >= RANK_TOL {
        let p = Vector3::new(ls.solution[0], ls.solution[1], ls.solution[2]);
        let n = rays.len() as f64;
        let rms = (rays.iter().map(|r| r.distance(&p).powi(2)).sum::<f64>() / n).sqrt();
        let depth = rays.iter().map(|r| (p - r.origin).norm()).sum::<f64>() / n;
        (rms <= config.point_tol * depth.max(f64::MIN_POSITIVE)).then_some(CommonPoint::Finite(p))
    } else {
        let d0 = rays[0].direction;
        let parallel = rays
            .iter()
            .all(|r| r.direction.cross(&d0).norm() <= config.point_tol);
        parallel.then_some(CommonPoint::AtInfinity(d0))
    };

    DegeneracyReport {
        common_point,
        plane_normal: shared_plane(rays, config.plane_tol),
        min_singular_ratio,
    }
}

/// A plane `n·X = d` contains a ray iff `n·C = d` and `n·L = 0`; the stacked
/// constraints have a null vector exactly when all rays are coplanar.
fn shared_plane(rays: &[SightRay], plane_tol: f64) -> Option<Vector3<f64>> {
    if rays.len() < 2 {
        return None;
    }
    let n = rays.len() as f64;
    let centroid = rays.iter().map(|r| r.origin).sum::<Vector3<f64>>() / n;
    let spread = (rays
        .iter()
        .map(|r| (r.origin - centroid).norm_squared())
        .sum::<f64>()
        / n)
        .sqrt();
    let scale = if spread > 0.0 { 1.0 / spread } else { 1.0 };

    let mut m = DMatrix::zeros(2 * rays.len(), 4);
    for (i, r) in rays.iter().enumerate() {
        let c = (r.origin - centroid) * scale;
        m.row_mut(2 * i)
            .copy_from_slice(&[c.x, c.y, c.z, -1.0]);
        m.row_mut(2 * i + 1).copy_from_slice(&[
            r.direction.x,
            r.direction.y,
            r.direction.z,
            0.0,
        ]);
    }
    let svd = m.svd(false, true);
    let v_t = svd.v_t.as_ref()?;
    let s = &svd.singular_values;
    let (imin, smin) = s
        .iter()
        .enumerate()
        .fold((0, f64::INFINITY), |acc, (i, &v)| if v < acc.1 { (i, v) } else { acc });
    if smin > plane_tol * s.max() {
        return None;
    }
    let row = v_t.row(imin);
    Vector3::new(row[0], row[1], row[2]).try_normalize(1e-12)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SolvabilityReport {
    pub solvable: bool,
    pub equations: usize,
    pub unknowns: usize,
}

/// Counts equations and unknowns of the joint problem.
///
/// With rotation refinement the counting includes three rotation degrees of
/// freedom per frame, which a single target can never pay for.
pub fn check_solvability(
    num_cameras: usize,
    frames_per_camera: &[usize],
    orders: &[usize],
    optimize_rotations: bool,
) -> SolvabilityReport {
    debug_assert_eq!(num_cameras, frames_per_camera.len());
    let total_frames: usize = frames_per_camera.iter().sum();
    let targets = orders.len();
    let motion: usize = orders.iter().map(|k| 3 * (k + 1)).sum();
    let equations = 2 * total_frames * targets;
    let mut unknowns = motion + 2 * num_cameras;
    let solvable = if optimize_rotations {
        unknowns += 3 * total_frames;
        // ΣF (2N - 3) ≥ Σ3(K+1) + 2C, never true for N = 1
        targets >= 2 && total_frames * (2 * targets - 3) >= motion + 2 * num_cameras
    } else {
        targets >= 1 && equations >= unknowns
    };
    SolvabilityReport {
        solvable,
        equations,
        unknowns,
    }
}
