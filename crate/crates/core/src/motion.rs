//! Camera clocks and temporal-polynomial target trajectories.

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Highest polynomial order any solver accepts.
pub const MAX_ORDER: usize = 4;

/// Maps a camera's frame index onto the global clock: `t = f / alpha + beta`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawTimeModel")]
pub struct TimeModel {
    /// Frame rate in frames per second.
    pub alpha: f64,
    /// Offset in seconds.
    pub beta: f64,
}

#[derive(Deserialize)]
struct RawTimeModel {
    alpha: f64,
    beta: f64,
}

impl TryFrom<RawTimeModel> for TimeModel {
    type Error = Error;

    fn try_from(raw: RawTimeModel) -> Result<Self> {
        TimeModel::new(raw.alpha, raw.beta)
    }
}

impl TimeModel {
    pub fn new(alpha: f64, beta: f64) -> Result<Self> {
        if !(alpha > 0.0) || !alpha.is_finite() || !beta.is_finite() {
            return Err(Error::InvalidInput(format!(
                "frame rate must be positive and finite (alpha={alpha}, beta={beta})"
            )));
        }
        Ok(Self { alpha, beta })
    }

    pub fn global_time(&self, frame: usize) -> f64 {
        global_time(frame, self)
    }

    /// Fractional frame index of a global time.
    pub fn frame_at(&self, t: f64) -> f64 {
        (t - self.beta) * self.alpha
    }
}

pub fn global_time(frame: usize, tm: &TimeModel) -> f64 {
    frame as f64 / tm.alpha + tm.beta
}

/// Per-axis monomial polynomial in time. Coefficient `k` has units m/s^k.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawTrajectory")]
pub struct PolyTrajectory {
    pub coeffs_x: Vec<f64>,
    pub coeffs_y: Vec<f64>,
    pub coeffs_z: Vec<f64>,
}

#[derive(Deserialize)]
struct RawTrajectory {
    coeffs_x: Vec<f64>,
    coeffs_y: Vec<f64>,
    coeffs_z: Vec<f64>,
}

impl TryFrom<RawTrajectory> for PolyTrajectory {
    type Error = Error;

    fn try_from(raw: RawTrajectory) -> Result<Self> {
        PolyTrajectory::new(raw.coeffs_x, raw.coeffs_y, raw.coeffs_z)
    }
}

fn horner(coeffs: &[f64], t: f64) -> f64 {
    coeffs.iter().rev().fold(0.0, |acc, c| acc * t + c)
}

impl PolyTrajectory {
    pub fn new(coeffs_x: Vec<f64>, coeffs_y: Vec<f64>, coeffs_z: Vec<f64>) -> Result<Self> {
        let n = coeffs_x.len();
        if n == 0 || coeffs_y.len() != n || coeffs_z.len() != n {
            return Err(Error::InvalidInput(format!(
                "trajectory axes need equal, non-zero coefficient counts (got {}, {}, {})",
                n,
                coeffs_y.len(),
                coeffs_z.len()
            )));
        }
        if n - 1 > MAX_ORDER {
            return Err(Error::InvalidInput(format!(
                "trajectory order {} exceeds the maximum of {MAX_ORDER}",
                n - 1
            )));
        }
        Ok(Self {
            coeffs_x,
            coeffs_y,
            coeffs_z,
        })
    }

    /// Trajectory from per-power coefficient vectors: `X(t) = Σ terms[k] tᵏ`.
    pub fn from_terms(terms: &[Vector3<f64>]) -> Result<Self> {
        Self::new(
            terms.iter().map(|v| v.x).collect(),
            terms.iter().map(|v| v.y).collect(),
            terms.iter().map(|v| v.z).collect(),
        )
    }

    /// Zero trajectory of the given order.
    pub fn zeros(order: usize) -> Self {
        Self {
            coeffs_x: vec![0.0; order + 1],
            coeffs_y: vec![0.0; order + 1],
            coeffs_z: vec![0.0; order + 1],
        }
    }

    pub fn order(&self) -> usize {
        self.coeffs_x.len() - 1
    }

    /// Coefficient vector of the `k`-th power.
    pub fn term(&self, k: usize) -> Vector3<f64> {
        Vector3::new(self.coeffs_x[k], self.coeffs_y[k], self.coeffs_z[k])
    }

    pub fn eval(&self, t: f64) -> Vector3<f64> {
        eval_trajectory(self, t)
    }

    pub fn derivative(&self, t: f64, d: usize) -> Vector3<f64> {
        trajectory_derivative(self, t, d)
    }

    /// The trajectory `Q` with `Q(s) = self(s + delta)`, by binomial re-expansion.
    pub fn shifted(&self, delta: f64) -> Self {
        let shift = |c: &[f64]| -> Vec<f64> {
            let n = c.len();
            let mut out = vec![0.0; n];
            for (k, ck) in c.iter().enumerate() {
                // ck (s + δ)^k = ck Σ_j C(k, j) δ^(k-j) s^j
                let mut binom = 1.0;
                for j in 0..=k {
                    out[j] += ck * binom * delta.powi((k - j) as i32);
                    binom = binom * (k - j) as f64 / (j + 1) as f64;
                }
            }
            out
        };
        Self {
            coeffs_x: shift(&self.coeffs_x),
            coeffs_y: shift(&self.coeffs_y),
            coeffs_z: shift(&self.coeffs_z),
        }
    }

    /// Sum of two trajectories; the result has the larger order.
    pub fn add(&self, other: &Self) -> Self {
        let sum = |a: &[f64], b: &[f64]| -> Vec<f64> {
            let n = a.len().max(b.len());
            (0..n)
                .map(|k| a.get(k).copied().unwrap_or(0.0) + b.get(k).copied().unwrap_or(0.0))
                .collect()
        };
        Self {
            coeffs_x: sum(&self.coeffs_x, &other.coeffs_x),
            coeffs_y: sum(&self.coeffs_y, &other.coeffs_y),
            coeffs_z: sum(&self.coeffs_z, &other.coeffs_z),
        }
    }

    /// Translates every position by `d`.
    pub fn translated(&self, d: &Vector3<f64>) -> Self {
        let mut out = self.clone();
        out.coeffs_x[0] += d.x;
        out.coeffs_y[0] += d.y;
        out.coeffs_z[0] += d.z;
        out
    }

    /// Flattened `[x_0..x_K, y_0..y_K, z_0..z_K]`.
    pub fn to_flat(&self) -> Vec<f64> {
        let mut v = self.coeffs_x.clone();
        v.extend_from_slice(&self.coeffs_y);
        v.extend_from_slice(&self.coeffs_z);
        v
    }

    pub fn from_flat(values: &[f64]) -> Result<Self> {
        if values.is_empty() || values.len() % 3 != 0 {
            return Err(Error::InvalidInput(format!(
                "flat coefficient vector of length {} is not a multiple of three",
                values.len()
            )));
        }
        let n = values.len() / 3;
        Self::new(
            values[..n].to_vec(),
            values[n..2 * n].to_vec(),
            values[2 * n..].to_vec(),
        )
    }
}

pub fn eval_trajectory(traj: &PolyTrajectory, t: f64) -> Vector3<f64> {
    Vector3::new(
        horner(&traj.coeffs_x, t),
        horner(&traj.coeffs_y, t),
        horner(&traj.coeffs_z, t),
    )
}

/// Analytic `d`-th time derivative; zero when `d` exceeds the order.
pub fn trajectory_derivative(traj: &PolyTrajectory, t: f64, d: usize) -> Vector3<f64> {
    let axis = |c: &[f64]| -> f64 {
        if d >= c.len() {
            return 0.0;
        }
        // falling factorial k (k-1) .. (k-d+1) applied to each surviving term
        let derived: Vec<f64> = c
            .iter()
            .enumerate()
            .skip(d)
            .map(|(k, ck)| ck * ((k - d + 1)..=k).map(|m| m as f64).product::<f64>())
            .collect();
        horner(&derived, t)
    };
    Vector3::new(
        axis(&traj.coeffs_x),
        axis(&traj.coeffs_y),
        axis(&traj.coeffs_z),
    )
}
