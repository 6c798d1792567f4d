//! JSON file formats for datasets and estimates.
//!
//! A dataset is one self-describing document: cameras with intrinsics,
//! nominal frame rate and one pose per frame, pixel observations, and
//! optionally the ground truth it was synthesized from. Quaternions are
//! written w-first, extrinsics map world to camera (`x_cam = R X + t`).

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use nalgebra::{Vector2, Vector3};
use serde::{de::DeserializeOwned, Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::estimators::{CameraTrack, Method, Observation, ObservationSet, ReconstructionResult};
use crate::geometry::{FramePose, PinholeCamera, UnitQuaternion};
use crate::motion::{PolyTrajectory, TimeModel};
use crate::nlls::SolveReport;
use crate::simulator::GroundTruth;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PoseRecord {
    pub frame: usize,
    pub q: [f64; 4],
    pub t: [f64; 3],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CameraRecord {
    pub id: usize,
    pub intrinsics: PinholeCamera,
    pub nominal_fps: f64,
    /// Nominal offset in seconds; cameras normally report none.
    #[serde(default, skip_serializing_if = "is_zero")]
    pub nominal_offset: f64,
    pub poses: Vec<PoseRecord>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObservationRecord {
    pub cam: usize,
    pub frame: usize,
    pub target: usize,
    pub px: [f64; 2],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryRecord {
    pub target: usize,
    #[serde(flatten)]
    pub trajectory: PolyTrajectory,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClockRecord {
    pub camera: usize,
    #[serde(flatten)]
    pub time_model: TimeModel,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruthRecord {
    pub trajectories: Vec<TrajectoryRecord>,
    pub time_models: Vec<ClockRecord>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetFile {
    pub cameras: Vec<CameraRecord>,
    pub observations: Vec<ObservationRecord>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ground_truth: Option<GroundTruthRecord>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RotationRecord {
    pub cam: usize,
    pub frame: usize,
    pub q: [f64; 4],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimateFile {
    pub method: Method,
    pub trajectories: Vec<TrajectoryRecord>,
    pub time_models: Vec<ClockRecord>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rotations: Option<Vec<RotationRecord>>,
    pub report: SolveReport,
}

fn is_zero(v: &f64) -> bool {
    *v == 0.0
}

/// In-memory dataset: what the estimators consume plus optional truth.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub observations: ObservationSet,
    pub truth: Option<GroundTruth>,
}

fn trajectory_records(map: &BTreeMap<usize, PolyTrajectory>) -> Vec<TrajectoryRecord> {
    map.iter()
        .map(|(&target, t)| TrajectoryRecord { target, trajectory: t.clone() })
        .collect()
}

fn clock_records(tms: &[TimeModel]) -> Vec<ClockRecord> {
    tms.iter()
        .enumerate()
        .map(|(camera, &time_model)| ClockRecord { camera, time_model })
        .collect()
}

fn trajectory_map(records: &[TrajectoryRecord]) -> Result<BTreeMap<usize, PolyTrajectory>> {
    let mut map = BTreeMap::new();
    for r in records {
        if map.insert(r.target, r.trajectory.clone()).is_some() {
            return Err(Error::InvalidInput(format!("target {} listed twice", r.target)));
        }
    }
    Ok(map)
}

fn clock_list(records: &[ClockRecord], cameras: usize) -> Result<Vec<TimeModel>> {
    let mut out: Vec<Option<TimeModel>> = vec![None; cameras];
    for r in records {
        let slot = out
            .get_mut(r.camera)
            .ok_or_else(|| Error::InvalidInput(format!("clock for unknown camera {}", r.camera)))?;
        *slot = Some(r.time_model);
    }
    out.into_iter()
        .enumerate()
        .map(|(c, tm)| tm.ok_or_else(|| Error::InvalidInput(format!("no clock for camera {c}"))))
        .collect()
}

fn pose_record(frame: usize, pose: &FramePose) -> PoseRecord {
    PoseRecord {
        frame,
        q: pose.rotation.to_array(),
        t: pose.translation.into(),
    }
}

impl Dataset {
    pub fn to_file(&self) -> DatasetFile {
        let cameras = self
            .observations
            .cameras
            .iter()
            .enumerate()
            .map(|(id, cam)| CameraRecord {
                id,
                intrinsics: cam.intrinsics,
                nominal_fps: cam.nominal.alpha,
                nominal_offset: cam.nominal.beta,
                poses: cam.poses.iter().enumerate().map(|(f, p)| pose_record(f, p)).collect(),
            })
            .collect();
        let observations = self
            .observations
            .observations
            .iter()
            .map(|o| ObservationRecord {
                cam: o.camera,
                frame: o.frame,
                target: o.target,
                px: o.pixel.into(),
            })
            .collect();
        let ground_truth = self.truth.as_ref().map(|t| GroundTruthRecord {
            trajectories: trajectory_records(&t.trajectories),
            time_models: clock_records(&t.time_models),
        });
        DatasetFile { cameras, observations, ground_truth }
    }

    pub fn from_file(file: DatasetFile) -> Result<Self> {
        let mut records = file.cameras;
        records.sort_by_key(|c| c.id);
        let mut cameras = Vec::with_capacity(records.len());
        for (index, rec) in records.into_iter().enumerate() {
            if rec.id != index {
                return Err(Error::InvalidInput(format!(
                    "camera ids must be 0..{}, found {} at position {index}",
                    index, rec.id
                )));
            }
            let mut poses: Vec<Option<FramePose>> = vec![None; rec.poses.len()];
            for p in &rec.poses {
                let slot = poses.get_mut(p.frame).ok_or_else(|| {
                    Error::InvalidInput(format!("camera {index}: pose frame {} out of range", p.frame))
                })?;
                if slot.is_some() {
                    return Err(Error::InvalidInput(format!("camera {index}: frame {} listed twice", p.frame)));
                }
                let q = UnitQuaternion::new(p.q[0], p.q[1], p.q[2], p.q[3])?;
                let t = Vector3::from(p.t);
                if !t.iter().all(|v| v.is_finite()) {
                    return Err(Error::InvalidInput(format!("camera {index}: non-finite translation")));
                }
                *slot = Some(FramePose::new(q, t));
            }
            cameras.push(CameraTrack {
                intrinsics: rec.intrinsics,
                nominal: TimeModel::new(rec.nominal_fps, rec.nominal_offset)?,
                poses: poses.into_iter().map(|p| p.expect("every slot filled")).collect(),
            });
        }
        let observations = ObservationSet {
            observations: file
                .observations
                .iter()
                .map(|o| Observation {
                    camera: o.cam,
                    frame: o.frame,
                    target: o.target,
                    pixel: Vector2::from(o.px),
                })
                .collect(),
            cameras,
        };
        observations.validate()?;
        let truth = match file.ground_truth {
            Some(gt) => Some(GroundTruth {
                trajectories: trajectory_map(&gt.trajectories)?,
                time_models: clock_list(&gt.time_models, observations.cameras.len())?,
                poses: Vec::new(),
            }),
            None => None,
        };
        Ok(Dataset { observations, truth })
    }
}

/// Estimate in file form. Camera clocks are indexed like the dataset cameras.
pub fn estimate_file(method: Method, result: &ReconstructionResult) -> EstimateFile {
    EstimateFile {
        method,
        trajectories: trajectory_records(&result.trajectories),
        time_models: clock_records(&result.time_models),
        rotations: result.rotations.as_ref().map(|r| {
            r.iter()
                .map(|(&(cam, frame), q)| RotationRecord { cam, frame, q: q.to_array() })
                .collect()
        }),
        report: result.report.clone(),
    }
}

impl EstimateFile {
    pub fn trajectories(&self) -> Result<BTreeMap<usize, PolyTrajectory>> {
        trajectory_map(&self.trajectories)
    }
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path)
        .map_err(|e| Error::InvalidInput(format!("cannot read {}: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| Error::InvalidInput(format!("{}: {e}", path.display())))
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value)
        .map_err(|e| Error::InvalidInput(format!("cannot serialize: {e}")))?;
    fs::write(path, text + "\n").map_err(|e| Error::InvalidInput(format!("cannot write {}: {e}", path.display())))
}

pub fn read_dataset(path: &Path) -> Result<Dataset> {
    Dataset::from_file(read_json(path)?)
}

pub fn write_dataset(path: &Path, dataset: &Dataset) -> Result<()> {
    write_json(path, &dataset.to_file())
}

/// Fixed-point decimal with nine significant digits.
pub fn format_sig9(x: f64) -> String {
    if !x.is_finite() {
        return if x.is_nan() { "nan".into() } else if x > 0.0 { "inf".into() } else { "-inf".into() };
    }
    if x == 0.0 {
        return "0".into();
    }
    let magnitude = x.abs().log10().floor() as i32;
    let decimals = 8 - magnitude;
    if decimals >= 0 {
        let s = format!("{:.*}", decimals as usize, x);
        // Rounding can carry into a new leading digit, e.g. 9.999999999 -> 10.00000000.
        let digits = s.chars().filter(|c| c.is_ascii_digit()).collect::<String>();
        if digits.trim_start_matches('0').len() > 9 && decimals > 0 {
            return format!("{:.*}", decimals as usize - 1, x);
        }
        s
    } else {
        let scale = 10f64.powi(-decimals);
        format!("{:.0}", (x / scale).round() * scale)
    }
}
