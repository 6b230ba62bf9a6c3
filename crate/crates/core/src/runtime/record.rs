use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::simulate::{Measurement, SimConfig};
use crate::env::WorldSpec;
use crate::error::{Result, SteapError};
use crate::state::{local_coordinates, MobileConfig, Trajectory};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Mode {
    #[serde(rename = "OL")]
    OpenLoop,
    #[serde(rename = "SLAP")]
    Slap,
    #[serde(rename = "STEAP")]
    Steap,
}

impl Mode {
    pub const ALL: [Mode; 3] = [Mode::OpenLoop, Mode::Slap, Mode::Steap];

    pub fn as_str(self) -> &'static str {
        match self {
            Mode::OpenLoop => "OL",
            Mode::Slap => "SLAP",
            Mode::Steap => "STEAP",
        }
    }
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Mode {
    type Err = SteapError;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_uppercase().as_str() {
            "OL" => Ok(Mode::OpenLoop),
            "SLAP" => Ok(Mode::Slap),
            "STEAP" => Ok(Mode::Steap),
            _ => Err(SteapError::InvalidConfig(format!("unknown mode {s:?}"))),
        }
    }
}

/// Per-step log entry.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepLog {
    /// Index of the state reached by this step.
    pub index: usize,
    pub true_config: MobileConfig,
    pub measurement: Option<Measurement>,
    pub estimate: Option<MobileConfig>,
    /// Short digest of the plan in force after this step.
    pub plan_hash: String,
    pub time_s: f64,
    /// Variables re-eliminated by the incremental update (STEAP only).
    pub reeliminated: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub mode: Mode,
    pub sim: SimConfig,
    pub world: WorldSpec,
    pub goal: MobileConfig,
    pub success: bool,
    pub failure: Option<String>,
    pub ground_truth: Trajectory,
    pub estimated: Option<Trajectory>,
    /// Initial plan followed by the plan after every step.
    pub planned_per_step: Vec<Trajectory>,
    pub steps: Vec<StepLog>,
    pub initial_plan_time_s: f64,
}

impl RunRecord {
    pub fn step_times(&self) -> Vec<f64> {
        self.steps.iter().map(|s| s.time_s).collect()
    }

    pub fn measurements(&self) -> Vec<&Measurement> {
        self.steps.iter().filter_map(|s| s.measurement.as_ref()).collect()
    }

    pub fn to_json(&self) -> Result<String> {
        serde_json::to_string_pretty(self).map_err(|e| SteapError::Parse(e.to_string()))
    }

    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| SteapError::Parse(e.to_string()))
    }
}

/// First 16 hex digits of SHA-256 over the little-endian bits of every coordinate.
pub fn plan_hash(plan: &Trajectory) -> String {
    let mut h = Sha256::new();
    for s in &plan.states {
        if let Some(b) = &s.config.base {
            for v in [b.x, b.y, b.yaw] {
                h.update(v.to_le_bytes());
            }
        }
        for v in s.config.arm.iter().chain(s.velocity.iter()) {
            h.update(v.to_le_bytes());
        }
    }
    let digest = h.finalize();
    digest[..8].iter().map(|b| format!("{b:02x}")).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub success: bool,
    pub goal_err_trans: f64,
    pub goal_err_rot: f64,
    pub est_err_trans: Option<f64>,
    pub est_err_rot: Option<f64>,
    /// RMS translational error of the raw measurements.
    pub meas_err_trans: Option<f64>,
    pub mean_step_time: f64,
}

fn split(xi: &nalgebra::DVector<f64>, has_base: bool) -> (f64, f64) {
    if has_base {
        ((xi[0] * xi[0] + xi[1] * xi[1]).sqrt(), xi[2].abs())
    } else {
        (xi.norm(), 0.0)
    }
}

/// Root mean square of translational and rotational errors between paired configurations.
pub fn rms_errors<'a, I>(pairs: I) -> Result<Option<(f64, f64)>>
where
    I: IntoIterator<Item = (&'a MobileConfig, &'a MobileConfig)>,
{
    let (mut st, mut sr, mut n) = (0.0, 0.0, 0usize);
    for (truth, other) in pairs {
        let (t, r) = split(&local_coordinates(truth, other)?, truth.base.is_some());
        st += t * t;
        sr += r * r;
        n += 1;
    }
    Ok((n > 0).then(|| ((st / n as f64).sqrt(), (sr / n as f64).sqrt())))
}

pub fn compute_metrics(record: &RunRecord) -> Result<Metrics> {
    let last = record
        .ground_truth
        .states
        .last()
        .ok_or_else(|| SteapError::InvalidTrajectory("empty ground truth".into()))?;
    let (goal_err_trans, goal_err_rot) = split(
        &local_coordinates(&record.goal, &last.config)?,
        record.goal.base.is_some(),
    );
    let est = match &record.estimated {
        Some(e) => rms_errors(
            record
                .ground_truth
                .states
                .iter()
                .zip(&e.states)
                .map(|(a, b)| (&a.config, &b.config)),
        )?,
        None => None,
    };
    let meas = rms_errors(record.steps.iter().filter_map(|s| {
        s.measurement.as_ref().map(|m| (&s.true_config, &m.mean))
    }))?;
    let times = record.step_times();
    let mean_step_time = if times.is_empty() {
        0.0
    } else {
        times.iter().sum::<f64>() / times.len() as f64
    };
    Ok(Metrics {
        success: record.success,
        goal_err_trans,
        goal_err_rot,
        est_err_trans: est.map(|e| e.0),
        est_err_rot: est.map(|e| e.1),
        meas_err_trans: meas.map(|m| m.0),
        mean_step_time,
    })
}
