use nalgebra::{DMatrix, DVector};
use rand::{RngExt, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Result, SteapError};
use crate::gp::{gp_interp_coeffs, interpolate_with_coeffs};
use crate::state::{local_coordinates, retract, MarkovState, MobileConfig};

/// Stochastic execution and sensing settings.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimConfig {
    /// Half-width of the uniform velocity noise (m/s for translation, rad/s for rotation and joints).
    pub n_dyn: f64,
    /// Standard deviation of the pose measurement noise per tangent component.
    pub n_cam: f64,
    pub seed: u64,
    pub exec_substeps: usize,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            n_dyn: 0.0,
            n_cam: 0.0,
            seed: 0,
            exec_substeps: 10,
        }
    }
}

impl SimConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.n_dyn >= 0.0) || !(self.n_cam >= 0.0) || self.exec_substeps == 0 {
            return Err(SteapError::InvalidConfig(format!(
                "n_dyn={} n_cam={} exec_substeps={}",
                self.n_dyn, self.n_cam, self.exec_substeps
            )));
        }
        Ok(())
    }
}

/// Scale from the translational noise bound to the rotational one (rad per m).
pub const ROTATION_NOISE_SCALE: f64 = 1.0;

/// Independent ChaCha8 streams for execution and sensing, both derived from one seed.
#[derive(Debug, Clone)]
pub struct SimRng {
    pub dynamics: ChaCha8Rng,
    pub measurement: ChaCha8Rng,
}

impl SimRng {
    pub fn new(seed: u64) -> Self {
        let mut dynamics = ChaCha8Rng::seed_from_u64(seed);
        dynamics.set_stream(1);
        let mut measurement = ChaCha8Rng::seed_from_u64(seed);
        measurement.set_stream(2);
        Self {
            dynamics,
            measurement,
        }
    }
}

/// A planned interval to be executed.
#[derive(Debug, Clone)]
pub struct Segment<'a> {
    pub from: &'a MarkovState,
    pub to: &'a MarkovState,
    pub dt: f64,
    pub qc: &'a DMatrix<f64>,
}

/// Outcome of executing one segment.
#[derive(Debug, Clone, PartialEq)]
pub struct Execution {
    pub end: MarkovState,
    /// True configuration after every substep (the start is not repeated).
    pub trace: Vec<MobileConfig>,
}

/// Replays the plan's body-frame motion from the true state, perturbing each substep's velocity.
pub fn simulate_execute(
    current: &MobileConfig,
    segment: &Segment<'_>,
    n_dyn: f64,
    substeps: usize,
    rng: &mut ChaCha8Rng,
) -> Result<Execution> {
    if substeps == 0 {
        return Err(SteapError::InvalidConfig("exec_substeps must be >= 1".into()));
    }
    let h = segment.dt / substeps as f64;
    let bd = current.base_dim();
    let mut state = current.clone();
    let mut trace = Vec::with_capacity(substeps);
    let mut prev = segment.from.clone();
    let mut velocity = DVector::zeros(current.tangent_dim());
    for j in 1..=substeps {
        let tau = (segment.dt * j as f64 / substeps as f64).min(segment.dt);
        let next = interpolate_with_coeffs(segment.from, segment.to, &gp_interp_coeffs(segment.dt, tau, segment.qc)?)?;
        let commanded = local_coordinates(&prev.config, &next.config)? / h;
        let noise = DVector::from_fn(commanded.len(), |k, _| {
            let scale = if bd == 3 && k == 2 { ROTATION_NOISE_SCALE } else { 1.0 };
            if n_dyn > 0.0 {
                scale * rng.random_range(-n_dyn..=n_dyn)
            } else {
                0.0
            }
        });
        velocity = commanded + noise;
        state = retract(&state, &(&velocity * h))?;
        trace.push(state.clone());
        prev = next;
    }
    Ok(Execution {
        end: MarkovState::new(state, velocity)?,
        trace,
    })
}

/// A simulated pose measurement.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Measurement {
    pub mean: MobileConfig,
    /// Per-component variance of the generating noise.
    pub variance: f64,
}

impl Measurement {
    pub fn covariance(&self) -> DMatrix<f64> {
        let d = self.mean.tangent_dim();
        DMatrix::identity(d, d) * self.variance
    }
}

/// Perturbs the true configuration with isotropic Gaussian tangent noise of standard deviation `n_cam`.
pub fn simulate_measurement(truth: &MobileConfig, n_cam: f64, rng: &mut ChaCha8Rng) -> Result<Measurement> {
    let d = truth.tangent_dim();
    let noise = DVector::from_fn(d, |_, _| {
        let z: f64 = rng.sample(StandardNormal);
        n_cam * z
    });
    let mean = if n_cam > 0.0 { retract(truth, &noise)? } else { truth.clone() };
    Ok(Measurement {
        mean,
        variance: n_cam * n_cam,
    })
}
