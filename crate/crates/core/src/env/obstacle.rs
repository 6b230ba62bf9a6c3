use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::body::BodyModel;
use super::sdf::SignedDistanceField;
use crate::error::{Result, SteapError};
use crate::gp::{gp_interp_coeffs, interpolate_with_coeffs};
use crate::state::{MarkovState, MobileConfig};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct HingeLossParams {
    /// Safety margin in meters.
    pub eps: f64,
    /// Isotropic obstacle-cost standard deviation.
    pub sigma_obs: f64,
}

impl Default for HingeLossParams {
    fn default() -> Self {
        Self {
            eps: 0.2,
            sigma_obs: 0.05,
        }
    }
}

impl HingeLossParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.eps >= 0.0) || !(self.sigma_obs > 0.0) {
            return Err(SteapError::InvalidProblem(format!(
                "hinge parameters eps={} sigma_obs={}",
                self.eps, self.sigma_obs
            )));
        }
        Ok(())
    }
}

/// `max(eps - d, 0)`.
pub fn hinge_loss(d: f64, eps: f64) -> f64 {
    (eps - d).max(0.0)
}

/// Everything an obstacle factor needs, shared between factors.
#[derive(Debug, Clone)]
pub struct ObstacleCost {
    pub sdf: Arc<SignedDistanceField>,
    pub body: BodyModel,
    pub hinge: HingeLossParams,
}

impl ObstacleCost {
    pub fn new(sdf: Arc<SignedDistanceField>, body: BodyModel, hinge: HingeLossParams) -> Self {
        Self { sdf, body, hinge }
    }

    /// One hinge cost per sphere.
    pub fn error(&self, config: &MobileConfig) -> Result<DVector<f64>> {
        let centres = self.body.sphere_centres(config)?;
        Ok(DVector::from_iterator(
            centres.len(),
            centres.iter().zip(&self.body.spheres).map(|(c, s)| {
                hinge_loss(self.sdf.bicubic(c).distance - s.radius, self.hinge.eps)
            }),
        ))
    }

    /// One hinge cost per sphere and its Jacobian w.r.t. the configuration tangent.
    ///
    /// Distances come from the bicubic interpolant, so the cost is continuously differentiable.
    pub fn error_with_jacobian(&self, config: &MobileConfig) -> Result<(DVector<f64>, DMatrix<f64>)> {
        let (centres, jacs) = self.body.forward_kinematics(config)?;
        let m = centres.len();
        let mut r = DVector::zeros(m);
        let mut j = DMatrix::zeros(m, config.tangent_dim());
        for (k, (c, jc)) in centres.iter().zip(&jacs).enumerate() {
            let q = self.sdf.bicubic(c);
            let d = q.distance - self.body.spheres[k].radius;
            r[k] = hinge_loss(d, self.hinge.eps);
            if d < self.hinge.eps {
                let row = -(q.gradient.transpose() * jc);
                j.row_mut(k).copy_from(&row);
            }
        }
        Ok((r, j))
    }
}

pub fn obstacle_error(
    config: &MobileConfig,
    body: &BodyModel,
    sdf: &SignedDistanceField,
    params: &HingeLossParams,
) -> Result<DVector<f64>> {
    let cost = ObstacleCost::new(Arc::new(sdf.clone()), body.clone(), *params);
    cost.error(config)
}

/// Obstacle cost at the GP-interpolated configuration `tau` into the interval.
pub fn interp_obstacle_error(
    a: &MarkovState,
    b: &MarkovState,
    dt: f64,
    tau: f64,
    qc: &DMatrix<f64>,
    cost: &ObstacleCost,
) -> Result<DVector<f64>> {
    let coeffs = gp_interp_coeffs(dt, tau, qc)?;
    let s = interpolate_with_coeffs(a, b, &coeffs)?;
    cost.error(&s.config)
}

/// Smallest `sdf(centre) - radius` over all spheres.
pub fn min_clearance(config: &MobileConfig, body: &BodyModel, sdf: &SignedDistanceField) -> Result<f64> {
    let centres = body.sphere_centres(config)?;
    Ok(centres
        .iter()
        .zip(&body.spheres)
        .map(|(c, s)| sdf.bilinear(c).distance - s.radius)
        .fold(f64::INFINITY, f64::min))
}

pub fn config_collision_free(
    config: &MobileConfig,
    body: &BodyModel,
    sdf: &SignedDistanceField,
) -> Result<bool> {
    Ok(min_clearance(config, body, sdf)? > 0.0)
}

/// Checks `resolution + 1` GP-interpolated states at `tau = dt * j / resolution`.
pub fn collision_free(
    a: &MarkovState,
    b: &MarkovState,
    dt: f64,
    qc: &DMatrix<f64>,
    body: &BodyModel,
    sdf: &SignedDistanceField,
    resolution: usize,
) -> Result<bool> {
    if resolution == 0 {
        return Err(SteapError::InvalidProblem("collision resolution must be >= 1".into()));
    }
    for j in 0..=resolution {
        let tau = dt * j as f64 / resolution as f64;
        let s = interpolate_with_coeffs(a, b, &gp_interp_coeffs(dt, tau.min(dt), qc)?)?;
        if !config_collision_free(&s.config, body, sdf)? {
            return Ok(false);
        }
    }
    Ok(true)
}
