//! Constant-velocity (white-noise-on-acceleration) Gauss-Markov prior.
//!
//! States are stacked as `[position; velocity]` with `dim` entries each. On
//! `SE(2) x R^n` the prior is applied to the local state
//! `gamma = (xi, xi_dot)` about the earlier support state, with the body
//! velocity standing in for `xi_dot` (the right Jacobian is taken as identity
//! in the error model).

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Result, SteapError};
use crate::state::{
    config_adjoint_inv_exp, config_right_jacobian, local_coordinates_with_jacobians, retract,
    MarkovState, MobileConfig,
};

/// Power-spectral density of the acceleration noise.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GpParams {
    #[serde(with = "crate::serde_util::dmatrix")]
    pub qc: DMatrix<f64>,
    pub dt_default: f64,
}

impl GpParams {
    pub fn new(qc: DMatrix<f64>, dt_default: f64) -> Result<Self> {
        if !qc.is_square() {
            return Err(SteapError::InvalidNoise("Q_C must be square".into()));
        }
        if (&qc - qc.transpose()).amax() > 1e-12 * qc.amax().max(1.0) {
            return Err(SteapError::InvalidNoise("Q_C must be symmetric".into()));
        }
        if qc.clone().cholesky().is_none() {
            return Err(SteapError::InvalidNoise("Q_C must be positive definite".into()));
        }
        Ok(Self { qc, dt_default })
    }

    /// Diagonal `Q_C` with one value for the planar base block and one for the arm.
    pub fn diagonal(base: f64, arm: f64, arm_dof: usize, dt_default: f64) -> Result<Self> {
        let d = 3 + arm_dof;
        let qc = DMatrix::from_fn(d, d, |i, j| match (i == j, i < 3) {
            (true, true) => base,
            (true, false) => arm,
            _ => 0.0,
        });
        Self::new(qc, dt_default)
    }

    pub fn dim(&self) -> usize {
        self.qc.nrows()
    }
}

/// `Phi(t, s)` for `dt = t - s`.
pub fn transition_matrix(dt: f64, dim: usize) -> DMatrix<f64> {
    let mut phi = DMatrix::identity(2 * dim, 2 * dim);
    for k in 0..dim {
        phi[(k, dim + k)] = dt;
    }
    phi
}

/// `Q_{i,i+1}` for an interval of length `dt`.
pub fn process_noise_cov(dt: f64, qc: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    if dt <= 0.0 || !dt.is_finite() {
        return Err(SteapError::DegenerateInterval(dt));
    }
    Ok(process_noise_cov_unchecked(dt, qc))
}

fn process_noise_cov_unchecked(dt: f64, qc: &DMatrix<f64>) -> DMatrix<f64> {
    let d = qc.nrows();
    let mut q = DMatrix::zeros(2 * d, 2 * d);
    q.view_mut((0, 0), (d, d)).copy_from(&(qc * (dt * dt * dt / 3.0)));
    q.view_mut((0, d), (d, d)).copy_from(&(qc * (dt * dt / 2.0)));
    q.view_mut((d, 0), (d, d)).copy_from(&(qc * (dt * dt / 2.0)));
    q.view_mut((d, d), (d, d)).copy_from(&(qc * dt));
    q
}

fn stacked(state: &MarkovState) -> DVector<f64> {
    let d = state.tangent_dim();
    let mut v = DVector::zeros(2 * d);
    let mut row = 0;
    if let Some(b) = &state.config.base {
        v[0] = b.x;
        v[1] = b.y;
        v[2] = b.yaw;
        row = 3;
    }
    v.rows_mut(row, state.config.arm.len())
        .copy_from(&state.config.arm);
    v.rows_mut(d, d).copy_from(&state.velocity);
    v
}

fn check_pair(a: &MarkovState, b: &MarkovState) -> Result<()> {
    if a.tangent_dim() != b.tangent_dim() || a.config.base.is_some() != b.config.base.is_some() {
        return Err(SteapError::DimensionMismatch {
            expected: a.dim(),
            found: b.dim(),
        });
    }
    Ok(())
}

/// `Phi(dt) theta_i - theta_{i+1}` on raw stacked coordinates.
pub fn gp_error_vector(a: &MarkovState, b: &MarkovState, dt: f64) -> Result<DVector<f64>> {
    check_pair(a, b)?;
    let phi = transition_matrix(dt, a.tangent_dim());
    Ok(phi * stacked(a) - stacked(b))
}

/// Lie-group GP error `[w_i dt - xi ; w_i - w_{i+1}]` with `xi = local(c_i, c_{i+1})`.
pub fn gp_error_lie(a: &MarkovState, b: &MarkovState, dt: f64) -> Result<DVector<f64>> {
    Ok(gp_error_lie_with_jacobians(a, b, dt)?.0)
}

/// [`gp_error_lie`] with Jacobians w.r.t. both states' `[config; velocity]` tangents.
pub fn gp_error_lie_with_jacobians(
    a: &MarkovState,
    b: &MarkovState,
    dt: f64,
) -> Result<(DVector<f64>, DMatrix<f64>, DMatrix<f64>)> {
    if dt <= 0.0 || !dt.is_finite() {
        return Err(SteapError::DegenerateInterval(dt));
    }
    check_pair(a, b)?;
    let d = a.tangent_dim();
    let (xi, dxi_da, dxi_db) = local_coordinates_with_jacobians(&a.config, &b.config)?;

    let mut r = DVector::zeros(2 * d);
    r.rows_mut(0, d).copy_from(&(&a.velocity * dt - &xi));
    r.rows_mut(d, d).copy_from(&(&a.velocity - &b.velocity));

    let eye = DMatrix::<f64>::identity(d, d);
    let mut ja = DMatrix::zeros(2 * d, 2 * d);
    ja.view_mut((0, 0), (d, d)).copy_from(&(-dxi_da));
    ja.view_mut((0, d), (d, d)).copy_from(&(&eye * dt));
    ja.view_mut((d, d), (d, d)).copy_from(&eye);

    let mut jb = DMatrix::zeros(2 * d, 2 * d);
    jb.view_mut((0, 0), (d, d)).copy_from(&(-dxi_db));
    jb.view_mut((d, d), (d, d)).copy_from(&(-eye));
    Ok((r, ja, jb))
}

/// Two-support-state interpolation weights: `gamma(tau) = lambda gamma_i + psi gamma_{i+1}`.
#[derive(Debug, Clone, PartialEq)]
pub struct GpInterpCoeffs {
    pub lambda: DMatrix<f64>,
    pub psi: DMatrix<f64>,
}

impl GpInterpCoeffs {
    fn dim(&self) -> usize {
        self.lambda.nrows() / 2
    }
}

pub fn gp_interp_coeffs(dt: f64, tau: f64, qc: &DMatrix<f64>) -> Result<GpInterpCoeffs> {
    if dt <= 0.0 || !dt.is_finite() {
        return Err(SteapError::DegenerateInterval(dt));
    }
    if !(0.0..=dt).contains(&tau) {
        return Err(SteapError::InterpolationOutOfRange { tau, dt });
    }
    let d = qc.nrows();
    if tau == 0.0 {
        return Ok(GpInterpCoeffs {
            lambda: DMatrix::identity(2 * d, 2 * d),
            psi: DMatrix::zeros(2 * d, 2 * d),
        });
    }
    let q_tau = process_noise_cov_unchecked(tau, qc);
    let q_full = process_noise_cov_unchecked(dt, qc);
    let phi_rest = transition_matrix(dt - tau, d);
    let chol = q_full
        .cholesky()
        .ok_or_else(|| SteapError::InvalidNoise("Q_{i,i+1} not positive definite".into()))?;
    // psi = Q_tau Phi(t_{i+1}, tau)^T Q^{-1}; solve with the symmetric factor then transpose.
    let psi = chol.solve(&(&phi_rest * &q_tau)).transpose();
    let lambda = transition_matrix(tau, d) - &psi * transition_matrix(dt, d);
    Ok(GpInterpCoeffs { lambda, psi })
}

fn local_gammas(
    a: &MarkovState,
    b: &MarkovState,
) -> Result<(DVector<f64>, DMatrix<f64>, DMatrix<f64>)> {
    check_pair(a, b)?;
    local_coordinates_with_jacobians(&a.config, &b.config)
}

/// Interpolated local state `(p, v)` in the chart of `a`.
fn interp_local(
    a: &MarkovState,
    b: &MarkovState,
    xi: &DVector<f64>,
    c: &GpInterpCoeffs,
) -> (DVector<f64>, DVector<f64>) {
    let d = c.dim();
    let l12 = c.lambda.view((0, d), (d, d));
    let l22 = c.lambda.view((d, d), (d, d));
    let p11 = c.psi.view((0, 0), (d, d));
    let p12 = c.psi.view((0, d), (d, d));
    let p21 = c.psi.view((d, 0), (d, d));
    let p22 = c.psi.view((d, d), (d, d));
    let p = l12 * &a.velocity + p11 * xi + p12 * &b.velocity;
    let v = l22 * &a.velocity + p21 * xi + p22 * &b.velocity;
    (p, v)
}

pub fn interpolate_with_coeffs(
    a: &MarkovState,
    b: &MarkovState,
    coeffs: &GpInterpCoeffs,
) -> Result<MarkovState> {
    let (xi, _, _) = local_gammas(a, b)?;
    if coeffs.dim() != a.tangent_dim() {
        return Err(SteapError::DimensionMismatch {
            expected: a.tangent_dim(),
            found: coeffs.dim(),
        });
    }
    let (p, v) = interp_local(a, b, &xi, coeffs);
    Ok(MarkovState {
        config: retract(&a.config, &p)?,
        velocity: v,
    })
}

/// GP posterior mean at `t_i + tau` from the two bracketing support states.
pub fn interpolate_state(
    a: &MarkovState,
    b: &MarkovState,
    dt: f64,
    tau: f64,
    qc: &DMatrix<f64>,
) -> Result<MarkovState> {
    let coeffs = gp_interp_coeffs(dt, tau, qc)?;
    interpolate_with_coeffs(a, b, &coeffs)
}

/// Interpolated configuration with Jacobians (`d x 2d`) w.r.t. both support states.
pub fn interpolate_config_with_jacobians(
    a: &MarkovState,
    b: &MarkovState,
    coeffs: &GpInterpCoeffs,
) -> Result<(MobileConfig, DMatrix<f64>, DMatrix<f64>)> {
    let (xi, dxi_da, dxi_db) = local_gammas(a, b)?;
    let d = a.tangent_dim();
    if coeffs.dim() != d {
        return Err(SteapError::DimensionMismatch {
            expected: d,
            found: coeffs.dim(),
        });
    }
    let (p, _) = interp_local(a, b, &xi, coeffs);
    let config = retract(&a.config, &p)?;

    let jr = config_right_jacobian(&a.config, &p);
    let ad = config_adjoint_inv_exp(&a.config, &p);
    let l12 = coeffs.lambda.view((0, d), (d, d));
    let p11 = coeffs.psi.view((0, 0), (d, d));
    let p12 = coeffs.psi.view((0, d), (d, d));

    let mut ja = DMatrix::zeros(d, 2 * d);
    ja.view_mut((0, 0), (d, d))
        .copy_from(&(ad + &jr * p11 * &dxi_da));
    ja.view_mut((0, d), (d, d)).copy_from(&(&jr * l12));
    let mut jb = DMatrix::zeros(d, 2 * d);
    jb.view_mut((0, 0), (d, d)).copy_from(&(&jr * p11 * &dxi_db));
    jb.view_mut((0, d), (d, d)).copy_from(&(&jr * p12));
    Ok((config, ja, jb))
}
