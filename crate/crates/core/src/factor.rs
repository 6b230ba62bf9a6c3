//! Factors, noise models, factor graphs and linearization.

use std::collections::BTreeMap;
use std::fmt;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::env::ObstacleCost;
use crate::error::{Result, SteapError};
use crate::gp::{self, GpInterpCoeffs};
use crate::state::{local_coordinates_with_jacobians, MarkovState, MobileConfig};

/// Identifier of a trajectory variable; benchmark graphs use the support-state index.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct VarId(pub usize);

impl fmt::Display for VarId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "x{}", self.0)
    }
}

pub type Values = BTreeMap<VarId, MarkovState>;

/// Gaussian noise model with a cached square-root information matrix `W`, `W^T W = Sigma^-1`.
#[derive(Debug, Clone, PartialEq)]
pub struct NoiseModel {
    covariance: DMatrix<f64>,
    sqrt_info: DMatrix<f64>,
}

impl NoiseModel {
    pub fn new(covariance: DMatrix<f64>) -> Result<Self> {
        if !covariance.is_square() || covariance.nrows() == 0 {
            return Err(SteapError::InvalidNoise("covariance must be square and non-empty".into()));
        }
        let info = covariance
            .clone()
            .try_inverse()
            .ok_or_else(|| SteapError::InvalidNoise("covariance is singular".into()))?;
        let info = (&info + info.transpose()) * 0.5;
        let chol = info
            .cholesky()
            .ok_or_else(|| SteapError::InvalidNoise("covariance is not positive definite".into()))?;
        Ok(Self {
            covariance,
            sqrt_info: chol.l().transpose(),
        })
    }

    pub fn isotropic(dim: usize, sigma: f64) -> Result<Self> {
        if sigma <= 0.0 || !sigma.is_finite() {
            return Err(SteapError::InvalidNoise(format!("sigma must be positive, got {sigma}")));
        }
        Self::new(DMatrix::identity(dim, dim) * (sigma * sigma))
    }

    pub fn dim(&self) -> usize {
        self.covariance.nrows()
    }

    pub fn covariance(&self) -> &DMatrix<f64> {
        &self.covariance
    }

    pub fn sqrt_information(&self) -> &DMatrix<f64> {
        &self.sqrt_info
    }

    pub fn whiten(&self, e: &DVector<f64>) -> DVector<f64> {
        &self.sqrt_info * e
    }

    pub fn whiten_matrix(&self, j: &DMatrix<f64>) -> DMatrix<f64> {
        &self.sqrt_info * j
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum FactorKind {
    GpPrior,
    Obstacle,
    ObstacleInterp,
    StartFix,
    GoalFix,
    Measurement,
    /// Full-state Gaussian prior; used by the SLAP baseline's filter and re-anchoring.
    StatePrior,
}

impl FactorKind {
    pub fn name(self) -> &'static str {
        match self {
            FactorKind::GpPrior => "GpPrior",
            FactorKind::Obstacle => "Obstacle",
            FactorKind::ObstacleInterp => "ObstacleInterp",
            FactorKind::StartFix => "StartFix",
            FactorKind::GoalFix => "GoalFix",
            FactorKind::Measurement => "Measurement",
            FactorKind::StatePrior => "StatePrior",
        }
    }

    pub fn arity(self) -> usize {
        match self {
            FactorKind::GpPrior | FactorKind::ObstacleInterp => 2,
            _ => 1,
        }
    }
}

#[derive(Debug, Clone)]
pub enum FactorData {
    GpPrior {
        dt: f64,
    },
    Obstacle {
        cost: Arc<ObstacleCost>,
    },
    ObstacleInterp {
        dt: f64,
        tau: f64,
        coeffs: Arc<GpInterpCoeffs>,
        cost: Arc<ObstacleCost>,
    },
    StartFix {
        target: MobileConfig,
    },
    GoalFix {
        target: MobileConfig,
    },
    Measurement {
        mean: MobileConfig,
    },
    StatePrior {
        mean: MarkovState,
    },
}

#[derive(Debug, Clone)]
pub struct Factor {
    pub keys: Vec<VarId>,
    pub noise: NoiseModel,
    pub data: FactorData,
}

/// Residual and per-key Jacobians of a factor.
pub type Evaluation = (DVector<f64>, Vec<DMatrix<f64>>);

impl Factor {
    pub fn gp_prior(a: VarId, b: VarId, dt: f64, qc: &DMatrix<f64>) -> Result<Self> {
        Ok(Self {
            keys: vec![a, b],
            noise: NoiseModel::new(gp::process_noise_cov(dt, qc)?)?,
            data: FactorData::GpPrior { dt },
        })
    }

    /// Anchors configuration at `target` and velocity at zero.
    pub fn start_fix(var: VarId, target: MobileConfig, covariance: DMatrix<f64>) -> Result<Self> {
        Self::fix(var, covariance, FactorData::StartFix { target })
    }

    pub fn goal_fix(var: VarId, target: MobileConfig, covariance: DMatrix<f64>) -> Result<Self> {
        Self::fix(var, covariance, FactorData::GoalFix { target })
    }

    fn fix(var: VarId, covariance: DMatrix<f64>, data: FactorData) -> Result<Self> {
        let target = match &data {
            FactorData::StartFix { target } | FactorData::GoalFix { target } => target,
            _ => unreachable!(),
        };
        expect_dim(&covariance, 2 * target.tangent_dim())?;
        Ok(Self {
            keys: vec![var],
            noise: NoiseModel::new(covariance)?,
            data,
        })
    }

    /// Configuration-only pose measurement.
    pub fn measurement(var: VarId, mean: MobileConfig, covariance: DMatrix<f64>) -> Result<Self> {
        expect_dim(&covariance, mean.tangent_dim())?;
        Ok(Self {
            keys: vec![var],
            noise: NoiseModel::new(covariance)?,
            data: FactorData::Measurement { mean },
        })
    }

    pub fn state_prior(var: VarId, mean: MarkovState, covariance: DMatrix<f64>) -> Result<Self> {
        expect_dim(&covariance, mean.dim())?;
        Ok(Self {
            keys: vec![var],
            noise: NoiseModel::new(covariance)?,
            data: FactorData::StatePrior { mean },
        })
    }

    pub fn obstacle(var: VarId, cost: Arc<ObstacleCost>) -> Result<Self> {
        Ok(Self {
            keys: vec![var],
            noise: NoiseModel::isotropic(cost.body.spheres.len(), cost.hinge.sigma_obs)?,
            data: FactorData::Obstacle { cost },
        })
    }

    pub fn obstacle_interp(
        a: VarId,
        b: VarId,
        dt: f64,
        tau: f64,
        qc: &DMatrix<f64>,
        cost: Arc<ObstacleCost>,
    ) -> Result<Self> {
        if tau <= 0.0 || tau >= dt {
            return Err(SteapError::InterpolationOutOfRange { tau, dt });
        }
        let coeffs = Arc::new(gp::gp_interp_coeffs(dt, tau, qc)?);
        Ok(Self {
            keys: vec![a, b],
            noise: NoiseModel::isotropic(cost.body.spheres.len(), cost.hinge.sigma_obs)?,
            data: FactorData::ObstacleInterp {
                dt,
                tau,
                coeffs,
                cost,
            },
        })
    }

    pub fn kind(&self) -> FactorKind {
        match self.data {
            FactorData::GpPrior { .. } => FactorKind::GpPrior,
            FactorData::Obstacle { .. } => FactorKind::Obstacle,
            FactorData::ObstacleInterp { .. } => FactorKind::ObstacleInterp,
            FactorData::StartFix { .. } => FactorKind::StartFix,
            FactorData::GoalFix { .. } => FactorKind::GoalFix,
            FactorData::Measurement { .. } => FactorKind::Measurement,
            FactorData::StatePrior { .. } => FactorKind::StatePrior,
        }
    }

    pub fn dim(&self) -> usize {
        self.noise.dim()
    }

    fn states<'a>(&self, values: &'a Values) -> Result<Vec<&'a MarkovState>> {
        self.keys
            .iter()
            .map(|k| values.get(k).ok_or(SteapError::MissingVariable(*k)))
            .collect()
    }

    /// Unwhitened residual and Jacobians w.r.t. each key's `[config; velocity]` tangent.
    pub fn error_with_jacobians(&self, values: &Values) -> Result<Evaluation> {
        let s = self.states(values)?;
        match &self.data {
            FactorData::GpPrior { dt } => {
                let (r, ja, jb) = gp::gp_error_lie_with_jacobians(s[0], s[1], *dt)?;
                Ok((r, vec![ja, jb]))
            }
            FactorData::StartFix { target } | FactorData::GoalFix { target } => {
                let st = s[0];
                let d = st.tangent_dim();
                let (xi, _, jb) = local_coordinates_with_jacobians(target, &st.config)?;
                let mut r = DVector::zeros(2 * d);
                r.rows_mut(0, d).copy_from(&xi);
                r.rows_mut(d, d).copy_from(&st.velocity);
                let mut j = DMatrix::zeros(2 * d, 2 * d);
                j.view_mut((0, 0), (d, d)).copy_from(&jb);
                j.view_mut((d, d), (d, d)).fill_with_identity();
                Ok((r, vec![j]))
            }
            FactorData::Measurement { mean } => {
                let st = s[0];
                let d = st.tangent_dim();
                let (xi, _, jb) = local_coordinates_with_jacobians(mean, &st.config)?;
                let mut j = DMatrix::zeros(d, 2 * d);
                j.view_mut((0, 0), (d, d)).copy_from(&jb);
                Ok((xi, vec![j]))
            }
            FactorData::StatePrior { mean } => {
                let st = s[0];
                let d = st.tangent_dim();
                let (xi, _, jb) = local_coordinates_with_jacobians(&mean.config, &st.config)?;
                let mut r = DVector::zeros(2 * d);
                r.rows_mut(0, d).copy_from(&xi);
                r.rows_mut(d, d).copy_from(&(&st.velocity - &mean.velocity));
                let mut j = DMatrix::zeros(2 * d, 2 * d);
                j.view_mut((0, 0), (d, d)).copy_from(&jb);
                j.view_mut((d, d), (d, d)).fill_with_identity();
                Ok((r, vec![j]))
            }
            FactorData::Obstacle { cost } => {
                let st = s[0];
                let d = st.tangent_dim();
                let (r, jc) = cost.error_with_jacobian(&st.config)?;
                let mut j = DMatrix::zeros(r.len(), 2 * d);
                j.view_mut((0, 0), (r.len(), d)).copy_from(&jc);
                Ok((r, vec![j]))
            }
            FactorData::ObstacleInterp { coeffs, cost, .. } => {
                let (config, ja, jb) =
                    gp::interpolate_config_with_jacobians(s[0], s[1], coeffs)?;
                let (r, jc) = cost.error_with_jacobian(&config)?;
                Ok((r, vec![&jc * ja, &jc * jb]))
            }
        }
    }

    /// Unwhitened residual.
    pub fn error(&self, values: &Values) -> Result<DVector<f64>> {
        match &self.data {
            FactorData::Obstacle { cost } => cost.error(&self.states(values)?[0].config),
            FactorData::ObstacleInterp { coeffs, cost, .. } => {
                let s = self.states(values)?;
                cost.error(&gp::interpolate_with_coeffs(s[0], s[1], coeffs)?.config)
            }
            _ => Ok(self.error_with_jacobians(values)?.0),
        }
    }

    /// Whitened residual and Jacobians.
    pub fn evaluate(&self, values: &Values) -> Result<Evaluation> {
        let (r, js) = self.error_with_jacobians(values)?;
        Ok((
            self.noise.whiten(&r),
            js.iter().map(|j| self.noise.whiten_matrix(j)).collect(),
        ))
    }

    /// Squared Mahalanobis norm of the residual.
    pub fn squared_error(&self, values: &Values) -> Result<f64> {
        Ok(self.noise.whiten(&self.error(values)?).norm_squared())
    }

    /// Whitened linearization; `index` is used only to label non-finite residuals.
    pub fn linearize(&self, values: &Values, index: usize) -> Result<LinearFactor> {
        if matches!(self.data, FactorData::Obstacle { .. } | FactorData::ObstacleInterp { .. }) {
            let r = self.error(values)?;
            if r.iter().all(|v| *v == 0.0) {
                return Ok(LinearFactor {
                    keys: self.keys.clone(),
                    blocks: self
                        .keys
                        .iter()
                        .map(|k| DMatrix::zeros(0, values[k].dim()))
                        .collect(),
                    rhs: DVector::zeros(0),
                });
            }
        }
        let (r, blocks) = self.evaluate(values)?;
        if r.iter().chain(blocks.iter().flat_map(|b| b.iter())).any(|v| !v.is_finite()) {
            return Err(SteapError::NonFiniteResidual {
                index,
                kind: self.kind().name(),
            });
        }
        // Rows that are identically zero (inactive hinge terms) carry no information.
        let live: Vec<usize> = (0..r.len())
            .filter(|&i| r[i] != 0.0 || blocks.iter().any(|b| b.row(i).iter().any(|v| *v != 0.0)))
            .collect();
        if live.len() == r.len() {
            return Ok(LinearFactor {
                keys: self.keys.clone(),
                blocks,
                rhs: -r,
            });
        }
        Ok(LinearFactor {
            keys: self.keys.clone(),
            blocks: blocks.iter().map(|b| b.select_rows(&live)).collect(),
            rhs: -r.select_rows(&live),
        })
    }
}

fn expect_dim(m: &DMatrix<f64>, dim: usize) -> Result<()> {
    if m.nrows() != dim || m.ncols() != dim {
        return Err(SteapError::DimensionMismatch {
            expected: dim,
            found: m.nrows(),
        });
    }
    Ok(())
}

/// Gaussian factor `||sum_k A_k delta_k - b||^2`.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearFactor {
    pub keys: Vec<VarId>,
    pub blocks: Vec<DMatrix<f64>>,
    pub rhs: DVector<f64>,
}

impl LinearFactor {
    pub fn rows(&self) -> usize {
        self.rhs.len()
    }

    pub fn error(&self, delta: &BTreeMap<VarId, DVector<f64>>) -> f64 {
        let mut e = -self.rhs.clone();
        for (k, a) in self.keys.iter().zip(&self.blocks) {
            e += a * &delta[k];
        }
        e.norm_squared()
    }
}

/// Whitened linear least-squares system assembled from a factor graph.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearSystem {
    pub factors: Vec<LinearFactor>,
    pub dims: BTreeMap<VarId, usize>,
}

impl LinearSystem {
    pub fn rows(&self) -> usize {
        self.factors.iter().map(LinearFactor::rows).sum()
    }

    pub fn cols(&self) -> usize {
        self.dims.values().sum()
    }

    /// Column offsets for the given variable order.
    pub fn offsets(&self, order: &[VarId]) -> BTreeMap<VarId, usize> {
        let mut off = BTreeMap::new();
        let mut c = 0;
        for v in order {
            off.insert(*v, c);
            c += self.dims[v];
        }
        off
    }

    /// Dense `(A, b)` with columns laid out in `order`.
    pub fn to_dense(&self, order: &[VarId]) -> (DMatrix<f64>, DVector<f64>) {
        let off = self.offsets(order);
        let mut a = DMatrix::zeros(self.rows(), self.cols());
        let mut b = DVector::zeros(self.rows());
        let mut row = 0;
        for f in &self.factors {
            let m = f.rows();
            for (k, blk) in f.keys.iter().zip(&f.blocks) {
                let mut v = a.view_mut((row, off[k]), (m, blk.ncols()));
                v += blk;
            }
            b.rows_mut(row, m).copy_from(&f.rhs);
            row += m;
        }
        (a, b)
    }

    pub fn error(&self, delta: &BTreeMap<VarId, DVector<f64>>) -> f64 {
        self.factors.iter().map(|f| f.error(delta)).sum()
    }
}

/// Variables (linearization points) and the factors over them.
#[derive(Debug, Clone, Default)]
pub struct FactorGraph {
    pub values: Values,
    pub factors: Vec<Factor>,
}

impl FactorGraph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add_variable(&mut self, id: VarId, state: MarkovState) {
        self.values.insert(id, state);
    }

    pub fn add_factor(&mut self, factor: Factor) -> usize {
        self.factors.push(factor);
        self.factors.len() - 1
    }

    pub fn count(&self, kind: FactorKind) -> usize {
        self.factors.iter().filter(|f| f.kind() == kind).count()
    }

    /// Checks that every factor key has a value.
    pub fn validate(&self) -> Result<()> {
        for f in &self.factors {
            for k in &f.keys {
                if !self.values.contains_key(k) {
                    return Err(SteapError::MissingVariable(*k));
                }
            }
        }
        Ok(())
    }

    /// Sum of squared whitened residuals (twice the negative log posterior up to a constant).
    pub fn error(&self, values: &Values) -> Result<f64> {
        self.factors
            .iter()
            .map(|f| f.squared_error(values))
            .sum()
    }

    pub fn linearize(&self, values: &Values) -> Result<LinearSystem> {
        linearize_factors(self.factors.iter().enumerate(), values)
    }
}

pub fn dims_of(values: &Values) -> BTreeMap<VarId, usize> {
    values.iter().map(|(k, v)| (*k, v.dim())).collect()
}

/// Linearizes `(index, factor)` pairs in parallel; output order follows input order.
pub fn linearize_factors<'a, I>(factors: I, values: &Values) -> Result<LinearSystem>
where
    I: IntoIterator<Item = (usize, &'a Factor)>,
{
    let items: Vec<(usize, &Factor)> = factors.into_iter().collect();
    let linear: Result<Vec<LinearFactor>> = items
        .par_iter()
        .map(|(i, f)| f.linearize(values, *i))
        .collect();
    Ok(LinearSystem {
        factors: linear?,
        dims: dims_of(values),
    })
}

/// Applies per-variable tangent updates; variables without a delta are copied.
pub fn retract_values(values: &Values, delta: &BTreeMap<VarId, DVector<f64>>) -> Result<Values> {
    values
        .iter()
        .map(|(k, v)| {
            let s = match delta.get(k) {
                Some(d) => v.retract(d)?,
                None => v.clone(),
            };
            Ok((*k, s))
        })
        .collect()
}
