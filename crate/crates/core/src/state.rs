//! Configuration space `SE(2) x R^n`, Markov states and trajectories.
//!
//! A [`MobileConfig`] without a base is a plain vector-space configuration;
//! every chart operation then degenerates to vector addition/subtraction,
//! which is what linear-Gaussian test problems use.

use nalgebra::{DMatrix, DVector, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Result, SteapError};
use crate::lie::{right_jacobian, right_jacobian_inv, se2_exp, se2_log, Se2Pose};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MobileConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub base: Option<Se2Pose>,
    #[serde(with = "crate::serde_util::dvector")]
    pub arm: DVector<f64>,
}

impl MobileConfig {
    pub fn new(base: Se2Pose, arm: DVector<f64>) -> Self {
        Self {
            base: Some(base),
            arm,
        }
    }

    /// A configuration in `R^n` with no planar base.
    pub fn vector(values: DVector<f64>) -> Self {
        Self {
            base: None,
            arm: values,
        }
    }

    pub fn from_slice(base: Se2Pose, arm: &[f64]) -> Self {
        Self::new(base, DVector::from_column_slice(arm))
    }

    pub fn base_dim(&self) -> usize {
        if self.base.is_some() {
            3
        } else {
            0
        }
    }

    pub fn tangent_dim(&self) -> usize {
        self.base_dim() + self.arm.len()
    }

    fn check_compatible(&self, other: &MobileConfig) -> Result<()> {
        if self.base.is_some() != other.base.is_some() || self.arm.len() != other.arm.len() {
            return Err(SteapError::DimensionMismatch {
                expected: self.tangent_dim(),
                found: other.tangent_dim(),
            });
        }
        Ok(())
    }

    /// Base pose, or identity for vector-space configurations.
    pub fn base_or_identity(&self) -> Se2Pose {
        self.base.unwrap_or_default()
    }

    /// Maximum absolute difference over all stored coordinates.
    pub fn max_abs_diff(&self, other: &MobileConfig) -> f64 {
        let base = match (&self.base, &other.base) {
            (Some(a), Some(b)) => a.max_abs_diff(b),
            _ => 0.0,
        };
        let arm = if self.arm.len() == other.arm.len() {
            (&self.arm - &other.arm).amax()
        } else {
            f64::INFINITY
        };
        base.max(arm)
    }
}

fn base_tangent(delta: &DVector<f64>) -> Vector3<f64> {
    Vector3::new(delta[0], delta[1], delta[2])
}

/// `b` expressed in the chart centred at `a`.
pub fn local_coordinates(a: &MobileConfig, b: &MobileConfig) -> Result<DVector<f64>> {
    a.check_compatible(b)?;
    let bd = a.base_dim();
    let mut out = DVector::zeros(a.tangent_dim());
    if let (Some(pa), Some(pb)) = (&a.base, &b.base) {
        out.fixed_rows_mut::<3>(0).copy_from(&se2_log(&pa.between(pb)));
    }
    out.rows_mut(bd, a.arm.len()).copy_from(&(&b.arm - &a.arm));
    Ok(out)
}

/// Chart coordinates together with their Jacobians w.r.t. right perturbations of `a` and `b`.
pub fn local_coordinates_with_jacobians(
    a: &MobileConfig,
    b: &MobileConfig,
) -> Result<(DVector<f64>, DMatrix<f64>, DMatrix<f64>)> {
    let xi = local_coordinates(a, b)?;
    let d = a.tangent_dim();
    let bd = a.base_dim();
    let mut ja = DMatrix::zeros(d, d);
    let mut jb = DMatrix::zeros(d, d);
    if bd == 3 {
        let xb = base_tangent(&xi);
        let jr_inv = right_jacobian_inv(&xb);
        let rel_inv = se2_exp(&xb).inverse();
        jb.fixed_view_mut::<3, 3>(0, 0).copy_from(&jr_inv);
        ja.fixed_view_mut::<3, 3>(0, 0)
            .copy_from(&(-jr_inv * rel_inv.adjoint()));
    }
    for k in bd..d {
        ja[(k, k)] = -1.0;
        jb[(k, k)] = 1.0;
    }
    Ok((xi, ja, jb))
}

pub fn retract(a: &MobileConfig, delta: &DVector<f64>) -> Result<MobileConfig> {
    if delta.len() != a.tangent_dim() {
        return Err(SteapError::DimensionMismatch {
            expected: a.tangent_dim(),
            found: delta.len(),
        });
    }
    let bd = a.base_dim();
    let base = a
        .base
        .map(|p| p.compose(&se2_exp(&base_tangent(delta))));
    let arm = &a.arm + delta.rows(bd, a.arm.len());
    Ok(MobileConfig { base, arm })
}

/// Block-diagonal `diag(J_r(xi_base), I)` on a configuration tangent.
pub fn config_right_jacobian(config: &MobileConfig, xi: &DVector<f64>) -> DMatrix<f64> {
    let d = config.tangent_dim();
    let mut j = DMatrix::identity(d, d);
    if config.base.is_some() {
        j.fixed_view_mut::<3, 3>(0, 0)
            .copy_from(&right_jacobian(&base_tangent(xi)));
    }
    j
}

/// Block-diagonal `diag(Ad(exp(-xi_base)), I)`: moves a right perturbation
/// of `T` to a right perturbation of `T exp(xi)`.
pub fn config_adjoint_inv_exp(config: &MobileConfig, xi: &DVector<f64>) -> DMatrix<f64> {
    let d = config.tangent_dim();
    let mut j = DMatrix::identity(d, d);
    if config.base.is_some() {
        let ad = se2_exp(&base_tangent(xi)).inverse().adjoint();
        j.fixed_view_mut::<3, 3>(0, 0).copy_from(&ad);
    }
    j
}

/// The per-timestep variable: configuration plus body-frame velocity.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MarkovState {
    pub config: MobileConfig,
    #[serde(with = "crate::serde_util::dvector")]
    pub velocity: DVector<f64>,
}

impl MarkovState {
    pub fn new(config: MobileConfig, velocity: DVector<f64>) -> Result<Self> {
        if velocity.len() != config.tangent_dim() {
            return Err(SteapError::DimensionMismatch {
                expected: config.tangent_dim(),
                found: velocity.len(),
            });
        }
        Ok(Self { config, velocity })
    }

    pub fn at_rest(config: MobileConfig) -> Self {
        let d = config.tangent_dim();
        Self {
            config,
            velocity: DVector::zeros(d),
        }
    }

    pub fn tangent_dim(&self) -> usize {
        self.config.tangent_dim()
    }

    /// Dimension of the state's own tangent space, `2 * (3 + n)`.
    pub fn dim(&self) -> usize {
        2 * self.tangent_dim()
    }

    /// Applies `[config delta; velocity delta]`.
    pub fn retract(&self, delta: &DVector<f64>) -> Result<MarkovState> {
        let d = self.tangent_dim();
        if delta.len() != 2 * d {
            return Err(SteapError::DimensionMismatch {
                expected: 2 * d,
                found: delta.len(),
            });
        }
        let config = retract(&self.config, &delta.rows(0, d).into_owned())?;
        let velocity = &self.velocity + delta.rows(d, d);
        Ok(MarkovState { config, velocity })
    }

    /// Inverse of [`MarkovState::retract`].
    pub fn local(&self, other: &MarkovState) -> Result<DVector<f64>> {
        let d = self.tangent_dim();
        let xi = local_coordinates(&self.config, &other.config)?;
        let mut out = DVector::zeros(2 * d);
        out.rows_mut(0, d).copy_from(&xi);
        out.rows_mut(d, d).copy_from(&(&other.velocity - &self.velocity));
        Ok(out)
    }

    pub fn max_abs_diff(&self, other: &MarkovState) -> f64 {
        self.config
            .max_abs_diff(&other.config)
            .max((&self.velocity - &other.velocity).amax())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub times: Vec<f64>,
    pub states: Vec<MarkovState>,
}

impl Trajectory {
    pub fn new(times: Vec<f64>, states: Vec<MarkovState>) -> Result<Self> {
        if times.len() != states.len() {
            return Err(SteapError::InvalidTrajectory(format!(
                "{} timestamps for {} states",
                times.len(),
                states.len()
            )));
        }
        if times.windows(2).any(|w| w[1] <= w[0]) {
            return Err(SteapError::InvalidTrajectory(
                "timestamps must be strictly increasing".into(),
            ));
        }
        Ok(Self { times, states })
    }

    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }

    /// Largest per-component difference between two trajectories over matching states.
    pub fn max_abs_diff(&self, other: &Trajectory) -> f64 {
        self.states
            .iter()
            .zip(&other.states)
            .map(|(a, b)| a.max_abs_diff(b))
            .fold(0.0, f64::max)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::dvector;
    use rand::{RngExt, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_config(rng: &mut ChaCha8Rng) -> MobileConfig {
        MobileConfig::new(
            Se2Pose::new(
                rng.random_range(-5.0..5.0),
                rng.random_range(-5.0..5.0),
                rng.random_range(-3.0..3.0),
            ),
            dvector![rng.random_range(-2.0..2.0), rng.random_range(-2.0..2.0)],
        )
    }

    #[test]
    fn local_coordinates_examples() {
        let c = MobileConfig::from_slice(Se2Pose::new(1.0, -2.0, 0.3), &[0.1]);
        assert!(local_coordinates(&c, &c).unwrap().amax() < 1e-15);

        let a = MobileConfig::from_slice(Se2Pose::identity(), &[0.0]);
        let b = MobileConfig::from_slice(Se2Pose::new(1.0, 2.0, 0.0), &[0.5]);
        let xi = local_coordinates(&a, &b).unwrap();
        assert!((xi - dvector![1.0, 2.0, 0.0, 0.5]).amax() < 1e-15);
    }

    #[test]
    fn dimension_mismatch_is_an_error() {
        let a = MobileConfig::from_slice(Se2Pose::identity(), &[0.0]);
        let b = MobileConfig::from_slice(Se2Pose::identity(), &[0.0, 1.0]);
        assert!(matches!(
            local_coordinates(&a, &b),
            Err(SteapError::DimensionMismatch { .. })
        ));
        assert!(retract(&a, &dvector![0.0, 0.0]).is_err());
        let v = MobileConfig::vector(dvector![0.0, 0.0, 0.0, 0.0]);
        assert!(local_coordinates(&a, &v).is_err());
    }

    #[test]
    fn retract_examples() {
        let c = MobileConfig::from_slice(Se2Pose::new(0.4, 0.1, -1.0), &[0.3, 0.2]);
        assert_eq!(retract(&c, &DVector::zeros(5)).unwrap().max_abs_diff(&c), 0.0);
        let xi = Vector3::new(0.5, -0.2, 1.1);
        let id = MobileConfig::from_slice(Se2Pose::identity(), &[]);
        let r = retract(&id, &dvector![xi[0], xi[1], xi[2]]).unwrap();
        assert!(r.base.unwrap().max_abs_diff(&se2_exp(&xi)) < 1e-15);
    }

    #[test]
    fn chart_round_trip() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..1000 {
            let a = random_config(&mut rng);
            let b = random_config(&mut rng);
            let xi = local_coordinates(&a, &b).unwrap();
            assert!(retract(&a, &xi).unwrap().max_abs_diff(&b) < 1e-10);
        }
    }

    #[test]
    fn local_coordinate_jacobians_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let h = 1e-6;
        for _ in 0..100 {
            let a = random_config(&mut rng);
            let mut b = random_config(&mut rng);
            // keep away from the +-pi cut of the logarithm
            let rel = local_coordinates(&a, &b).unwrap();
            if rel[2].abs() > 2.8 {
                b = retract(&a, &dvector![rel[0], rel[1], 0.5, rel[3], rel[4]]).unwrap();
            }
            let (_, ja, jb) = local_coordinates_with_jacobians(&a, &b).unwrap();
            for k in 0..5 {
                let mut d = DVector::zeros(5);
                d[k] = h;
                let fa = (local_coordinates(&retract(&a, &d).unwrap(), &b).unwrap()
                    - local_coordinates(&retract(&a, &-&d).unwrap(), &b).unwrap())
                    / (2.0 * h);
                let fb = (local_coordinates(&a, &retract(&b, &d).unwrap()).unwrap()
                    - local_coordinates(&a, &retract(&b, &-&d).unwrap()).unwrap())
                    / (2.0 * h);
                assert!((fa - ja.column(k)).amax() < 1e-6);
                assert!((fb - jb.column(k)).amax() < 1e-6);
            }
        }
    }

    #[test]
    fn trajectory_validation() {
        let s = MarkovState::at_rest(MobileConfig::vector(dvector![0.0]));
        assert!(Trajectory::new(vec![0.0, 1.0], vec![s.clone(), s.clone()]).is_ok());
        assert!(Trajectory::new(vec![0.0, 0.0], vec![s.clone(), s.clone()]).is_err());
        assert!(Trajectory::new(vec![0.0], vec![s.clone(), s]).is_err());
    }

    #[test]
    fn state_retract_local_round_trip() {
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        for _ in 0..100 {
            let a = MarkovState::new(random_config(&mut rng), DVector::from_fn(5, |_, _| rng.random_range(-1.0..1.0))).unwrap();
            let b = MarkovState::new(random_config(&mut rng), DVector::from_fn(5, |_, _| rng.random_range(-1.0..1.0))).unwrap();
            let d = a.local(&b).unwrap();
            assert!(a.retract(&d).unwrap().max_abs_diff(&b) < 1e-10);
        }
    }
}
