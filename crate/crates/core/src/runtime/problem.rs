use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::env::{
    build_sdf, config_collision_free, BodyModel, HingeLossParams, ObstacleCost, SignedDistanceField,
    WorldSpec,
};
use crate::error::{Result, SteapError};
use crate::factor::{Factor, FactorGraph, Values, VarId};
use crate::gp::GpParams;
use crate::isam::SmootherConfig;
use crate::lie::Se2Pose;
use crate::optimize::LmConfig;
use crate::state::{local_coordinates, retract, MarkovState, MobileConfig, Trajectory};

/// Everything that defines one planning/estimation task.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ProblemSpec {
    pub start: MobileConfig,
    pub goal: MobileConfig,
    /// Number of intervals `N`; the trajectory has `N + 1` support states.
    pub intervals: usize,
    pub total_time: f64,
    pub world: WorldSpec,
    pub body: BodyModel,
    pub gp: GpParams,
    pub hinge: HingeLossParams,
    /// Variance of every component of the start/goal anchors.
    pub sigma_fix: f64,
    /// Floor on the measurement standard deviation used in measurement factors.
    pub sigma_meas: f64,
    /// Interpolated obstacle factors per interval.
    pub interp_factors: usize,
    /// Interpolated states checked per segment before execution.
    pub collision_resolution: usize,
    pub lm: LmConfig,
    pub smoother: SmootherConfig,
}

impl Default for ProblemSpec {
    fn default() -> Self {
        Self::benchmark(WorldSpec::empty(30.0, 20.0, 0.1))
    }
}

impl ProblemSpec {
    /// Diagonal crossing of a 30 m x 20 m world with the arm tucked.
    pub fn benchmark(world: WorldSpec) -> Self {
        let yaw = 14.0f64.atan2(24.0);
        let tucked = [std::f64::consts::FRAC_PI_2, -std::f64::consts::FRAC_PI_2];
        Self {
            start: MobileConfig::from_slice(Se2Pose::new(-12.0, -7.0, yaw), &tucked),
            goal: MobileConfig::from_slice(Se2Pose::new(12.0, 7.0, yaw), &tucked),
            intervals: 30,
            total_time: 30.0,
            world,
            body: BodyModel::planar_two_link(),
            gp: GpParams::diagonal(1.0, 1.0, 2, 1.0).expect("constant Q_C is valid"),
            hinge: HingeLossParams::default(),
            sigma_fix: 1e-4,
            sigma_meas: 1e-3,
            interp_factors: 5,
            collision_resolution: 10,
            lm: LmConfig::default(),
            smoother: SmootherConfig {
                relinearize_threshold: 1e-3,
                ..SmootherConfig::default()
            },
        }
    }

    pub fn dt(&self) -> f64 {
        self.total_time / self.intervals as f64
    }

    pub fn times(&self) -> Vec<f64> {
        (0..=self.intervals).map(|i| i as f64 * self.dt()).collect()
    }

    pub fn state_dim(&self) -> usize {
        2 * self.start.tangent_dim()
    }

    pub fn fix_covariance(&self) -> DMatrix<f64> {
        let d = self.state_dim();
        DMatrix::identity(d, d) * self.sigma_fix
    }
}

/// A validated problem with its distance field and shared obstacle cost.
#[derive(Debug, Clone)]
pub struct Problem {
    pub spec: ProblemSpec,
    pub sdf: Arc<SignedDistanceField>,
    pub cost: Arc<ObstacleCost>,
}

impl Problem {
    pub fn new(spec: ProblemSpec) -> Result<Self> {
        if spec.intervals < 2 {
            return Err(SteapError::InvalidProblem("need at least 2 intervals".into()));
        }
        if !(spec.total_time > 0.0) {
            return Err(SteapError::InvalidProblem("total time must be positive".into()));
        }
        if !(spec.sigma_fix > 0.0) || !(spec.sigma_meas > 0.0) {
            return Err(SteapError::InvalidProblem("noise levels must be positive".into()));
        }
        if spec.collision_resolution == 0 {
            return Err(SteapError::InvalidProblem("collision resolution must be >= 1".into()));
        }
        GpParams::new(spec.gp.qc.clone(), spec.gp.dt_default)?;
        spec.world.validate()?;
        spec.body.validate()?;
        spec.hinge.validate()?;
        let d = spec.start.tangent_dim();
        if spec.goal.tangent_dim() != d || spec.gp.dim() != d || spec.start.arm.len() != spec.body.dof() {
            return Err(SteapError::DimensionMismatch {
                expected: d,
                found: spec.gp.dim(),
            });
        }
        let sdf = Arc::new(build_sdf(&spec.world)?);
        for (name, c) in [("start", &spec.start), ("goal", &spec.goal)] {
            if !config_collision_free(c, &spec.body, &sdf)? {
                return Err(SteapError::InvalidProblem(format!("{name} configuration is in collision")));
            }
        }
        let cost = Arc::new(ObstacleCost::new(sdf.clone(), spec.body.clone(), spec.hinge));
        Ok(Self { spec, sdf, cost })
    }

    /// Obstacle factors on state `i` and on the interval `(i, i + 1)` if `i < N`.
    pub fn obstacle_factors(&self, i: usize) -> Result<Vec<Factor>> {
        let s = &self.spec;
        let mut out = vec![Factor::obstacle(VarId(i), self.cost.clone())?];
        if i < s.intervals {
            let dt = s.dt();
            for j in 1..=s.interp_factors {
                let tau = dt * j as f64 / (s.interp_factors + 1) as f64;
                out.push(Factor::obstacle_interp(
                    VarId(i),
                    VarId(i + 1),
                    dt,
                    tau,
                    &s.gp.qc,
                    self.cost.clone(),
                )?);
            }
        }
        Ok(out)
    }

    pub fn gp_factor(&self, i: usize) -> Result<Factor> {
        Factor::gp_prior(VarId(i), VarId(i + 1), self.spec.dt(), &self.spec.gp.qc)
    }

    pub fn goal_fix(&self) -> Result<Factor> {
        Factor::goal_fix(VarId(self.spec.intervals), self.spec.goal.clone(), self.spec.fix_covariance())
    }
}

/// Constant-velocity geodesic from start to goal, at rest at both ends.
pub fn initialize_trajectory(spec: &ProblemSpec) -> Result<Trajectory> {
    let n = spec.intervals;
    let xi = local_coordinates(&spec.start, &spec.goal)?;
    let v = &xi / spec.total_time;
    let states = (0..=n)
        .map(|i| {
            let config = retract(&spec.start, &(&xi * (i as f64 / n as f64)))?;
            let velocity = if i == 0 || i == n {
                DVector::zeros(xi.len())
            } else {
                v.clone()
            };
            MarkovState::new(config, velocity)
        })
        .collect::<Result<Vec<_>>>()?;
    Trajectory::new(spec.times(), states)
}

/// The planning graph: GP priors, start/goal anchors, unary and interpolated obstacle factors.
pub fn build_steap_graph(problem: &Problem) -> Result<FactorGraph> {
    let s = &problem.spec;
    let mut g = FactorGraph::new();
    for (i, st) in initialize_trajectory(s)?.states.into_iter().enumerate() {
        g.add_variable(VarId(i), st);
    }
    g.add_factor(Factor::start_fix(VarId(0), s.start.clone(), s.fix_covariance())?);
    g.add_factor(problem.goal_fix()?);
    for i in 0..s.intervals {
        g.add_factor(problem.gp_factor(i)?);
    }
    for i in 0..=s.intervals {
        for f in problem.obstacle_factors(i)? {
            g.add_factor(f);
        }
    }
    Ok(g)
}

pub fn values_from_trajectory(traj: &Trajectory) -> Values {
    traj.states
        .iter()
        .enumerate()
        .map(|(i, s)| (VarId(i), s.clone()))
        .collect()
}

/// Trajectory over the ids `first..first + len` of `values`.
pub fn trajectory_from_values(values: &Values, times: &[f64], first: usize) -> Result<Trajectory> {
    let states = (0..times.len())
        .map(|k| {
            values
                .get(&VarId(first + k))
                .cloned()
                .ok_or(SteapError::MissingVariable(VarId(first + k)))
        })
        .collect::<Result<Vec<_>>>()?;
    Trajectory::new(times.to_vec(), states)
}
