use std::time::Instant;

use nalgebra::DMatrix;

use super::problem::{
    build_steap_graph, initialize_trajectory, trajectory_from_values, values_from_trajectory, Problem,
};
use super::record::{plan_hash, Mode, RunRecord, StepLog};
use super::simulate::{simulate_execute, simulate_measurement, Measurement, Segment, SimConfig, SimRng};
use crate::env::{collision_free, config_collision_free};
use crate::error::{Result, SteapError};
use crate::factor::{Factor, FactorGraph, FactorKind, Values, VarId};
use crate::gp::{process_noise_cov, transition_matrix};
use crate::isam::IncrementalSmoother;
use crate::optimize::optimize_batch;
use crate::state::{MarkovState, MobileConfig, Trajectory};

/// Runs one episode in the given mode.
pub fn run(mode: Mode, problem: &Problem, sim: &SimConfig) -> Result<RunRecord> {
    match mode {
        Mode::OpenLoop => ol_run(problem, sim),
        Mode::Slap => slap_run(problem, sim),
        Mode::Steap => steap_run(problem, sim),
    }
}

/// Batch plan of the full planning graph from the straight-line initialization.
pub fn initial_plan(problem: &Problem) -> Result<(FactorGraph, Values)> {
    let graph = build_steap_graph(problem)?;
    let init = values_from_trajectory(&initialize_trajectory(&problem.spec)?);
    let (plan, _) = optimize_batch(&graph, &init, &problem.spec.lm)?;
    Ok((graph, plan))
}

struct Episode<'a> {
    problem: &'a Problem,
    sim: &'a SimConfig,
    rng: SimRng,
    truth: Vec<MarkovState>,
    steps: Vec<StepLog>,
    plans: Vec<Trajectory>,
    failure: Option<String>,
}

enum Outcome {
    Executed(MarkovState),
    Collided,
}

impl<'a> Episode<'a> {
    fn new(problem: &'a Problem, sim: &'a SimConfig) -> Result<Self> {
        sim.validate()?;
        Ok(Self {
            problem,
            sim,
            rng: SimRng::new(sim.seed),
            truth: vec![MarkovState::at_rest(problem.spec.start.clone())],
            steps: Vec::new(),
            plans: Vec::new(),
            failure: None,
        })
    }

    fn plan_trajectory(&self, plan: &Values, first: usize) -> Result<Trajectory> {
        let times = self.problem.spec.times();
        trajectory_from_values(plan, &times[first..], first)
    }

    /// Gates the planned segment, then executes it from the true state.
    fn execute(&mut self, from: &MarkovState, to: &MarkovState) -> Result<Outcome> {
        let s = &self.problem.spec;
        let dt = s.dt();
        if !collision_free(from, to, dt, &s.gp.qc, &s.body, &self.problem.sdf, s.collision_resolution)? {
            self.failure = Some(format!("planned segment {} is in collision", self.truth.len() - 1));
            return Ok(Outcome::Collided);
        }
        let current = self.truth.last().expect("truth starts non-empty").config.clone();
        let segment = Segment {
            from,
            to,
            dt,
            qc: &s.gp.qc,
        };
        let ex = simulate_execute(&current, &segment, self.sim.n_dyn, self.sim.exec_substeps, &mut self.rng.dynamics)?;
        for c in &ex.trace {
            if !config_collision_free(c, &s.body, &self.problem.sdf)? {
                self.truth.push(ex.end);
                self.failure = Some(format!("collision while executing segment {}", self.truth.len() - 2));
                return Ok(Outcome::Collided);
            }
        }
        self.truth.push(ex.end.clone());
        Ok(Outcome::Executed(ex.end))
    }

    fn measure(&mut self, truth: &MobileConfig) -> Result<(Measurement, Factor)> {
        let m = simulate_measurement(truth, self.sim.n_cam, &mut self.rng.measurement)?;
        let sigma = self.sim.n_cam.max(self.problem.spec.sigma_meas);
        let d = truth.tangent_dim();
        let f = Factor::measurement(
            VarId(self.truth.len() - 1),
            m.mean.clone(),
            DMatrix::identity(d, d) * (sigma * sigma),
        )?;
        Ok((m, f))
    }

    fn finish(self, mode: Mode, estimated: Option<Vec<MarkovState>>, plan_time: f64) -> Result<RunRecord> {
        let times = self.problem.spec.times();
        let n = self.truth.len();
        let ground_truth = Trajectory::new(times[..n].to_vec(), self.truth)?;
        let estimated = match estimated {
            Some(mut e) => {
                e.truncate(n);
                Some(Trajectory::new(times[..e.len()].to_vec(), e)?)
            }
            None => None,
        };
        Ok(RunRecord {
            mode,
            sim: *self.sim,
            world: self.problem.spec.world.clone(),
            goal: self.problem.spec.goal.clone(),
            success: self.failure.is_none(),
            failure: self.failure,
            ground_truth,
            estimated,
            planned_per_step: self.plans,
            steps: self.steps,
            initial_plan_time_s: plan_time,
        })
    }
}

fn state(values: &Values, i: usize) -> Result<MarkovState> {
    values.get(&VarId(i)).cloned().ok_or(SteapError::MissingVariable(VarId(i)))
}

/// Plans once and executes the plan without feedback.
pub fn ol_run(problem: &Problem, sim: &SimConfig) -> Result<RunRecord> {
    let mut ep = Episode::new(problem, sim)?;
    let t0 = Instant::now();
    let (_, plan) = initial_plan(problem)?;
    let plan_time = t0.elapsed().as_secs_f64();
    let traj = ep.plan_trajectory(&plan, 0)?;
    let hash = plan_hash(&traj);
    ep.plans.push(traj);
    for i in 0..problem.spec.intervals {
        let t = Instant::now();
        let out = ep.execute(&state(&plan, i)?, &state(&plan, i + 1)?)?;
        let Outcome::Executed(end) = out else { break };
        ep.steps.push(StepLog {
            index: i + 1,
            true_config: end.config,
            measurement: None,
            estimate: None,
            plan_hash: hash.clone(),
            time_s: t.elapsed().as_secs_f64(),
            reeliminated: None,
        });
    }
    ep.finish(Mode::OpenLoop, None, plan_time)
}

/// Incremental estimation and planning on a single graph.
pub fn steap_run(problem: &Problem, sim: &SimConfig) -> Result<RunRecord> {
    let mut ep = Episode::new(problem, sim)?;
    let n = problem.spec.intervals;
    let t0 = Instant::now();
    let (graph, plan) = initial_plan(problem)?;
    let goal_index = graph
        .factors
        .iter()
        .position(|f| f.kind() == FactorKind::GoalFix)
        .expect("planning graph has a goal factor");
    let mut smoother = IncrementalSmoother::new(problem.spec.smoother);
    smoother.update(graph.factors, plan, &[])?;
    let plan_time = t0.elapsed().as_secs_f64();
    let mut current = smoother.estimate()?;
    ep.plans.push(ep.plan_trajectory(&current, 0)?);

    for i in 0..n {
        let out = ep.execute(&state(&current, i)?, &state(&current, i + 1)?)?;
        let Outcome::Executed(end) = out else { break };
        let t = Instant::now();
        let (m, f) = ep.measure(&end.config)?;
        let remove: &[usize] = if i + 1 == n { &[goal_index] } else { &[] };
        let report = match smoother.update(vec![f], Values::new(), remove) {
            Ok(r) => r,
            Err(e) => {
                ep.failure = Some(format!("inference failed: {e}"));
                break;
            }
        };
        current = smoother.estimate()?;
        let elapsed = t.elapsed().as_secs_f64();
        let traj = ep.plan_trajectory(&current, 0)?;
        ep.steps.push(StepLog {
            index: i + 1,
            true_config: end.config,
            measurement: Some(m),
            estimate: Some(state(&current, i + 1)?.config),
            plan_hash: plan_hash(&traj),
            time_s: elapsed,
            reeliminated: Some(report.reeliminated()),
        });
        ep.plans.push(traj);
    }
    let estimated = (0..=n).map(|i| state(&current, i)).collect::<Result<Vec<_>>>()?;
    ep.finish(Mode::Steap, Some(estimated), plan_time)
}

/// Current-state filter: measurement plus the propagated prior at the commanded state.
fn slap_filter(
    predicted: &MarkovState,
    prior_cov: &DMatrix<f64>,
    measurement: Factor,
) -> Result<(MarkovState, DMatrix<f64>)> {
    let key = measurement.keys[0];
    let mut g = FactorGraph::new();
    g.add_variable(key, predicted.clone());
    g.add_factor(Factor::state_prior(key, predicted.clone(), prior_cov.clone())?);
    g.add_factor(measurement);
    let init = g.values.clone();
    let (est, _) = optimize_batch(&g, &init, &Default::default())?;
    let sys = g.linearize(&est)?;
    let (a, _) = sys.to_dense(&[key]);
    let cov = (a.transpose() * &a)
        .try_inverse()
        .ok_or(SteapError::RankDeficient(key))?;
    Ok((est[&key].clone(), (&cov + cov.transpose()) * 0.5))
}

/// Planning graph over states `first..=N`, anchored at the current estimate.
fn truncated_graph(problem: &Problem, first: usize, anchor: &MarkovState, warm: &Values) -> Result<FactorGraph> {
    let s = &problem.spec;
    let mut g = FactorGraph::new();
    for i in first..=s.intervals {
        let v = if i == first { anchor.clone() } else { state(warm, i)? };
        g.add_variable(VarId(i), v);
    }
    g.add_factor(Factor::state_prior(VarId(first), anchor.clone(), s.fix_covariance())?);
    g.add_factor(problem.goal_fix()?);
    for i in first..s.intervals {
        g.add_factor(problem.gp_factor(i)?);
    }
    for i in first..=s.intervals {
        for f in problem.obstacle_factors(i)? {
            g.add_factor(f);
        }
    }
    Ok(g)
}

/// Filter the current state, then batch-replan the remaining horizon.
pub fn slap_run(problem: &Problem, sim: &SimConfig) -> Result<RunRecord> {
    let mut ep = Episode::new(problem, sim)?;
    let s = &problem.spec;
    let n = s.intervals;
    let d = s.start.tangent_dim();
    let phi = transition_matrix(s.dt(), d);
    let q = process_noise_cov(s.dt(), &s.gp.qc)?;
    let t0 = Instant::now();
    let (_, mut plan) = initial_plan(problem)?;
    let plan_time = t0.elapsed().as_secs_f64();
    ep.plans.push(ep.plan_trajectory(&plan, 0)?);
    let mut estimates = vec![MarkovState::at_rest(s.start.clone())];
    let mut cov = s.fix_covariance();

    for i in 0..n {
        let commanded = state(&plan, i + 1)?;
        let out = ep.execute(&state(&plan, i)?, &commanded)?;
        let Outcome::Executed(end) = out else { break };
        let t = Instant::now();
        let (m, f) = ep.measure(&end.config)?;
        let prior_cov = &phi * &cov * phi.transpose() + &q;
        let (est, post) = match slap_filter(&commanded, &prior_cov, f) {
            Ok(r) => r,
            Err(e) => {
                ep.failure = Some(format!("estimation failed: {e}"));
                break;
            }
        };
        cov = post;
        estimates.push(est.clone());
        if i + 1 < n {
            let g = truncated_graph(problem, i + 1, &est, &plan)?;
            let init = g.values.clone();
            match optimize_batch(&g, &init, &s.lm) {
                Ok((p, _)) => plan = p,
                Err(e) => {
                    ep.failure = Some(format!("replanning failed: {e}"));
                    break;
                }
            }
        }
        let elapsed = t.elapsed().as_secs_f64();
        let traj = ep.plan_trajectory(&plan, (i + 1).min(n))?;
        ep.steps.push(StepLog {
            index: i + 1,
            true_config: end.config,
            measurement: Some(m),
            estimate: Some(est.config),
            plan_hash: plan_hash(&traj),
            time_s: elapsed,
            reeliminated: None,
        });
        ep.plans.push(traj);
    }
    ep.finish(Mode::Slap, Some(estimates), plan_time)
}
