//! Batch Gauss-Newton / Levenberg-Marquardt over a factor graph.

use std::collections::{BTreeMap, BTreeSet};

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::elimination::eliminate;
use crate::error::Result;
use crate::factor::{retract_values, FactorGraph, LinearFactor, LinearSystem, Values, VarId};
use crate::ordering::{compute_ordering, OrderingMode};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LmConfig {
    pub lambda_initial: f64,
    pub lambda_up: f64,
    pub lambda_down: f64,
    pub lambda_max: f64,
    /// Stop when the accepted step lowers the error by less than this fraction.
    pub relative_tolerance: f64,
    /// Stop when the step norm falls below this.
    pub absolute_tolerance: f64,
    pub max_iterations: usize,
    pub ordering: OrderingMode,
    /// Disable damping (plain Gauss-Newton).
    pub gauss_newton: bool,
}

impl Default for LmConfig {
    fn default() -> Self {
        Self {
            lambda_initial: 1e-5,
            lambda_up: 10.0,
            lambda_down: 0.1,
            lambda_max: 1e10,
            relative_tolerance: 1e-6,
            absolute_tolerance: 1e-8,
            max_iterations: 100,
            ordering: OrderingMode::Natural,
            gauss_newton: false,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum StopReason {
    RelativeDecrease,
    SmallStep,
    MaxIterations,
    DampingLimit,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LmReport {
    pub iterations: usize,
    pub initial_error: f64,
    pub final_error: f64,
    pub converged: bool,
    pub reason: StopReason,
}

/// Solves the (optionally damped) linear system by elimination.
pub fn solve_linear(
    system: &LinearSystem,
    mode: OrderingMode,
    lambda: f64,
) -> Result<BTreeMap<VarId, DVector<f64>>> {
    let vars: BTreeSet<VarId> = system.dims.keys().copied().collect();
    let ordering = compute_ordering(
        &vars,
        system.factors.iter().map(|f| f.keys.as_slice()),
        mode,
    );
    let mut factors = system.factors.clone();
    if lambda > 0.0 {
        let s = lambda.sqrt();
        for (v, d) in &system.dims {
            factors.push(LinearFactor {
                keys: vec![*v],
                blocks: vec![DMatrix::identity(*d, *d) * s],
                rhs: DVector::zeros(*d),
            });
        }
    }
    Ok(eliminate(factors, &system.dims, &ordering)?.back_substitute())
}

fn step_norm(delta: &BTreeMap<VarId, DVector<f64>>) -> f64 {
    delta.values().map(|d| d.norm_squared()).sum::<f64>().sqrt()
}

/// MAP estimate of `graph` starting from `init`.
///
/// Never returns an iterate with higher error than `init`.
pub fn optimize_batch(graph: &FactorGraph, init: &Values, cfg: &LmConfig) -> Result<(Values, LmReport)> {
    let mut values = init.clone();
    let mut error = graph.error(&values)?;
    let initial_error = error;
    let mut lambda = if cfg.gauss_newton { 0.0 } else { cfg.lambda_initial };
    let mut iterations = 0;
    let reason = loop {
        if iterations >= cfg.max_iterations {
            break StopReason::MaxIterations;
        }
        iterations += 1;
        let system = graph.linearize(&values)?;
        let mut stop = None;
        loop {
            let delta = solve_linear(&system, cfg.ordering, lambda)?;
            if step_norm(&delta) < cfg.absolute_tolerance {
                stop = Some(StopReason::SmallStep);
                break;
            }
            let candidate = retract_values(&values, &delta)?;
            let new_error = graph.error(&candidate)?;
            if new_error <= error {
                let decrease = error - new_error;
                let relative = if error > 0.0 { decrease / error } else { 0.0 };
                values = candidate;
                error = new_error;
                lambda *= cfg.lambda_down;
                if relative < cfg.relative_tolerance {
                    stop = Some(StopReason::RelativeDecrease);
                }
                break;
            }
            if cfg.gauss_newton {
                stop = Some(StopReason::DampingLimit);
                break;
            }
            lambda *= cfg.lambda_up;
            if lambda > cfg.lambda_max {
                stop = Some(StopReason::DampingLimit);
                break;
            }
        }
        if let Some(r) = stop {
            break r;
        }
    };
    let converged = matches!(reason, StopReason::RelativeDecrease | StopReason::SmallStep);
    Ok((
        values,
        LmReport {
            iterations,
            initial_error,
            final_error: error,
            converged,
            reason,
        },
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::factor::Factor;
    use crate::gp::{process_noise_cov, transition_matrix};
    use crate::lie::Se2Pose;
    use crate::state::{MarkovState, MobileConfig};
    use nalgebra::dvector;
    use proptest::prelude::*;
    use rand::{RngExt, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn scalar(x: f64, v: f64) -> MarkovState {
        MarkovState::new(MobileConfig::vector(dvector![x]), dvector![v]).unwrap()
    }

    /// Scalar chain with fixes at both ends, GP priors and a measurement per interior state.
    fn linear_chain(n: usize, dt: f64, meas: &[f64]) -> FactorGraph {
        let qc = DMatrix::identity(1, 1);
        let mut g = FactorGraph::new();
        for i in 0..=n {
            g.add_variable(VarId(i), scalar(0.0, 0.0));
        }
        let fix = DMatrix::identity(2, 2) * 1e-4;
        g.add_factor(Factor::start_fix(VarId(0), MobileConfig::vector(dvector![0.0]), fix.clone()).unwrap());
        g.add_factor(Factor::goal_fix(VarId(n), MobileConfig::vector(dvector![2.0]), fix).unwrap());
        for i in 0..n {
            g.add_factor(Factor::gp_prior(VarId(i), VarId(i + 1), dt, &qc).unwrap());
        }
        for (i, z) in meas.iter().enumerate() {
            let m = Factor::measurement(VarId(i + 1), MobileConfig::vector(dvector![*z]), DMatrix::identity(1, 1) * 0.01);
            g.add_factor(m.unwrap());
        }
        g
    }

    /// Builds the whitened least-squares rows by hand and solves the normal equations.
    fn dense_chain_solution(n: usize, dt: f64, meas: &[f64]) -> DVector<f64> {
        let cols = 2 * (n + 1);
        let mut rows: Vec<(DVector<f64>, f64)> = Vec::new();
        let mut push = |coeffs: Vec<(usize, f64)>, target: f64, sigma: f64| {
            let mut r = DVector::zeros(cols);
            for (c, a) in coeffs {
                r[c] += a / sigma;
            }
            rows.push((r, target / sigma));
        };
        push(vec![(0, 1.0)], 0.0, 1e-2);
        push(vec![(1, 1.0)], 0.0, 1e-2);
        push(vec![(2 * n, 1.0)], 2.0, 1e-2);
        push(vec![(2 * n + 1, 1.0)], 0.0, 1e-2);
        for (i, z) in meas.iter().enumerate() {
            push(vec![(2 * (i + 1), 1.0)], *z, 0.1);
        }
        let q = process_noise_cov(dt, &DMatrix::identity(1, 1)).unwrap();
        let w = q.cholesky().unwrap().inverse().cholesky().unwrap().l().transpose();
        let mut rows = rows;
        for i in 0..n {
            // e = [x1 - x0 - dt v0; v1 - v0], whitened by W with W^T W = Q^-1.
            let mut e = DMatrix::zeros(2, cols);
            e[(0, 2 * i + 2)] = 1.0;
            e[(0, 2 * i)] = -1.0;
            e[(0, 2 * i + 1)] = -dt;
            e[(1, 2 * i + 3)] = 1.0;
            e[(1, 2 * i + 1)] = -1.0;
            let we = &w * e;
            for k in 0..2 {
                rows.push((we.row(k).transpose(), 0.0));
            }
        }
        let a = DMatrix::from_fn(rows.len(), cols, |r, c| rows[r].0[c]);
        let b = DVector::from_fn(rows.len(), |r, _| rows[r].1);
        (a.transpose() * &a).cholesky().unwrap().solve(&(a.transpose() * b))
    }

    #[test]
    fn linear_chain_matches_dense_solve() {
        let n = 12;
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let meas: Vec<f64> = (1..n).map(|i| 2.0 * i as f64 / n as f64 + rng.random_range(-0.1..0.1)).collect();
        let g = linear_chain(n, 0.5, &meas);
        let (sol, report) = optimize_batch(&g, &g.values, &LmConfig::default()).unwrap();
        assert!(report.converged);
        let dense = dense_chain_solution(n, 0.5, &meas);
        for i in 0..=n {
            let s = &sol[&VarId(i)];
            assert!((s.config.arm[0] - dense[2 * i]).abs() < 1e-8);
            assert!((s.velocity[0] - dense[2 * i + 1]).abs() < 1e-8);
        }
    }

    #[test]
    fn one_gauss_newton_step_solves_linear_graph() {
        let n = 8;
        let meas: Vec<f64> = (1..n).map(|i| (i as f64).sin()).collect();
        let g = linear_chain(n, 0.3, &meas);
        let sys = g.linearize(&g.values).unwrap();
        let delta = solve_linear(&sys, OrderingMode::Natural, 0.0).unwrap();
        let after = retract_values(&g.values, &delta).unwrap();
        // Normal-equation residual A^T (A x - b) at the new point.
        let order: Vec<VarId> = (0..=n).map(VarId).collect();
        let (a, b) = g.linearize(&after).unwrap().to_dense(&order);
        assert!((a.transpose() * b).amax() < 1e-10);
    }

    #[test]
    fn fix_and_prior_only_matches_gp_conditioning() {
        // Start fix as the initial-state prior, GP propagation, goal fix as an observation.
        let n = 6;
        let dt = 0.4;
        let sigma_fix2 = 1e-4;
        let g = linear_chain(n, dt, &[]);
        let (sol, _) = optimize_batch(&g, &g.values, &LmConfig::default()).unwrap();

        let qc = DMatrix::identity(1, 1);
        let p0 = DMatrix::identity(2, 2) * sigma_fix2;
        let cov_at = |i: usize| {
            let t = i as f64 * dt;
            let phi = transition_matrix(t, 1);
            let q = if i == 0 { DMatrix::zeros(2, 2) } else { process_noise_cov(t, &qc).unwrap() };
            &phi * &p0 * phi.transpose() + q
        };
        // Cross covariance K(i, n) = P_i Phi(t_n - t_i)^T for i <= n.
        let k_n = cov_at(n);
        let innovation_cov = &k_n + DMatrix::identity(2, 2) * sigma_fix2;
        let gain_rhs = innovation_cov.try_inverse().unwrap() * dvector![2.0, 0.0];
        for i in 0..=n {
            let cross = cov_at(i) * transition_matrix((n - i) as f64 * dt, 1).transpose();
            let mean = &cross * &gain_rhs;
            let s = &sol[&VarId(i)];
            assert!((s.config.arm[0] - mean[0]).abs() < 1e-6, "state {i}");
            assert!((s.velocity[0] - mean[1]).abs() < 1e-6, "state {i}");
        }
    }

    #[test]
    fn zero_residual_returns_init_in_one_iteration() {
        let c = MobileConfig::from_slice(Se2Pose::new(1.0, -2.0, 0.4), &[0.2, 0.1]);
        let mut g = FactorGraph::new();
        let qc = DMatrix::identity(5, 5);
        for i in 0..4 {
            g.add_variable(VarId(i), MarkovState::at_rest(c.clone()));
        }
        g.add_factor(Factor::start_fix(VarId(0), c.clone(), DMatrix::identity(10, 10) * 1e-4).unwrap());
        g.add_factor(Factor::goal_fix(VarId(3), c.clone(), DMatrix::identity(10, 10) * 1e-4).unwrap());
        for i in 0..3 {
            g.add_factor(Factor::gp_prior(VarId(i), VarId(i + 1), 1.0, &qc).unwrap());
        }
        let (sol, report) = optimize_batch(&g, &g.values, &LmConfig::default()).unwrap();
        assert_eq!(report.iterations, 1);
        assert_eq!(sol, g.values);
    }

    #[test]
    fn removing_zero_residual_factor_keeps_optimum() {
        let n = 6;
        let meas: Vec<f64> = (1..n).map(|i| 0.3 * i as f64).collect();
        let g = linear_chain(n, 0.5, &meas);
        let (sol, _) = optimize_batch(&g, &g.values, &LmConfig::default()).unwrap();
        let mut with_extra = g.clone();
        let at = sol[&VarId(3)].config.clone();
        with_extra.add_factor(Factor::measurement(VarId(3), at, DMatrix::identity(1, 1)).unwrap());
        let (sol2, _) = optimize_batch(&with_extra, &g.values, &LmConfig::default()).unwrap();
        for i in 0..=n {
            assert!(sol[&VarId(i)].max_abs_diff(&sol2[&VarId(i)]) < 1e-8);
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]

        #[test]
        fn error_never_increases(seed in any::<u64>()) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let qc = DMatrix::identity(5, 5);
            let mut g = FactorGraph::new();
            let n = 5;
            let goal = MobileConfig::from_slice(Se2Pose::new(3.0, 1.0, 1.0), &[0.5, -0.5]);
            for i in 0..=n {
                let c = MobileConfig::from_slice(
                    Se2Pose::new(rng.random_range(-2.0..4.0), rng.random_range(-2.0..2.0), rng.random_range(-3.0..3.0)),
                    &[rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)],
                );
                g.add_variable(VarId(i), MarkovState::at_rest(c.clone()));
                if i > 0 && i < n {
                    g.add_factor(Factor::measurement(VarId(i), c, DMatrix::identity(5, 5) * 0.1).unwrap());
                }
            }
            g.add_factor(Factor::start_fix(VarId(0), MobileConfig::from_slice(Se2Pose::identity(), &[0.0, 0.0]), DMatrix::identity(10, 10) * 1e-4).unwrap());
            g.add_factor(Factor::goal_fix(VarId(n), goal, DMatrix::identity(10, 10) * 1e-4).unwrap());
            for i in 0..n {
                g.add_factor(Factor::gp_prior(VarId(i), VarId(i + 1), 1.0, &qc).unwrap());
            }
            let (sol, report) = optimize_batch(&g, &g.values, &LmConfig::default()).unwrap();
            prop_assert!(report.final_error <= report.initial_error);
            prop_assert!((g.error(&sol).unwrap() - report.final_error).abs() <= 1e-9 * report.final_error.max(1.0));
        }
    }
}
