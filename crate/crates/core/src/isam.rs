//! Incremental smoothing on a Bayes tree with fluid relinearization.

use std::collections::{BTreeMap, BTreeSet};

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::bayes_tree::BayesTree;
use crate::elimination::eliminate;
use crate::error::{Result, SteapError};
use crate::factor::{retract_values, Factor, FactorGraph, LinearFactor, Values, VarId};
use crate::ordering::{adjacency, constrained_min_degree, Ordering};

/// Smallest trust-region radius before a step is abandoned.
const MIN_RADIUS: f64 = 1e-10;

/// How the detached top of the tree is re-ordered before re-elimination.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ReorderMode {
    /// Ascending variable id.
    Natural,
    /// Minimum degree with the variables of newly added factors forced last,
    /// so they end up in the root clique.
    #[default]
    ConstrainedMinDegree,
}

/// How the solved Gauss-Newton delta becomes the applied delta.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum StepControl {
    /// Apply the Gauss-Newton solution as is.
    GaussNewton,
    /// Powell's dogleg between steepest descent and Gauss-Newton inside an adaptive trust region.
    #[default]
    Dogleg,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SmootherConfig {
    /// Variables whose delta infinity-norm exceeds this are relinearized.
    pub relinearize_threshold: f64,
    /// Relinearize / re-eliminate / solve cycles per update.
    pub max_cycles: usize,
    /// A cycle with every delta at or below this ends the update.
    pub convergence_tolerance: f64,
    pub reorder: ReorderMode,
    pub step: StepControl,
    /// Starting trust-region radius (Euclidean norm over all deltas).
    pub initial_radius: f64,
}

impl Default for SmootherConfig {
    fn default() -> Self {
        Self {
            relinearize_threshold: 0.1,
            max_cycles: 3,
            convergence_tolerance: 1e-10,
            reorder: ReorderMode::ConstrainedMinDegree,
            step: StepControl::Dogleg,
            initial_radius: 1.0,
        }
    }
}

impl SmootherConfig {
    /// Threshold 0 and enough cycles to reach the batch optimum.
    pub fn exact() -> Self {
        Self {
            relinearize_threshold: 0.0,
            max_cycles: 200,
            convergence_tolerance: 1e-10,
            ..Self::default()
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct UpdateReport {
    /// Indices assigned to the added factors.
    pub new_factor_indices: Vec<usize>,
    /// Variables re-eliminated in each cycle.
    pub reeliminated_per_cycle: Vec<usize>,
    /// Variables relinearized over all cycles.
    pub relinearized: usize,
    /// Union of the variables re-eliminated in any cycle.
    pub reeliminated_vars: BTreeSet<VarId>,
}

impl UpdateReport {
    /// Distinct variables re-eliminated over all cycles.
    pub fn reeliminated(&self) -> usize {
        self.reeliminated_vars.len()
    }

    pub fn cycles(&self) -> usize {
        self.reeliminated_per_cycle.len()
    }
}

/// Nonlinear factors, linearization point, cached linear factors and the Bayes tree.
#[derive(Debug, Clone, Default)]
pub struct IncrementalSmoother {
    config: SmootherConfig,
    factors: Vec<Option<Factor>>,
    linear: Vec<Option<LinearFactor>>,
    factors_by_var: BTreeMap<VarId, BTreeSet<usize>>,
    theta: Values,
    delta: BTreeMap<VarId, DVector<f64>>,
    tree: BayesTree,
    radius: f64,
}

impl IncrementalSmoother {
    pub fn new(config: SmootherConfig) -> Self {
        Self {
            config,
            radius: config.initial_radius,
            ..Self::default()
        }
    }

    pub fn config(&self) -> &SmootherConfig {
        &self.config
    }

    pub fn tree(&self) -> &BayesTree {
        &self.tree
    }

    /// Linearization point.
    pub fn theta(&self) -> &Values {
        &self.theta
    }

    pub fn delta(&self) -> &BTreeMap<VarId, DVector<f64>> {
        &self.delta
    }

    /// Current estimate `theta (+) delta`.
    pub fn estimate(&self) -> Result<Values> {
        retract_values(&self.theta, &self.delta)
    }

    pub fn factor(&self, index: usize) -> Option<&Factor> {
        self.factors.get(index).and_then(Option::as_ref)
    }

    /// Live factors with their indices.
    pub fn factors(&self) -> impl Iterator<Item = (usize, &Factor)> {
        self.factors
            .iter()
            .enumerate()
            .filter_map(|(i, f)| f.as_ref().map(|f| (i, f)))
    }

    /// The current nonlinear problem as a standalone graph at the current estimate.
    pub fn to_graph(&self) -> Result<FactorGraph> {
        Ok(FactorGraph {
            values: self.estimate()?,
            factors: self.factors().map(|(_, f)| f.clone()).collect(),
        })
    }

    /// Variables whose current delta exceeds `threshold` in infinity norm.
    pub fn mark_relinearization(&self, threshold: f64) -> BTreeSet<VarId> {
        self.delta
            .iter()
            .filter(|(_, d)| d.amax() > threshold)
            .map(|(k, _)| *k)
            .collect()
    }

    /// Adds factors and variables, removes factors by index, and re-solves.
    pub fn update(
        &mut self,
        new_factors: Vec<Factor>,
        new_values: Values,
        remove: &[usize],
    ) -> Result<UpdateReport> {
        let mut report = UpdateReport::default();
        // The radius collapses while converging; new factors can call for large steps again.
        self.radius = self.radius.max(self.config.initial_radius);
        let mut affected: BTreeSet<VarId> = BTreeSet::new();
        let mut constrained: BTreeSet<VarId> = BTreeSet::new();

        for (k, v) in new_values {
            if self.theta.contains_key(&k) {
                return Err(SteapError::InvalidProblem(format!("variable {k} already exists")));
            }
            self.delta.insert(k, DVector::zeros(v.dim()));
            self.theta.insert(k, v);
            affected.insert(k);
        }
        for &i in remove {
            let f = self
                .factors
                .get_mut(i)
                .and_then(Option::take)
                .ok_or_else(|| SteapError::InvalidProblem(format!("no factor with index {i}")))?;
            self.linear[i] = None;
            for k in &f.keys {
                self.factors_by_var.get_mut(k).map(|s| s.remove(&i));
                affected.insert(*k);
            }
        }
        for f in new_factors {
            for k in &f.keys {
                if !self.theta.contains_key(k) {
                    return Err(SteapError::MissingVariable(*k));
                }
            }
            let idx = self.factors.len();
            self.linear.push(Some(f.linearize(&self.theta, idx)?));
            for k in &f.keys {
                self.factors_by_var.entry(*k).or_default().insert(idx);
                affected.insert(*k);
                constrained.insert(*k);
            }
            self.factors.push(Some(f));
            report.new_factor_indices.push(idx);
        }

        for cycle in 0..self.config.max_cycles.max(1) {
            let relin = self.mark_relinearization(self.config.relinearize_threshold);
            report.relinearized += relin.len();
            self.relinearize(&relin, &mut affected)?;
            if affected.is_empty() {
                break;
            }
            let top = self.reeliminate(&affected, &constrained)?;
            report.reeliminated_per_cycle.push(top.len());
            report.reeliminated_vars.extend(top);
            let gn = self.tree.solve();
            let gn_max = gn.values().map(|d| d.amax()).fold(0.0, f64::max);
            self.delta = match self.config.step {
                StepControl::GaussNewton => gn,
                StepControl::Dogleg => self.dogleg(gn)?,
            };
            affected.clear();
            if cycle == 0 {
                constrained.clear();
            }
            // A trust-limited step can be tiny far from the optimum, so convergence is judged on the
            // Gauss-Newton step; a rejected step means no further progress this update.
            let max_delta = self.delta.values().map(|d| d.amax()).fold(0.0, f64::max);
            if gn_max <= self.config.relinearize_threshold.max(self.config.convergence_tolerance) || max_delta == 0.0 {
                break;
            }
        }
        Ok(report)
    }

    fn live_linear(&self) -> impl Iterator<Item = &LinearFactor> {
        self.linear.iter().flatten()
    }

    /// Linear model error `sum ||A delta - b||^2` over all cached factors.
    fn model_error(&self, delta: &BTreeMap<VarId, DVector<f64>>) -> f64 {
        self.live_linear().map(|f| f.error(delta)).sum()
    }

    fn nonlinear_error(&self, delta: &BTreeMap<VarId, DVector<f64>>) -> Result<f64> {
        let values = retract_values(&self.theta, delta)?;
        self.factors().map(|(_, f)| f.squared_error(&values)).sum()
    }

    /// Trust-region step along the dogleg path; shrinks the radius until the error does not grow.
    fn dogleg(&mut self, gn: BTreeMap<VarId, DVector<f64>>) -> Result<BTreeMap<VarId, DVector<f64>>> {
        let mut grad: BTreeMap<VarId, DVector<f64>> = self
            .theta
            .iter()
            .map(|(k, v)| (*k, DVector::zeros(v.dim())))
            .collect();
        for f in self.live_linear() {
            for (k, a) in f.keys.iter().zip(&f.blocks) {
                *grad.get_mut(k).expect("factor keys are variables") += a.transpose() * &f.rhs;
            }
        }
        let g2: f64 = grad.values().map(|g| g.norm_squared()).sum();
        let ag2: f64 = self
            .live_linear()
            .map(|f| {
                let mut v = DVector::zeros(f.rows());
                for (k, a) in f.keys.iter().zip(&f.blocks) {
                    v += a * &grad[k];
                }
                v.norm_squared()
            })
            .sum();
        let alpha = if ag2 > 0.0 { g2 / ag2 } else { 0.0 };
        let sd: BTreeMap<VarId, DVector<f64>> = grad.into_iter().map(|(k, g)| (k, g * alpha)).collect();

        let norm = |d: &BTreeMap<VarId, DVector<f64>>| d.values().map(|v| v.norm_squared()).sum::<f64>().sqrt();
        let gn_norm = norm(&gn);
        let sd_norm = norm(&sd);
        let f0: f64 = self.live_linear().map(|f| f.rhs.norm_squared()).sum();
        loop {
            let step = if gn_norm <= self.radius {
                gn.clone()
            } else if sd_norm >= self.radius {
                let s = self.radius / sd_norm;
                sd.iter().map(|(k, v)| (*k, v * s)).collect()
            } else {
                // Point on the segment sd -> gn at distance `radius` from the origin.
                let diff: BTreeMap<VarId, DVector<f64>> = gn.iter().map(|(k, v)| (*k, v - &sd[k])).collect();
                let a: f64 = diff.values().map(|v| v.norm_squared()).sum();
                let b: f64 = diff.iter().map(|(k, v)| 2.0 * v.dot(&sd[k])).sum();
                let c = sd_norm * sd_norm - self.radius * self.radius;
                let t = (-b + (b * b - 4.0 * a * c).max(0.0).sqrt()) / (2.0 * a);
                sd.iter().map(|(k, v)| (*k, v + &diff[k] * t)).collect()
            };
            let step_norm = norm(&step);
            let predicted = f0 - self.model_error(&step);
            let actual = f0 - self.nonlinear_error(&step)?;
            if predicted <= f64::EPSILON * f0.max(1.0) {
                return Ok(step);
            }
            let rho = actual / predicted;
            if rho > 0.75 {
                self.radius = self.radius.max(3.0 * step_norm);
            } else if rho < 0.25 {
                self.radius = 0.5 * step_norm;
            }
            if actual >= 0.0 {
                return Ok(step);
            }
            if self.radius < MIN_RADIUS {
                self.radius = MIN_RADIUS;
                return Ok(step.into_iter().map(|(k, v)| (k, v * 0.0)).collect());
            }
        }
    }

    fn relinearize(&mut self, vars: &BTreeSet<VarId>, affected: &mut BTreeSet<VarId>) -> Result<()> {
        if vars.is_empty() {
            return Ok(());
        }
        for v in vars {
            let s = self.theta[v].retract(&self.delta[v])?;
            self.theta.insert(*v, s);
            self.delta.get_mut(v).unwrap().fill(0.0);
        }
        let touched: BTreeSet<usize> = vars
            .iter()
            .filter_map(|v| self.factors_by_var.get(v))
            .flatten()
            .copied()
            .collect();
        for i in touched {
            let f = self.factors[i].as_ref().unwrap();
            self.linear[i] = Some(f.linearize(&self.theta, i)?);
            affected.extend(f.keys.iter().copied());
        }
        Ok(())
    }

    /// Detaches the affected top, re-eliminates it and re-attaches orphans; returns its variables.
    fn reeliminate(
        &mut self,
        affected: &BTreeSet<VarId>,
        constrained: &BTreeSet<VarId>,
    ) -> Result<BTreeSet<VarId>> {
        let detached = self.tree.detach_top(affected);
        let mut top = detached.variables;
        top.extend(affected.iter().filter(|v| !self.tree.contains(**v)));

        let mut gathered: Vec<LinearFactor> = Vec::new();
        let mut seen = BTreeSet::new();
        for v in &top {
            for &i in self.factors_by_var.get(v).into_iter().flatten() {
                if !seen.insert(i) {
                    continue;
                }
                if let Some(lf) = &self.linear[i] {
                    if lf.keys.iter().all(|k| top.contains(k)) {
                        gathered.push(lf.clone());
                    }
                }
            }
        }
        for &o in &detached.orphans {
            if let Some(m) = &self.tree.clique(o).marginal {
                gathered.push(m.clone());
            }
        }

        let ordering = match self.config.reorder {
            ReorderMode::Natural => Ordering(top.iter().copied().collect()),
            ReorderMode::ConstrainedMinDegree => {
                let adj = adjacency(&top, gathered.iter().map(|f| f.keys.as_slice()));
                let last: BTreeSet<VarId> = constrained.intersection(&top).copied().collect();
                // A fresh build has every variable constrained; that is plain minimum degree.
                let last = if last.len() == top.len() { BTreeSet::new() } else { last };
                constrained_min_degree(adj, &last)
            }
        };
        let dims: BTreeMap<VarId, usize> = top.iter().map(|v| (*v, self.theta[v].dim())).collect();
        let result = eliminate(gathered, &dims, &ordering)?;
        self.tree.insert_eliminated(&result, &ordering);
        for o in detached.orphans {
            self.tree.attach_orphan(o);
        }
        Ok(top)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lie::Se2Pose;
    use crate::optimize::{optimize_batch, LmConfig};
    use crate::state::{MarkovState, MobileConfig};
    use nalgebra::{dvector, DMatrix};
    use proptest::prelude::*;
    use rand::{RngExt, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use std::sync::Arc;

    fn pose(x: f64, y: f64, yaw: f64) -> MobileConfig {
        MobileConfig::from_slice(Se2Pose::new(x, y, yaw), &[0.0, 0.0])
    }

    /// Planning chain from the origin to (4, 1, 0.5) over `n` intervals, straight-line init.
    fn planning_chain(n: usize) -> (Vec<Factor>, Values) {
        let qc = DMatrix::identity(5, 5);
        let fix = DMatrix::identity(10, 10) * 1e-4;
        let goal = pose(4.0, 1.0, 0.5);
        let mut factors = vec![
            Factor::start_fix(VarId(0), pose(0.0, 0.0, 0.0), fix.clone()).unwrap(),
            Factor::goal_fix(VarId(n), goal, fix).unwrap(),
        ];
        let mut values = Values::new();
        for i in 0..=n {
            let s = i as f64 / n as f64;
            values.insert(VarId(i), MarkovState::at_rest(pose(4.0 * s, 1.0 * s, 0.5 * s)));
            if i < n {
                factors.push(Factor::gp_prior(VarId(i), VarId(i + 1), 1.0, &qc).unwrap());
            }
        }
        (factors, values)
    }

    fn batch(factors: &[Factor], init: &Values) -> Values {
        let g = FactorGraph {
            values: init.clone(),
            factors: factors.to_vec(),
        };
        let cfg = LmConfig {
            relative_tolerance: 1e-14,
            absolute_tolerance: 1e-12,
            ..LmConfig::default()
        };
        optimize_batch(&g, init, &cfg).unwrap().0
    }

    fn max_diff(a: &Values, b: &Values) -> f64 {
        a.iter().map(|(k, v)| v.max_abs_diff(&b[k])).fold(0.0, f64::max)
    }

    #[test]
    fn exact_mode_tracks_batch_optimum() {
        let n = 8;
        let (factors, values) = planning_chain(n);
        let mut sm = IncrementalSmoother::new(SmootherConfig::exact());
        sm.update(factors.clone(), values.clone(), &[]).unwrap();
        let mut all = factors;
        assert!(max_diff(&sm.estimate().unwrap(), &batch(&all, &values)) < 1e-6);
        for i in 1..n {
            let m = Factor::measurement(VarId(i), pose(0.5 * i as f64, 0.3, 0.1), DMatrix::identity(5, 5) * 0.01);
            let m = m.unwrap();
            all.push(m.clone());
            sm.update(vec![m], Values::new(), &[]).unwrap();
            sm.tree().check_invariants().unwrap();
            let est = sm.estimate().unwrap();
            assert!(max_diff(&est, &batch(&all, &est)) < 1e-6, "after measurement {i}");
        }
    }

    fn linear_smoother(reorder: ReorderMode) -> IncrementalSmoother {
        let qc = DMatrix::identity(1, 1);
        let mut values = Values::new();
        let mut factors = vec![Factor::start_fix(
            VarId(0),
            MobileConfig::vector(dvector![0.0]),
            DMatrix::identity(2, 2) * 1e-4,
        )
        .unwrap()];
        for i in 0..5 {
            values.insert(VarId(i), MarkovState::at_rest(MobileConfig::vector(dvector![0.0])));
            if i < 4 {
                factors.push(Factor::gp_prior(VarId(i), VarId(i + 1), 1.0, &qc).unwrap());
            }
        }
        let mut sm = IncrementalSmoother::new(SmootherConfig {
            relinearize_threshold: f64::INFINITY,
            reorder,
            step: StepControl::GaussNewton,
            ..SmootherConfig::default()
        });
        sm.update(factors, values, &[]).unwrap();
        sm
    }

    fn measure(i: usize, z: f64) -> Factor {
        Factor::measurement(VarId(i), MobileConfig::vector(dvector![z]), DMatrix::identity(1, 1)).unwrap()
    }

    #[test]
    fn unary_insertion_leaves_lower_clique_untouched() {
        for reorder in [ReorderMode::Natural, ReorderMode::ConstrainedMinDegree] {
            let mut sm = linear_smoother(reorder);
            let bottom = sm.tree().owner(VarId(0)).unwrap();
            let before = sm.tree().clique(bottom).clone();
            let report = sm.update(vec![measure(2, 1.0)], Values::new(), &[]).unwrap();
            assert!(Arc::ptr_eq(&before, sm.tree().clique(sm.tree().owner(VarId(0)).unwrap())));
            assert!(report.reeliminated() < 5);
            sm.tree().check_invariants().unwrap();
        }
    }

    #[test]
    fn root_only_insertion_reeliminates_root() {
        let mut sm = linear_smoother(ReorderMode::Natural);
        let root = sm.tree().roots()[0];
        let frontals = sm.tree().clique(root).frontals.clone();
        let report = sm.update(vec![measure(frontals[0].0, 1.0)], Values::new(), &[]).unwrap();
        assert_eq!(report.reeliminated(), frontals.len());
    }

    #[test]
    fn mark_relinearization_thresholds() {
        let mut sm = linear_smoother(ReorderMode::Natural);
        assert!(sm.mark_relinearization(0.0).is_empty());
        sm.update(vec![measure(4, 2.0)], Values::new(), &[]).unwrap();
        let nonzero: BTreeSet<VarId> = sm.delta().iter().filter(|(_, d)| d.amax() > 0.0).map(|(k, _)| *k).collect();
        assert!(!nonzero.is_empty());
        assert_eq!(sm.mark_relinearization(0.0), nonzero);
        assert!(sm.mark_relinearization(f64::INFINITY).is_empty());
    }

    #[test]
    fn removing_a_factor_restores_the_previous_solution() {
        let mut sm = linear_smoother(ReorderMode::ConstrainedMinDegree);
        let before = sm.estimate().unwrap();
        let r = sm.update(vec![measure(3, 5.0)], Values::new(), &[]).unwrap();
        sm.update(vec![], Values::new(), &r.new_factor_indices).unwrap();
        assert!(max_diff(&before, &sm.estimate().unwrap()) < 1e-9);
        assert!(sm.factor(r.new_factor_indices[0]).is_none());
    }

    #[test]
    fn unknown_variable_is_rejected() {
        let mut sm = linear_smoother(ReorderMode::Natural);
        assert!(matches!(
            sm.update(vec![measure(9, 1.0)], Values::new(), &[]),
            Err(SteapError::MissingVariable(VarId(9)))
        ));
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]

        #[test]
        fn random_insertions_keep_tree_consistent_and_deterministic(seed in any::<u64>()) {
            let run = || {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                let n = 10;
                let (factors, values) = planning_chain(n);
                let mut sm = IncrementalSmoother::new(SmootherConfig::default());
                sm.update(factors, values, &[]).unwrap();
                for _ in 0..6 {
                    let i = rng.random_range(1..n);
                    let m = Factor::measurement(
                        VarId(i),
                        pose(rng.random_range(0.0..4.0), rng.random_range(-1.0..1.0), 0.0),
                        DMatrix::identity(5, 5) * 0.1,
                    ).unwrap();
                    sm.update(vec![m], Values::new(), &[]).unwrap();
                    sm.tree().check_invariants().unwrap();
                    assert_eq!(sm.tree().variable_count(), n + 1);
                }
                (sm.tree().dump(), sm.estimate().unwrap())
            };
            let (a, ea) = run();
            let (b, eb) = run();
            prop_assert_eq!(a, b);
            prop_assert_eq!(ea, eb);
        }
    }
}
