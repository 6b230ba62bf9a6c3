//! Elimination orderings.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::factor::VarId;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum OrderingMode {
    /// Ascending variable id: start-to-goal along a trajectory chain.
    #[default]
    Natural,
    /// Greedy minimum degree, ties broken by lowest id.
    MinDegree,
}

/// Elimination order, first element eliminated first.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Ordering(pub Vec<VarId>);

impl Ordering {
    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn positions(&self) -> BTreeMap<VarId, usize> {
        self.0.iter().enumerate().map(|(i, v)| (*v, i)).collect()
    }
}

/// Variable adjacency induced by factor key sets.
pub fn adjacency<'a, I>(vars: &BTreeSet<VarId>, factor_keys: I) -> BTreeMap<VarId, BTreeSet<VarId>>
where
    I: IntoIterator<Item = &'a [VarId]>,
{
    let mut adj: BTreeMap<VarId, BTreeSet<VarId>> =
        vars.iter().map(|v| (*v, BTreeSet::new())).collect();
    for keys in factor_keys {
        for a in keys {
            for b in keys {
                if a != b && vars.contains(a) && vars.contains(b) {
                    adj.get_mut(a).unwrap().insert(*b);
                }
            }
        }
    }
    adj
}

pub fn compute_ordering<'a, I>(vars: &BTreeSet<VarId>, factor_keys: I, mode: OrderingMode) -> Ordering
where
    I: IntoIterator<Item = &'a [VarId]>,
{
    match mode {
        OrderingMode::Natural => Ordering(vars.iter().copied().collect()),
        OrderingMode::MinDegree => {
            constrained_min_degree(adjacency(vars, factor_keys), &BTreeSet::new())
        }
    }
}

/// Minimum-degree ordering that eliminates every variable of `last` after all others.
pub fn constrained_min_degree(
    mut adj: BTreeMap<VarId, BTreeSet<VarId>>,
    last: &BTreeSet<VarId>,
) -> Ordering {
    let mut order = Vec::with_capacity(adj.len());
    while !adj.is_empty() {
        let pick = |constrained: bool| {
            adj.iter()
                .filter(|(v, _)| last.contains(v) == constrained)
                .min_by_key(|(v, n)| (n.len(), **v))
                .map(|(v, _)| *v)
        };
        let v = pick(false).or_else(|| pick(true)).unwrap();
        let nbrs = adj.remove(&v).unwrap();
        for a in &nbrs {
            let set = adj.get_mut(a).unwrap();
            set.remove(&v);
            for b in &nbrs {
                if a != b {
                    set.insert(*b);
                }
            }
        }
        order.push(v);
    }
    Ordering(order)
}

/// Number of fill edges created by eliminating in `order`.
pub fn fill_in(adj: &BTreeMap<VarId, BTreeSet<VarId>>, order: &[VarId]) -> usize {
    let mut adj = adj.clone();
    let mut fill = 0;
    for v in order {
        let nbrs = adj.remove(v).unwrap_or_default();
        for a in &nbrs {
            for b in &nbrs {
                if a < b && !adj[a].contains(b) {
                    fill += 1;
                    adj.get_mut(a).unwrap().insert(*b);
                    adj.get_mut(b).unwrap().insert(*a);
                }
            }
            adj.get_mut(a).unwrap().remove(v);
        }
    }
    fill
}

#[cfg(test)]
mod tests {
    use super::*;

    fn chain(n: usize) -> (BTreeSet<VarId>, Vec<Vec<VarId>>) {
        let vars = (0..n).map(VarId).collect();
        let keys = (0..n - 1).map(|i| vec![VarId(i), VarId(i + 1)]).collect();
        (vars, keys)
    }

    #[test]
    fn natural_chain_order() {
        let (vars, keys) = chain(5);
        let o = compute_ordering(&vars, keys.iter().map(Vec::as_slice), OrderingMode::Natural);
        assert_eq!(o.0, (0..5).map(VarId).collect::<Vec<_>>());
        let adj = adjacency(&vars, keys.iter().map(Vec::as_slice));
        assert_eq!(fill_in(&adj, &o.0), 0);
    }

    #[test]
    fn single_variable() {
        let vars: BTreeSet<_> = [VarId(7)].into();
        for mode in [OrderingMode::Natural, OrderingMode::MinDegree] {
            assert_eq!(compute_ordering(&vars, std::iter::empty(), mode).0, vec![VarId(7)]);
        }
    }

    #[test]
    fn min_degree_is_a_permutation_and_respects_constraints() {
        let (vars, keys) = chain(8);
        let adj = adjacency(&vars, keys.iter().map(Vec::as_slice));
        let last: BTreeSet<_> = [VarId(3)].into();
        let o = constrained_min_degree(adj, &last);
        assert_eq!(o.0.last(), Some(&VarId(3)));
        let set: BTreeSet<_> = o.0.iter().copied().collect();
        assert_eq!(set, vars);
    }

    /// Random chordal graph: each new vertex joins a subset of an existing clique.
    fn random_chordal(seed: u64, n: usize) -> BTreeMap<VarId, BTreeSet<VarId>> {
        use rand::{RngExt, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let vars: BTreeSet<VarId> = (0..n).map(VarId).collect();
        let mut cliques: Vec<Vec<VarId>> = vec![vec![VarId(0)]];
        let mut edges: Vec<Vec<VarId>> = Vec::new();
        for v in 1..n {
            let c = cliques[rng.random_range(0..cliques.len())].clone();
            let mut joined: Vec<VarId> = c.into_iter().filter(|_| rng.random_bool(0.6)).collect();
            joined.push(VarId(v));
            edges.push(joined.clone());
            cliques.push(joined);
        }
        adjacency(&vars, edges.iter().map(Vec::as_slice))
    }

    fn brute_force_min_fill(adj: &BTreeMap<VarId, BTreeSet<VarId>>) -> usize {
        let mut order: Vec<VarId> = adj.keys().copied().collect();
        let n = order.len();
        let mut best = fill_in(adj, &order);
        // Heap's algorithm over all permutations.
        let mut c = vec![0; n];
        let mut i = 0;
        while i < n {
            if c[i] < i {
                if i % 2 == 0 {
                    order.swap(0, i);
                } else {
                    order.swap(c[i], i);
                }
                best = best.min(fill_in(adj, &order));
                c[i] += 1;
                i = 0;
            } else {
                c[i] = 0;
                i += 1;
            }
        }
        best
    }

    #[test]
    fn min_degree_fill_is_near_optimal_on_chordal_graphs() {
        for seed in 0..20 {
            let n = 4 + (seed as usize % 5);
            let adj = random_chordal(seed, n);
            let o = constrained_min_degree(adj.clone(), &BTreeSet::new());
            let best = brute_force_min_fill(&adj);
            assert!(fill_in(&adj, &o.0) <= 3 * best, "seed {seed}");
        }
    }
}
