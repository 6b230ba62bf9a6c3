//! Bayes tree of square-root conditionals.
//!
//! Cliques are immutable and reference counted; parent/child links live in the
//! tree, so detaching and re-attaching a sub-tree never copies or rebuilds the
//! cliques inside it. `Arc::ptr_eq` on [`BayesTree::clique`] results tells
//! whether a clique survived an update untouched.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::sync::Arc;

use nalgebra::DVector;

use crate::elimination::{Conditional, EliminationResult};
use crate::factor::{LinearFactor, VarId};
use crate::ordering::Ordering;

pub type CliqueId = usize;

/// `C = F : S` with `p(F | S)` stored as one conditional per frontal.
#[derive(Debug, Clone, PartialEq)]
pub struct Clique {
    /// Frontal variables in elimination order.
    pub frontals: Vec<VarId>,
    pub separator: Vec<VarId>,
    /// One per frontal, same order.
    pub conditionals: Vec<Conditional>,
    /// Factor on the separator summarising this clique's sub-tree.
    pub marginal: Option<LinearFactor>,
}

impl Clique {
    pub fn variables(&self) -> BTreeSet<VarId> {
        self.frontals.iter().chain(&self.separator).copied().collect()
    }
}

#[derive(Debug, Clone)]
struct Node {
    clique: Arc<Clique>,
    parent: Option<CliqueId>,
    children: Vec<CliqueId>,
}

#[derive(Debug, Clone, Default)]
pub struct BayesTree {
    nodes: BTreeMap<CliqueId, Node>,
    roots: Vec<CliqueId>,
    owner: BTreeMap<VarId, CliqueId>,
    position: BTreeMap<VarId, u64>,
    next_id: CliqueId,
    next_pos: u64,
}

/// Result of detaching the top of a tree.
#[derive(Debug, Clone)]
pub struct Detached {
    pub removed: Vec<Arc<Clique>>,
    /// Roots of sub-trees that lost their parent.
    pub orphans: Vec<CliqueId>,
    /// Frontal variables of all removed cliques.
    pub variables: BTreeSet<VarId>,
}

struct Builder {
    frontals: Vec<VarId>,
    separator: Vec<VarId>,
    conditionals: Vec<Conditional>,
    marginal: Option<LinearFactor>,
    parent: Option<usize>,
}

impl BayesTree {
    pub fn new() -> Self {
        Self::default()
    }

    /// Builds a tree from a complete elimination.
    pub fn build(result: &EliminationResult, ordering: &Ordering) -> Self {
        let mut tree = Self::new();
        tree.insert_eliminated(result, ordering);
        tree
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn roots(&self) -> &[CliqueId] {
        &self.roots
    }

    pub fn clique(&self, id: CliqueId) -> &Arc<Clique> {
        &self.nodes[&id].clique
    }

    pub fn parent(&self, id: CliqueId) -> Option<CliqueId> {
        self.nodes[&id].parent
    }

    pub fn children(&self, id: CliqueId) -> &[CliqueId] {
        &self.nodes[&id].children
    }

    pub fn clique_ids(&self) -> impl Iterator<Item = CliqueId> + '_ {
        self.nodes.keys().copied()
    }

    /// Clique holding `var` as a frontal.
    pub fn owner(&self, var: VarId) -> Option<CliqueId> {
        self.owner.get(&var).copied()
    }

    pub fn contains(&self, var: VarId) -> bool {
        self.owner.contains_key(&var)
    }

    pub fn variable_count(&self) -> usize {
        self.owner.len()
    }

    /// Adds cliques for conditionals eliminated in `ordering`.
    ///
    /// Walks the conditionals in reverse elimination order; each one either
    /// joins its parent clique (when the parent's variables all lie in its
    /// separator) or starts a new child clique. Returns the new clique ids.
    pub fn insert_eliminated(&mut self, result: &EliminationResult, ordering: &Ordering) -> Vec<CliqueId> {
        for v in &ordering.0 {
            self.position.insert(*v, self.next_pos);
            self.next_pos += 1;
        }
        let mut builders: Vec<Builder> = Vec::new();
        let mut local_owner: BTreeMap<VarId, usize> = BTreeMap::new();
        for (cond, rem) in result
            .conditionals
            .iter()
            .zip(&result.remainders)
            .rev()
        {
            let parent_var = cond
                .separator
                .iter()
                .min_by_key(|v| self.position[v])
                .copied();
            let parent = parent_var.map(|v| local_owner[&v]);
            if let Some(p) = parent {
                let pb = &builders[p];
                let parent_vars: BTreeSet<VarId> =
                    pb.frontals.iter().chain(&pb.separator).copied().collect();
                let sep: BTreeSet<VarId> = cond.separator.iter().copied().collect();
                if parent_vars.is_subset(&sep) {
                    let pb = &mut builders[p];
                    pb.frontals.insert(0, cond.frontal);
                    pb.conditionals.insert(0, cond.clone());
                    local_owner.insert(cond.frontal, p);
                    continue;
                }
            }
            local_owner.insert(cond.frontal, builders.len());
            builders.push(Builder {
                frontals: vec![cond.frontal],
                separator: cond.separator.clone(),
                conditionals: vec![cond.clone()],
                marginal: rem.clone(),
                parent,
            });
        }

        let ids: Vec<CliqueId> = (0..builders.len()).map(|i| self.next_id + i).collect();
        self.next_id += builders.len();
        for (i, b) in builders.into_iter().enumerate() {
            let id = ids[i];
            for f in &b.frontals {
                self.owner.insert(*f, id);
            }
            let parent = b.parent.map(|p| ids[p]);
            match parent {
                Some(p) => self.nodes.get_mut(&p).unwrap().children.push(id),
                None => self.roots.push(id),
            }
            self.nodes.insert(
                id,
                Node {
                    clique: Arc::new(Clique {
                        frontals: b.frontals,
                        separator: b.separator,
                        conditionals: b.conditionals,
                        marginal: b.marginal,
                    }),
                    parent,
                    children: Vec::new(),
                },
            );
        }
        ids
    }

    /// Removes the cliques owning `vars` together with their paths to the root.
    pub fn detach_top(&mut self, vars: &BTreeSet<VarId>) -> Detached {
        let mut marked: BTreeSet<CliqueId> = BTreeSet::new();
        for v in vars {
            let mut cur = self.owner.get(v).copied();
            while let Some(c) = cur {
                if !marked.insert(c) {
                    break;
                }
                cur = self.nodes[&c].parent;
            }
        }
        let mut removed = Vec::new();
        let mut orphans = Vec::new();
        let mut variables = BTreeSet::new();
        for c in &marked {
            let node = self.nodes.remove(c).unwrap();
            for f in &node.clique.frontals {
                self.owner.remove(f);
                variables.insert(*f);
            }
            orphans.extend(node.children.iter().filter(|ch| !marked.contains(ch)));
            removed.push(node.clique);
        }
        self.roots.retain(|r| !marked.contains(r));
        for o in &orphans {
            self.nodes.get_mut(o).unwrap().parent = None;
        }
        orphans.sort_unstable();
        Detached {
            removed,
            orphans,
            variables,
        }
    }

    /// Re-attaches a detached sub-tree under the owner of its earliest-eliminated separator variable.
    pub fn attach_orphan(&mut self, orphan: CliqueId) {
        let sep = &self.nodes[&orphan].clique.separator;
        let parent = sep
            .iter()
            .min_by_key(|v| self.position[v])
            .map(|v| self.owner[v]);
        self.nodes.get_mut(&orphan).unwrap().parent = parent;
        match parent {
            Some(p) => self.nodes.get_mut(&p).unwrap().children.push(orphan),
            None => self.roots.push(orphan),
        }
    }

    /// Back-substitutes every clique from the roots down.
    pub fn solve(&self) -> BTreeMap<VarId, DVector<f64>> {
        let mut delta = BTreeMap::new();
        let mut stack: Vec<CliqueId> = self.roots.iter().rev().copied().collect();
        while let Some(id) = stack.pop() {
            let node = &self.nodes[&id];
            for c in node.clique.conditionals.iter().rev() {
                let x = c.solve(&delta);
                delta.insert(c.frontal, x);
            }
            stack.extend(node.children.iter().rev());
        }
        delta
    }

    /// One line per clique in depth-first order: `frontals : separator | parent frontals`.
    pub fn dump(&self) -> String {
        let names = |vs: &[VarId]| vs.iter().map(|v| v.to_string()).collect::<Vec<_>>().join(" ");
        let mut out = String::new();
        let mut stack: Vec<CliqueId> = self.roots.iter().rev().copied().collect();
        while let Some(id) = stack.pop() {
            let node = &self.nodes[&id];
            let parent = node
                .parent
                .map(|p| names(&self.nodes[&p].clique.frontals))
                .unwrap_or_else(|| "-".into());
            let _ = writeln!(
                out,
                "{} : {} | {}",
                names(&node.clique.frontals),
                names(&node.clique.separator),
                parent
            );
            stack.extend(node.children.iter().rev());
        }
        out
    }

    /// Structural invariants; returns a description of the first violation.
    pub fn check_invariants(&self) -> std::result::Result<(), String> {
        let mut seen = BTreeSet::new();
        for (id, node) in &self.nodes {
            for f in &node.clique.frontals {
                if !seen.insert(*f) {
                    return Err(format!("{f} is frontal in two cliques"));
                }
                if self.owner.get(f) != Some(id) {
                    return Err(format!("owner index wrong for {f}"));
                }
            }
            let fr: BTreeSet<_> = node.clique.frontals.iter().collect();
            if node.clique.separator.iter().any(|s| fr.contains(s)) {
                return Err(format!("clique {id} has overlapping frontal and separator"));
            }
            match node.parent {
                Some(p) => {
                    let pv = self.nodes[&p].clique.variables();
                    if !node.clique.separator.iter().all(|s| pv.contains(s)) {
                        return Err(format!("separator of clique {id} not in parent"));
                    }
                    if !self.nodes[&p].children.contains(id) {
                        return Err(format!("clique {id} missing from parent's children"));
                    }
                }
                None => {
                    if !self.roots.contains(id) {
                        return Err(format!("parentless clique {id} is not a root"));
                    }
                }
            }
        }
        if seen.len() != self.owner.len() {
            return Err("owner index has stale entries".into());
        }
        // Every clique reachable exactly once from the roots.
        let mut visited = BTreeSet::new();
        let mut stack: Vec<CliqueId> = self.roots.clone();
        while let Some(id) = stack.pop() {
            if !visited.insert(id) {
                return Err(format!("clique {id} reached twice"));
            }
            stack.extend(&self.nodes[&id].children);
        }
        if visited.len() != self.nodes.len() {
            return Err("unreachable cliques".into());
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::elimination::eliminate;
    use nalgebra::DMatrix;

    fn chain_factors(n: usize) -> Vec<LinearFactor> {
        let mut fs = vec![LinearFactor {
            keys: vec![VarId(0)],
            blocks: vec![DMatrix::identity(1, 1)],
            rhs: DVector::from_element(1, 1.0),
        }];
        for i in 0..n - 1 {
            fs.push(LinearFactor {
                keys: vec![VarId(i), VarId(i + 1)],
                blocks: vec![DMatrix::identity(1, 1), -DMatrix::identity(1, 1)],
                rhs: DVector::from_element(1, 0.5),
            });
        }
        fs
    }

    fn dims(n: usize) -> BTreeMap<VarId, usize> {
        (0..n).map(|i| (VarId(i), 1)).collect()
    }

    #[test]
    fn five_state_chain_cliques() {
        let ord = Ordering((0..5).map(VarId).collect());
        let res = eliminate(chain_factors(5), &dims(5), &ord).unwrap();
        let tree = BayesTree::build(&res, &ord);
        assert_eq!(tree.len(), 4);
        assert_eq!(
            tree.dump(),
            "x3 x4 :  | -\nx2 : x3 | x3 x4\nx1 : x2 | x2\nx0 : x1 | x1\n"
        );
        tree.check_invariants().unwrap();
        let a = tree.solve();
        let b = res.back_substitute();
        for (k, v) in &a {
            assert!((v - &b[k]).amax() < 1e-10);
        }
    }

    #[test]
    fn dense_three_variables_single_clique() {
        let f = LinearFactor {
            keys: vec![VarId(0), VarId(1), VarId(2)],
            blocks: vec![DMatrix::identity(3, 1).clone(), DMatrix::from_element(3, 1, 0.5), DMatrix::from_row_slice(3, 1, &[0.0, 0.0, 1.0])],
            rhs: DVector::zeros(3),
        };
        let ord = Ordering((0..3).map(VarId).collect());
        let res = eliminate(vec![f], &dims(3), &ord).unwrap();
        let tree = BayesTree::build(&res, &ord);
        assert_eq!(tree.len(), 1);
    }

    #[test]
    fn detach_keeps_lower_cliques() {
        let ord = Ordering((0..5).map(VarId).collect());
        let res = eliminate(chain_factors(5), &dims(5), &ord).unwrap();
        let mut tree = BayesTree::build(&res, &ord);
        let bottom = tree.owner(VarId(0)).unwrap();
        let before = tree.clique(bottom).clone();
        let det = tree.detach_top(&[VarId(2)].into());
        assert_eq!(det.variables, [VarId(2), VarId(3), VarId(4)].into());
        assert_eq!(det.orphans.len(), 1);
        assert!(Arc::ptr_eq(&before, tree.clique(bottom)));
    }
}
