//! Variable elimination of whitened linear factors into square-root conditionals.

use std::collections::{BTreeMap, BTreeSet};

use nalgebra::{DMatrix, DVector};

use crate::error::{Result, SteapError};
use crate::factor::{LinearFactor, VarId};
use crate::ordering::Ordering;

/// Diagonal entries of `R` at or below this magnitude are treated as rank loss.
pub const RANK_TOLERANCE: f64 = 1e-12;

/// `p(x_j | S_j)` in square-root form: `R x_j + sum_k S_k x_k = d`.
#[derive(Debug, Clone, PartialEq)]
pub struct Conditional {
    pub frontal: VarId,
    pub separator: Vec<VarId>,
    pub r: DMatrix<f64>,
    pub s: Vec<DMatrix<f64>>,
    pub d: DVector<f64>,
}

impl Conditional {
    /// Solves for the frontal given solved separator values.
    pub fn solve(&self, delta: &BTreeMap<VarId, DVector<f64>>) -> DVector<f64> {
        let mut rhs = self.d.clone();
        for (k, s) in self.separator.iter().zip(&self.s) {
            rhs -= s * &delta[k];
        }
        self.r
            .solve_upper_triangular(&rhs)
            .expect("conditional R has a nonzero diagonal")
    }
}

#[derive(Debug, Clone)]
pub struct EliminationResult {
    /// In elimination order.
    pub conditionals: Vec<Conditional>,
    /// Factor on each conditional's separator left over after eliminating its frontal.
    pub remainders: Vec<Option<LinearFactor>>,
}

impl EliminationResult {
    pub fn back_substitute(&self) -> BTreeMap<VarId, DVector<f64>> {
        back_substitute(&self.conditionals)
    }
}

/// Solves conditionals given in elimination order, last first.
pub fn back_substitute(conditionals: &[Conditional]) -> BTreeMap<VarId, DVector<f64>> {
    let mut delta = BTreeMap::new();
    for c in conditionals.iter().rev() {
        let x = c.solve(&delta);
        delta.insert(c.frontal, x);
    }
    delta
}

/// Eliminates one variable from the factors touching it.
///
/// `position` ranks variables by elimination order and fixes the column order of the separator.
pub fn eliminate_one(
    var: VarId,
    factors: &[LinearFactor],
    dims: &BTreeMap<VarId, usize>,
    position: &BTreeMap<VarId, usize>,
) -> Result<(Conditional, Option<LinearFactor>)> {
    let dj = *dims.get(&var).ok_or(SteapError::MissingVariable(var))?;
    let mut sep: BTreeSet<(usize, VarId)> = BTreeSet::new();
    for f in factors {
        for k in &f.keys {
            if *k != var {
                let p = *position.get(k).ok_or(SteapError::MissingVariable(*k))?;
                sep.insert((p, *k));
            }
        }
    }
    let separator: Vec<VarId> = sep.into_iter().map(|(_, k)| k).collect();
    let mut col = BTreeMap::new();
    col.insert(var, 0);
    let mut ncols = dj;
    for k in &separator {
        col.insert(*k, ncols);
        ncols += dims[k];
    }
    let rows: usize = factors.iter().map(LinearFactor::rows).sum();
    if rows < dj {
        return Err(SteapError::RankDeficient(var));
    }
    let mut m = DMatrix::zeros(rows, ncols + 1);
    let mut row = 0;
    for f in factors {
        let h = f.rows();
        for (k, blk) in f.keys.iter().zip(&f.blocks) {
            let mut v = m.view_mut((row, col[k]), (h, blk.ncols()));
            v += blk;
        }
        m.view_mut((row, ncols), (h, 1)).copy_from(&f.rhs);
        row += h;
    }

    let r = m.qr().r();
    for i in 0..dj {
        if r[(i, i)].abs() <= RANK_TOLERANCE || !r[(i, i)].is_finite() {
            return Err(SteapError::RankDeficient(var));
        }
    }
    let cond = Conditional {
        frontal: var,
        separator: separator.clone(),
        r: r.view((0, 0), (dj, dj)).upper_triangle(),
        s: separator
            .iter()
            .map(|k| r.view((0, col[k]), (dj, dims[k])).into_owned())
            .collect(),
        d: r.view((0, ncols), (dj, 1)).column(0).into_owned(),
    };
    let rem_rows = r.nrows() - dj;
    let remainder = if separator.is_empty() || rem_rows == 0 {
        None
    } else {
        Some(LinearFactor {
            keys: separator.clone(),
            blocks: separator
                .iter()
                .map(|k| r.view((dj, col[k]), (rem_rows, dims[k])).into_owned())
                .collect(),
            rhs: r.view((dj, ncols), (rem_rows, 1)).column(0).into_owned(),
        })
    };
    Ok((cond, remainder))
}

/// Eliminates all variables of `ordering` from `factors`.
pub fn eliminate(
    factors: Vec<LinearFactor>,
    dims: &BTreeMap<VarId, usize>,
    ordering: &Ordering,
) -> Result<EliminationResult> {
    let position = ordering.positions();
    let mut pool: Vec<Option<LinearFactor>> = Vec::with_capacity(factors.len() * 2);
    let mut by_var: BTreeMap<VarId, Vec<usize>> = BTreeMap::new();
    let push = |pool: &mut Vec<Option<LinearFactor>>, by_var: &mut BTreeMap<VarId, Vec<usize>>, f: LinearFactor| {
        let idx = pool.len();
        for k in &f.keys {
            by_var.entry(*k).or_default().push(idx);
        }
        pool.push(Some(f));
    };
    for f in factors {
        for k in &f.keys {
            if !position.contains_key(k) {
                return Err(SteapError::MissingVariable(*k));
            }
        }
        push(&mut pool, &mut by_var, f);
    }

    let mut conditionals = Vec::with_capacity(ordering.len());
    let mut remainders = Vec::with_capacity(ordering.len());
    for &var in &ordering.0 {
        let gathered: Vec<LinearFactor> = by_var
            .remove(&var)
            .unwrap_or_default()
            .into_iter()
            .filter_map(|i| pool[i].take())
            .collect();
        let (cond, rem) = eliminate_one(var, &gathered, dims, &position)?;
        if let Some(r) = &rem {
            push(&mut pool, &mut by_var, r.clone());
        }
        conditionals.push(cond);
        remainders.push(rem);
    }
    Ok(EliminationResult {
        conditionals,
        remainders,
    })
}
