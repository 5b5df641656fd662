//! Factors of a finite system as partitions of its states.
//!
//! On a finite probability space a sigma-subalgebra is a partition of the
//! states (up to null sets), so isotropy factors are orbit partitions and
//! the join of factors is the common refinement. Completion with respect to
//! the measure is a no-op once zero-weight states are removed.

use std::collections::HashMap;

use num_traits::Zero;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::observable::Observable;
use crate::rational::Q;
use crate::system::{FiniteSystem, GroupElement, Perm};

/// A partition of `{0..n-1}`, canonicalized so cells are ordered by their
/// least element and each cell is sorted.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Partition {
    cell_of: Vec<usize>,
    cells: Vec<Vec<usize>>,
}

impl Partition {
    /// Groups states with equal keys.
    pub fn from_keys<K: std::hash::Hash + Eq>(keys: impl IntoIterator<Item = K>) -> Self {
        let mut ids: HashMap<K, usize> = HashMap::new();
        let mut cell_of = Vec::new();
        let mut cells: Vec<Vec<usize>> = Vec::new();
        for (x, k) in keys.into_iter().enumerate() {
            let next = cells.len();
            let id = *ids.entry(k).or_insert(next);
            if id == next {
                cells.push(Vec::new());
            }
            cells[id].push(x);
            cell_of.push(id);
        }
        Partition { cell_of, cells }
    }

    pub fn from_cells(n: usize, cells: &[Vec<usize>]) -> Result<Self> {
        let mut key = vec![usize::MAX; n];
        for (c, cell) in cells.iter().enumerate() {
            if cell.is_empty() {
                return Err(Error::Malformed("empty partition cell".into()));
            }
            for &x in cell {
                if x >= n || key[x] != usize::MAX {
                    return Err(Error::Malformed(format!(
                        "state {x} missing from range or repeated"
                    )));
                }
                key[x] = c;
            }
        }
        if key.contains(&usize::MAX) {
            return Err(Error::Malformed("cells do not cover all states".into()));
        }
        Ok(Self::from_keys(key))
    }

    pub fn discrete(n: usize) -> Self {
        Self::from_keys(0..n)
    }

    pub fn trivial(n: usize) -> Self {
        Self::from_keys(std::iter::repeat_n(0, n))
    }

    pub fn n(&self) -> usize {
        self.cell_of.len()
    }

    pub fn num_cells(&self) -> usize {
        self.cells.len()
    }

    pub fn cells(&self) -> &[Vec<usize>] {
        &self.cells
    }

    pub fn cell_of(&self, x: usize) -> usize {
        self.cell_of[x]
    }

    pub fn cell_ids(&self) -> &[usize] {
        &self.cell_of
    }

    pub fn is_discrete(&self) -> bool {
        self.cells.len() == self.n()
    }

    pub fn cell_weights(&self, sys: &FiniteSystem) -> Vec<Q> {
        self.cells
            .iter()
            .map(|c| c.iter().map(|&x| sys.weight(x).clone()).sum())
            .collect()
    }

    /// Every cell of `self` lies inside a cell of `coarser`.
    pub fn refines(&self, coarser: &Partition) -> bool {
        self.cells
            .iter()
            .all(|c| c.iter().all(|&x| coarser.cell_of(x) == coarser.cell_of(c[0])))
    }

    /// The image of every cell under `p` is a cell.
    pub fn is_invariant_under(&self, p: &Perm) -> bool {
        self.cells.iter().all(|c| {
            let target = self.cell_of(p.apply(c[0]));
            c.iter().all(|&x| self.cell_of(p.apply(x)) == target) && self.cells[target].len() == c.len()
        })
    }
}

/// Generators of a subgroup `Γ ≤ Z^{rd}`; empty means the trivial subgroup.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct SubgroupSpec {
    pub generators: Vec<GroupElement>,
}

impl SubgroupSpec {
    pub fn trivial() -> Self {
        SubgroupSpec::default()
    }

    pub fn new(generators: Vec<GroupElement>) -> Self {
        SubgroupSpec { generators }
    }

    /// `Γ_i = alpha_i(Z^r)`.
    pub fn action(sys: &FiniteSystem, i: usize) -> Self {
        let (r, d) = (sys.r(), sys.d());
        SubgroupSpec::new(
            (0..r)
                .map(|j| {
                    let mut e = vec![0; r];
                    e[j] = 1;
                    GroupElement::on_action(r, d, i, &e)
                })
                .collect(),
        )
    }

    /// `{alpha_i(n) - alpha_j(n)}`.
    pub fn difference(sys: &FiniteSystem, i: usize, j: usize) -> Self {
        let (r, d) = (sys.r(), sys.d());
        SubgroupSpec::new(
            (0..r)
                .map(|k| {
                    let mut e = vec![0; r];
                    e[k] = 1;
                    GroupElement::difference(r, d, i, j, &e)
                })
                .collect(),
        )
    }

    pub fn whole(sys: &FiniteSystem) -> Self {
        let rd = sys.r() * sys.d();
        SubgroupSpec::new(
            (0..rd)
                .map(|k| {
                    let mut c = vec![0; rd];
                    c[k] = 1;
                    GroupElement::new(c)
                })
                .collect(),
        )
    }
}

struct DisjointSets {
    parent: Vec<usize>,
}

impl DisjointSets {
    fn new(n: usize) -> Self {
        DisjointSets {
            parent: (0..n).collect(),
        }
    }

    fn find(&mut self, mut x: usize) -> usize {
        while self.parent[x] != x {
            self.parent[x] = self.parent[self.parent[x]];
            x = self.parent[x];
        }
        x
    }

    fn union(&mut self, a: usize, b: usize) {
        let (ra, rb) = (self.find(a), self.find(b));
        if ra != rb {
            // keep the smaller root so roots are cell minima
            let (lo, hi) = if ra < rb { (ra, rb) } else { (rb, ra) };
            self.parent[hi] = lo;
        }
    }
}

/// Orbits of the permutation group generated by `perms`.
pub fn orbit_partition(n: usize, perms: &[Perm]) -> Partition {
    let mut sets = DisjointSets::new(n);
    for p in perms {
        for x in 0..n {
            sets.union(x, p.apply(x));
        }
    }
    Partition::from_keys((0..n).map(|x| sets.find(x)))
}

/// The `T|_Γ`-isotropy factor: orbits of `{T^γ : γ ∈ Γ}`.
pub fn isotropy_partition(sys: &FiniteSystem, subgroup: &SubgroupSpec) -> Partition {
    let perms: Vec<Perm> = subgroup.generators.iter().map(|g| sys.element_perm(g)).collect();
    orbit_partition(sys.n(), &perms)
}

/// `Σ^{T_i = T_j}`: orbits of `g_{i,k} ∘ g_{j,k}^{-1}`, `k = 1..r`.
pub fn difference_isotropy(sys: &FiniteSystem, i: usize, j: usize) -> Partition {
    assert!(i != j && i < sys.d() && j < sys.d(), "need distinct actions");
    isotropy_partition(sys, &SubgroupSpec::difference(sys, i, j))
}

/// Common refinement of partitions of the same state set.
pub fn join(parts: &[Partition]) -> Partition {
    assert!(!parts.is_empty(), "join of an empty family");
    let n = parts[0].n();
    assert!(
        parts.iter().all(|p| p.n() == n),
        "partitions over different state sets"
    );
    Partition::from_keys((0..n).map(|x| parts.iter().map(|p| p.cell_of(x)).collect::<Vec<_>>()))
}

/// `E_μ[f | Ξ]`: the weighted cell average on each cell.
pub fn cond_expect(sys: &FiniteSystem, f: &Observable, part: &Partition) -> Result<Observable> {
    f.check_len(sys.n())?;
    let weights = part.cell_weights(sys);
    if let Some(c) = weights.iter().position(Zero::is_zero) {
        return Err(Error::ZeroWeightCell { cell: c });
    }
    let means: Vec<Q> = part
        .cells()
        .iter()
        .zip(&weights)
        .map(|(cell, w)| {
            let s: Q = cell.iter().map(|&x| f.get(x) * sys.weight(x)).sum();
            s / w
        })
        .collect();
    Ok(Observable::new(
        (0..sys.n()).map(|x| means[part.cell_of(x)].clone()).collect(),
    ))
}

/// True iff `f` is constant on every cell.
pub fn is_measurable(f: &Observable, part: &Partition) -> bool {
    part.cells()
        .iter()
        .all(|c| c.iter().all(|&x| f.get(x) == f.get(c[0])))
}

/// Indicator observables of the cells.
pub fn cell_indicators(part: &Partition) -> Vec<Observable> {
    part.cells()
        .iter()
        .map(|c| Observable::indicator_of(part.n(), c))
        .collect()
}
