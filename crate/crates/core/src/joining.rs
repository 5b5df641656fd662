//! Self-joinings on finite products `X^k`.
//!
//! Joined measures are sparse maps from index tuples to exact masses. The
//! actions they carry act coordinatewise, each coordinate moved by one of
//! the base actions `T_i` or left fixed, which covers the Furstenberg
//! actions `S_i = T_i^{×d}`, `S_{d+1} = T_1 × ... × T_d` and every Host–Kra
//! lift.

use std::collections::{BTreeMap, HashMap};
use std::sync::Arc;

use num_traits::Zero;

use crate::averages::{check_tuple, indicator_basis_limits};
use crate::error::{Error, Result};
use crate::factor::{difference_isotropy, isotropy_partition, orbit_partition, Partition, SubgroupSpec};
use crate::observable::Observable;
use crate::rational::{self, Q};
use crate::system::{FiniteSystem, Perm};

/// A coordinatewise product of base actions: coordinate `c` moves by
/// `T_{coords[c]}`, or stays fixed when `None`.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct ProductAction {
    pub name: String,
    pub coords: Vec<Option<usize>>,
}

impl ProductAction {
    pub fn new(name: impl Into<String>, coords: Vec<Option<usize>>) -> Self {
        ProductAction {
            name: name.into(),
            coords,
        }
    }

    pub fn apply_axis(&self, base: &FiniteSystem, axis: usize, tuple: &[usize]) -> Vec<usize> {
        tuple
            .iter()
            .zip(&self.coords)
            .map(|(&x, c)| match c {
                Some(i) => base.generator(*i, axis).apply(x),
                None => x,
            })
            .collect()
    }

    pub fn apply_pow(&self, base: &FiniteSystem, n: &[i64], tuple: &[usize]) -> Vec<usize> {
        tuple
            .iter()
            .zip(&self.coords)
            .map(|(&x, c)| match c {
                Some(i) => (0..base.r()).fold(x, |y, j| base.generator(*i, j).pow_apply(y, n[j])),
                None => x,
            })
            .collect()
    }

    /// Concatenation `A × B` on `X^{k+l}`.
    pub fn product(&self, other: &ProductAction, name: impl Into<String>) -> ProductAction {
        let mut coords = self.coords.clone();
        coords.extend_from_slice(&other.coords);
        ProductAction::new(name, coords)
    }
}

/// An exact probability measure on `X^k` with coordinatewise actions.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct JoinedMeasure {
    base: Arc<FiniteSystem>,
    power: usize,
    mass: BTreeMap<Vec<usize>, Q>,
    actions: Vec<ProductAction>,
}

impl JoinedMeasure {
    /// Zero masses are dropped.
    pub fn new(
        base: Arc<FiniteSystem>,
        power: usize,
        mass: BTreeMap<Vec<usize>, Q>,
        actions: Vec<ProductAction>,
    ) -> Self {
        let mass = mass.into_iter().filter(|(_, m)| !m.is_zero()).collect();
        JoinedMeasure {
            base,
            power,
            mass,
            actions,
        }
    }

    pub fn base(&self) -> &FiniteSystem {
        &self.base
    }

    pub fn base_arc(&self) -> Arc<FiniteSystem> {
        Arc::clone(&self.base)
    }

    pub fn power(&self) -> usize {
        self.power
    }

    pub fn mass(&self) -> &BTreeMap<Vec<usize>, Q> {
        &self.mass
    }

    pub fn mass_of(&self, tuple: &[usize]) -> Q {
        self.mass.get(tuple).cloned().unwrap_or_else(rational::zero)
    }

    pub fn actions(&self) -> &[ProductAction] {
        &self.actions
    }

    pub fn support_size(&self) -> usize {
        self.mass.len()
    }

    pub fn total_mass(&self) -> Q {
        self.mass.values().sum()
    }

    pub fn marginal(&self, coord: usize) -> Vec<Q> {
        let mut m = vec![rational::zero(); self.base.n()];
        for (t, w) in &self.mass {
            m[t[coord]] += w;
        }
        m
    }

    pub fn marginals_match_base(&self) -> bool {
        (0..self.power).all(|c| self.marginal(c) == self.base.weights())
    }

    /// Image of the mass under one axis generator of `action`.
    pub fn pushforward(&self, action: &ProductAction, axis: usize) -> BTreeMap<Vec<usize>, Q> {
        self.mass
            .iter()
            .map(|(t, w)| (action.apply_axis(&self.base, axis, t), w.clone()))
            .collect()
    }

    pub fn is_invariant_under(&self, action: &ProductAction) -> bool {
        (0..self.base.r()).all(|j| self.pushforward(action, j) == self.mass)
    }

    /// Names of stored actions that fail to preserve the mass.
    pub fn invariance_failures(&self) -> Vec<String> {
        self.actions
            .iter()
            .filter(|a| !self.is_invariant_under(a))
            .map(|a| a.name.clone())
            .collect()
    }

    pub fn check_invariants(&self) -> Result<()> {
        if self.mass.values().any(|m| m < &rational::zero()) {
            return Err(Error::Invariant("negative joined mass".into()));
        }
        if self.total_mass() != rational::one() {
            return Err(Error::Invariant(format!(
                "joined mass totals {}",
                self.total_mass()
            )));
        }
        if !self.marginals_match_base() {
            return Err(Error::Invariant(
                "a marginal differs from the base measure".into(),
            ));
        }
        let bad = self.invariance_failures();
        if !bad.is_empty() {
            return Err(Error::Invariant(format!("mass not invariant under {bad:?}")));
        }
        Ok(())
    }

    /// The support as a finite system carrying the listed stored actions.
    /// States are the support tuples in lexicographic order.
    pub fn to_system(&self, name: &str, actions: &[usize]) -> (FiniteSystem, Vec<Vec<usize>>) {
        let tuples: Vec<Vec<usize>> = self.mass.keys().cloned().collect();
        let index: HashMap<&Vec<usize>, usize> = tuples.iter().enumerate().map(|(k, t)| (t, k)).collect();
        let r = self.base.r();
        let mut perms = Vec::with_capacity(actions.len() * r);
        for &a in actions {
            for j in 0..r {
                let perm = tuples
                    .iter()
                    .map(|t| index[&self.actions[a].apply_axis(&self.base, j, t)])
                    .collect();
                perms.push(perm);
            }
        }
        let labels = tuples
            .iter()
            .map(|t| {
                let parts: Vec<String> = t.iter().map(|&x| self.base.label(x)).collect();
                format!("({})", parts.join(","))
            })
            .collect();
        let weights = self.mass.values().cloned().collect();
        let sys = FiniteSystem::from_parts(name, weights, r, actions.len(), perms, Some(labels))
            .expect("support of an invariant joined measure is a valid system");
        (sys, tuples)
    }
}

/// `S_1..S_d` and `S_{d+1}` on `X^d`.
pub fn furstenberg_actions(d: usize) -> Vec<ProductAction> {
    let mut actions: Vec<ProductAction> = (0..d)
        .map(|i| ProductAction::new(format!("S_{}", i + 1), vec![Some(i); d]))
        .collect();
    actions.push(ProductAction::new(
        format!("S_{}", d + 1),
        (0..d).map(Some).collect(),
    ));
    actions
}

/// `μ^{*d}`: the period-box average of `(S_{d+1}^n)_* Δ_* μ`.
pub fn furstenberg_joining(sys: &FiniteSystem) -> JoinedMeasure {
    furstenberg_joining_from(sys, &vec![0; sys.r()])
}

/// As [`furstenberg_joining`], averaging over the period box based at `base`.
pub fn furstenberg_joining_from(sys: &FiniteSystem, base: &[i64]) -> JoinedMeasure {
    let period = sys.full_period_box();
    let scale = rational::q(1, period.volume() as i64);
    let mut mass: BTreeMap<Vec<usize>, Q> = BTreeMap::new();
    for n in period.points_from(base) {
        let perms: Vec<Perm> = (0..sys.d()).map(|i| sys.action_perm(i, &n)).collect();
        for x in 0..sys.n() {
            if sys.weight(x).is_zero() {
                continue;
            }
            let t: Vec<usize> = perms.iter().map(|p| p.apply(x)).collect();
            *mass.entry(t).or_insert_with(rational::zero) += sys.weight(x) * &scale;
        }
    }
    JoinedMeasure::new(Arc::new(sys.clone()), sys.d(), mass, furstenberg_actions(sys.d()))
}

/// `∫ Π_i f_i ∘ π_i · g d(jm)`.
pub fn joining_integral(jm: &JoinedMeasure, fs: &[Observable], g: impl Fn(&[usize]) -> Q) -> Result<Q> {
    if fs.len() != jm.power() {
        return Err(Error::DimensionMismatch {
            expected: jm.power(),
            got: fs.len(),
        });
    }
    fs.iter().try_for_each(|f| f.check_len(jm.base().n()))?;
    let mut total = rational::zero();
    for (t, w) in jm.mass() {
        let mut term = w.clone();
        for (f, &x) in fs.iter().zip(t) {
            term *= f.get(x);
            if term.is_zero() {
                break;
            }
        }
        if !term.is_zero() {
            term *= g(t);
            total += term;
        }
    }
    Ok(total)
}

/// A nonvanishing joining integral: `f_i = 1_{states[i-2]}` for `i ≥ 2` and
/// `g` the indicator of `S_{d+1}`-orbit cell `cell`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct JoiningWitness {
    pub states: Vec<usize>,
    pub cell: Vec<Vec<usize>>,
    pub value: Q,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct VdcCondition {
    /// Every joining integral with this `f_1` vanishes.
    pub holds: bool,
    pub witness: Option<JoiningWitness>,
    /// When `holds`, whether every indicator-basis limit with this `f_1`
    /// is zero; `None` when the condition fails.
    pub limits_vanish: Option<bool>,
}

/// Orbit cells of `S_{d+1}` on the support of `μ^{*d}`, as tuple lists.
pub fn diagonal_product_cells(jm: &JoinedMeasure) -> Vec<Vec<Vec<usize>>> {
    let d = jm.power();
    let (support, tuples) = jm.to_system("support", &[d]);
    let gens: Vec<Perm> = support.generators().to_vec();
    let part = orbit_partition(support.n(), &gens);
    part.cells()
        .iter()
        .map(|c| c.iter().map(|&s| tuples[s].clone()).collect())
        .collect()
}

/// Checks the Furstenberg-joining condition for `f_1` over the indicator
/// basis of `f_2..f_d` and the orbit-cell indicators spanning the
/// `S_{d+1}`-invariant functions.
pub fn vdc_condition_check(sys: &FiniteSystem, f1: &Observable) -> Result<VdcCondition> {
    f1.check_len(sys.n())?;
    let jm = furstenberg_joining(sys);
    let cells = diagonal_product_cells(&jm);
    // integral for (cell, x_2..x_d) = Σ_{t ∈ cell, t_i = x_i} mass(t) f_1(t_1)
    let mut sums: BTreeMap<(usize, Vec<usize>), Q> = BTreeMap::new();
    for (c, cell) in cells.iter().enumerate() {
        for t in cell {
            let v = f1.get(t[0]);
            if v.is_zero() {
                continue;
            }
            *sums.entry((c, t[1..].to_vec())).or_insert_with(rational::zero) += jm.mass_of(t) * v;
        }
    }
    let witness = sums
        .into_iter()
        .find(|(_, v)| !v.is_zero())
        .map(|((c, states), value)| JoiningWitness {
            states,
            cell: cells[c].clone(),
            value,
        });
    let holds = witness.is_none();
    let limits_vanish = if holds {
        Some(indicator_basis_limits(sys, f1)?.all_zero())
    } else {
        None
    };
    Ok(VdcCondition {
        holds,
        witness,
        limits_vanish,
    })
}

/// `μ ⊗_Ξ μ`: `mass(x, y) = w(x) w(y) / w(C)` when `x, y` share a cell `C`.
/// Carries the diagonal actions `T_i × T_i`.
pub fn rel_indep_joining(sys: &FiniteSystem, part: &Partition) -> Result<JoinedMeasure> {
    let weights = part.cell_weights(sys);
    if let Some(c) = weights.iter().position(Zero::is_zero) {
        return Err(Error::ZeroWeightCell { cell: c });
    }
    let mut mass = BTreeMap::new();
    for (cell, w) in part.cells().iter().zip(&weights) {
        for &x in cell {
            for &y in cell {
                mass.insert(vec![x, y], sys.weight(x) * sys.weight(y) / w);
            }
        }
    }
    let actions = (0..sys.d())
        .map(|i| ProductAction::new(format!("T_{} x T_{}", i + 1, i + 1), vec![Some(i), Some(i)]))
        .collect();
    Ok(JoinedMeasure::new(Arc::new(sys.clone()), 2, mass, actions))
}

/// The closed form of `T_1^{[d]}` on `X^{P[d]}`: coordinate `α` (a bitmask,
/// bit `i-1` for `i ∈ α`) moves by `T_1` if `α = ∅`, is fixed if
/// `α = {1}`, and moves by `T_i` when `max α = i ≥ 2`.
pub fn host_kra_first_action(d: usize) -> Vec<Option<usize>> {
    (0..1usize << d)
        .map(|alpha| match alpha {
            0 => Some(0),
            1 => None,
            a => Some((usize::BITS - 1 - a.leading_zeros()) as usize),
        })
        .collect()
}

/// The Host–Kra tower `μ^{[1]}, ..., μ^{[d]}` on `X^{2^k}`, each carrying
/// `T_1^{[k]}, ..., T_d^{[k]}`. Coordinates are indexed by subsets of
/// `{1..k}` encoded as bitmasks.
pub fn host_kra_tower(sys: &FiniteSystem) -> Result<Vec<JoinedMeasure>> {
    let d = sys.d();
    let base = Arc::new(sys.clone());
    let mut tower: Vec<JoinedMeasure> = Vec::with_capacity(d);
    for k in 1..=d {
        // previous stage as a finite system with actions T_1^{[k-1]} .. T_d^{[k-1]}
        let (stage, tuples, prev_actions) = match tower.last() {
            None => {
                let actions: Vec<ProductAction> = (0..d)
                    .map(|i| ProductAction::new(format!("T_{}", i + 1), vec![Some(i)]))
                    .collect();
                let tuples = (0..sys.n()).map(|x| vec![x]).collect();
                (sys.clone(), tuples, actions)
            }
            Some(prev) => {
                let all: Vec<usize> = (0..d).collect();
                let (stage, tuples) = prev.to_system(&format!("hk-{}", k - 1), &all);
                (stage, tuples, prev.actions().to_vec())
            }
        };
        let (stage, keep) = stage.normalize_support();
        let tuples: Vec<Vec<usize>> = keep.iter().map(|&s| tuples[s].clone()).collect();
        let part = if k == 1 {
            isotropy_partition(&stage, &SubgroupSpec::action(&stage, 0))
        } else {
            difference_isotropy(&stage, 0, k - 1)
        };
        let pair = rel_indep_joining(&stage, &part)?;
        let mass: BTreeMap<Vec<usize>, Q> = pair
            .mass()
            .iter()
            .map(|(st, w)| {
                let mut t = tuples[st[0]].clone();
                t.extend_from_slice(&tuples[st[1]]);
                (t, w.clone())
            })
            .collect();
        let first = if k == 1 {
            let fixed = ProductAction::new("id", vec![None]);
            prev_actions[0].product(&fixed, "T_1^[1]")
        } else {
            prev_actions[0].product(&prev_actions[k - 1], format!("T_1^[{k}]"))
        };
        let mut actions = vec![first];
        for (i, a) in prev_actions.iter().enumerate().skip(1) {
            actions.push(a.product(a, format!("T_{}^[{k}]", i + 1)));
        }
        tower.push(JoinedMeasure::new(Arc::clone(&base), 1 << k, mass, actions));
    }
    Ok(tower)
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct HkCondition {
    pub holds: bool,
    /// `(x_α)_{α ≠ ∅}` and the nonzero integral.
    pub witness: Option<(Vec<usize>, Q)>,
    pub limits_vanish: Option<bool>,
}

/// Largest `d` for which Host–Kra checks are attempted.
pub const HK_MAX_ACTIONS: usize = 3;

/// Checks `∫ f_1 ∘ π_∅ · Π_{α≠∅} f_α ∘ π_α dμ^{[d]} = 0` over the indicator
/// basis of the `f_α`.
pub fn hk_condition_check(sys: &FiniteSystem, f1: &Observable) -> Result<HkCondition> {
    f1.check_len(sys.n())?;
    if sys.d() > HK_MAX_ACTIONS {
        return Err(Error::BudgetExceeded {
            states: sys.n(),
            actions: sys.d(),
            budget: HK_MAX_ACTIONS,
        });
    }
    let tower = host_kra_tower(sys)?;
    let top = tower.last().expect("d ≥ 1");
    let mut sums: BTreeMap<Vec<usize>, Q> = BTreeMap::new();
    for (t, w) in top.mass() {
        let v = f1.get(t[0]);
        if v.is_zero() {
            continue;
        }
        *sums.entry(t[1..].to_vec()).or_insert_with(rational::zero) += w * v;
    }
    let witness = sums.into_iter().find(|(_, v)| !v.is_zero());
    let holds = witness.is_none();
    let limits_vanish = if holds {
        Some(indicator_basis_limits(sys, f1)?.all_zero())
    } else {
        None
    };
    Ok(HkCondition {
        holds,
        witness,
        limits_vanish,
    })
}

/// `∫ Π_i f_i ∘ T_i^n dμ` averaged over the period box; the defining
/// formula of `μ^{*d}` evaluated on product functions.
pub fn averaged_product_integral(sys: &FiniteSystem, fs: &[Observable]) -> Result<Q> {
    check_tuple(sys, fs)?;
    Ok(crate::averages::exact_limit(sys, fs)?.integral(sys))
}
