//! Pleasant factors, the one-step Furstenberg extension and its iteration.

use num_traits::Zero;
use rayon::prelude::*;

use crate::averages::{exact_limit, indicator_basis_limits};
use crate::error::{Error, Result};
use crate::factor::{
    cond_expect, difference_isotropy, is_measurable, isotropy_partition, join, Partition, SubgroupSpec,
};
use crate::joining::furstenberg_joining;
use crate::observable::Observable;
use crate::rational::{self, Q};
use crate::system::FiniteSystem;

pub const DEFAULT_BUDGET: usize = 1_000_000;

/// `Σ^{T_1}` followed by `Σ^{T_i = T_1}` for `i = 2..d`.
pub fn pleasant_constituents(sys: &FiniteSystem) -> Vec<Partition> {
    let mut parts = vec![isotropy_partition(sys, &SubgroupSpec::action(sys, 0))];
    parts.extend((1..sys.d()).map(|i| difference_isotropy(sys, i, 0)));
    parts
}

pub fn pleasant_factor(sys: &FiniteSystem) -> Partition {
    join(&pleasant_constituents(sys))
}

/// The basis tuple `(1_{x_1} - E[1_{x_1} | Ξ], 1_{others...})` with the
/// largest limit norm, and that limit.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PleasantWitness {
    pub x1: usize,
    pub others: Vec<usize>,
    pub limit: Observable,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PleasantnessReport {
    pub pleasant: bool,
    /// Squared `L²` norm of the worst basis limit.
    pub defect_sq: Q,
    pub witness: Option<PleasantWitness>,
    pub constituents: Vec<Partition>,
    pub factor: Partition,
    pub tuples_checked: u128,
}

impl PleasantnessReport {
    pub fn defect(&self) -> f64 {
        rational::to_f64(&self.defect_sq).sqrt()
    }

    /// The defect itself when its square is a rational square.
    pub fn defect_exact(&self) -> Option<Q> {
        let (n, d) = (self.defect_sq.numer(), self.defect_sq.denom());
        let (rn, rd) = (n.sqrt(), d.sqrt());
        (&rn * &rn == *n && &rd * &rd == *d).then(|| Q::new(rn, rd))
    }

    /// `p/q`, or `sqrt(p/q)` when the defect is irrational.
    pub fn defect_string(&self) -> String {
        match self.defect_exact() {
            Some(v) => rational::format(&v),
            None => format!("sqrt({})", rational::format(&self.defect_sq)),
        }
    }
}

fn check_budget(sys: &FiniteSystem, budget: usize) -> Result<()> {
    let tuples = (sys.n() as u128).checked_pow(sys.d() as u32);
    if tuples.is_none_or(|t| t > budget as u128) {
        return Err(Error::BudgetExceeded {
            states: sys.n(),
            actions: sys.d(),
            budget,
        });
    }
    Ok(())
}

pub fn is_pleasant(sys: &FiniteSystem) -> Result<PleasantnessReport> {
    is_pleasant_within(sys, DEFAULT_BUDGET)
}

/// Maximises `‖exact_limit(1_{x_1} - E[1_{x_1}|Ξ], 1_{x_2}, ..., 1_{x_d})‖²`
/// over all indicator tuples. Ties go to the smallest `(x_1, x_2, ...)`.
pub fn is_pleasant_within(sys: &FiniteSystem, budget: usize) -> Result<PleasantnessReport> {
    check_budget(sys, budget)?;
    let constituents = pleasant_constituents(sys);
    let factor = join(&constituents);
    let n = sys.n();
    let cell_weights = factor.cell_weights(sys);
    let candidates: Vec<usize> = (0..n)
        .filter(|&x| {
            let c = factor.cell_of(x);
            !sys.weight(x).is_zero() && factor.cells()[c].len() > 1 && !cell_weights[c].is_zero()
        })
        .collect();
    let best = candidates
        .par_iter()
        .map(|&x1| -> Result<Option<(Q, usize, Vec<usize>)>> {
            let e = Observable::indicator(n, x1);
            let f1 = e.sub(&cond_expect_lenient(sys, &e, &factor));
            let limits = indicator_basis_limits(sys, &f1)?;
            let (v, key) = limits.max_norm_sq(sys);
            Ok(key.map(|k| (v, x1, k)))
        })
        .collect::<Result<Vec<_>>>()?
        .into_iter()
        .flatten()
        .fold(None::<(Q, usize, Vec<usize>)>, |acc, cand| match acc {
            Some(a) if a.0 > cand.0 || (a.0 == cand.0 && (a.1, &a.2) <= (cand.1, &cand.2)) => Some(a),
            _ => Some(cand),
        });
    let (defect_sq, witness) = match best {
        Some((v, x1, others)) if !v.is_zero() => {
            let mut fs = vec![{
                let e = Observable::indicator(n, x1);
                e.sub(&cond_expect_lenient(sys, &e, &factor))
            }];
            fs.extend(others.iter().map(|&y| Observable::indicator(n, y)));
            let limit = exact_limit(sys, &fs)?;
            (v, Some(PleasantWitness { x1, others, limit }))
        }
        _ => (rational::zero(), None),
    };
    Ok(PleasantnessReport {
        pleasant: witness.is_none(),
        defect_sq,
        witness,
        constituents,
        factor,
        tuples_checked: (n as u128).pow(sys.d() as u32),
    })
}

/// Conditional expectation treating zero-weight cells as zero.
fn cond_expect_lenient(sys: &FiniteSystem, f: &Observable, part: &Partition) -> Observable {
    match cond_expect(sys, f, part) {
        Ok(g) => g,
        Err(_) => {
            let weights = part.cell_weights(sys);
            let mut values = vec![rational::zero(); sys.n()];
            for (cell, w) in part.cells().iter().zip(&weights) {
                if w.is_zero() {
                    continue;
                }
                let s: Q = cell.iter().map(|&x| f.get(x) * sys.weight(x)).sum();
                let avg = s / w;
                for &x in cell {
                    values[x] = avg.clone();
                }
            }
            Observable::new(values)
        }
    }
}

/// One level of the extension tower: `system` projects onto the previous
/// level through `factor_map`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ExtensionStage {
    pub index: usize,
    pub system: FiniteSystem,
    pub factor_map: Vec<usize>,
    /// Support tuples of `μ^{*d}` on the previous level, one per state.
    pub tuples: Vec<Vec<usize>>,
}

impl ExtensionStage {
    /// Intertwining and measure pushforward against `below`.
    pub fn check_against(&self, below: &FiniteSystem) -> Result<()> {
        let up = &self.system;
        for i in 0..up.d() {
            for j in 0..up.r() {
                for y in 0..up.n() {
                    let lhs = self.factor_map[up.generator(i, j).apply(y)];
                    let rhs = below.generator(i, j).apply(self.factor_map[y]);
                    if lhs != rhs {
                        return Err(Error::Invariant(format!(
                            "projection fails to intertwine action {} axis {} at state {y}",
                            i + 1,
                            j + 1
                        )));
                    }
                }
            }
        }
        let mut pushed = vec![rational::zero(); below.n()];
        for (y, &x) in self.factor_map.iter().enumerate() {
            pushed[x] += up.weight(y);
        }
        if pushed != below.weights() {
            return Err(Error::Invariant(
                "stage weights do not project to the base".into(),
            ));
        }
        Ok(())
    }

    /// Lifts an observable on the previous level.
    pub fn lift(&self, f: &Observable) -> Observable {
        f.pullback(&self.factor_map)
    }
}

/// `(supp μ^{*d}, μ^{*d}, S_{d+1}, S_2, ..., S_d)` projecting by `π_1`.
pub fn one_step_extension(sys: &FiniteSystem) -> ExtensionStage {
    extension_of(sys, 1)
}

fn extension_of(sys: &FiniteSystem, index: usize) -> ExtensionStage {
    let d = sys.d();
    let jm = furstenberg_joining(sys);
    let mut order = vec![d];
    order.extend(1..d);
    let name = format!("{}^({index})", sys.name());
    let (system, tuples) = jm.to_system(&name, &order);
    let factor_map = tuples.iter().map(|t| t[0]).collect();
    ExtensionStage {
        index,
        system,
        factor_map,
        tuples,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TowerStatus {
    PleasantAt(usize),
    BudgetExceeded { stage: usize },
    MaxReached,
}

#[derive(Debug, Clone)]
pub struct ExtensionTower {
    pub stages: Vec<ExtensionStage>,
    /// Report for the last level whose pleasantness was decided.
    pub report: PleasantnessReport,
    pub status: TowerStatus,
}

impl ExtensionTower {
    pub fn stabilized(&self) -> bool {
        matches!(self.status, TowerStatus::PleasantAt(_))
    }

    /// The top level, or `None` for an empty tower.
    pub fn top(&self) -> Option<&FiniteSystem> {
        self.stages.last().map(|s| &s.system)
    }

    /// Composite projection from the top level down to the input system.
    pub fn projection(&self) -> Option<Vec<usize>> {
        let mut stages = self.stages.iter().rev();
        let mut map = stages.next()?.factor_map.clone();
        for s in stages {
            map = map.into_iter().map(|y| s.factor_map[y]).collect();
        }
        Some(map)
    }
}

/// Extends until pleasant, `max_m` stages are built, or a level exceeds
/// `budget` states (or `budget` basis tuples when deciding pleasantness).
pub fn iterate_extensions(sys: &FiniteSystem, max_m: usize, budget: usize) -> Result<ExtensionTower> {
    if max_m == 0 {
        return Err(Error::Malformed("max_m must be at least 1".into()));
    }
    let mut report = is_pleasant_within(sys, budget)?;
    if report.pleasant {
        return Ok(ExtensionTower {
            stages: Vec::new(),
            report,
            status: TowerStatus::PleasantAt(0),
        });
    }
    let mut stages: Vec<ExtensionStage> = Vec::new();
    for m in 1..=max_m {
        let below = stages.last().map_or(sys, |s| &s.system);
        let bound = (below.n() as u128) * u128::from(below.full_period_box().volume());
        if bound > budget as u128 {
            return Ok(ExtensionTower {
                stages,
                report,
                status: TowerStatus::BudgetExceeded { stage: m },
            });
        }
        let stage = extension_of(below, m);
        stage.check_against(below)?;
        let next = match is_pleasant_within(&stage.system, budget) {
            Ok(r) => r,
            Err(Error::BudgetExceeded { .. }) => {
                stages.push(stage);
                return Ok(ExtensionTower {
                    stages,
                    report,
                    status: TowerStatus::BudgetExceeded { stage: m },
                });
            }
            Err(e) => return Err(e),
        };
        stages.push(stage);
        report = next;
        if report.pleasant {
            return Ok(ExtensionTower {
                stages,
                report,
                status: TowerStatus::PleasantAt(m),
            });
        }
    }
    Ok(ExtensionTower {
        stages,
        report,
        status: TowerStatus::MaxReached,
    })
}

/// Writes `f` as `Σ_k Π_i g_{i,k}` with `g_{i,k}` measurable for
/// `constituents[i]`, one tuple per join cell where `f` is nonzero.
pub fn pleasant_decompose(
    sys: &FiniteSystem,
    f: &Observable,
    constituents: &[Partition],
) -> Result<Vec<Vec<Observable>>> {
    let n = sys.n();
    f.check_len(n)?;
    if constituents.is_empty() {
        return Err(Error::Malformed("no constituent partitions".into()));
    }
    for p in constituents {
        if p.n() != n {
            return Err(Error::DimensionMismatch {
                expected: n,
                got: p.n(),
            });
        }
    }
    let joined = join(constituents);
    if !is_measurable(f, &joined) {
        let cell = joined
            .cells()
            .iter()
            .position(|c| c.iter().any(|&x| f.get(x) != f.get(c[0])))
            .expect("a non-measurable observable varies on some cell");
        return Err(Error::NotMeasurable { cell });
    }
    if f.is_constant() {
        let c = f.values().first().cloned().unwrap_or_else(rational::zero);
        let mut tuple = vec![Observable::constant(n, c)];
        tuple.extend((1..constituents.len()).map(|_| Observable::one(n)));
        return Ok(vec![tuple]);
    }
    let mut tuples = Vec::new();
    for cell in joined.cells() {
        let x = cell[0];
        let value = f.get(x);
        if value.is_zero() {
            continue;
        }
        let tuple = constituents
            .iter()
            .enumerate()
            .map(|(i, p)| {
                let ind = Observable::indicator_of(n, &p.cells()[p.cell_of(x)]);
                if i == 0 {
                    ind.scale(value)
                } else {
                    ind
                }
            })
            .collect();
        tuples.push(tuple);
    }
    Ok(tuples)
}

fn invariant_under(f: &Observable, perms: impl IntoIterator<Item = crate::system::Perm>) -> bool {
    perms.into_iter().all(|p| f.compose(&p) == *f)
}

/// `Σ_k g_{1,k} · exact_limit_{T_2..T_d}(g_{2,k} f_2, ..., g_{d,k} f_d)`,
/// checked for equality against `exact_limit(Σ_k Π_i g_{i,k}, f_2, ..., f_d)`.
pub fn reduce_pleasant_limit(
    sys: &FiniteSystem,
    tuples: &[Vec<Observable>],
    rest: &[Observable],
) -> Result<Observable> {
    let n = sys.n();
    let d = sys.d();
    if rest.len() + 1 != d {
        return Err(Error::DimensionMismatch {
            expected: d - 1,
            got: rest.len(),
        });
    }
    rest.iter().try_for_each(|f| f.check_len(n))?;
    for (k, t) in tuples.iter().enumerate() {
        if t.len() != d {
            return Err(Error::DimensionMismatch {
                expected: d,
                got: t.len(),
            });
        }
        t.iter().try_for_each(|g| g.check_len(n))?;
        if !invariant_under(&t[0], (0..sys.r()).map(|j| sys.generator(0, j).clone())) {
            return Err(Error::InvarianceViolated { tuple: k, slot: 1 });
        }
        for (i, g) in t.iter().enumerate().skip(1) {
            let diffs = (0..sys.r()).map(|j| sys.generator(i, j).compose(&sys.generator(0, j).inverse()));
            if !invariant_under(g, diffs) {
                return Err(Error::InvarianceViolated {
                    tuple: k,
                    slot: i + 1,
                });
            }
        }
    }
    let lower = (d > 1).then(|| sys.restrict_actions(&(1..d).collect::<Vec<_>>()));
    let mut reduced = Observable::zero(n);
    let mut f1 = Observable::zero(n);
    for t in tuples {
        let term = match &lower {
            Some(lower) => {
                let gs: Vec<Observable> = t[1..].iter().zip(rest).map(|(g, f)| g.mul(f)).collect();
                t[0].mul(&exact_limit(lower, &gs)?)
            }
            None => t[0].clone(),
        };
        reduced = reduced.add(&term);
        f1 = f1.add(&t.iter().skip(1).fold(t[0].clone(), |acc, g| acc.mul(g)));
    }
    let mut fs = vec![f1];
    fs.extend_from_slice(rest);
    let direct = exact_limit(sys, &fs)?;
    if direct != reduced {
        return Err(Error::Invariant(
            "reduced limit differs from the direct limit".into(),
        ));
    }
    Ok(reduced)
}
