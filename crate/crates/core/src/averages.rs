//! Nonconventional averages `(1/|I|) Σ_{n ∈ I + a} Π_i f_i ∘ T_i^n`.
//!
//! On a finite system the map `n -> (T_1^n, ..., T_d^n)` is periodic with
//! the period box `P`, so the Følner limit equals the average over one full
//! period box, whatever the base points. Truncated averages over a box
//! differ from it only on the lattice points left over after tiling the box
//! by copies of `P`, which gives the deviation bound below.
//!
//! Norms are carried as exact squares: `‖·‖_2` is generally irrational.

use std::collections::{BTreeMap, HashMap};

use num_bigint::BigInt;
use num_traits::{One, Zero};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lattice::{self, BoxPoints};
use crate::observable::Observable;
use crate::rational::{self, common_denominator, Q};
use crate::system::{FiniteSystem, PeriodBox, Perm};

/// Lattice points above which sums are split across worker threads.
const PARALLEL_POINTS: usize = 64;

/// A box `a + [0, N_1) x ... x [0, N_r)`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FolnerBox {
    pub edges: Vec<u64>,
    pub base: Vec<i64>,
}

impl FolnerBox {
    pub fn new(edges: Vec<u64>, base: Vec<i64>) -> Result<Self> {
        if edges.len() != base.len() {
            return Err(Error::DimensionMismatch {
                expected: edges.len(),
                got: base.len(),
            });
        }
        if edges.contains(&0) {
            return Err(Error::Malformed("box edges must be positive".into()));
        }
        Ok(FolnerBox { edges, base })
    }

    pub fn at_origin(edges: Vec<u64>) -> Self {
        let base = vec![0; edges.len()];
        FolnerBox { edges, base }
    }

    pub fn of_period(p: &PeriodBox, base: Vec<i64>) -> Self {
        FolnerBox {
            edges: p.periods.clone(),
            base,
        }
    }

    pub fn volume(&self) -> u64 {
        lattice::volume(&self.edges)
    }

    pub fn points(&self) -> BoxPoints {
        BoxPoints::new(&self.base, &self.edges)
    }
}

pub(crate) fn check_tuple(sys: &FiniteSystem, fs: &[Observable]) -> Result<()> {
    if fs.len() != sys.d() {
        return Err(Error::DimensionMismatch {
            expected: sys.d(),
            got: fs.len(),
        });
    }
    fs.iter().try_for_each(|f| f.check_len(sys.n()))
}

/// Observables rescaled to integers over a shared denominator.
struct ScaledTuple {
    nums: Vec<Vec<BigInt>>,
    den: BigInt,
}

impl ScaledTuple {
    fn new(fs: &[Observable]) -> Self {
        let mut den = BigInt::one();
        let nums = fs
            .iter()
            .map(|f| {
                let (nums, d) = common_denominator(f.values());
                den *= d;
                nums
            })
            .collect();
        ScaledTuple { nums, den }
    }

    /// `Σ_{n ∈ points} Π_i nums_i(T_i^n x)` for every `x`.
    fn orbit_sums(&self, sys: &FiniteSystem, points: &[Vec<i64>]) -> Vec<BigInt> {
        let n = sys.n();
        let term = |p: &Vec<i64>| -> Vec<BigInt> {
            let perms: Vec<Perm> = (0..sys.d()).map(|i| sys.action_perm(i, p)).collect();
            (0..n)
                .map(|x| {
                    let mut acc = BigInt::one();
                    for (i, perm) in perms.iter().enumerate() {
                        let v = &self.nums[i][perm.apply(x)];
                        if v.is_zero() {
                            return BigInt::zero();
                        }
                        acc *= v;
                    }
                    acc
                })
                .collect()
        };
        let add = |mut a: Vec<BigInt>, b: Vec<BigInt>| {
            for (s, t) in a.iter_mut().zip(b) {
                *s += t;
            }
            a
        };
        if points.len() >= PARALLEL_POINTS {
            points
                .par_iter()
                .map(term)
                .reduce(|| vec![BigInt::zero(); n], add)
        } else {
            points.iter().map(term).fold(vec![BigInt::zero(); n], add)
        }
    }
}

fn average_over(sys: &FiniteSystem, fs: &[Observable], points: &[Vec<i64>]) -> Observable {
    let scaled = ScaledTuple::new(fs);
    let sums = scaled.orbit_sums(sys, points);
    let den = &scaled.den * BigInt::from(points.len());
    Observable::new(sums.into_iter().map(|s| Q::new(s, den.clone())).collect())
}

/// Average over the lattice points of `bx`.
pub fn truncated_average(sys: &FiniteSystem, fs: &[Observable], bx: &FolnerBox) -> Result<Observable> {
    check_tuple(sys, fs)?;
    if bx.edges.len() != sys.r() {
        return Err(Error::DimensionMismatch {
            expected: sys.r(),
            got: bx.edges.len(),
        });
    }
    let points: Vec<Vec<i64>> = bx.points().collect();
    Ok(average_over(sys, fs, &points))
}

/// Average over an explicit finite set of lattice points.
pub fn truncated_average_over(
    sys: &FiniteSystem,
    fs: &[Observable],
    points: &[Vec<i64>],
) -> Result<Observable> {
    check_tuple(sys, fs)?;
    if points.is_empty() {
        return Err(Error::Malformed("empty averaging set".into()));
    }
    if let Some(p) = points.iter().find(|p| p.len() != sys.r()) {
        return Err(Error::DimensionMismatch {
            expected: sys.r(),
            got: p.len(),
        });
    }
    Ok(average_over(sys, fs, points))
}

/// The Følner limit: the average over one full period box at the origin.
pub fn exact_limit(sys: &FiniteSystem, fs: &[Observable]) -> Result<Observable> {
    check_tuple(sys, fs)?;
    let points: Vec<Vec<i64>> = sys.full_period_box().points().collect();
    Ok(average_over(sys, fs, &points))
}

/// `‖f - g‖_2^2`.
pub fn l2_distance_sq(sys: &FiniteSystem, f: &Observable, g: &Observable) -> Q {
    f.sub(g).l2_norm_sq(sys)
}

/// `B = factor * ‖f_1‖_2` with `factor = 2 Π_{i≥2} ‖f_i‖_∞ (1 - Π_j ⌊N_j/P_j⌋P_j / N_j)`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DeviationBound {
    pub factor: Q,
    pub f1_l2_sq: Q,
}

impl DeviationBound {
    pub fn squared(&self) -> Q {
        &self.factor * &self.factor * &self.f1_l2_sq
    }

    pub fn to_f64(&self) -> f64 {
        rational::to_f64(&self.factor) * rational::to_f64(&self.f1_l2_sq).sqrt()
    }
}

fn sup_product(sys: &FiniteSystem, fs: &[Observable]) -> Q {
    fs[1..].iter().map(|f| f.sup_norm(sys)).product()
}

pub fn deviation_bound(sys: &FiniteSystem, fs: &[Observable], bx: &FolnerBox) -> Result<DeviationBound> {
    check_tuple(sys, fs)?;
    let period = sys.full_period_box();
    let covered: Q = bx
        .edges
        .iter()
        .zip(&period.periods)
        .map(|(&n, &p)| rational::q(((n / p) * p) as i64, n as i64))
        .product();
    let factor = rational::qi(2) * sup_product(sys, fs) * (rational::one() - covered);
    Ok(DeviationBound {
        factor,
        f1_l2_sq: fs[0].l2_norm_sq(sys),
    })
}

/// Truncated average, limit and their exact distance for one box.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AverageReport {
    pub truncated: Observable,
    pub limit: Observable,
    pub deviation_sq: Q,
    pub bound: DeviationBound,
    pub folner_box: FolnerBox,
}

impl AverageReport {
    pub fn within_bound(&self) -> bool {
        self.deviation_sq <= self.bound.squared()
    }
}

pub fn average_report(sys: &FiniteSystem, fs: &[Observable], bx: &FolnerBox) -> Result<AverageReport> {
    let truncated = truncated_average(sys, fs, bx)?;
    let limit = exact_limit(sys, fs)?;
    let deviation_sq = l2_distance_sq(sys, &truncated, &limit);
    Ok(AverageReport {
        truncated,
        limit,
        deviation_sq,
        bound: deviation_bound(sys, fs, bx)?,
        folner_box: bx.clone(),
    })
}

/// `‖avg‖_2 ≤ ‖f_1‖_2 Π_{i≥2} ‖f_i‖_∞`, compared through squares.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ContractiveCheck {
    pub lhs_sq: Q,
    pub rhs_sq: Q,
    pub holds: bool,
}

pub fn contractive_check(sys: &FiniteSystem, fs: &[Observable], bx: &FolnerBox) -> Result<ContractiveCheck> {
    let avg = truncated_average(sys, fs, bx)?;
    let lhs_sq = avg.l2_norm_sq(sys);
    let sup = sup_product(sys, fs);
    let rhs_sq = fs[0].l2_norm_sq(sys) * &sup * &sup;
    let holds = lhs_sq <= rhs_sq;
    Ok(ContractiveCheck {
        lhs_sq,
        rhs_sq,
        holds,
    })
}

fn reduce_mod(m: &[i64], period: &PeriodBox) -> Vec<i64> {
    m.iter()
        .zip(&period.periods)
        .map(|(&v, &p)| v.rem_euclid(p as i64))
        .collect()
}

fn correlation_uncached(sys: &FiniteSystem, fs: &[Observable], m: &[i64]) -> Result<Q> {
    let shifted: Vec<Observable> = fs
        .iter()
        .enumerate()
        .map(|(i, f)| f.mul(&f.compose(&sys.action_perm(i, m))))
        .collect();
    Ok(exact_limit(sys, &shifted)?.integral(sys))
}

/// `γ(m) = lim_n ⟨u_{n+m}, u_n⟩_μ` with `u_n = Π_i f_i ∘ T_i^n`.
pub fn vdc_correlation(sys: &FiniteSystem, fs: &[Observable], m: &[i64]) -> Result<Q> {
    check_tuple(sys, fs)?;
    if m.len() != sys.r() {
        return Err(Error::DimensionMismatch {
            expected: sys.r(),
            got: m.len(),
        });
    }
    correlation_uncached(sys, fs, &reduce_mod(m, &sys.full_period_box()))
}

/// Correlations `γ` memoized by residue modulo the period box.
pub struct Correlations<'a> {
    sys: &'a FiniteSystem,
    fs: &'a [Observable],
    period: PeriodBox,
    cache: BTreeMap<Vec<i64>, Q>,
}

impl<'a> Correlations<'a> {
    pub fn new(sys: &'a FiniteSystem, fs: &'a [Observable]) -> Result<Self> {
        check_tuple(sys, fs)?;
        Ok(Correlations {
            sys,
            fs,
            period: sys.full_period_box(),
            cache: BTreeMap::new(),
        })
    }

    pub fn get(&mut self, m: &[i64]) -> Result<Q> {
        let key = reduce_mod(m, &self.period);
        if let Some(v) = self.cache.get(&key) {
            return Ok(v.clone());
        }
        let v = correlation_uncached(self.sys, self.fs, &key)?;
        self.cache.insert(key, v.clone());
        Ok(v)
    }

    pub fn cached(&self) -> usize {
        self.cache.len()
    }
}

/// `‖lim‖_2^2` against the period-box average of `γ`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct VdcIdentity {
    pub lhs_sq: Q,
    pub rhs_sq: Q,
    pub holds: bool,
}

pub fn vdc_identity_check(sys: &FiniteSystem, fs: &[Observable]) -> Result<VdcIdentity> {
    let lhs_sq = exact_limit(sys, fs)?.l2_norm_sq(sys);
    let mut gamma = Correlations::new(sys, fs)?;
    let period = sys.full_period_box();
    let mut total = rational::zero();
    for delta in period.points() {
        total += gamma.get(&delta)?;
    }
    let rhs_sq = total / rational::qi(period.volume() as i64);
    let holds = lhs_sq == rhs_sq;
    Ok(VdcIdentity {
        lhs_sq,
        rhs_sq,
        holds,
    })
}

/// `exact_limit(f_1, 1_{x_2}, ..., 1_{x_d})` for every indicator tuple at once.
///
/// By multilinearity this determines the limit for every `f_2..f_d`. Entries
/// are integers over the shared denominator `den`; absent keys and absent
/// states are zero.
#[derive(Debug, Clone)]
pub struct BasisLimits {
    pub entries: HashMap<Vec<usize>, BTreeMap<usize, BigInt>>,
    pub den: BigInt,
}

impl BasisLimits {
    pub fn limit(&self, n: usize, key: &[usize]) -> Observable {
        let mut values = vec![rational::zero(); n];
        if let Some(row) = self.entries.get(key) {
            for (&x, v) in row {
                values[x] = Q::new(v.clone(), self.den.clone());
            }
        }
        Observable::new(values)
    }

    pub fn norm_sq(&self, sys: &FiniteSystem, key: &[usize]) -> Q {
        let Some(row) = self.entries.get(key) else {
            return rational::zero();
        };
        let s: Q = row
            .iter()
            .map(|(&x, v)| sys.weight(x) * Q::from_integer(v * v))
            .sum();
        s / Q::from_integer(&self.den * &self.den)
    }

    pub fn all_zero(&self) -> bool {
        self.entries.values().all(|row| row.values().all(Zero::is_zero))
    }

    /// Largest norm with the lexicographically smallest key attaining it.
    pub fn max_norm_sq(&self, sys: &FiniteSystem) -> (Q, Option<Vec<usize>>) {
        let mut keys: Vec<&Vec<usize>> = self.entries.keys().collect();
        keys.sort();
        let mut best = (rational::zero(), None);
        for k in keys {
            let v = self.norm_sq(sys, k);
            if v > best.0 {
                best = (v, Some(k.clone()));
            }
        }
        best
    }
}

pub fn indicator_basis_limits(sys: &FiniteSystem, f1: &Observable) -> Result<BasisLimits> {
    f1.check_len(sys.n())?;
    let (nums, fden) = common_denominator(f1.values());
    let period = sys.full_period_box();
    let mut entries: HashMap<Vec<usize>, BTreeMap<usize, BigInt>> = HashMap::new();
    for p in period.points() {
        let perms: Vec<Perm> = (0..sys.d()).map(|i| sys.action_perm(i, &p)).collect();
        for x in 0..sys.n() {
            let v = &nums[perms[0].apply(x)];
            if v.is_zero() {
                continue;
            }
            let key: Vec<usize> = perms[1..].iter().map(|q| q.apply(x)).collect();
            *entries
                .entry(key)
                .or_default()
                .entry(x)
                .or_insert_with(BigInt::zero) += v;
        }
    }
    Ok(BasisLimits {
        entries,
        den: fden * BigInt::from(period.volume()),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::factor::{cond_expect, isotropy_partition, SubgroupSpec};
    use crate::rational::{q, qi};
    use crate::system::cyclic;

    fn ind(n: usize, x: usize) -> Observable {
        Observable::indicator(n, x)
    }

    #[test]
    fn constants_multiply() {
        let sys = cyclic(5, &[1, 2]);
        let fs = vec![
            Observable::constant(5, q(2, 3)),
            Observable::constant(5, q(-3, 4)),
        ];
        for edges in [1u64, 3, 7] {
            let avg = truncated_average(&sys, &fs, &FolnerBox::new(vec![edges], vec![4]).unwrap()).unwrap();
            assert_eq!(avg, Observable::constant(5, q(-1, 2)));
        }
        assert_eq!(exact_limit(&sys, &fs).unwrap(), Observable::constant(5, q(-1, 2)));
    }

    #[test]
    fn cyclic_four_indicator_average() {
        let sys = cyclic(4, &[1, 2]);
        let fs = vec![ind(4, 0), ind(4, 0)];
        let avg = truncated_average(&sys, &fs, &FolnerBox::at_origin(vec![4])).unwrap();
        assert_eq!(avg, ind(4, 0).scale(&q(1, 4)));
    }

    #[test]
    fn cyclic_five_limit() {
        let sys = cyclic(5, &[1, 2]);
        let lim = exact_limit(&sys, &[ind(5, 0), ind(5, 0)]).unwrap();
        assert_eq!(lim, ind(5, 0).scale(&q(1, 5)));
    }

    #[test]
    fn single_action_limit_is_conditional_expectation() {
        let sys = cyclic(6, &[2]);
        let f = Observable::parse(&["1", "0", "3", "-1", "1/2", "2"]).unwrap();
        let lim = exact_limit(&sys, std::slice::from_ref(&f)).unwrap();
        let part = isotropy_partition(&sys, &SubgroupSpec::action(&sys, 0));
        assert_eq!(lim, cond_expect(&sys, &f, &part).unwrap());
        let full = truncated_average(&sys, std::slice::from_ref(&f), &FolnerBox::at_origin(vec![3])).unwrap();
        assert_eq!(full, lim);
    }

    #[test]
    fn dimension_mismatch() {
        let sys = cyclic(5, &[1, 2]);
        assert_eq!(
            exact_limit(&sys, &[ind(5, 0)]),
            Err(Error::DimensionMismatch { expected: 2, got: 1 })
        );
        assert!(exact_limit(&sys, &[ind(4, 0), ind(5, 0)]).is_err());
    }

    #[test]
    fn deviation_bound_cyclic_five() {
        let sys = cyclic(5, &[1, 2]);
        let fs = vec![ind(5, 0).sub(&Observable::constant(5, q(1, 5))), ind(5, 0)];
        let bx = FolnerBox::at_origin(vec![7]);
        let bound = deviation_bound(&sys, &fs, &bx).unwrap();
        assert_eq!(bound.factor, q(4, 7));
        let report = average_report(&sys, &fs, &bx).unwrap();
        assert!(report.within_bound());
        let full = deviation_bound(&sys, &fs, &FolnerBox::at_origin(vec![10])).unwrap();
        assert_eq!(full.factor, qi(0));
        let exact = average_report(&sys, &fs, &FolnerBox::at_origin(vec![10])).unwrap();
        assert_eq!(exact.truncated, exact.limit);
    }

    #[test]
    fn deviation_bound_shrinks_along_doubling_boxes() {
        let sys = cyclic(7, &[1, 3]);
        let fs = vec![ind(7, 1), ind(7, 2)];
        let mut last = None;
        for k in 0..12 {
            let b = deviation_bound(&sys, &fs, &FolnerBox::at_origin(vec![3u64 << k])).unwrap();
            if let Some(prev) = last {
                assert!(b.factor <= prev);
            }
            last = Some(b.factor);
        }
    }

    #[test]
    fn contractive_examples() {
        let sys = cyclic(5, &[1, 2]);
        let ones = vec![Observable::one(5), Observable::one(5)];
        let c = contractive_check(&sys, &ones, &FolnerBox::at_origin(vec![3])).unwrap();
        assert_eq!((c.lhs_sq.clone(), c.rhs_sq.clone()), (qi(1), qi(1)));
        assert!(c.holds);
        let zero = vec![Observable::zero(5), ind(5, 2)];
        let c = contractive_check(&sys, &zero, &FolnerBox::at_origin(vec![3])).unwrap();
        assert_eq!(c.lhs_sq, qi(0));
        assert!(c.holds);
    }

    /// Brute force `γ(m)`: average over `n` and `x` of the correlation integrand.
    fn brute_gamma(sys: &FiniteSystem, fs: &[Observable], m: i64) -> Q {
        let p = sys.full_period_box().periods[0] as i64;
        let n_states = sys.n();
        let mut total = qi(0);
        for n in 0..p {
            for x in 0..n_states {
                let mut term = sys.weight(x).clone();
                for (i, f) in fs.iter().enumerate() {
                    let g = sys.generator(i, 0);
                    term *= f.get(g.pow_apply(x, n + m)) * f.get(g.pow_apply(x, n));
                }
                total += term;
            }
        }
        total / qi(p)
    }

    #[test]
    fn vdc_correlation_examples() {
        let sys = cyclic(5, &[1, 2]);
        let ones = vec![Observable::one(5), Observable::one(5)];
        assert_eq!(vdc_correlation(&sys, &ones, &[0]).unwrap(), qi(1));
        let zero = vec![Observable::zero(5), ind(5, 3)];
        assert_eq!(vdc_correlation(&sys, &zero, &[2]).unwrap(), qi(0));
        let fs = vec![ind(5, 0), ind(5, 0)];
        // brute force: only x = 0, n = 0 survives at m = 0; m = 1 needs
        // n ≡ -x and n + 1 ≡ -x simultaneously, impossible
        assert_eq!(brute_gamma(&sys, &fs, 1), qi(0));
        assert_eq!(vdc_correlation(&sys, &fs, &[1]).unwrap(), qi(0));
        assert_eq!(brute_gamma(&sys, &fs, 0), q(1, 25));
        assert_eq!(vdc_correlation(&sys, &fs, &[0]).unwrap(), q(1, 25));
        for m in -6..6 {
            assert_eq!(
                vdc_correlation(&sys, &fs, &[m]).unwrap(),
                brute_gamma(&sys, &fs, m)
            );
        }
    }

    #[test]
    fn vdc_identity_examples() {
        let sys = cyclic(5, &[1, 2]);
        let consts = vec![Observable::constant(5, q(2, 3)), Observable::constant(5, qi(3))];
        let v = vdc_identity_check(&sys, &consts).unwrap();
        assert!(v.holds);
        assert_eq!(v.lhs_sq, qi(4));
        let zero = vec![Observable::zero(5), ind(5, 1)];
        let v = vdc_identity_check(&sys, &zero).unwrap();
        assert!(v.holds && v.lhs_sq == qi(0));
        let fs = vec![ind(5, 0).sub(&Observable::constant(5, q(1, 5))), ind(5, 0)];
        let v = vdc_identity_check(&sys, &fs).unwrap();
        // independent side: average of brute-force γ over the period
        let rhs: Q = (0..5).map(|m| brute_gamma(&sys, &fs, m)).sum::<Q>() / qi(5);
        assert_eq!(v.rhs_sq, rhs);
        assert!(v.holds);
    }

    #[test]
    fn correlation_cache_uses_residues() {
        let sys = cyclic(5, &[1, 2]);
        let fs = vec![ind(5, 0), ind(5, 1)];
        let mut c = Correlations::new(&sys, &fs).unwrap();
        let a = c.get(&[2]).unwrap();
        assert_eq!(c.get(&[7]).unwrap(), a);
        assert_eq!(c.get(&[-3]).unwrap(), a);
        assert_eq!(c.cached(), 1);
    }

    #[test]
    fn basis_limits_match_direct_limits() {
        let sys = cyclic(6, &[1, 2, 3]);
        let f1 = Observable::parse(&["1", "-2", "0", "1/3", "5", "-1/2"]).unwrap();
        let grouped = indicator_basis_limits(&sys, &f1).unwrap();
        for x2 in 0..6 {
            for x3 in 0..6 {
                let direct = exact_limit(&sys, &[f1.clone(), ind(6, x2), ind(6, x3)]).unwrap();
                assert_eq!(grouped.limit(6, &[x2, x3]), direct);
                assert_eq!(grouped.norm_sq(&sys, &[x2, x3]), direct.l2_norm_sq(&sys));
            }
        }
    }

    #[test]
    fn explicit_point_sets() {
        let sys = cyclic(5, &[1, 2]);
        let fs = vec![ind(5, 0), Observable::one(5)];
        let pts: Vec<Vec<i64>> = vec![vec![0], vec![3], vec![-1]];
        let avg = truncated_average_over(&sys, &fs, &pts).unwrap();
        // x + n ≡ 0 for n ∈ {0, 3, -1}
        assert_eq!(avg.values()[0], q(1, 3));
        assert_eq!(avg.values()[2], q(1, 3));
        assert_eq!(avg.values()[1], q(1, 3));
        assert_eq!(avg.values()[3], qi(0));
        assert!(truncated_average_over(&sys, &fs, &[]).is_err());
    }
}
