//! Finite measure-preserving `Z^{rd}`-systems.
//!
//! A system is a weighted finite state space together with `r * d`
//! commuting, weight-preserving permutations. Generator `(i, j)` is the
//! axis-`j` generator of the `i`-th `Z^r`-action `T_i`; both indices are
//! zero-based in this API and one-based in the on-disk format.

use num_integer::Integer;
use num_traits::{Signed, Zero};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lattice::BoxPoints;
use crate::rational::{self, Q};

/// A permutation of `{0..n-1}` with its inverse and cycle structure.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Perm {
    map: Vec<usize>,
    inv: Vec<usize>,
    cycle_of: Vec<usize>,
    pos: Vec<usize>,
    cycles: Vec<Vec<usize>>,
}

impl Perm {
    pub fn new(map: Vec<usize>) -> Result<Self> {
        let n = map.len();
        let mut inv = vec![usize::MAX; n];
        for (x, &y) in map.iter().enumerate() {
            if y >= n || inv[y] != usize::MAX {
                return Err(Error::Malformed(format!("not a permutation of 0..{n}: {map:?}")));
            }
            inv[y] = x;
        }
        let mut cycle_of = vec![usize::MAX; n];
        let mut pos = vec![0; n];
        let mut cycles = Vec::new();
        for start in 0..n {
            if cycle_of[start] != usize::MAX {
                continue;
            }
            let id = cycles.len();
            let mut cycle = Vec::new();
            let mut x = start;
            while cycle_of[x] == usize::MAX {
                cycle_of[x] = id;
                pos[x] = cycle.len();
                cycle.push(x);
                x = map[x];
            }
            cycles.push(cycle);
        }
        Ok(Perm {
            map,
            inv,
            cycle_of,
            pos,
            cycles,
        })
    }

    pub fn identity(n: usize) -> Self {
        Perm::new((0..n).collect()).expect("identity is a permutation")
    }

    pub fn len(&self) -> usize {
        self.map.len()
    }

    pub fn is_empty(&self) -> bool {
        self.map.is_empty()
    }

    pub fn as_slice(&self) -> &[usize] {
        &self.map
    }

    pub fn apply(&self, x: usize) -> usize {
        self.map[x]
    }

    pub fn apply_inv(&self, x: usize) -> usize {
        self.inv[x]
    }

    /// `self^k (x)` in O(1) via the cycle tables; `k` may be negative.
    pub fn pow_apply(&self, x: usize, k: i64) -> usize {
        let cycle = &self.cycles[self.cycle_of[x]];
        let len = cycle.len() as i64;
        let idx = (self.pos[x] as i64 + k).rem_euclid(len);
        cycle[idx as usize]
    }

    pub fn pow(&self, k: i64) -> Perm {
        Perm::new((0..self.len()).map(|x| self.pow_apply(x, k)).collect()).expect("power of a permutation")
    }

    pub fn inverse(&self) -> Perm {
        Perm::new(self.inv.clone()).expect("inverse of a permutation")
    }

    /// `self ∘ other`: apply `other` first.
    pub fn compose(&self, other: &Perm) -> Perm {
        Perm::new(other.map.iter().map(|&y| self.map[y]).collect()).expect("composition of permutations")
    }

    pub fn is_identity(&self) -> bool {
        self.map.iter().enumerate().all(|(x, &y)| x == y)
    }

    /// Order as the lcm of cycle lengths.
    pub fn order(&self) -> u64 {
        self.cycles.iter().fold(1u64, |acc, c| acc.lcm(&(c.len() as u64)))
    }

    pub fn cycles(&self) -> &[Vec<usize>] {
        &self.cycles
    }
}

/// An element of `Z^{rd}`, laid out action-major: `coords[i * r + j]`.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct GroupElement {
    pub coords: Vec<i64>,
}

impl GroupElement {
    pub fn zero(r: usize, d: usize) -> Self {
        GroupElement {
            coords: vec![0; r * d],
        }
    }

    pub fn new(coords: Vec<i64>) -> Self {
        GroupElement { coords }
    }

    /// `alpha_i(n)`: the element acting as `T_i^n`.
    pub fn on_action(r: usize, d: usize, action: usize, n: &[i64]) -> Self {
        assert_eq!(n.len(), r);
        let mut g = Self::zero(r, d);
        g.coords[action * r..(action + 1) * r].copy_from_slice(n);
        g
    }

    /// `alpha_i(n) - alpha_j(n)`.
    pub fn difference(r: usize, d: usize, i: usize, j: usize, n: &[i64]) -> Self {
        let mut g = Self::on_action(r, d, i, n);
        for (k, v) in n.iter().enumerate() {
            g.coords[j * r + k] -= v;
        }
        g
    }

    pub fn add(&self, other: &GroupElement) -> GroupElement {
        GroupElement {
            coords: self
                .coords
                .iter()
                .zip(&other.coords)
                .map(|(a, b)| a + b)
                .collect(),
        }
    }

    pub fn neg(&self) -> GroupElement {
        GroupElement {
            coords: self.coords.iter().map(|a| -a).collect(),
        }
    }
}

/// Per-axis periods of the orbit map `n -> (T_i^n)_{i in actions}`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PeriodBox {
    pub periods: Vec<u64>,
}

impl PeriodBox {
    pub fn volume(&self) -> u64 {
        self.periods.iter().product()
    }

    pub fn points(&self) -> BoxPoints {
        BoxPoints::new(&vec![0; self.periods.len()], &self.periods)
    }

    pub fn points_from(&self, base: &[i64]) -> BoxPoints {
        BoxPoints::new(base, &self.periods)
    }
}

/// On-disk generator record; `action` and `axis` are one-based.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GeneratorSpec {
    pub action: usize,
    pub axis: usize,
    pub perm: Vec<usize>,
}

/// On-disk system definition.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SystemDescription {
    pub name: String,
    pub r: usize,
    pub d: usize,
    pub n: usize,
    pub weights: Vec<String>,
    pub generators: Vec<GeneratorSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub labels: Option<Vec<String>>,
}

/// A validated finite measure-preserving `Z^{rd}`-system.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FiniteSystem {
    name: String,
    weights: Vec<Q>,
    r: usize,
    d: usize,
    generators: Vec<Perm>,
    labels: Option<Vec<String>>,
}

/// Parses and validates a system description.
pub fn validate_system(desc: &SystemDescription) -> Result<FiniteSystem> {
    if desc.weights.len() != desc.n {
        return Err(Error::Malformed(format!(
            "{} weights for {} states",
            desc.weights.len(),
            desc.n
        )));
    }
    if desc.generators.len() != desc.r * desc.d {
        return Err(Error::Malformed(format!(
            "expected r*d = {} generators, got {}",
            desc.r * desc.d,
            desc.generators.len()
        )));
    }
    let weights = desc
        .weights
        .iter()
        .map(|w| rational::parse(w))
        .collect::<Result<Vec<_>>>()?;
    let mut slots: Vec<Option<Vec<usize>>> = vec![None; desc.r * desc.d];
    for g in &desc.generators {
        if g.action == 0 || g.action > desc.d || g.axis == 0 || g.axis > desc.r {
            return Err(Error::Malformed(format!(
                "generator index (action {}, axis {}) out of range",
                g.action, g.axis
            )));
        }
        let slot = &mut slots[(g.action - 1) * desc.r + (g.axis - 1)];
        if slot.is_some() {
            return Err(Error::Malformed(format!(
                "duplicate generator (action {}, axis {})",
                g.action, g.axis
            )));
        }
        *slot = Some(g.perm.clone());
    }
    let perms = slots.into_iter().map(|s| s.expect("all slots filled")).collect();
    FiniteSystem::from_parts(
        desc.name.clone(),
        weights,
        desc.r,
        desc.d,
        perms,
        desc.labels.clone(),
    )
}

impl FiniteSystem {
    /// Builds and validates a system; `perms[i * r + j]` is generator `(i, j)`.
    pub fn from_parts(
        name: impl Into<String>,
        weights: Vec<Q>,
        r: usize,
        d: usize,
        perms: Vec<Vec<usize>>,
        labels: Option<Vec<String>>,
    ) -> Result<Self> {
        let n = weights.len();
        if r == 0 || d == 0 {
            return Err(Error::Malformed(
                "rank r and action count d must be positive".into(),
            ));
        }
        if perms.len() != r * d {
            return Err(Error::Malformed(format!(
                "expected r*d = {} generators, got {}",
                r * d,
                perms.len()
            )));
        }
        if let Some(l) = &labels {
            if l.len() != n {
                return Err(Error::Malformed(format!("{} labels for {n} states", l.len())));
            }
        }
        for p in &perms {
            if p.len() != n {
                return Err(Error::Malformed(format!(
                    "generator of length {} on {n} states",
                    p.len()
                )));
            }
        }
        if let Some(x) = weights.iter().position(|w| w.is_negative()) {
            return Err(Error::NonProbabilityWeights(format!(
                "weight of state {x} is negative"
            )));
        }
        let total: Q = weights.iter().sum();
        if total != rational::one() {
            return Err(Error::NonProbabilityWeights(format!("weights sum to {total}")));
        }
        let generators = perms.into_iter().map(Perm::new).collect::<Result<Vec<_>>>()?;
        for (gi, g) in generators.iter().enumerate() {
            if let Some(x) = (0..n).find(|&x| weights[g.apply(x)] != weights[x]) {
                return Err(Error::MeasureNotPreserved {
                    generator: gi,
                    state: x,
                });
            }
        }
        for a in 0..generators.len() {
            for b in a + 1..generators.len() {
                let (ga, gb) = (&generators[a], &generators[b]);
                if let Some(x) = (0..n).find(|&x| ga.apply(gb.apply(x)) != gb.apply(ga.apply(x))) {
                    return Err(Error::NonCommuting {
                        first: a,
                        second: b,
                        state: x,
                    });
                }
            }
        }
        Ok(FiniteSystem {
            name: name.into(),
            weights,
            r,
            d,
            generators,
            labels,
        })
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn n(&self) -> usize {
        self.weights.len()
    }

    pub fn r(&self) -> usize {
        self.r
    }

    pub fn d(&self) -> usize {
        self.d
    }

    pub fn weights(&self) -> &[Q] {
        &self.weights
    }

    pub fn weight(&self, x: usize) -> &Q {
        &self.weights[x]
    }

    pub fn labels(&self) -> Option<&[String]> {
        self.labels.as_deref()
    }

    pub fn label(&self, x: usize) -> String {
        match &self.labels {
            Some(l) => l[x].clone(),
            None => x.to_string(),
        }
    }

    /// Generator `(action, axis)`, zero-based.
    pub fn generator(&self, action: usize, axis: usize) -> &Perm {
        &self.generators[action * self.r + axis]
    }

    pub fn generators(&self) -> &[Perm] {
        &self.generators
    }

    pub fn has_full_support(&self) -> bool {
        self.weights.iter().all(|w| !w.is_zero())
    }

    /// `T^g (x)`.
    pub fn act(&self, g: &GroupElement, x: usize) -> usize {
        assert_eq!(g.coords.len(), self.r * self.d, "group element rank");
        g.coords
            .iter()
            .zip(&self.generators)
            .fold(x, |y, (&k, p)| if k == 0 { y } else { p.pow_apply(y, k) })
    }

    /// `T_i^n` for a single action as a permutation.
    pub fn action_perm(&self, action: usize, n: &[i64]) -> Perm {
        assert_eq!(n.len(), self.r);
        let map = (0..self.n())
            .map(|x| {
                (0..self.r).fold(x, |y, j| {
                    if n[j] == 0 {
                        y
                    } else {
                        self.generator(action, j).pow_apply(y, n[j])
                    }
                })
            })
            .collect();
        Perm::new(map).expect("product of permutations")
    }

    pub fn element_perm(&self, g: &GroupElement) -> Perm {
        Perm::new((0..self.n()).map(|x| self.act(g, x)).collect()).expect("product of permutations")
    }

    /// Periods `P_j = lcm_{i in actions} ord(g_{i,j})`.
    pub fn period_box(&self, actions: &[usize]) -> PeriodBox {
        assert!(!actions.is_empty(), "period box needs at least one action");
        let periods = (0..self.r)
            .map(|j| {
                actions
                    .iter()
                    .fold(1u64, |acc, &i| acc.lcm(&self.generator(i, j).order()))
            })
            .collect();
        PeriodBox { periods }
    }

    pub fn full_period_box(&self) -> PeriodBox {
        self.period_box(&(0..self.d).collect::<Vec<_>>())
    }

    /// `(g_* m)(y) = m(g^{-1} y)`.
    pub fn pushforward(&self, g: &GroupElement, m: &[Q]) -> Vec<Q> {
        assert_eq!(m.len(), self.n());
        let mut out = vec![rational::zero(); m.len()];
        for (x, mass) in m.iter().enumerate() {
            out[self.act(g, x)] = mass.clone();
        }
        out
    }

    /// Drops zero-weight states. Returns the restricted system and, for each
    /// new state, its index in `self`.
    pub fn normalize_support(&self) -> (FiniteSystem, Vec<usize>) {
        let keep: Vec<usize> = (0..self.n()).filter(|&x| !self.weights[x].is_zero()).collect();
        let mut new_index = vec![usize::MAX; self.n()];
        for (k, &x) in keep.iter().enumerate() {
            new_index[x] = k;
        }
        let generators = self
            .generators
            .iter()
            .map(|p| {
                let map = keep.iter().map(|&x| new_index[p.apply(x)]).collect();
                Perm::new(map).expect("support is invariant")
            })
            .collect();
        let sys = FiniteSystem {
            name: self.name.clone(),
            weights: keep.iter().map(|&x| self.weights[x].clone()).collect(),
            r: self.r,
            d: self.d,
            generators,
            labels: self
                .labels
                .as_ref()
                .map(|l| keep.iter().map(|&x| l[x].clone()).collect()),
        };
        (sys, keep)
    }

    /// The system carrying only the listed actions, in the listed order.
    pub fn restrict_actions(&self, actions: &[usize]) -> FiniteSystem {
        let generators = actions
            .iter()
            .flat_map(|&i| (0..self.r).map(move |j| (i, j)))
            .map(|(i, j)| self.generator(i, j).clone())
            .collect();
        FiniteSystem {
            name: self.name.clone(),
            weights: self.weights.clone(),
            r: self.r,
            d: actions.len(),
            generators,
            labels: self.labels.clone(),
        }
    }

    pub fn to_description(&self) -> SystemDescription {
        SystemDescription {
            name: self.name.clone(),
            r: self.r,
            d: self.d,
            n: self.n(),
            weights: self.weights.iter().map(rational::format).collect(),
            generators: (0..self.d)
                .flat_map(|i| (0..self.r).map(move |j| (i, j)))
                .map(|(i, j)| GeneratorSpec {
                    action: i + 1,
                    axis: j + 1,
                    perm: self.generator(i, j).as_slice().to_vec(),
                })
                .collect(),
            labels: self.labels.clone(),
        }
    }
}

/// Rotation `x -> x + k mod n` as a permutation array.
pub fn rotation(n: usize, k: i64) -> Vec<usize> {
    (0..n)
        .map(|x| (x as i64 + k).rem_euclid(n as i64) as usize)
        .collect()
}

/// Cyclic group `Z/n` with uniform weight and rank-one actions `T_i = +shifts[i]`.
pub fn cyclic(n: usize, shifts: &[i64]) -> FiniteSystem {
    let weights = vec![rational::q(1, n as i64); n];
    let perms = shifts.iter().map(|&s| rotation(n, s)).collect();
    FiniteSystem::from_parts(format!("cyclic-{n}"), weights, 1, shifts.len(), perms, None)
        .expect("rotations of a cyclic group form a valid system")
}
