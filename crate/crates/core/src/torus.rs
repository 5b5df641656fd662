//! Rotation systems on tori `T^m = R^m / Z^m`, evaluated in double precision.
//!
//! Rotation entries are either exact (a rational plus rational multiples of
//! named irrational symbols, assumed rationally independent of each other
//! and of 1) or bare floats. Resonance of a character product is decided
//! exactly from the exact form; bare floats make it undecidable.

use std::collections::{BTreeMap, HashMap};
use std::f64::consts::TAU;
use std::fmt;

use num_bigint::BigInt;
use num_complex::Complex64;
use num_integer::Integer;
use num_traits::{One, ToPrimitive, Zero};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::averages::{indicator_basis_limits, FolnerBox};
use crate::error::{Error, Result};
use crate::observable::Observable;
use crate::rational::{self, Q};
use crate::system::FiniteSystem;

/// One coordinate of a rotation vector.
#[derive(Debug, Clone, PartialEq)]
pub enum RotationEntry {
    Exact {
        rational: Q,
        symbols: BTreeMap<String, Q>,
    },
    Float(f64),
}

impl RotationEntry {
    pub fn rational(v: Q) -> Self {
        RotationEntry::Exact {
            rational: v,
            symbols: BTreeMap::new(),
        }
    }

    pub fn symbol(name: &str, coeff: Q) -> Self {
        let mut symbols = BTreeMap::new();
        if !coeff.is_zero() {
            symbols.insert(name.to_string(), coeff);
        }
        RotationEntry::Exact {
            rational: rational::zero(),
            symbols,
        }
    }

    /// Accepts `p/q`, `c*name`, `name` and sums/differences of these, or a
    /// decimal float such as `0.618`.
    pub fn parse(s: &str) -> Result<Self> {
        let s = s.trim();
        if s.is_empty() {
            return Err(Error::Parse("empty rotation entry".into()));
        }
        let looks_float = s.contains('.') || (s.contains(['e', 'E']) && s.parse::<f64>().is_ok());
        if looks_float {
            return s
                .parse::<f64>()
                .map(RotationEntry::Float)
                .map_err(|e| Error::Parse(format!("{s:?}: {e}")));
        }
        let mut rat = rational::zero();
        let mut symbols: BTreeMap<String, Q> = BTreeMap::new();
        let mut terms: Vec<(bool, String)> = Vec::new();
        let mut neg = false;
        let mut cur = String::new();
        for ch in s.chars().filter(|c| !c.is_whitespace()) {
            if (ch == '+' || ch == '-') && !cur.is_empty() {
                terms.push((neg, std::mem::take(&mut cur)));
                neg = ch == '-';
            } else if (ch == '+' || ch == '-') && cur.is_empty() {
                if ch == '-' {
                    neg = !neg;
                }
            } else {
                cur.push(ch);
            }
        }
        if cur.is_empty() {
            return Err(Error::Parse(format!("{s:?}: dangling sign")));
        }
        terms.push((neg, cur));
        for (neg, term) in terms {
            let sign = if neg { -rational::one() } else { rational::one() };
            let (coeff, name) = match term.split_once('*') {
                Some((c, n)) => (rational::parse(c)?, Some(n.to_string())),
                None if term.starts_with(|c: char| c.is_ascii_alphabetic() || c == '_') => {
                    (rational::one(), Some(term.clone()))
                }
                None => (rational::parse(&term)?, None),
            };
            match name {
                Some(n) => {
                    if !n.starts_with(|c: char| c.is_ascii_alphabetic() || c == '_')
                        || !n.chars().all(|c| c.is_ascii_alphanumeric() || c == '_')
                    {
                        return Err(Error::Parse(format!("{s:?}: bad symbol {n:?}")));
                    }
                    *symbols.entry(n).or_insert_with(rational::zero) += coeff * sign;
                }
                None => rat += coeff * sign,
            }
        }
        symbols.retain(|_, c| !c.is_zero());
        Ok(RotationEntry::Exact {
            rational: rat,
            symbols,
        })
    }

    pub fn is_exact(&self) -> bool {
        matches!(self, RotationEntry::Exact { .. })
    }

    pub fn as_rational(&self) -> Option<&Q> {
        match self {
            RotationEntry::Exact { rational, symbols } if symbols.is_empty() => Some(rational),
            _ => None,
        }
    }

    /// Value reduced to `[0, 1)`.
    pub fn value(&self, symbols: &HashMap<String, f64>) -> Result<f64> {
        let v = match self {
            RotationEntry::Float(v) => *v,
            RotationEntry::Exact {
                rational: r,
                symbols: syms,
            } => {
                let frac = r - r.floor();
                let mut v = rational::to_f64(&frac);
                for (name, c) in syms {
                    let s = symbols
                        .get(name)
                        .ok_or_else(|| Error::Malformed(format!("unknown symbol {name:?}")))?;
                    v += rational::to_f64(c) * s;
                }
                v
            }
        };
        if !v.is_finite() {
            return Err(Error::Malformed(format!("non-finite rotation entry {self}")));
        }
        Ok(frac(v))
    }
}

impl fmt::Display for RotationEntry {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            RotationEntry::Float(v) => write!(f, "{v:?}"),
            RotationEntry::Exact { rational: r, symbols } => {
                let mut parts = Vec::new();
                if !r.is_zero() || symbols.is_empty() {
                    parts.push(rational::format(r));
                }
                for (n, c) in symbols {
                    parts.push(if c.is_one() {
                        n.clone()
                    } else {
                        format!("{}*{n}", rational::format(c))
                    });
                }
                write!(f, "{}", parts.join("+").replace("+-", "-"))
            }
        }
    }
}

fn frac(v: f64) -> f64 {
    let r = v - v.floor();
    if r >= 1.0 {
        0.0
    } else {
        r
    }
}

/// Sum of two floats with its rounding error.
fn two_sum(a: f64, b: f64) -> (f64, f64) {
    let s = a + b;
    let bb = s - a;
    (s, (a - (s - bb)) + (b - bb))
}

/// `n * v mod 1` without losing the low bits of the product.
fn mul_mod1(n: i64, v: f64) -> (f64, f64) {
    let nf = n as f64;
    let hi = nf * v;
    let lo = nf.mul_add(v, -hi);
    (hi - hi.floor(), lo)
}

/// Neumaier-compensated accumulator.
#[derive(Debug, Clone, Copy, Default)]
struct Neumaier {
    sum: f64,
    comp: f64,
}

impl Neumaier {
    fn add(&mut self, x: f64) {
        let t = self.sum + x;
        if self.sum.abs() >= x.abs() {
            self.comp += (self.sum - t) + x;
        } else {
            self.comp += (x - t) + self.sum;
        }
        self.sum = t;
    }

    fn value(&self) -> f64 {
        self.sum + self.comp
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct TorusRotationSpec {
    pub action: usize,
    pub axis: usize,
    pub vector: Vec<String>,
}

/// File form of a torus system; `action` and `axis` are 1-based.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct TorusDescription {
    pub name: String,
    pub m: usize,
    pub r: usize,
    pub d: usize,
    #[serde(default)]
    pub symbols: BTreeMap<String, f64>,
    pub rotations: Vec<TorusRotationSpec>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TorusSystem {
    name: String,
    m: usize,
    r: usize,
    d: usize,
    entries: Vec<Vec<RotationEntry>>,
    values: Vec<Vec<f64>>,
    symbols: HashMap<String, f64>,
}

impl TorusSystem {
    /// `vectors[i * r + j]` is the rotation of action `i` along axis `j`.
    pub fn new(
        name: impl Into<String>,
        m: usize,
        r: usize,
        d: usize,
        vectors: Vec<Vec<RotationEntry>>,
        symbols: HashMap<String, f64>,
    ) -> Result<Self> {
        if m == 0 || r == 0 || d == 0 {
            return Err(Error::Malformed("m, r and d must be positive".into()));
        }
        if vectors.len() != r * d {
            return Err(Error::Malformed(format!(
                "expected {} rotation vectors, got {}",
                r * d,
                vectors.len()
            )));
        }
        let mut values = Vec::with_capacity(vectors.len());
        for v in &vectors {
            if v.len() != m {
                return Err(Error::DimensionMismatch {
                    expected: m,
                    got: v.len(),
                });
            }
            values.push(v.iter().map(|e| e.value(&symbols)).collect::<Result<Vec<_>>>()?);
        }
        Ok(TorusSystem {
            name: name.into(),
            m,
            r,
            d,
            entries: vectors,
            values,
            symbols,
        })
    }

    pub fn from_description(desc: &TorusDescription) -> Result<Self> {
        let mut vectors: Vec<Option<Vec<RotationEntry>>> = vec![None; desc.r * desc.d];
        for spec in &desc.rotations {
            if spec.action == 0 || spec.action > desc.d || spec.axis == 0 || spec.axis > desc.r {
                return Err(Error::Malformed(format!(
                    "rotation ({}, {}) out of range",
                    spec.action, spec.axis
                )));
            }
            let k = (spec.action - 1) * desc.r + spec.axis - 1;
            if vectors[k].is_some() {
                return Err(Error::Malformed(format!(
                    "rotation ({}, {}) given twice",
                    spec.action, spec.axis
                )));
            }
            vectors[k] = Some(
                spec.vector
                    .iter()
                    .map(|s| RotationEntry::parse(s))
                    .collect::<Result<Vec<_>>>()?,
            );
        }
        let vectors = vectors
            .into_iter()
            .enumerate()
            .map(|(k, v)| {
                v.ok_or_else(|| {
                    Error::Malformed(format!(
                        "missing rotation ({}, {})",
                        k / desc.r + 1,
                        k % desc.r + 1
                    ))
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let symbols = desc.symbols.iter().map(|(k, v)| (k.clone(), *v)).collect();
        TorusSystem::new(desc.name.clone(), desc.m, desc.r, desc.d, vectors, symbols)
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn m(&self) -> usize {
        self.m
    }

    pub fn r(&self) -> usize {
        self.r
    }

    pub fn d(&self) -> usize {
        self.d
    }

    pub fn entry(&self, action: usize, axis: usize) -> &[RotationEntry] {
        &self.entries[action * self.r + axis]
    }

    pub fn vector(&self, action: usize, axis: usize) -> &[f64] {
        &self.values[action * self.r + axis]
    }

    pub fn symbols(&self) -> &HashMap<String, f64> {
        &self.symbols
    }

    /// `t + Σ_j n_j v_{i,j}` reduced to `[0, 1)^m`.
    pub fn orbit_point(&self, action: usize, n: &[i64], t: &[f64]) -> Vec<f64> {
        (0..self.m)
            .map(|c| {
                let (mut s, mut e) = (t[c], 0.0);
                for (j, &nj) in n.iter().enumerate() {
                    let (hi, lo) = mul_mod1(nj, self.vector(action, j)[c]);
                    let (s2, e2) = two_sum(s, hi);
                    s = s2 - s2.floor();
                    e += e2 + lo;
                }
                frac(frac(s) + e)
            })
            .collect()
    }
}

/// `Σ_k c_k e^{2πi k·t}` over distinct integer frequencies.
#[derive(Debug, Clone, PartialEq)]
pub struct TrigObservable {
    terms: Vec<(Vec<i64>, Complex64)>,
}

impl TrigObservable {
    pub fn new(m: usize, terms: Vec<(Vec<i64>, Complex64)>) -> Result<Self> {
        let mut seen = std::collections::HashSet::new();
        for (k, _) in &terms {
            if k.len() != m {
                return Err(Error::DimensionMismatch {
                    expected: m,
                    got: k.len(),
                });
            }
            if !seen.insert(k.clone()) {
                return Err(Error::Malformed(format!("repeated frequency {k:?}")));
            }
        }
        Ok(TrigObservable { terms })
    }

    pub fn character(k: Vec<i64>) -> Self {
        TrigObservable {
            terms: vec![(k, Complex64::new(1.0, 0.0))],
        }
    }

    pub fn constant(m: usize, c: Complex64) -> Self {
        TrigObservable {
            terms: vec![(vec![0; m], c)],
        }
    }

    pub fn terms(&self) -> &[(Vec<i64>, Complex64)] {
        &self.terms
    }

    pub fn conj(&self) -> Self {
        TrigObservable {
            terms: self
                .terms
                .iter()
                .map(|(k, c)| (k.iter().map(|a| -a).collect(), c.conj()))
                .collect(),
        }
    }

    /// Product, merging equal frequencies; exact zero coefficients are dropped.
    pub fn mul(&self, other: &TrigObservable) -> Self {
        let mut acc: BTreeMap<Vec<i64>, Complex64> = BTreeMap::new();
        for (k1, c1) in &self.terms {
            for (k2, c2) in &other.terms {
                let k: Vec<i64> = k1.iter().zip(k2).map(|(a, b)| a + b).collect();
                *acc.entry(k).or_default() += c1 * c2;
            }
        }
        TrigObservable {
            terms: acc.into_iter().filter(|(_, c)| *c != Complex64::zero()).collect(),
        }
    }

    pub fn eval(&self, t: &[f64]) -> Complex64 {
        let (mut re, mut im) = (Neumaier::default(), Neumaier::default());
        for (k, c) in &self.terms {
            let phase = k.iter().zip(t).fold(0.0, |acc, (&ki, &ti)| {
                let (hi, lo) = mul_mod1(ki, ti);
                frac(acc + hi + lo)
            });
            let (s, co) = (TAU * phase).sin_cos();
            let v = c * Complex64::new(co, s);
            re.add(v.re);
            im.add(v.im);
        }
        Complex64::new(re.value(), im.value())
    }

    /// `‖f‖_2` for Haar measure.
    pub fn l2_norm(&self) -> f64 {
        self.terms.iter().map(|(_, c)| c.norm_sqr()).sum::<f64>().sqrt()
    }

    /// `Σ |c_k|`, an upper bound for the sup norm, attained by characters.
    pub fn coefficient_bound(&self) -> f64 {
        self.terms.iter().map(|(_, c)| c.norm()).sum()
    }
}

fn check_fs(sys: &TorusSystem, fs: &[TrigObservable]) -> Result<()> {
    if fs.len() != sys.d() {
        return Err(Error::DimensionMismatch {
            expected: sys.d(),
            got: fs.len(),
        });
    }
    for f in fs {
        for (k, _) in f.terms() {
            if k.len() != sys.m() {
                return Err(Error::DimensionMismatch {
                    expected: sys.m(),
                    got: k.len(),
                });
            }
        }
    }
    Ok(())
}

/// `(1/|I|) Σ_{n ∈ I} Π_i f_i(T_i^n t)` at each sample, summed in row-major
/// box order with compensation. Samples run in parallel.
pub fn torus_truncated_average(
    sys: &TorusSystem,
    fs: &[TrigObservable],
    bx: &FolnerBox,
    samples: &[Vec<f64>],
) -> Result<Vec<Complex64>> {
    check_fs(sys, fs)?;
    if bx.edges.len() != sys.r() {
        return Err(Error::DimensionMismatch {
            expected: sys.r(),
            got: bx.edges.len(),
        });
    }
    for t in samples {
        if t.len() != sys.m() {
            return Err(Error::DimensionMismatch {
                expected: sys.m(),
                got: t.len(),
            });
        }
    }
    let volume = bx.volume() as f64;
    Ok(samples
        .par_iter()
        .map(|t| {
            let (mut re, mut im) = (Neumaier::default(), Neumaier::default());
            for n in bx.points() {
                let mut prod = Complex64::new(1.0, 0.0);
                for (i, f) in fs.iter().enumerate() {
                    prod *= f.eval(&sys.orbit_point(i, &n, t));
                }
                re.add(prod.re);
                im.add(prod.im);
            }
            Complex64::new(re.value() / volume, im.value() / volume)
        })
        .collect())
}

/// Exact `Σ_i k_i · v_{i,axis}` as (rational, symbol coefficients).
fn resonance_phase(sys: &TorusSystem, ks: &[&Vec<i64>], axis: usize) -> Result<(Q, BTreeMap<String, Q>)> {
    let mut rat = rational::zero();
    let mut syms: BTreeMap<String, Q> = BTreeMap::new();
    for (i, k) in ks.iter().enumerate() {
        for (c, &kc) in k.iter().enumerate() {
            if kc == 0 {
                continue;
            }
            let kq = rational::qi(kc);
            match &sys.entry(i, axis)[c] {
                RotationEntry::Float(v) => {
                    return Err(Error::UndecidableResonance(format!(
                        "action {} axis {} coordinate {} is the bare float {v:?}",
                        i + 1,
                        axis + 1,
                        c + 1
                    )))
                }
                RotationEntry::Exact { rational: r, symbols } => {
                    rat += r * &kq;
                    for (n, coef) in symbols {
                        *syms.entry(n.clone()).or_insert_with(rational::zero) += coef * &kq;
                    }
                }
            }
        }
    }
    syms.retain(|_, c| !c.is_zero());
    Ok((rat, syms))
}

/// Per-axis phases of one frequency combination; `None` when resonant.
fn combination_phases(sys: &TorusSystem, ks: &[&Vec<i64>]) -> Result<Option<Vec<f64>>> {
    let mut phases = Vec::with_capacity(sys.r());
    let mut resonant = true;
    for axis in 0..sys.r() {
        let (rat, syms) = resonance_phase(sys, ks, axis)?;
        let integral = syms.is_empty() && rat.is_integer();
        resonant &= integral;
        let mut v = rational::to_f64(&(&rat - rat.floor()));
        for (n, c) in &syms {
            v += rational::to_f64(c) * sys.symbols()[n];
        }
        phases.push(if integral { 0.0 } else { frac(v) });
    }
    Ok(if resonant { None } else { Some(phases) })
}

fn combinations(fs: &[TrigObservable]) -> Vec<Vec<&(Vec<i64>, Complex64)>> {
    fs.iter().fold(vec![Vec::new()], |acc, f| {
        acc.iter()
            .flat_map(|prefix| {
                f.terms().iter().map(move |t| {
                    let mut p = prefix.clone();
                    p.push(t);
                    p
                })
            })
            .collect()
    })
}

/// Closed-form limit: a character product survives iff its phase along
/// every axis is an integer, and then contributes `e^{2πi (Σ_i k_i)·t}`.
pub fn character_limit(sys: &TorusSystem, fs: &[TrigObservable]) -> Result<TrigObservable> {
    check_fs(sys, fs)?;
    let mut acc: BTreeMap<Vec<i64>, Complex64> = BTreeMap::new();
    for combo in combinations(fs) {
        let ks: Vec<&Vec<i64>> = combo.iter().map(|(k, _)| k).collect();
        if combination_phases(sys, &ks)?.is_some() {
            continue;
        }
        let coeff: Complex64 = combo.iter().map(|(_, c)| *c).product();
        let freq: Vec<i64> = (0..sys.m()).map(|c| ks.iter().map(|k| k[c]).sum()).collect();
        *acc.entry(freq).or_default() += coeff;
    }
    let terms: Vec<_> = acc.into_iter().filter(|(_, c)| *c != Complex64::zero()).collect();
    if terms.is_empty() {
        return Ok(TrigObservable::constant(sys.m(), Complex64::zero()));
    }
    Ok(TrigObservable { terms })
}

/// `C` with `|avg_N(t) - limit(t)| ≤ C / N` for cubes of edge `N`:
/// each non-resonant term contributes `|c| / |sin(π θ_j)|` at its best axis.
pub fn convergence_constant(sys: &TorusSystem, fs: &[TrigObservable]) -> Result<f64> {
    check_fs(sys, fs)?;
    let mut total = 0.0;
    for combo in combinations(fs) {
        let ks: Vec<&Vec<i64>> = combo.iter().map(|(k, _)| k).collect();
        let Some(phases) = combination_phases(sys, &ks)? else {
            continue;
        };
        let coeff: f64 = combo.iter().map(|(_, c)| c.norm()).product();
        let best = phases
            .iter()
            .filter(|&&p| p != 0.0)
            .map(|p| (std::f64::consts::PI * p).sin().abs())
            .fold(0.0, f64::max);
        total += coeff / best;
    }
    Ok(total)
}

/// A rational-rotation torus as the finite system on the grid
/// `(1/q) Z^m / Z^m`, states indexed row-major with the last coordinate
/// fastest. Returns the system and `q`.
pub fn bridge_to_finite(sys: &TorusSystem) -> Result<(FiniteSystem, u64)> {
    let mut q = BigInt::one();
    for v in &sys.entries {
        for e in v {
            let r = e
                .as_rational()
                .ok_or_else(|| Error::Malformed(format!("entry {e} is not rational; no finite grid")))?;
            q = q.lcm(r.denom());
        }
    }
    let q = q
        .to_u64()
        .ok_or_else(|| Error::Malformed("grid denominator too large".into()))?;
    let n = (q as u128)
        .checked_pow(sys.m() as u32)
        .filter(|&n| n <= 1 << 24)
        .ok_or_else(|| Error::Malformed(format!("grid (Z/{q})^{} too large", sys.m())))? as usize;
    let qb = BigInt::from(q);
    let mut perms = Vec::with_capacity(sys.r() * sys.d());
    for i in 0..sys.d() {
        for j in 0..sys.r() {
            let shift: Vec<u64> = sys
                .entry(i, j)
                .iter()
                .map(|e| {
                    let r = e.as_rational().expect("checked above");
                    let s = (r * Q::from_integer(qb.clone())).to_integer();
                    s.mod_floor(&qb).to_u64().expect("below q")
                })
                .collect();
            let perm = (0..n)
                .map(|x| {
                    let coords = grid_coords(x, q, sys.m());
                    let moved: Vec<u64> = coords.iter().zip(&shift).map(|(a, s)| (a + s) % q).collect();
                    grid_index(&moved, q)
                })
                .collect();
            perms.push(perm);
        }
    }
    let labels = (0..n)
        .map(|x| {
            let c: Vec<String> = grid_coords(x, q, sys.m())
                .iter()
                .map(|a| format!("{a}/{q}"))
                .collect();
            format!("({})", c.join(","))
        })
        .collect();
    let weights = vec![rational::q(1, n as i64); n];
    let fin = FiniteSystem::from_parts(
        format!("{}-grid", sys.name()),
        weights,
        sys.r(),
        sys.d(),
        perms,
        Some(labels),
    )?;
    Ok((fin, q))
}

fn grid_coords(mut x: usize, q: u64, m: usize) -> Vec<u64> {
    let mut c = vec![0; m];
    for slot in c.iter_mut().rev() {
        *slot = x as u64 % q;
        x /= q as usize;
    }
    c
}

fn grid_index(c: &[u64], q: u64) -> usize {
    c.iter().fold(0usize, |acc, &a| acc * q as usize + a as usize)
}

/// Grid point of state `x` as a torus sample.
pub fn grid_point(x: usize, q: u64, m: usize) -> Vec<f64> {
    grid_coords(x, q, m)
        .iter()
        .map(|&a| a as f64 / q as f64)
        .collect()
}

/// The exact finite-engine limit on the grid, extended multilinearly to
/// the complex values of `fs`: `Σ f_1(x_1) Π f_i(x_i) lim(1_{x_1}, ...)(x)`.
pub fn finite_limit_on_grid(sys: &TorusSystem, fs: &[TrigObservable]) -> Result<Vec<Complex64>> {
    check_fs(sys, fs)?;
    let (fin, q) = bridge_to_finite(sys)?;
    let n = fin.n();
    let values: Vec<Vec<Complex64>> = fs
        .iter()
        .map(|f| (0..n).map(|x| f.eval(&grid_point(x, q, sys.m()))).collect())
        .collect();
    let mut out = vec![Complex64::zero(); n];
    for x1 in 0..n {
        let limits = indicator_basis_limits(&fin, &Observable::indicator(n, x1))?;
        let den = limits.den.to_f64().expect("finite denominator");
        for (key, row) in &limits.entries {
            let mut c = values[0][x1];
            for (i, &y) in key.iter().enumerate() {
                c *= values[i + 1][y];
            }
            for (&x, v) in row {
                out[x] += c * (v.to_f64().expect("finite entry") / den);
            }
        }
    }
    Ok(out)
}

/// Whether every entry is a plain rational, so the system bridges to a grid.
pub fn is_rational(sys: &TorusSystem) -> bool {
    sys.entries.iter().flatten().all(|e| e.as_rational().is_some())
}
