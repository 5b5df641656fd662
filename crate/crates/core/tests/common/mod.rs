#![allow(dead_code)]

use ergolab_core::rational::{q, Q};
use ergolab_core::{FiniteSystem, Observable};
use proptest::prelude::*;

/// A disjoint union of blocks `Z/a × Z/b`, each carrying translations and
/// a uniform share of a block weight, so every generated action commutes
/// and preserves the measure.
#[derive(Debug, Clone)]
pub struct BlockSpec {
    pub dims: (usize, usize),
    pub weight: i64,
    /// `shifts[i * r + j]` for action `i`, axis `j`.
    pub shifts: Vec<(i64, i64)>,
}

pub fn build(name: &str, r: usize, d: usize, blocks: &[BlockSpec]) -> FiniteSystem {
    let total_w: i64 = blocks.iter().map(|b| b.weight).sum();
    let mut weights = Vec::new();
    let mut offsets = Vec::new();
    for b in blocks {
        offsets.push(weights.len());
        let size = b.dims.0 * b.dims.1;
        for _ in 0..size {
            weights.push(q(b.weight, total_w * size as i64));
        }
    }
    let n = weights.len();
    let mut perms = vec![vec![0usize; n]; r * d];
    for (b, &off) in blocks.iter().zip(&offsets) {
        let (a, c) = b.dims;
        for u in 0..a {
            for v in 0..c {
                let x = off + u * c + v;
                for (k, &(s, t)) in b.shifts.iter().enumerate() {
                    let u2 = (u as i64 + s).rem_euclid(a as i64) as usize;
                    let v2 = (v as i64 + t).rem_euclid(c as i64) as usize;
                    perms[k][x] = off + u2 * c + v2;
                }
            }
        }
    }
    FiniteSystem::from_parts(name, weights, r, d, perms, None).expect("block systems are valid")
}

pub fn block(r: usize, d: usize) -> impl Strategy<Value = BlockSpec> {
    ((1usize..=4, 1usize..=3), 1i64..=4).prop_flat_map(move |(dims, weight)| {
        prop::collection::vec((0..dims.0 as i64, 0..dims.1 as i64), r * d).prop_map(move |shifts| BlockSpec {
            dims,
            weight,
            shifts,
        })
    })
}

/// Random small systems with `r ≤ 2`, `d ≤ 3` and at most three blocks.
pub fn system() -> impl Strategy<Value = FiniteSystem> {
    (1usize..=2, 1usize..=3).prop_flat_map(|(r, d)| {
        prop::collection::vec(block(r, d), 1..=3).prop_map(move |blocks| build("fuzz", r, d, &blocks))
    })
}

pub fn rational() -> impl Strategy<Value = Q> {
    (-6i64..=6, 1i64..=4).prop_map(|(p, d)| q(p, d))
}

pub fn observable(n: usize) -> impl Strategy<Value = Observable> {
    prop::collection::vec(rational(), n).prop_map(Observable::new)
}

pub fn tuple(n: usize, d: usize) -> impl Strategy<Value = Vec<Observable>> {
    prop::collection::vec(observable(n), d)
}

/// A system together with a `d`-tuple of observables on it.
pub fn system_with_tuple() -> impl Strategy<Value = (FiniteSystem, Vec<Observable>)> {
    system().prop_flat_map(|sys| {
        let (n, d) = (sys.n(), sys.d());
        (Just(sys), tuple(n, d))
    })
}
