//! Exact rational observables on finite systems.

use num_traits::{Signed, Zero};

use crate::error::{Error, Result};
use crate::rational::{self, Q};
use crate::system::{FiniteSystem, Perm};

/// A state-indexed vector of exact rationals.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Observable {
    values: Vec<Q>,
}

impl Observable {
    pub fn new(values: Vec<Q>) -> Self {
        Observable { values }
    }

    pub fn parse(values: &[impl AsRef<str>]) -> Result<Self> {
        values
            .iter()
            .map(|s| rational::parse(s.as_ref()))
            .collect::<Result<Vec<_>>>()
            .map(Observable::new)
    }

    pub fn constant(n: usize, c: Q) -> Self {
        Observable { values: vec![c; n] }
    }

    pub fn zero(n: usize) -> Self {
        Self::constant(n, rational::zero())
    }

    pub fn one(n: usize) -> Self {
        Self::constant(n, rational::one())
    }

    pub fn indicator(n: usize, x: usize) -> Self {
        let mut o = Self::zero(n);
        o.values[x] = rational::one();
        o
    }

    pub fn indicator_of(n: usize, states: &[usize]) -> Self {
        let mut o = Self::zero(n);
        for &x in states {
            o.values[x] = rational::one();
        }
        o
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn values(&self) -> &[Q] {
        &self.values
    }

    pub fn into_values(self) -> Vec<Q> {
        self.values
    }

    pub fn get(&self, x: usize) -> &Q {
        &self.values[x]
    }

    pub fn is_zero(&self) -> bool {
        self.values.iter().all(Zero::is_zero)
    }

    pub fn is_constant(&self) -> bool {
        self.values.windows(2).all(|w| w[0] == w[1])
    }

    pub fn check_len(&self, n: usize) -> Result<()> {
        if self.len() != n {
            return Err(Error::DimensionMismatch {
                expected: n,
                got: self.len(),
            });
        }
        Ok(())
    }

    pub fn map(&self, f: impl Fn(&Q) -> Q) -> Observable {
        Observable::new(self.values.iter().map(f).collect())
    }

    fn zip_with(&self, other: &Observable, f: impl Fn(&Q, &Q) -> Q) -> Observable {
        assert_eq!(self.len(), other.len(), "observable length mismatch");
        Observable::new(
            self.values
                .iter()
                .zip(&other.values)
                .map(|(a, b)| f(a, b))
                .collect(),
        )
    }

    pub fn add(&self, other: &Observable) -> Observable {
        self.zip_with(other, |a, b| a + b)
    }

    pub fn sub(&self, other: &Observable) -> Observable {
        self.zip_with(other, |a, b| a - b)
    }

    pub fn mul(&self, other: &Observable) -> Observable {
        self.zip_with(other, |a, b| a * b)
    }

    pub fn scale(&self, c: &Q) -> Observable {
        self.map(|a| a * c)
    }

    /// `f ∘ p`.
    pub fn compose(&self, p: &Perm) -> Observable {
        Observable::new((0..self.len()).map(|x| self.values[p.apply(x)].clone()).collect())
    }

    /// Pullback `f ∘ map` through a state map into this observable's space.
    pub fn pullback(&self, map: &[usize]) -> Observable {
        Observable::new(map.iter().map(|&y| self.values[y].clone()).collect())
    }

    pub fn integral(&self, sys: &FiniteSystem) -> Q {
        self.values.iter().zip(sys.weights()).map(|(v, w)| v * w).sum()
    }

    pub fn inner(&self, other: &Observable, sys: &FiniteSystem) -> Q {
        self.values
            .iter()
            .zip(&other.values)
            .zip(sys.weights())
            .map(|((a, b), w)| a * b * w)
            .sum()
    }

    /// `‖f‖_2^2` with respect to the system's weights.
    pub fn l2_norm_sq(&self, sys: &FiniteSystem) -> Q {
        self.inner(self, sys)
    }

    /// Essential supremum: max of `|f|` over positive-weight states.
    pub fn sup_norm(&self, sys: &FiniteSystem) -> Q {
        self.values
            .iter()
            .zip(sys.weights())
            .filter(|(_, w)| !w.is_zero())
            .map(|(v, _)| v.abs())
            .max()
            .unwrap_or_else(rational::zero)
    }

    pub fn to_strings(&self) -> Vec<String> {
        self.values.iter().map(rational::format).collect()
    }
}
