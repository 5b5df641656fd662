//! Exact rational scalars.

use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::{One, Signed, Zero};

use crate::error::{Error, Result};

/// Exact rational in lowest terms.
pub type Q = BigRational;

pub fn q(n: i64, d: i64) -> Q {
    Q::new(BigInt::from(n), BigInt::from(d))
}

pub fn qi(n: i64) -> Q {
    Q::from_integer(BigInt::from(n))
}

pub fn zero() -> Q {
    Q::zero()
}

pub fn one() -> Q {
    Q::one()
}

/// Parses `"p/q"` or `"p"`, with `q > 0`.
pub fn parse(s: &str) -> Result<Q> {
    let s = s.trim();
    let bad = || Error::Parse(format!("not a rational: {s:?}"));
    match s.split_once('/') {
        Some((n, d)) => {
            let n: BigInt = n.trim().parse().map_err(|_| bad())?;
            let d: BigInt = d.trim().parse().map_err(|_| bad())?;
            if !d.is_positive() {
                return Err(bad());
            }
            Ok(Q::new(n, d))
        }
        None => {
            let n: BigInt = s.parse().map_err(|_| bad())?;
            Ok(Q::from_integer(n))
        }
    }
}

/// Lowest-terms text form; integers print without a denominator.
pub fn format(x: &Q) -> String {
    x.to_string()
}

pub fn to_f64(x: &Q) -> f64 {
    use num_traits::ToPrimitive;
    x.to_f64().unwrap_or(f64::NAN)
}

/// Writes every value over one common positive denominator.
pub fn common_denominator(values: &[Q]) -> (Vec<BigInt>, BigInt) {
    use num_integer::Integer;
    let den = values.iter().fold(BigInt::one(), |acc, v| acc.lcm(v.denom()));
    let nums = values.iter().map(|v| v.numer() * (&den / v.denom())).collect();
    (nums, den)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parse_and_format() {
        assert_eq!(parse("2/4").unwrap(), q(1, 2));
        assert_eq!(parse("-3").unwrap(), qi(-3));
        assert_eq!(format(&q(6, 3)), "2");
        assert_eq!(format(&q(-2, 6)), "-1/3");
        assert!(parse("1/0").is_err());
        assert!(parse("1/-2").is_err());
        assert!(parse("x").is_err());
    }

    #[test]
    fn common_denominator_rescales() {
        let (nums, den) = common_denominator(&[q(1, 2), q(1, 3), qi(0)]);
        assert_eq!(den, BigInt::from(6));
        assert_eq!(nums, vec![BigInt::from(3), BigInt::from(2), BigInt::from(0)]);
    }
}
