//! Small helpers around exact rationals.

use num_bigint::BigInt;
use num_integer::Integer;
use num_rational::BigRational;
use num_traits::{One, Signed, ToPrimitive, Zero};

use crate::error::{Error, Result};

pub type Q = BigRational;

pub fn qi(n: i64) -> Q {
    Q::from_integer(BigInt::from(n))
}

pub fn qr(n: i64, d: i64) -> Q {
    Q::new(BigInt::from(n), BigInt::from(d))
}

pub fn qz(n: &BigInt) -> Q {
    Q::from_integer(n.clone())
}

/// 2^k for any integer k.
pub fn pow2(k: i64) -> Q {
    let p = BigInt::one() << k.unsigned_abs();
    if k >= 0 {
        Q::from_integer(p)
    } else {
        Q::new(BigInt::one(), p)
    }
}

pub fn to_f64(q: &Q) -> f64 {
    q.to_f64().unwrap_or(if q.is_negative() { f64::NEG_INFINITY } else { f64::INFINITY })
}

/// Exact conversion of a finite double.
pub fn from_f64(x: f64) -> Q {
    Q::from_float(x).expect("finite float")
}

/// "p/q", or "p" for integers.
pub fn fmt_q(q: &Q) -> String {
    q.to_string()
}

pub fn parse_q(s: &str) -> Result<Q> {
    let bad = || Error::Invalid(format!("not a rational: {s:?}"));
    let s = s.trim();
    match s.split_once('/') {
        Some((n, d)) => {
            let n: BigInt = n.trim().parse().map_err(|_| bad())?;
            let d: BigInt = d.trim().parse().map_err(|_| bad())?;
            if d.is_zero() {
                return Err(bad());
            }
            Ok(Q::new(n, d))
        }
        None => {
            if let Ok(n) = s.parse::<BigInt>() {
                return Ok(Q::from_integer(n));
            }
            parse_decimal(s).ok_or_else(bad)
        }
    }
}

fn parse_decimal(s: &str) -> Option<Q> {
    let (neg, body) = match s.strip_prefix('-') {
        Some(b) => (true, b),
        None => (false, s),
    };
    let (int, frac) = body.split_once('.')?;
    if int.is_empty() && frac.is_empty() {
        return None;
    }
    let digits = format!("{int}{frac}");
    let n: BigInt = digits.parse().ok()?;
    let d = num_traits::pow(BigInt::from(10), frac.len());
    let q = Q::new(n, d);
    Some(if neg { -q } else { q })
}

/// Nearest integer, ties away from zero.
pub fn round_q(q: &Q) -> BigInt {
    q.round().to_integer()
}

pub fn is_integer(q: &Q) -> bool {
    q.denom().is_one()
}

/// Largest multiple of 2^-bits that is <= q.
pub fn floor_dyadic(q: &Q, bits: u32) -> Q {
    let scale = BigInt::one() << bits;
    let scaled = q.numer() * &scale;
    let (f, _) = scaled.div_mod_floor(q.denom());
    Q::new(f, scale)
}

/// Decimal rendering with `digits` digits after the point (truncated toward zero).
pub fn fmt_decimal(q: &Q, digits: usize) -> String {
    let scale = num_traits::pow(BigInt::from(10), digits);
    let scaled = (q.abs() * Q::from_integer(scale.clone())).to_integer();
    let (i, f) = scaled.div_rem(&scale);
    let sign = if q.is_negative() && !scaled.is_zero() { "-" } else { "" };
    if digits == 0 {
        format!("{sign}{i}")
    } else {
        format!("{sign}{i}.{:0>width$}", f.to_string(), width = digits)
    }
}

pub fn abs_max<'a>(it: impl IntoIterator<Item = &'a Q>) -> Q {
    it.into_iter().map(|q| q.abs()).fold(Q::zero(), |a, b| if b > a { b } else { a })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parse_and_format_roundtrip() {
        for s in ["0", "-3", "1/2", "-7/4"] {
            assert_eq!(fmt_q(&parse_q(s).unwrap()), s);
        }
        assert_eq!(parse_q("0.25").unwrap(), qr(1, 4));
        assert_eq!(parse_q("-.5").unwrap(), qr(-1, 2));
        assert!(parse_q("1/0").is_err());
        assert!(parse_q("x").is_err());
    }

    #[test]
    fn dyadic_floor() {
        assert_eq!(floor_dyadic(&qr(1, 3), 2), qr(1, 4));
        assert_eq!(floor_dyadic(&qr(-1, 3), 2), qr(-1, 2));
        assert_eq!(pow2(-3), qr(1, 8));
    }

    #[test]
    fn decimal_rendering() {
        assert_eq!(fmt_decimal(&qr(1, 3), 4), "0.3333");
        assert_eq!(fmt_decimal(&qr(-5, 2), 2), "-2.50");
        assert_eq!(round_q(&qr(5, 2)), BigInt::from(3));
    }
}
