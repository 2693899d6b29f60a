//! Scalar arithmetics for the continuous backends: binary floats, dyadic
//! fixed point with floor rounding, and exact rationals.

use std::cell::Cell;

use num_bigint::BigInt;
use num_integer::Integer;
use num_traits::{ToPrimitive, Zero};

use crate::error::{Error, Result};
use crate::num::{from_f64, to_f64, Q};

pub trait Arith {
    type T: Clone + std::fmt::Debug;
    fn describe(&self) -> String;
    fn constant(&self, q: &Q) -> Self::T;
    fn add(&self, a: &Self::T, b: &Self::T) -> Self::T;
    fn sub(&self, a: &Self::T, b: &Self::T) -> Self::T;
    fn mul(&self, a: &Self::T, b: &Self::T) -> Self::T;
    fn to_f64(&self, a: &Self::T) -> f64;
    fn to_q(&self, a: &Self::T) -> Q;
    /// Bound on the rounding error of a single add/sub/mul on values of
    /// magnitude at most 1 (relative for floats, absolute for fixed point).
    fn unit_roundoff(&self) -> f64;
    /// Sticky overflow flag, cleared on read.
    fn take_overflow(&self) -> Result<()> {
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, Default)]
pub struct F64;

impl Arith for F64 {
    type T = f64;
    fn describe(&self) -> String {
        "f64".into()
    }
    fn constant(&self, q: &Q) -> f64 {
        to_f64(q)
    }
    fn add(&self, a: &f64, b: &f64) -> f64 {
        a + b
    }
    fn sub(&self, a: &f64, b: &f64) -> f64 {
        a - b
    }
    fn mul(&self, a: &f64, b: &f64) -> f64 {
        a * b
    }
    fn to_f64(&self, a: &f64) -> f64 {
        *a
    }
    fn to_q(&self, a: &f64) -> Q {
        from_f64(*a)
    }
    fn unit_roundoff(&self) -> f64 {
        f64::EPSILON / 2.0
    }
    fn take_overflow(&self) -> Result<()> {
        Ok(())
    }
}

/// Fixed point `v·2^{-bits}` in an `i64`, products rounded toward −∞.
#[derive(Debug, Clone)]
pub struct Dyadic {
    bits: u32,
    overflow: Cell<bool>,
}

pub const MAX_DYADIC_BITS: u32 = 56;

impl Dyadic {
    pub fn new(bits: u32) -> Result<Self> {
        if bits == 0 || bits > MAX_DYADIC_BITS {
            return Err(Error::Invalid(format!("fixed-point precision must lie in 1..={MAX_DYADIC_BITS}, got {bits}")));
        }
        Ok(Dyadic { bits, overflow: Cell::new(false) })
    }

    pub fn bits(&self) -> u32 {
        self.bits
    }

    fn narrow(&self, v: i128) -> i64 {
        i64::try_from(v).unwrap_or_else(|_| {
            self.overflow.set(true);
            0
        })
    }
}

impl Arith for Dyadic {
    type T = i64;
    fn describe(&self) -> String {
        format!("dyadic/{}", self.bits)
    }
    fn constant(&self, q: &Q) -> i64 {
        let scaled = q.numer() << self.bits;
        let (f, _) = scaled.div_mod_floor(q.denom());
        f.to_i64().unwrap_or_else(|| {
            self.overflow.set(true);
            0
        })
    }
    fn add(&self, a: &i64, b: &i64) -> i64 {
        a.checked_add(*b).unwrap_or_else(|| {
            self.overflow.set(true);
            0
        })
    }
    fn sub(&self, a: &i64, b: &i64) -> i64 {
        a.checked_sub(*b).unwrap_or_else(|| {
            self.overflow.set(true);
            0
        })
    }
    fn mul(&self, a: &i64, b: &i64) -> i64 {
        self.narrow((i128::from(*a) * i128::from(*b)) >> self.bits)
    }
    fn to_f64(&self, a: &i64) -> f64 {
        *a as f64 / (self.bits as f64).exp2()
    }
    fn to_q(&self, a: &i64) -> Q {
        Q::new(BigInt::from(*a), BigInt::from(1u8) << self.bits)
    }
    fn unit_roundoff(&self) -> f64 {
        (-(self.bits as f64)).exp2()
    }
    fn take_overflow(&self) -> Result<()> {
        if self.overflow.replace(false) {
            Err(Error::Overflow)
        } else {
            Ok(())
        }
    }
}

#[derive(Debug, Clone, Copy, Default)]
pub struct Exact;

impl Arith for Exact {
    type T = Q;
    fn describe(&self) -> String {
        "exact".into()
    }
    fn constant(&self, q: &Q) -> Q {
        q.clone()
    }
    fn add(&self, a: &Q, b: &Q) -> Q {
        a + b
    }
    fn sub(&self, a: &Q, b: &Q) -> Q {
        a - b
    }
    fn mul(&self, a: &Q, b: &Q) -> Q {
        if a.is_zero() || b.is_zero() {
            Q::zero()
        } else {
            a * b
        }
    }
    fn to_f64(&self, a: &Q) -> f64 {
        to_f64(a)
    }
    fn to_q(&self, a: &Q) -> Q {
        a.clone()
    }
    fn unit_roundoff(&self) -> f64 {
        0.0
    }
}

/// Fixed-point precision from `DYNCOMP_PRECISION_BITS`, else `default`.
pub fn precision_from_env(default: u32) -> Result<u32> {
    match std::env::var("DYNCOMP_PRECISION_BITS") {
        Ok(s) => {
            s.trim().parse().map_err(|_| Error::Invalid(format!("DYNCOMP_PRECISION_BITS={s:?} is not a bit count")))
        }
        Err(_) => Ok(default),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::num::qr;

    #[test]
    fn dyadic_rounds_down_and_flags_overflow() {
        let d = Dyadic::new(8).unwrap();
        let third = d.constant(&qr(1, 3));
        assert_eq!(third, 85);
        assert_eq!(d.constant(&qr(-1, 3)), -86);
        assert_eq!(d.to_q(&d.mul(&third, &d.constant(&qr(3, 1)))), qr(255, 256));
        d.take_overflow().unwrap();
        let big = d.constant(&Q::from_integer(BigInt::from(1i64 << 50)));
        d.mul(&big, &big);
        assert_eq!(d.take_overflow(), Err(Error::Overflow));
        d.take_overflow().unwrap();
        assert!(Dyadic::new(0).is_err());
    }
}
