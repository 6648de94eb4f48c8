//! Semirings for the run-summing dynamic programs.
//!
//! The same recurrence is instantiated over real weights, log weights and
//! exact run counts.

use std::fmt::Debug;

use num_bigint::BigUint;
use num_traits::{One, Zero};
use serde::{Deserialize, Serialize};

pub trait Semiring {
    type Elem: Clone + Debug + PartialEq;

    fn zero() -> Self::Elem;
    fn one() -> Self::Elem;
    fn add(a: &Self::Elem, b: &Self::Elem) -> Self::Elem;
    fn mul(a: &Self::Elem, b: &Self::Elem) -> Self::Elem;
    fn is_zero(a: &Self::Elem) -> bool;

    fn add_assign(acc: &mut Self::Elem, b: &Self::Elem) {
        *acc = Self::add(acc, b);
    }
}

/// Semirings whose elements represent nonnegative reals.
pub trait FloatSemiring: Semiring<Elem = f64> {
    fn from_real(x: f64) -> f64;
    fn to_real(x: f64) -> f64;
    /// Lift an unnormalized log weight.
    fn from_log(x: f64) -> f64;
    /// Division by a nonzero element.
    fn div(a: f64, b: f64) -> f64;
}

/// Ordinary `(+, ×)` over `f64`.
#[derive(Clone, Copy, Debug)]
pub struct Real;

impl Semiring for Real {
    type Elem = f64;

    fn zero() -> f64 {
        0.0
    }
    fn one() -> f64 {
        1.0
    }
    fn add(a: &f64, b: &f64) -> f64 {
        a + b
    }
    fn mul(a: &f64, b: &f64) -> f64 {
        a * b
    }
    fn is_zero(a: &f64) -> bool {
        *a == 0.0
    }
    fn add_assign(acc: &mut f64, b: &f64) {
        *acc += b;
    }
}

impl FloatSemiring for Real {
    fn from_real(x: f64) -> f64 {
        x
    }
    fn to_real(x: f64) -> f64 {
        x
    }
    fn from_log(x: f64) -> f64 {
        x.exp()
    }
    fn div(a: f64, b: f64) -> f64 {
        a / b
    }
}

/// Log semiring: addition is log-sum-exp, multiplication is addition,
/// zero is `-inf`, one is `0`.
#[derive(Clone, Copy, Debug)]
pub struct Log;

/// Numerically stable `ln(e^a + e^b)`.
pub fn log_add_exp(a: f64, b: f64) -> f64 {
    if a == f64::NEG_INFINITY {
        return b;
    }
    if b == f64::NEG_INFINITY {
        return a;
    }
    let (hi, lo) = if a >= b { (a, b) } else { (b, a) };
    hi + (lo - hi).exp().ln_1p()
}

impl Semiring for Log {
    type Elem = f64;

    fn zero() -> f64 {
        f64::NEG_INFINITY
    }
    fn one() -> f64 {
        0.0
    }
    fn add(a: &f64, b: &f64) -> f64 {
        log_add_exp(*a, *b)
    }
    fn mul(a: &f64, b: &f64) -> f64 {
        a + b
    }
    fn is_zero(a: &f64) -> bool {
        *a == f64::NEG_INFINITY
    }
}

impl FloatSemiring for Log {
    fn from_real(x: f64) -> f64 {
        x.ln()
    }
    fn to_real(x: f64) -> f64 {
        x.exp()
    }
    fn from_log(x: f64) -> f64 {
        x
    }
    fn div(a: f64, b: f64) -> f64 {
        if a == f64::NEG_INFINITY {
            a
        } else {
            a - b
        }
    }
}

/// Exact nonnegative integer counting.
#[derive(Clone, Copy, Debug)]
pub struct Count;

impl Semiring for Count {
    type Elem = BigUint;

    fn zero() -> BigUint {
        BigUint::zero()
    }
    fn one() -> BigUint {
        BigUint::one()
    }
    fn add(a: &BigUint, b: &BigUint) -> BigUint {
        a + b
    }
    fn mul(a: &BigUint, b: &BigUint) -> BigUint {
        if a.is_zero() || b.is_zero() {
            return BigUint::zero();
        }
        a * b
    }
    fn is_zero(a: &BigUint) -> bool {
        a.is_zero()
    }
    fn add_assign(acc: &mut BigUint, b: &BigUint) {
        if !b.is_zero() {
            *acc += b;
        }
    }
}

/// Runtime choice of floating semiring.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SemiringMode {
    Real,
    #[default]
    Log,
}
