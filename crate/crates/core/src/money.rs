//! Exact rational quantities.
//!
//! All money and index math runs on arbitrary-precision rationals so that
//! rollups are independent of summation order and can be compared against
//! an oracle with zero tolerance.

use std::fmt;
use std::iter::Sum;
use std::ops::{Add, AddAssign, Mul, Neg, Sub};
use std::str::FromStr;

use num_bigint::BigInt;
use num_integer::Integer;
use num_rational::BigRational;
use num_traits::{One, Signed, Zero};
use serde::{Deserialize, Deserializer, Serialize, Serializer};

/// An exact rational number. Serialized as `"n"` or `"n/d"` in lowest terms.
#[derive(Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Default)]
pub struct Ratio(BigRational);

/// Currency amount in whole currency units, held exactly.
#[derive(Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Default)]
pub struct Money(Ratio);

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("malformed number {0:?}")]
pub struct ParseNumberError(pub String);

impl Ratio {
    pub fn zero() -> Self {
        Ratio(BigRational::zero())
    }

    pub fn one() -> Self {
        Ratio(BigRational::one())
    }

    pub fn from_integer(n: i64) -> Self {
        Ratio(BigRational::from_integer(BigInt::from(n)))
    }

    /// `num / den`; panics when `den == 0`.
    pub fn new(num: i64, den: i64) -> Self {
        Ratio(BigRational::new(BigInt::from(num), BigInt::from(den)))
    }

    pub fn from_big(inner: BigRational) -> Self {
        Ratio(inner)
    }

    pub fn as_big(&self) -> &BigRational {
        &self.0
    }

    pub fn is_zero(&self) -> bool {
        self.0.is_zero()
    }

    pub fn is_negative(&self) -> bool {
        self.0.is_negative()
    }

    pub fn is_positive(&self) -> bool {
        self.0.is_positive()
    }

    /// Division; `None` when the divisor is zero.
    pub fn checked_div(&self, rhs: &Ratio) -> Option<Ratio> {
        if rhs.0.is_zero() {
            None
        } else {
            Some(Ratio(&self.0 / &rhs.0))
        }
    }

    pub fn clamp_unit(&self) -> Ratio {
        if self.0.is_negative() {
            Ratio::zero()
        } else if self.0 > BigRational::one() {
            Ratio::one()
        } else {
            self.clone()
        }
    }

    /// Fixed-point rendering, rounding half away from zero.
    pub fn to_decimal(&self, digits: u32) -> String {
        let scale = BigInt::from(10u32).pow(digits);
        let scaled = &self.0 * BigRational::from_integer(scale.clone());
        let neg = scaled.is_negative();
        let abs = scaled.abs();
        let (q, r) = abs.numer().div_rem(abs.denom());
        let twice = r * 2;
        let rounded = if &twice >= abs.denom() { q + 1 } else { q };
        let (int_part, frac_part) = rounded.div_rem(&scale);
        let sign = if neg && !rounded_is_zero(&int_part, &frac_part) { "-" } else { "" };
        if digits == 0 {
            format!("{sign}{int_part}")
        } else {
            format!("{sign}{int_part}.{:0>width$}", frac_part.to_string(), width = digits as usize)
        }
    }

    pub fn to_f64(&self) -> f64 {
        use num_traits::ToPrimitive;
        self.0.to_f64().unwrap_or(f64::NAN)
    }
}

fn rounded_is_zero(a: &BigInt, b: &BigInt) -> bool {
    a.is_zero() && b.is_zero()
}

impl fmt::Display for Ratio {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.0.denom().is_one() {
            write!(f, "{}", self.0.numer())
        } else {
            write!(f, "{}/{}", self.0.numer(), self.0.denom())
        }
    }
}

impl fmt::Debug for Ratio {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Display::fmt(self, f)
    }
}

impl FromStr for Ratio {
    type Err = ParseNumberError;

    /// Accepts `n`, `n/d` and decimal `i.f` forms.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let err = || ParseNumberError(s.to_string());
        let t = s.trim();
        if t.is_empty() {
            return Err(err());
        }
        if let Some((n, d)) = t.split_once('/') {
            let n: BigInt = n.trim().parse().map_err(|_| err())?;
            let d: BigInt = d.trim().parse().map_err(|_| err())?;
            if d.is_zero() {
                return Err(err());
            }
            return Ok(Ratio(BigRational::new(n, d)));
        }
        if let Some((i, f)) = t.split_once('.') {
            if f.is_empty() || !f.bytes().all(|b| b.is_ascii_digit()) {
                return Err(err());
            }
            let neg = i.starts_with('-');
            let digits = format!("{}{}", i.trim_start_matches(['-', '+']), f);
            if digits.is_empty() || !digits.bytes().all(|b| b.is_ascii_digit()) {
                return Err(err());
            }
            let n: BigInt = digits.parse().map_err(|_| err())?;
            let d = BigInt::from(10u32).pow(f.len() as u32);
            let v = BigRational::new(n, d);
            return Ok(Ratio(if neg { -v } else { v }));
        }
        let n: BigInt = t.parse().map_err(|_| err())?;
        Ok(Ratio(BigRational::from_integer(n)))
    }
}

impl Serialize for Ratio {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for Ratio {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

impl Add for Ratio {
    type Output = Ratio;
    fn add(self, rhs: Ratio) -> Ratio {
        Ratio(self.0 + rhs.0)
    }
}

impl<'a> Add<&'a Ratio> for &'a Ratio {
    type Output = Ratio;
    fn add(self, rhs: &Ratio) -> Ratio {
        Ratio(&self.0 + &rhs.0)
    }
}

impl Sub for Ratio {
    type Output = Ratio;
    fn sub(self, rhs: Ratio) -> Ratio {
        Ratio(self.0 - rhs.0)
    }
}

impl<'a> Sub<&'a Ratio> for &'a Ratio {
    type Output = Ratio;
    fn sub(self, rhs: &Ratio) -> Ratio {
        Ratio(&self.0 - &rhs.0)
    }
}

impl<'a> Mul<&'a Ratio> for &'a Ratio {
    type Output = Ratio;
    fn mul(self, rhs: &Ratio) -> Ratio {
        Ratio(&self.0 * &rhs.0)
    }
}

impl Mul for Ratio {
    type Output = Ratio;
    fn mul(self, rhs: Ratio) -> Ratio {
        Ratio(self.0 * rhs.0)
    }
}

impl Neg for Ratio {
    type Output = Ratio;
    fn neg(self) -> Ratio {
        Ratio(-self.0)
    }
}

impl AddAssign<&Ratio> for Ratio {
    fn add_assign(&mut self, rhs: &Ratio) {
        self.0 += &rhs.0;
    }
}

impl Sum for Ratio {
    fn sum<I: Iterator<Item = Ratio>>(iter: I) -> Ratio {
        iter.fold(Ratio::zero(), |a, b| a + b)
    }
}

impl Money {
    pub fn zero() -> Self {
        Money(Ratio::zero())
    }

    pub fn from_units(n: i64) -> Self {
        Money(Ratio::from_integer(n))
    }

    pub fn from_ratio(r: Ratio) -> Self {
        Money(r)
    }

    pub fn as_ratio(&self) -> &Ratio {
        &self.0
    }

    pub fn is_zero(&self) -> bool {
        self.0.is_zero()
    }

    pub fn is_negative(&self) -> bool {
        self.0.is_negative()
    }

    pub fn is_positive(&self) -> bool {
        self.0.is_positive()
    }

    pub fn scale(&self, factor: &Ratio) -> Money {
        Money(&self.0 * factor)
    }

    /// `self / rhs` as a ratio; absent when `rhs` is zero.
    pub fn ratio_to(&self, rhs: &Money) -> Option<Ratio> {
        self.0.checked_div(&rhs.0)
    }

    /// Two fraction digits, as used by CSV exports.
    pub fn to_decimal(&self) -> String {
        self.0.to_decimal(2)
    }
}

impl fmt::Display for Money {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Display::fmt(&self.0, f)
    }
}

impl fmt::Debug for Money {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Display::fmt(&self.0, f)
    }
}

impl FromStr for Money {
    type Err = ParseNumberError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        s.parse().map(Money)
    }
}

impl Serialize for Money {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        self.0.serialize(s)
    }
}

impl<'de> Deserialize<'de> for Money {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        Ratio::deserialize(d).map(Money)
    }
}

impl Add for Money {
    type Output = Money;
    fn add(self, rhs: Money) -> Money {
        Money(self.0 + rhs.0)
    }
}

impl<'a> Add<&'a Money> for &'a Money {
    type Output = Money;
    fn add(self, rhs: &Money) -> Money {
        Money(&self.0 + &rhs.0)
    }
}

impl Sub for Money {
    type Output = Money;
    fn sub(self, rhs: Money) -> Money {
        Money(self.0 - rhs.0)
    }
}

impl<'a> Sub<&'a Money> for &'a Money {
    type Output = Money;
    fn sub(self, rhs: &Money) -> Money {
        Money(&self.0 - &rhs.0)
    }
}

impl AddAssign<&Money> for Money {
    fn add_assign(&mut self, rhs: &Money) {
        self.0 += &rhs.0;
    }
}

impl Sum for Money {
    fn sum<I: Iterator<Item = Money>>(iter: I) -> Money {
        iter.fold(Money::zero(), |a, b| a + b)
    }
}

impl<'a> Sum<&'a Money> for Money {
    fn sum<I: Iterator<Item = &'a Money>>(iter: I) -> Money {
        iter.fold(Money::zero(), |mut a, b| {
            a += b;
            a
        })
    }
}
