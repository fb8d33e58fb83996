//! Exact time and ratio arithmetic.
//!
//! Every duration handled by the analyses is an exact rational number of
//! microseconds. Files carry integer microseconds ([`Micros`]); values derived
//! by dividing GPU work over SMs or by an interleave ratio become
//! [`Duration`]s with small denominators.

use std::fmt;
use std::iter::Sum;
use std::ops::{Add, AddAssign, Sub, SubAssign};
use std::str::FromStr;

use num_integer::Integer;
use num_rational::Ratio;
use num_traits::{ToPrimitive, Zero};
use serde::{Deserialize, Deserializer, Serialize, Serializer};

/// Exact rational used for factors (interleave ratio, launch overhead, utilization).
pub type Rational = Ratio<i128>;

/// Whole microseconds, the unit of every duration stored in a taskset file.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Micros(pub u64);

impl Micros {
    pub const ZERO: Micros = Micros(0);

    pub fn from_ms(ms: u64) -> Self {
        Micros(ms * 1000)
    }

    pub fn get(self) -> u64 {
        self.0
    }

    pub fn to_duration(self) -> Duration {
        Duration::from_micros(self.0 as i128)
    }
}

impl Add for Micros {
    type Output = Micros;
    fn add(self, rhs: Micros) -> Micros {
        Micros(self.0 + rhs.0)
    }
}

impl Sum for Micros {
    fn sum<I: Iterator<Item = Micros>>(iter: I) -> Micros {
        Micros(iter.map(|m| m.0).sum())
    }
}

impl fmt::Display for Micros {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}us", self.0)
    }
}

/// An exact, possibly fractional, number of microseconds.
///
/// Serialized as a string: `"125"` for integers, `"125/3"` otherwise.
#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Duration(Rational);

impl Duration {
    pub fn zero() -> Self {
        Duration(Rational::zero())
    }

    pub fn from_micros(us: i128) -> Self {
        Duration(Rational::from_integer(us))
    }

    pub fn from_ratio(r: Rational) -> Self {
        Duration(r)
    }

    pub fn as_ratio(self) -> Rational {
        self.0
    }

    pub fn is_zero(self) -> bool {
        self.0.is_zero()
    }

    pub fn is_negative(self) -> bool {
        self.0 < Rational::zero()
    }

    /// Multiply by an exact factor.
    pub fn scale(self, factor: Rational) -> Self {
        Duration(self.0 * factor)
    }

    /// Divide by a positive integer count (SMs, jobs).
    pub fn div_count(self, n: u64) -> Self {
        assert!(n > 0, "division by zero count");
        Duration(self.0 / Rational::from_integer(n as i128))
    }

    pub fn times(self, n: i128) -> Self {
        Duration(self.0 * Rational::from_integer(n))
    }

    /// Number of whole `step`s that fit into `self` (floor division).
    pub fn whole_multiples_of(self, step: Duration) -> i128 {
        assert!(step.0 > Rational::zero(), "step must be positive");
        (self.0 / step.0).floor().to_integer()
    }

    /// Largest whole microsecond not above this value.
    pub fn floor_micros(self) -> i128 {
        self.0.floor().to_integer()
    }

    pub fn is_integer(self) -> bool {
        self.0.is_integer()
    }

    pub fn as_micros_f64(self) -> f64 {
        self.0.to_f64().unwrap_or(f64::NAN)
    }

    pub fn as_millis_f64(self) -> f64 {
        self.as_micros_f64() / 1000.0
    }
}

impl Default for Duration {
    fn default() -> Self {
        Duration::zero()
    }
}

impl From<Micros> for Duration {
    fn from(m: Micros) -> Self {
        m.to_duration()
    }
}

impl Add for Duration {
    type Output = Duration;
    fn add(self, rhs: Duration) -> Duration {
        if self.0.is_integer() && rhs.0.is_integer() {
            return Duration(Rational::from_integer(self.0.numer() + rhs.0.numer()));
        }
        Duration(self.0 + rhs.0)
    }
}

impl Sub for Duration {
    type Output = Duration;
    fn sub(self, rhs: Duration) -> Duration {
        if self.0.is_integer() && rhs.0.is_integer() {
            return Duration(Rational::from_integer(self.0.numer() - rhs.0.numer()));
        }
        Duration(self.0 - rhs.0)
    }
}

impl AddAssign for Duration {
    fn add_assign(&mut self, rhs: Duration) {
        *self = *self + rhs;
    }
}

impl SubAssign for Duration {
    fn sub_assign(&mut self, rhs: Duration) {
        *self = *self - rhs;
    }
}

impl Sum for Duration {
    fn sum<I: Iterator<Item = Duration>>(iter: I) -> Duration {
        iter.fold(Duration::zero(), Add::add)
    }
}

impl<'a> Sum<&'a Duration> for Duration {
    fn sum<I: Iterator<Item = &'a Duration>>(iter: I) -> Duration {
        iter.fold(Duration::zero(), |a, b| a + *b)
    }
}

impl fmt::Display for Duration {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.0.is_integer() {
            write!(f, "{}", self.0.numer())
        } else {
            write!(f, "{}/{}", self.0.numer(), self.0.denom())
        }
    }
}

impl fmt::Debug for Duration {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}us", self)
    }
}

impl FromStr for Duration {
    type Err = ParseRationalError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        parse_rational(s).map(Duration)
    }
}

impl Serialize for Duration {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for Duration {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("invalid rational `{input}`: expected an integer, a decimal like 1.45, or a fraction like 29/20")]
pub struct ParseRationalError {
    pub input: String,
}

/// Parse `"3"`, `"-1.25"`, or `"29/20"` into an exact rational.
pub fn parse_rational(s: &str) -> Result<Rational, ParseRationalError> {
    let err = || ParseRationalError { input: s.to_string() };
    let t = s.trim();
    if t.is_empty() {
        return Err(err());
    }
    if let Some((n, d)) = t.split_once('/') {
        let n: i128 = n.trim().parse().map_err(|_| err())?;
        let d: i128 = d.trim().parse().map_err(|_| err())?;
        if d == 0 {
            return Err(err());
        }
        return Ok(Rational::new(n, d));
    }
    let (neg, body) = match t.strip_prefix('-') {
        Some(rest) => (true, rest),
        None => (false, t.strip_prefix('+').unwrap_or(t)),
    };
    let (int_part, frac_part) = body.split_once('.').unwrap_or((body, ""));
    if int_part.is_empty() && frac_part.is_empty() {
        return Err(err());
    }
    let digits_ok = |p: &str| p.chars().all(|c| c.is_ascii_digit());
    if !digits_ok(int_part) || !digits_ok(frac_part) || frac_part.len() > 30 {
        return Err(err());
    }
    let int: i128 = if int_part.is_empty() { 0 } else { int_part.parse().map_err(|_| err())? };
    let scale = 10i128.checked_pow(frac_part.len() as u32).ok_or_else(err)?;
    let frac: i128 = if frac_part.is_empty() { 0 } else { frac_part.parse().map_err(|_| err())? };
    let numer = int
        .checked_mul(scale)
        .and_then(|v| v.checked_add(frac))
        .ok_or_else(err)?;
    let r = Rational::new(numer, scale);
    Ok(if neg { -r } else { r })
}

/// Render a rational as a terminating decimal when possible, else as `n/d`.
pub fn format_rational(r: &Rational) -> String {
    if r.is_integer() {
        return r.numer().to_string();
    }
    let mut d = *r.denom();
    let (mut twos, mut fives) = (0u32, 0u32);
    while d.is_multiple_of(&2) {
        d /= 2;
        twos += 1;
    }
    while d.is_multiple_of(&5) {
        d /= 5;
        fives += 1;
    }
    if d != 1 {
        return format!("{}/{}", r.numer(), r.denom());
    }
    let digits = twos.max(fives);
    let scale = 10i128.pow(digits);
    let scaled = (*r * Rational::from_integer(scale)).to_integer();
    let sign = if scaled < 0 { "-" } else { "" };
    let abs = scaled.abs();
    format!("{}{}.{:0width$}", sign, abs / scale, abs % scale, width = digits as usize)
}

/// Serde adapter storing a [`Rational`] as a decimal or fraction string.
pub mod rational_str {
    use super::{format_rational, parse_rational, Rational};
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(r: &Rational, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&format_rational(r))
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Rational, D::Error> {
        let s = String::deserialize(d)?;
        parse_rational(&s).map_err(serde::de::Error::custom)
    }
}
