//! Exact fixed-point money.
//!
//! A [`Money`] value is an integer count of resolution steps. The step size
//! itself lives in a [`Resolution`], which is carried by the network and used
//! only when converting to and from decimal text.

use std::fmt;
use std::iter::Sum;
use std::ops::{Add, AddAssign, Mul, Neg, Sub, SubAssign};

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Signed amount in units of the network resolution.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Money(pub i64);

impl Money {
    pub const ZERO: Money = Money(0);

    pub const fn units(self) -> i64 {
        self.0
    }

    pub const fn from_units(units: i64) -> Money {
        Money(units)
    }

    pub fn max(self, other: Money) -> Money {
        if self >= other {
            self
        } else {
            other
        }
    }

    pub fn min(self, other: Money) -> Money {
        if self <= other {
            self
        } else {
            other
        }
    }

    pub fn is_positive(self) -> bool {
        self.0 > 0
    }

    pub fn is_negative(self) -> bool {
        self.0 < 0
    }
}

impl Add for Money {
    type Output = Money;
    fn add(self, rhs: Money) -> Money {
        Money(self.0.checked_add(rhs.0).expect("money overflow"))
    }
}

impl Sub for Money {
    type Output = Money;
    fn sub(self, rhs: Money) -> Money {
        Money(self.0.checked_sub(rhs.0).expect("money overflow"))
    }
}

impl AddAssign for Money {
    fn add_assign(&mut self, rhs: Money) {
        *self = *self + rhs;
    }
}

impl SubAssign for Money {
    fn sub_assign(&mut self, rhs: Money) {
        *self = *self - rhs;
    }
}

impl Neg for Money {
    type Output = Money;
    fn neg(self) -> Money {
        Money(-self.0)
    }
}

impl Mul<i64> for Money {
    type Output = Money;
    fn mul(self, rhs: i64) -> Money {
        Money(self.0.checked_mul(rhs).expect("money overflow"))
    }
}

impl Sum for Money {
    fn sum<I: Iterator<Item = Money>>(iter: I) -> Money {
        iter.fold(Money::ZERO, |a, b| a + b)
    }
}

impl<'a> Sum<&'a Money> for Money {
    fn sum<I: Iterator<Item = &'a Money>>(iter: I) -> Money {
        iter.fold(Money::ZERO, |a, b| a + *b)
    }
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum MoneyError {
    #[error("malformed decimal `{0}`")]
    Malformed(String),
    #[error("`{value}` is not a multiple of the resolution {resolution}")]
    OffGrid { value: String, resolution: String },
    #[error("`{0}` is out of range")]
    Overflow(String),
}

/// Grid spacing `mantissa * 10^-decimals`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Resolution {
    mantissa: i64,
    decimals: u32,
}

impl Default for Resolution {
    fn default() -> Self {
        Resolution { mantissa: 1, decimals: 4 }
    }
}

/// Parses a plain decimal (`-12.345`) into (scaled integer, decimals).
fn parse_decimal(text: &str) -> Result<(i128, u32), MoneyError> {
    let s = text.trim();
    let bad = || MoneyError::Malformed(text.to_string());
    let (neg, body) = match s.strip_prefix('-') {
        Some(rest) => (true, rest),
        None => (false, s.strip_prefix('+').unwrap_or(s)),
    };
    if body.is_empty() {
        return Err(bad());
    }
    let (int_part, frac_part) = match body.split_once('.') {
        Some((i, f)) => (i, f),
        None => (body, ""),
    };
    if int_part.is_empty() && frac_part.is_empty() {
        return Err(bad());
    }
    if !int_part.bytes().all(|b| b.is_ascii_digit()) || !frac_part.bytes().all(|b| b.is_ascii_digit()) {
        return Err(bad());
    }
    let digits = format!("{int_part}{frac_part}");
    let digits = digits.trim_start_matches('0');
    if digits.len() > 30 {
        return Err(MoneyError::Overflow(text.to_string()));
    }
    let mut v: i128 = if digits.is_empty() { 0 } else { digits.parse().map_err(|_| bad())? };
    if neg {
        v = -v;
    }
    Ok((v, frac_part.len() as u32))
}

fn pow10(e: u32) -> i128 {
    10i128.pow(e)
}

impl Resolution {
    pub fn parse(text: &str) -> Result<Resolution, MoneyError> {
        let (v, decimals) = parse_decimal(text)?;
        if v <= 0 {
            return Err(MoneyError::Malformed(text.to_string()));
        }
        // Strip trailing zeros so equal resolutions compare equal.
        let (mut v, mut decimals) = (v, decimals);
        while decimals > 0 && v % 10 == 0 {
            v /= 10;
            decimals -= 1;
        }
        if decimals > 18 || v > i64::MAX as i128 {
            return Err(MoneyError::Overflow(text.to_string()));
        }
        Ok(Resolution { mantissa: v as i64, decimals })
    }

    pub fn decimals(&self) -> u32 {
        self.decimals
    }

    /// Converts a decimal string to an exact grid amount.
    pub fn money(&self, text: &str) -> Result<Money, MoneyError> {
        let (v, d) = parse_decimal(text)?;
        // value = v * 10^-d ; units = value / (mantissa * 10^-decimals)
        let (num, den) = if d >= self.decimals {
            (v, self.mantissa as i128 * pow10(d - self.decimals))
        } else {
            (v * pow10(self.decimals - d), self.mantissa as i128)
        };
        if num % den != 0 {
            return Err(MoneyError::OffGrid { value: text.to_string(), resolution: self.to_string() });
        }
        let units = num / den;
        i64::try_from(units).map(Money).map_err(|_| MoneyError::Overflow(text.to_string()))
    }

    /// Amount nearest to `x` on the grid.
    pub fn from_f64(&self, x: f64) -> Money {
        Money((x / self.step_f64()).round() as i64)
    }

    /// Smallest grid amount that is `>= x`.
    pub fn ceil_f64(&self, x: f64) -> Money {
        let u = x / self.step_f64();
        let r = u.round();
        // Absorb representation noise before taking the ceiling.
        if (u - r).abs() < 1e-9 {
            Money(r as i64)
        } else {
            Money(u.ceil() as i64)
        }
    }

    pub fn step_f64(&self) -> f64 {
        self.mantissa as f64 / 10f64.powi(self.decimals as i32)
    }

    pub fn to_f64(&self, m: Money) -> f64 {
        m.0 as f64 * self.step_f64()
    }

    /// Exact decimal rendering, with trailing zeros stripped.
    pub fn format(&self, m: Money) -> String {
        let scaled = m.0 as i128 * self.mantissa as i128;
        format_scaled(scaled, self.decimals)
    }

    /// Scaled-integer view (`numerator`, `10^decimals`) of an amount.
    pub fn to_ratio(&self, m: Money) -> (i128, i128) {
        (m.0 as i128 * self.mantissa as i128, pow10(self.decimals))
    }
}

fn format_scaled(scaled: i128, decimals: u32) -> String {
    let neg = scaled < 0;
    let a = scaled.unsigned_abs();
    let base = 10u128.pow(decimals);
    let int = a / base;
    let frac = a % base;
    let mut s = String::new();
    if neg {
        s.push('-');
    }
    s.push_str(&int.to_string());
    if decimals > 0 && frac != 0 {
        let f = format!("{:0width$}", frac, width = decimals as usize);
        s.push('.');
        s.push_str(f.trim_end_matches('0'));
    }
    s
}

impl fmt::Display for Resolution {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&format_scaled(self.mantissa as i128, self.decimals))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn parses_and_formats() {
        let r = Resolution::default();
        assert_eq!(r.money("1.25").unwrap(), Money(12500));
        assert_eq!(r.money("-0.0001").unwrap(), Money(-1));
        assert_eq!(r.money("3").unwrap(), Money(30000));
        assert_eq!(r.money(".5").unwrap(), Money(5000));
        assert_eq!(r.format(Money(12500)), "1.25");
        assert_eq!(r.format(Money(-1)), "-0.0001");
        assert_eq!(r.format(Money(0)), "0");
        assert_eq!(r.to_string(), "0.0001");
    }

    #[test]
    fn rejects_off_grid_and_garbage() {
        let r = Resolution::default();
        assert!(matches!(r.money("0.00001"), Err(MoneyError::OffGrid { .. })));
        assert!(matches!(r.money("1e3"), Err(MoneyError::Malformed(_))));
        assert!(matches!(r.money(""), Err(MoneyError::Malformed(_))));
        assert!(matches!(r.money("."), Err(MoneyError::Malformed(_))));
    }

    #[test]
    fn coarse_and_odd_resolutions() {
        let r = Resolution::parse("0.05").unwrap();
        assert_eq!(r.money("1.10").unwrap(), Money(22));
        assert!(r.money("1.11").is_err());
        assert_eq!(r.format(Money(22)), "1.1");
        let r = Resolution::parse("0.0100").unwrap();
        assert_eq!(r, Resolution::parse("0.01").unwrap());
        let r = Resolution::parse("5").unwrap();
        assert_eq!(r.money("15").unwrap(), Money(3));
    }

    #[test]
    fn ceil_absorbs_float_noise() {
        let r = Resolution::default();
        assert_eq!(r.ceil_f64(0.9), Money(9000));
        assert_eq!(r.ceil_f64(0.90001), Money(9001));
    }

    proptest! {
        #[test]
        fn format_parse_round_trip(units in -10_000_000_000i64..10_000_000_000) {
            let r = Resolution::default();
            let m = Money(units);
            prop_assert_eq!(r.money(&r.format(m)).unwrap(), m);
        }

        #[test]
        fn sums_are_order_independent(mut xs in proptest::collection::vec(-1_000_000i64..1_000_000, 0..40)) {
            let a: Money = xs.iter().map(|&x| Money(x)).sum();
            xs.reverse();
            let b: Money = xs.iter().map(|&x| Money(x)).sum();
            prop_assert_eq!(a, b);
        }
    }
}
