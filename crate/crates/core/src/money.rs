//! Exact fixed-point currency arithmetic.
//!
//! All settlement and ledger math runs on [`Money`], a signed fixed-point
//! amount with 10^-6 currency-unit resolution. Floating point only enters
//! at the boundary where stochastic damage draws and discounted sums are
//! quantized into money, never inside settlement itself.

use serde::{Deserialize, Serialize};
use std::fmt;
use std::iter::Sum;
use std::ops::{Add, AddAssign, Mul, Neg, Sub, SubAssign};
use std::str::FromStr;

/// Micro-units per whole currency unit.
pub const MICROS_PER_UNIT: i64 = 1_000_000;

/// Signed fixed-point currency amount, 10^-6 resolution.
///
/// Addition and subtraction are exact and associative; multiplication is
/// only defined against integer quantities (tonnes, credit counts) so that
/// settlement legs like `delta * tonnes` never round.
#[derive(
    Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default, Serialize, Deserialize,
)]
#[serde(transparent)]
pub struct Money(i64);

impl Money {
    pub const ZERO: Money = Money(0);

    /// Amount from raw micro-units.
    pub const fn from_micros(micros: i64) -> Self {
        Money(micros)
    }

    /// Amount from whole currency units.
    pub const fn from_units(units: i64) -> Self {
        Money(units * MICROS_PER_UNIT)
    }

    /// Quantize a floating-point amount (in currency units) to the nearest
    /// micro, ties away from zero. This is the single sanctioned f64 -> Money
    /// boundary.
    pub fn from_f64(units: f64) -> Self {
        let micros = (units * MICROS_PER_UNIT as f64).round();
        assert!(
            micros.is_finite() && micros.abs() < i64::MAX as f64,
            "money quantization overflow: {units}"
        );
        Money(micros as i64)
    }

    pub const fn micros(self) -> i64 {
        self.0
    }

    pub fn to_f64(self) -> f64 {
        self.0 as f64 / MICROS_PER_UNIT as f64
    }

    pub const fn is_zero(self) -> bool {
        self.0 == 0
    }

    pub const fn is_negative(self) -> bool {
        self.0 < 0
    }

    pub const fn is_positive(self) -> bool {
        self.0 > 0
    }

    pub fn abs(self) -> Self {
        Money(self.0.checked_abs().expect("money abs overflow"))
    }

    pub fn min(self, other: Self) -> Self {
        Money(self.0.min(other.0))
    }

    pub fn max(self, other: Self) -> Self {
        Money(self.0.max(other.0))
    }

    /// Exact decimal rendering with six fractional digits, for CSV columns.
    pub fn to_decimal_string(self) -> String {
        let sign = if self.0 < 0 { "-" } else { "" };
        let abs = self.0.unsigned_abs();
        format!(
            "{}{}.{:06}",
            sign,
            abs / MICROS_PER_UNIT as u64,
            abs % MICROS_PER_UNIT as u64
        )
    }
}

impl Add for Money {
    type Output = Money;
    fn add(self, rhs: Money) -> Money {
        Money(self.0.checked_add(rhs.0).expect("money add overflow"))
    }
}

impl Sub for Money {
    type Output = Money;
    fn sub(self, rhs: Money) -> Money {
        Money(self.0.checked_sub(rhs.0).expect("money sub overflow"))
    }
}

impl Neg for Money {
    type Output = Money;
    fn neg(self) -> Money {
        Money(self.0.checked_neg().expect("money neg overflow"))
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

impl Mul<u64> for Money {
    type Output = Money;
    fn mul(self, rhs: u64) -> Money {
        let rhs = i64::try_from(rhs).expect("quantity too large for money multiply");
        Money(self.0.checked_mul(rhs).expect("money mul overflow"))
    }
}

impl Sum for Money {
    fn sum<I: Iterator<Item = Money>>(iter: I) -> Money {
        iter.fold(Money::ZERO, |acc, m| acc + m)
    }
}

impl fmt::Display for Money {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.to_decimal_string())
    }
}

/// Parse error for decimal money strings.
#[derive(Debug, thiserror::Error)]
#[error("invalid money literal: {0}")]
pub struct ParseMoneyError(String);

impl FromStr for Money {
    type Err = ParseMoneyError;

    /// Parses decimal literals with up to six fractional digits, e.g.
    /// `"40"`, `"-3.5"`, `"12.345678"`.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let bad = || ParseMoneyError(s.to_string());
        let (sign, body) = match s.strip_prefix('-') {
            Some(rest) => (-1i64, rest),
            None => (1i64, s),
        };
        if body.is_empty() {
            return Err(bad());
        }
        let (int_part, frac_part) = match body.split_once('.') {
            Some((i, f)) => (i, f),
            None => (body, ""),
        };
        if frac_part.len() > 6 || (int_part.is_empty() && frac_part.is_empty()) {
            return Err(bad());
        }
        let int: i64 = if int_part.is_empty() {
            0
        } else {
            int_part.parse().map_err(|_| bad())?
        };
        let mut frac: i64 = 0;
        if !frac_part.is_empty() {
            if !frac_part.bytes().all(|b| b.is_ascii_digit()) {
                return Err(bad());
            }
            frac = frac_part.parse().map_err(|_| bad())?;
            frac *= 10i64.pow(6 - frac_part.len() as u32);
        }
        let micros = int
            .checked_mul(MICROS_PER_UNIT)
            .and_then(|m| m.checked_add(frac))
            .ok_or_else(bad)?;
        Ok(Money(sign * micros))
    }
}
