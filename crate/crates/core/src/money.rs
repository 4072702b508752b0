use std::fmt;
use std::iter::Sum;
use std::ops::{Add, AddAssign, Neg, Sub};

use serde::{Deserialize, Serialize};

/// Euro amount held as an integer number of tenths of a cent (0.001 €).
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Money(i64);

impl Money {
    pub const ZERO: Money = Money(0);
    pub const UNITS_PER_EUR: i64 = 1000;

    pub fn from_millis(millis: i64) -> Self {
        Money(millis)
    }

    /// Nearest representable amount; halves round away from zero.
    pub fn from_eur(eur: f64) -> Self {
        Money((eur * Self::UNITS_PER_EUR as f64).round() as i64)
    }

    /// `quantity * unit_price`, rounded to the nearest 0.001 €.
    pub fn times(unit_price: Money, quantity: f64) -> Self {
        Money((unit_price.0 as f64 * quantity).round() as i64)
    }

    pub fn millis(self) -> i64 {
        self.0
    }

    pub fn to_eur(self) -> f64 {
        self.0 as f64 / Self::UNITS_PER_EUR as f64
    }

    /// Two-decimal rendering, rounding half away from zero.
    pub fn to_cents_string(self) -> String {
        let cents = (self.0.abs() + 5) / 10;
        let sign = if self.0 < 0 && cents != 0 { "-" } else { "" };
        format!("{sign}{}.{:02}", cents / 100, cents % 100)
    }
}

impl fmt::Display for Money {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let sign = if self.0 < 0 { "-" } else { "" };
        let abs = self.0.abs();
        write!(f, "{sign}{}.{:03}", abs / 1000, abs % 1000)
    }
}

impl Add for Money {
    type Output = Money;
    fn add(self, rhs: Money) -> Money {
        Money(self.0 + rhs.0)
    }
}

impl AddAssign for Money {
    fn add_assign(&mut self, rhs: Money) {
        self.0 += rhs.0;
    }
}

impl Sub for Money {
    type Output = Money;
    fn sub(self, rhs: Money) -> Money {
        Money(self.0 - rhs.0)
    }
}

impl Neg for Money {
    type Output = Money;
    fn neg(self) -> Money {
        Money(-self.0)
    }
}

impl Sum for Money {
    fn sum<I: Iterator<Item = Money>>(iter: I) -> Money {
        Money(iter.map(|m| m.0).sum())
    }
}
