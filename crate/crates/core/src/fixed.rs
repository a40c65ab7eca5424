//! Fixed-point decimal types with four fractional digits.
//!
//! Prices and money amounts in a repo book are quoted in cents and multiplied by
//! integer collateral quantities, so a signed 64-bit count of 1/10_000 units
//! represents every value in a book exactly. Binary floating point is never used
//! for ledger values.

use std::fmt;
use std::iter::Sum;
use std::ops::{Add, AddAssign, Neg, Sub, SubAssign};
use std::str::FromStr;

use serde::de::{self, Visitor};
use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

/// Number of ticks in one whole unit.
pub const SCALE: i64 = 10_000;

/// Failure to parse a fixed-point literal.
#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ParseFixedError {
    #[error("empty decimal literal")]
    Empty,
    #[error("invalid decimal literal {0:?}")]
    Invalid(String),
    #[error("decimal literal {0:?} has more than 4 fractional digits")]
    TooPrecise(String),
    #[error("decimal literal {0:?} is out of range")]
    Overflow(String),
}

fn parse_ticks(raw: &str) -> Result<i64, ParseFixedError> {
    let s = raw.trim();
    if s.is_empty() {
        return Err(ParseFixedError::Empty);
    }
    let (negative, rest) = match s.strip_prefix('-') {
        Some(r) => (true, r),
        None => (false, s.strip_prefix('+').unwrap_or(s)),
    };
    let rest = rest.strip_prefix('$').unwrap_or(rest).replace('_', "");
    let (int_part, frac_part) = match rest.split_once('.') {
        Some((i, f)) => (i, f),
        None => (rest.as_str(), ""),
    };
    if int_part.is_empty() && frac_part.is_empty() {
        return Err(ParseFixedError::Invalid(raw.to_string()));
    }
    if !int_part.bytes().all(|b| b.is_ascii_digit()) || !frac_part.bytes().all(|b| b.is_ascii_digit()) {
        return Err(ParseFixedError::Invalid(raw.to_string()));
    }
    let frac_trimmed = frac_part.trim_end_matches('0');
    if frac_trimmed.len() > 4 {
        return Err(ParseFixedError::TooPrecise(raw.to_string()));
    }
    let whole: i64 = if int_part.is_empty() {
        0
    } else {
        int_part
            .parse()
            .map_err(|_| ParseFixedError::Overflow(raw.to_string()))?
    };
    let mut frac: i64 = 0;
    for (i, b) in frac_trimmed.bytes().enumerate() {
        frac += i64::from(b - b'0') * 10_i64.pow(3 - i as u32);
    }
    let ticks = whole
        .checked_mul(SCALE)
        .and_then(|w| w.checked_add(frac))
        .ok_or_else(|| ParseFixedError::Overflow(raw.to_string()))?;
    Ok(if negative { -ticks } else { ticks })
}

/// Renders ticks with at least two and at most four fractional digits.
fn format_ticks(ticks: i64, f: &mut fmt::Formatter<'_>) -> fmt::Result {
    let sign = if ticks < 0 { "-" } else { "" };
    let abs = ticks.unsigned_abs();
    let whole = abs / SCALE as u64;
    let frac = abs % SCALE as u64;
    let mut digits = format!("{frac:04}");
    while digits.len() > 2 && digits.ends_with('0') {
        digits.pop();
    }
    write!(f, "{sign}{whole}.{digits}")
}

/// Divides with round-half-to-even.
pub(crate) fn div_round_half_even(num: i128, den: i128) -> i128 {
    assert!(den != 0, "division by zero");
    let (num, den) = if den < 0 { (-num, -den) } else { (num, den) };
    let q = num.div_euclid(den);
    let r = num.rem_euclid(den);
    match (2 * r).cmp(&den) {
        std::cmp::Ordering::Less => q,
        std::cmp::Ordering::Greater => q + 1,
        std::cmp::Ordering::Equal => {
            if q % 2 == 0 {
                q
            } else {
                q + 1
            }
        }
    }
}

macro_rules! fixed_point {
    ($(#[$meta:meta])* $name:ident) => {
        $(#[$meta])*
        #[derive(Debug, Clone, Copy, Default, PartialEq, Eq, PartialOrd, Ord, Hash)]
        pub struct $name(i64);

        impl $name {
            pub const ZERO: $name = $name(0);

            pub const fn from_ticks(ticks: i64) -> Self {
                $name(ticks)
            }

            pub const fn from_int(units: i64) -> Self {
                $name(units * SCALE)
            }

            /// Raw count of 1/10_000 units.
            pub const fn ticks(self) -> i64 {
                self.0
            }

            pub fn is_zero(self) -> bool {
                self.0 == 0
            }

            pub fn is_negative(self) -> bool {
                self.0 < 0
            }

            pub fn is_positive(self) -> bool {
                self.0 > 0
            }

            pub fn abs(self) -> Self {
                $name(self.0.abs())
            }

            pub fn to_f64(self) -> f64 {
                self.0 as f64 / SCALE as f64
            }

            /// Nearest representable value, ties to even.
            pub fn from_f64(value: f64) -> Self {
                let scaled = value * SCALE as f64;
                let rounded = scaled.round_ties_even();
                $name(rounded as i64)
            }
        }

        impl FromStr for $name {
            type Err = ParseFixedError;

            fn from_str(s: &str) -> Result<Self, Self::Err> {
                parse_ticks(s).map($name)
            }
        }

        impl fmt::Display for $name {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                format_ticks(self.0, f)
            }
        }

        impl Add for $name {
            type Output = $name;
            fn add(self, rhs: $name) -> $name {
                $name(self.0.checked_add(rhs.0).expect(concat!(stringify!($name), " overflow")))
            }
        }

        impl Sub for $name {
            type Output = $name;
            fn sub(self, rhs: $name) -> $name {
                $name(self.0.checked_sub(rhs.0).expect(concat!(stringify!($name), " overflow")))
            }
        }

        impl AddAssign for $name {
            fn add_assign(&mut self, rhs: $name) {
                *self = *self + rhs;
            }
        }

        impl SubAssign for $name {
            fn sub_assign(&mut self, rhs: $name) {
                *self = *self - rhs;
            }
        }

        impl Neg for $name {
            type Output = $name;
            fn neg(self) -> $name {
                $name(-self.0)
            }
        }

        impl Sum for $name {
            fn sum<I: Iterator<Item = $name>>(iter: I) -> $name {
                iter.fold($name::ZERO, |acc, x| acc + x)
            }
        }

        impl<'a> Sum<&'a $name> for $name {
            fn sum<I: Iterator<Item = &'a $name>>(iter: I) -> $name {
                iter.fold($name::ZERO, |acc, x| acc + *x)
            }
        }

        impl Serialize for $name {
            fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
                serializer.collect_str(self)
            }
        }

        impl<'de> Deserialize<'de> for $name {
            fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
                struct FixedVisitor;

                impl<'de> Visitor<'de> for FixedVisitor {
                    type Value = $name;

                    fn expecting(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                        f.write_str("a decimal string or number with at most 4 fractional digits")
                    }

                    fn visit_str<E: de::Error>(self, v: &str) -> Result<$name, E> {
                        v.parse().map_err(E::custom)
                    }

                    fn visit_i64<E: de::Error>(self, v: i64) -> Result<$name, E> {
                        v.checked_mul(SCALE).map($name).ok_or_else(|| E::custom("decimal out of range"))
                    }

                    fn visit_u64<E: de::Error>(self, v: u64) -> Result<$name, E> {
                        i64::try_from(v)
                            .ok()
                            .and_then(|v| v.checked_mul(SCALE))
                            .map($name)
                            .ok_or_else(|| E::custom("decimal out of range"))
                    }

                    fn visit_f64<E: de::Error>(self, v: f64) -> Result<$name, E> {
                        // JSON numbers arrive as binary floats; re-parse their shortest
                        // decimal rendering so 4.9 becomes exactly 4.9000.
                        format!("{v}").parse().map_err(E::custom)
                    }
                }

                deserializer.deserialize_any(FixedVisitor)
            }
        }
    };
}

fixed_point!(
    /// Signed amount of money in currency units.
    Money
);

fixed_point!(
    /// Unit price of the collateral security. Negative values only appear
    /// transiently during ingestion and are rejected by book validation.
    Price
);

fixed_point!(
    /// Dimensionless decimal such as a leverage floor or a volatility coefficient.
    Decimal4
);

impl Price {
    /// Money paid for `qty` units at this price. Always exact.
    pub fn times(self, qty: u64) -> Money {
        let q = i64::try_from(qty).expect("quantity out of range");
        Money(self.0.checked_mul(q).expect("money overflow"))
    }
}

impl Money {
    /// Signed multiple of a money amount.
    pub fn times_signed(self, n: i64) -> Money {
        Money(self.0.checked_mul(n).expect("money overflow"))
    }

    /// `self * num / den`, rounded half-to-even to the nearest tick.
    pub fn pro_rata(self, num: u64, den: u64) -> Money {
        let v = div_round_half_even(self.0 as i128 * num as i128, den as i128);
        Money(i64::try_from(v).expect("money overflow"))
    }

    /// Per-unit value `self / qty`, rounded half-to-even.
    pub fn per_unit(self, qty: u64) -> Price {
        Price(div_round_half_even(self.0 as i128, qty as i128) as i64)
    }
}

impl Decimal4 {
    /// Product of two decimals rounded half-to-even to four places.
    pub fn mul_round(self, rhs: Decimal4) -> Decimal4 {
        Decimal4(div_round_half_even(self.0 as i128 * rhs.0 as i128, SCALE as i128) as i64)
    }
}
