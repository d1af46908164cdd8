//! Exact non-float fractions used for every proportion, gap and weight.
//!
//! Nothing in the audit pipeline compares floating point values. A `Fraction`
//! is converted to `f64` or to a rounded percentage only when rendered.

use std::fmt;
use std::ops::{Add, Div, Mul, Neg, Sub};
use std::str::FromStr;

use num_bigint::BigInt;
use num_integer::Integer;
use num_rational::BigRational;
use num_traits::{One, Signed, ToPrimitive, Zero};
use serde::ser::SerializeStruct;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::Error;

#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Fraction(BigRational);

impl Fraction {
    /// `numer / denom`, or `None` when the denominator is zero.
    pub fn ratio(numer: u64, denom: u64) -> Option<Self> {
        if denom == 0 {
            None
        } else {
            Some(Self(BigRational::new(numer.into(), denom.into())))
        }
    }

    pub fn from_bigints(numer: BigInt, denom: BigInt) -> Option<Self> {
        if denom.is_zero() {
            None
        } else {
            Some(Self(BigRational::new(numer, denom)))
        }
    }

    pub fn integer(value: i64) -> Self {
        Self(BigRational::from_integer(value.into()))
    }

    pub fn zero() -> Self {
        Self(BigRational::zero())
    }

    pub fn one() -> Self {
        Self(BigRational::one())
    }

    pub fn is_zero(&self) -> bool {
        self.0.is_zero()
    }

    pub fn numer(&self) -> &BigInt {
        self.0.numer()
    }

    pub fn denom(&self) -> &BigInt {
        self.0.denom()
    }

    pub fn abs(&self) -> Self {
        Self(self.0.abs())
    }

    pub fn to_f64(&self) -> f64 {
        self.0.to_f64().unwrap_or(f64::NAN)
    }

    /// Percentage rounded half-up to an integer, so 0.6752 renders as 68
    /// and 0.525 renders as 53. Negative values round half toward +inf.
    pub fn percent_half_up(&self) -> BigInt {
        // floor((200 * n + d) / (2 * d)) with d > 0
        let n = self.0.numer();
        let d = self.0.denom();
        (n * BigInt::from(200) + d).div_floor(&(d * BigInt::from(2)))
    }

    /// `"68%"`-style rendering.
    pub fn percent_label(&self) -> String {
        format!("{}%", self.percent_half_up())
    }

    /// Percentage rounded half-up to `places` decimals, e.g. `"67.5%"`.
    pub fn percent_label_places(&self, places: u32) -> String {
        if places == 0 {
            return self.percent_label();
        }
        let scale = BigInt::from(10u32).pow(places);
        let n = self.0.numer();
        let d = self.0.denom();
        let v = (n * BigInt::from(200) * &scale + d).div_floor(&(d * BigInt::from(2)));
        let sign = if v.is_negative() { "-" } else { "" };
        let (whole, frac) = v.abs().div_rem(&scale);
        format!("{sign}{whole}.{frac:0>width$}%", width = places as usize)
    }

    pub fn is_probability(&self) -> bool {
        !self.0.is_negative() && self.0 <= BigRational::one()
    }
}

impl fmt::Display for Fraction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.0.is_integer() {
            write!(f, "{}", self.0.numer())
        } else {
            write!(f, "{}/{}", self.0.numer(), self.0.denom())
        }
    }
}

/// Accepts `"3/8"`, `"0.375"`, `"-2"` and `"1e-1"`-free decimals. Decimal
/// input is converted exactly, so `"0.1"` is 1/10.
impl FromStr for Fraction {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let s = s.trim();
        let bad = || Error::InvalidNumber(s.to_string());
        if let Some((n, d)) = s.split_once('/') {
            let n: BigInt = n.trim().parse().map_err(|_| bad())?;
            let d: BigInt = d.trim().parse().map_err(|_| bad())?;
            return Self::from_bigints(n, d).ok_or_else(bad);
        }
        let (negative, body) = match s.strip_prefix('-') {
            Some(rest) => (true, rest),
            None => (false, s.strip_prefix('+').unwrap_or(s)),
        };
        let (int_part, frac_part) = body.split_once('.').unwrap_or((body, ""));
        if (int_part.is_empty() && frac_part.is_empty())
            || !int_part.bytes().all(|b| b.is_ascii_digit())
            || !frac_part.bytes().all(|b| b.is_ascii_digit())
        {
            return Err(bad());
        }
        let digits = format!("{int_part}{frac_part}");
        let mut numer: BigInt = digits.parse().map_err(|_| bad())?;
        if negative {
            numer = -numer;
        }
        let denom = num_traits::pow(BigInt::from(10), frac_part.len());
        Self::from_bigints(numer, denom).ok_or_else(bad)
    }
}

impl From<u64> for Fraction {
    fn from(value: u64) -> Self {
        Self(BigRational::from_integer(value.into()))
    }
}

macro_rules! forward_binop {
    ($trait:ident, $method:ident) => {
        impl $trait<&Fraction> for &Fraction {
            type Output = Fraction;
            fn $method(self, rhs: &Fraction) -> Fraction {
                Fraction((&self.0).$method(&rhs.0))
            }
        }
        impl $trait for Fraction {
            type Output = Fraction;
            fn $method(self, rhs: Fraction) -> Fraction {
                Fraction(self.0.$method(rhs.0))
            }
        }
    };
}

forward_binop!(Add, add);
forward_binop!(Sub, sub);
forward_binop!(Mul, mul);
forward_binop!(Div, div);

impl Neg for Fraction {
    type Output = Fraction;
    fn neg(self) -> Fraction {
        Fraction(-self.0)
    }
}

impl std::iter::Sum for Fraction {
    fn sum<I: Iterator<Item = Fraction>>(iter: I) -> Self {
        iter.fold(Fraction::zero(), |acc, x| acc + x)
    }
}

/// Serialized as `{"num": "557", "den": "1715", "value": 0.3247…, "percent": 32}`.
/// Numerator and denominator are strings because they may exceed 64 bits.
impl Serialize for Fraction {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        let mut st = serializer.serialize_struct("Fraction", 4)?;
        st.serialize_field("num", &self.numer().to_string())?;
        st.serialize_field("den", &self.denom().to_string())?;
        st.serialize_field("value", &self.to_f64())?;
        st.serialize_field("percent", &self.percent_half_up().to_i64())?;
        st.end()
    }
}

/// Config files carry fractions as strings (`"0.5"`, `"1/2"`) or plain numbers.
impl<'de> Deserialize<'de> for Fraction {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            Text(String),
            Int(i64),
            Float(f64),
        }
        let text = match Raw::deserialize(deserializer)? {
            Raw::Text(s) => s,
            Raw::Int(i) => i.to_string(),
            Raw::Float(f) => f.to_string(),
        };
        text.parse().map_err(serde::de::Error::custom)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn frac(s: &str) -> Fraction {
        s.parse().unwrap()
    }

    #[test]
    fn percent_with_places() {
        let f = Fraction::ratio(1, 3).unwrap();
        assert_eq!(f.percent_label_places(1), "33.3%");
        assert_eq!(f.percent_label_places(2), "33.33%");
        assert_eq!(Fraction::ratio(1, 200).unwrap().percent_label_places(1), "0.5%");
        assert_eq!((-Fraction::ratio(1, 200).unwrap()).percent_label_places(1), "-0.5%");
        assert_eq!(Fraction::ratio(2, 3).unwrap().percent_label_places(0), "67%");
        assert_eq!(Fraction::ratio(1, 20000).unwrap().percent_label_places(2), "0.01%");
    }

    #[test]
    fn half_up_rounding() {
        assert_eq!(Fraction::ratio(1158, 1715).unwrap().percent_half_up(), 68.into());
        assert_eq!(frac("0.525").percent_half_up(), 53.into());
        assert_eq!(frac("0.005").percent_half_up(), 1.into());
        assert_eq!(frac("0.00499").percent_half_up(), 0.into());
        assert_eq!(frac("1").percent_half_up(), 100.into());
        assert_eq!(frac("-0.02").percent_half_up(), (-2).into());
        assert_eq!(frac("-0.025").percent_half_up(), (-2).into());
    }

    #[test]
    fn parses_decimals_exactly() {
        assert_eq!(frac("0.1"), Fraction::ratio(1, 10).unwrap());
        assert_eq!(frac("3/6"), Fraction::ratio(1, 2).unwrap());
        assert_eq!(frac(".5"), Fraction::ratio(1, 2).unwrap());
        assert_eq!(frac("-2"), Fraction::integer(-2));
        assert!("".parse::<Fraction>().is_err());
        assert!("1/0".parse::<Fraction>().is_err());
        assert!("0.5x".parse::<Fraction>().is_err());
    }

    #[test]
    fn zero_denominator_is_undefined() {
        assert!(Fraction::ratio(0, 0).is_none());
        assert_eq!(Fraction::ratio(0, 5).unwrap(), Fraction::zero());
    }

    #[test]
    fn display_reduces() {
        assert_eq!(Fraction::ratio(8, 370).unwrap().to_string(), "4/185");
        assert_eq!(Fraction::ratio(4, 2).unwrap().to_string(), "2");
    }
}
