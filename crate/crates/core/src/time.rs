//! Integer nanosecond time points.
//!
//! All boundaries are stored as signed 64-bit nanosecond offsets from the start
//! of a recording. Decimal seconds coming from text formats are converted
//! exactly, rounding half to even at the nanosecond digit.

use std::fmt;
use std::ops::{Add, Sub};

use serde::{Deserialize, Serialize};

pub const NS_PER_SEC: i64 = 1_000_000_000;
pub const NS_PER_MS: i64 = 1_000_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Time(i64);

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum TimeParseError {
    #[error("not a decimal number: {0:?}")]
    Syntax(String),
    #[error("time out of range: {0:?}")]
    Overflow(String),
}

impl Time {
    pub const ZERO: Time = Time(0);

    pub const fn from_ns(ns: i64) -> Time {
        Time(ns)
    }

    pub const fn ns(self) -> i64 {
        self.0
    }

    pub const fn from_ms(ms: i64) -> Time {
        Time(ms * NS_PER_MS)
    }

    /// Nearest nanosecond to a floating-point second count.
    pub fn from_secs_f64(secs: f64) -> Time {
        Time((secs * NS_PER_SEC as f64).round() as i64)
    }

    pub fn as_secs_f64(self) -> f64 {
        self.0 as f64 / NS_PER_SEC as f64
    }

    /// Parses a decimal literal in seconds (`140.666`, `-0.5`, `1.5e-3`).
    pub fn parse_secs(literal: &str) -> Result<Time, TimeParseError> {
        parse_decimal_ns(literal)
            .map_err(|overflow| {
                if overflow {
                    TimeParseError::Overflow(literal.to_string())
                } else {
                    TimeParseError::Syntax(literal.to_string())
                }
            })
            .map(Time)
    }

    /// Shortest decimal seconds with at most nine fractional digits.
    pub fn secs_string(self) -> String {
        let sign = if self.0 < 0 { "-" } else { "" };
        let abs = self.0.unsigned_abs();
        let whole = abs / NS_PER_SEC as u64;
        let frac = abs % NS_PER_SEC as u64;
        if frac == 0 {
            return format!("{sign}{whole}");
        }
        let digits = format!("{frac:09}");
        format!("{sign}{whole}.{}", digits.trim_end_matches('0'))
    }

    pub fn abs_diff(self, other: Time) -> i64 {
        (self.0 - other.0).abs()
    }
}

impl fmt::Display for Time {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.secs_string())
    }
}

impl Add<i64> for Time {
    type Output = Time;
    fn add(self, ns: i64) -> Time {
        Time(self.0 + ns)
    }
}

impl Sub for Time {
    type Output = i64;
    fn sub(self, other: Time) -> i64 {
        self.0 - other.0
    }
}

/// Exact decimal-to-nanosecond conversion. `Err(true)` signals overflow,
/// `Err(false)` a syntax error.
fn parse_decimal_ns(s: &str) -> Result<i64, bool> {
    let s = s.trim();
    let (negative, body) = match s.as_bytes().first() {
        Some(b'-') => (true, &s[1..]),
        Some(b'+') => (false, &s[1..]),
        _ => (false, s),
    };
    let (mantissa, exponent) = match body.find(['e', 'E']) {
        Some(pos) => {
            let exp: i32 = body[pos + 1..].parse().map_err(|_| false)?;
            (&body[..pos], exp)
        }
        None => (body, 0),
    };
    let (int_part, frac_part) = match mantissa.find('.') {
        Some(pos) => (&mantissa[..pos], &mantissa[pos + 1..]),
        None => (mantissa, ""),
    };
    if int_part.is_empty() && frac_part.is_empty() {
        return Err(false);
    }
    if !int_part.bytes().chain(frac_part.bytes()).all(|b| b.is_ascii_digit()) {
        return Err(false);
    }

    // value = digits * 10^scale
    let digits: Vec<u8> = int_part
        .bytes()
        .chain(frac_part.bytes())
        .map(|b| b - b'0')
        .skip_while(|&d| d == 0)
        .collect();
    let scale = exponent as i64 - frac_part.len() as i64 + 9;

    if digits.is_empty() {
        return Ok(0);
    }
    // Integer digits kept = digits.len() + scale (when scale < 0, some digits are dropped).
    let kept = digits.len() as i64 + scale;
    if kept > 19 {
        return Err(true);
    }
    let mut value: u128 = 0;
    if kept <= 0 {
        // Entirely fractional: round half-even against zero.
        let round_up = if kept < 0 {
            false
        } else {
            half_even_round_up(0, &digits)
        };
        value = round_up as u128;
    } else {
        let kept = kept as usize;
        for i in 0..kept {
            value = value * 10 + *digits.get(i).unwrap_or(&0) as u128;
        }
        if digits.len() > kept && half_even_round_up((value % 10) as u8, &digits[kept..]) {
            value += 1;
        }
    }
    let limit = if negative { i64::MAX as u128 + 1 } else { i64::MAX as u128 };
    if value > limit {
        return Err(true);
    }
    Ok(if negative {
        (value as i128).wrapping_neg() as i64
    } else {
        value as i64
    })
}

/// Decides rounding of the dropped digit tail given the last kept digit.
fn half_even_round_up(last_kept: u8, dropped: &[u8]) -> bool {
    match dropped.first() {
        None => false,
        Some(&first) if first > 5 => true,
        Some(&first) if first < 5 => false,
        Some(_) => {
            if dropped[1..].iter().any(|&d| d != 0) {
                true
            } else {
                last_kept % 2 == 1
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn parses_figure_times_exactly() {
        assert_eq!(Time::parse_secs("140.666").unwrap().ns(), 140_666_000_000);
        assert_eq!(Time::parse_secs("140.6665").unwrap().ns(), 140_666_500_000);
        assert_eq!(Time::parse_secs("0").unwrap().ns(), 0);
        assert_eq!(Time::parse_secs(".5").unwrap().ns(), 500_000_000);
        assert_eq!(Time::parse_secs("1.5e-3").unwrap().ns(), 1_500_000);
        assert_eq!(Time::parse_secs("-2").unwrap().ns(), -2_000_000_000);
        assert_eq!(Time::parse_secs("2E1").unwrap().ns(), 20_000_000_000);
    }

    #[test]
    fn rounds_half_to_even() {
        assert_eq!(Time::parse_secs("0.0000000005").unwrap().ns(), 0);
        assert_eq!(Time::parse_secs("0.0000000015").unwrap().ns(), 2);
        assert_eq!(Time::parse_secs("0.0000000025").unwrap().ns(), 2);
        assert_eq!(Time::parse_secs("0.00000000250001").unwrap().ns(), 3);
        assert_eq!(Time::parse_secs("0.0000000024999").unwrap().ns(), 2);
        assert_eq!(Time::parse_secs("1e-12").unwrap().ns(), 0);
        assert_eq!(Time::parse_secs("0.00000000051").unwrap().ns(), 1);
    }

    #[test]
    fn rejects_garbage_and_overflow() {
        for bad in ["", "-", ".", "1.2.3", "abc", "1e", "--1", "1,5", "0x10"] {
            assert!(matches!(Time::parse_secs(bad), Err(TimeParseError::Syntax(_))), "{bad}");
        }
        assert!(matches!(Time::parse_secs("1e30"), Err(TimeParseError::Overflow(_))));
        assert!(matches!(
            Time::parse_secs("99999999999999999999"),
            Err(TimeParseError::Overflow(_))
        ));
    }

    #[test]
    fn formats_shortest() {
        assert_eq!(Time::from_ns(140_666_000_000).secs_string(), "140.666");
        assert_eq!(Time::from_ns(0).secs_string(), "0");
        assert_eq!(Time::from_ns(1).secs_string(), "0.000000001");
        assert_eq!(Time::from_ns(-1_500_000_000).secs_string(), "-1.5");
    }

    proptest! {
        #[test]
        fn format_parse_round_trip(ns in -10_000_000_000_000i64..10_000_000_000_000i64) {
            let t = Time::from_ns(ns);
            prop_assert_eq!(Time::parse_secs(&t.secs_string()).unwrap(), t);
        }
    }
}
