//! Exact rational arithmetic helpers: parsing, formatting and grid rounding.
//!
//! Every model quantity (times, rates, volumes) is a [`Rational`]; the only
//! floating point in the whole system is the quarantined rate fit in the
//! convergence module.

use num_bigint::BigInt;
use num_traits::{One, Signed, ToPrimitive, Zero};
use thiserror::Error;

/// Exact rational scalar used throughout the model.
pub type Rational = num_rational::BigRational;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum NumberError {
    #[error("cannot parse `{0}` as an exact number (use an integer, a decimal string or \"p/q\")")]
    Parse(String),
    #[error("denominator must be nonzero in `{0}`")]
    ZeroDenominator(String),
    #[error("negative input {0} not allowed here")]
    Negative(String),
    #[error("grid step must be positive, got {0}")]
    NonPositiveStep(String),
}

/// Shorthand for small rational constants.
pub fn rat(num: i64, den: i64) -> Rational {
    Rational::new(BigInt::from(num), BigInt::from(den))
}

pub fn rat_int(n: i64) -> Rational {
    Rational::from_integer(BigInt::from(n))
}

/// Parses "p/q", decimal strings like "2.35" or "-0.5", and plain integers, exactly.
pub fn parse_rational(s: &str) -> Result<Rational, NumberError> {
    let s = s.trim();
    if s.is_empty() {
        return Err(NumberError::Parse(s.to_string()));
    }
    if let Some((p, q)) = s.split_once('/') {
        let num: BigInt = p
            .trim()
            .parse()
            .map_err(|_| NumberError::Parse(s.to_string()))?;
        let den: BigInt = q
            .trim()
            .parse()
            .map_err(|_| NumberError::Parse(s.to_string()))?;
        if den.is_zero() {
            return Err(NumberError::ZeroDenominator(s.to_string()));
        }
        return Ok(Rational::new(num, den));
    }
    if let Some((int_part, frac_part)) = s.split_once('.') {
        if frac_part.is_empty() || !frac_part.chars().all(|c| c.is_ascii_digit()) {
            return Err(NumberError::Parse(s.to_string()));
        }
        let negative = int_part.starts_with('-');
        let int_digits = int_part.strip_prefix(['-', '+']).unwrap_or(int_part);
        if !int_digits.chars().all(|c| c.is_ascii_digit()) || int_digits.is_empty() {
            return Err(NumberError::Parse(s.to_string()));
        }
        let whole: BigInt = int_digits
            .parse()
            .map_err(|_| NumberError::Parse(s.to_string()))?;
        let frac: BigInt = frac_part
            .parse()
            .map_err(|_| NumberError::Parse(s.to_string()))?;
        let scale = BigInt::from(10u32).pow(frac_part.len() as u32);
        let mut value =
            Rational::from_integer(whole) + Rational::new(frac, scale);
        if negative {
            value = -value;
        }
        return Ok(value);
    }
    let n: BigInt = s.parse().map_err(|_| NumberError::Parse(s.to_string()))?;
    Ok(Rational::from_integer(n))
}

/// Formats as "p/q", or just "p" for integers. Inverse of [`parse_rational`].
pub fn format_rational(r: &Rational) -> String {
    if r.denom().is_one() {
        r.numer().to_string()
    } else {
        format!("{}/{}", r.numer(), r.denom())
    }
}

/// Approximate value, for the optional `--decimal` CSV columns and the rate fit.
pub fn to_f64(r: &Rational) -> f64 {
    r.numer().to_f64().unwrap_or(f64::NAN) / r.denom().to_f64().unwrap_or(f64::NAN)
}

fn check_grid_args(x: &Rational, step: &Rational) -> Result<(), NumberError> {
    if x.is_negative() {
        return Err(NumberError::Negative(format_rational(x)));
    }
    if !step.is_positive() {
        return Err(NumberError::NonPositiveStep(format_rational(step)));
    }
    Ok(())
}

/// max{kΔ ≤ x | k ∈ ℕ₀} for x ≥ 0, Δ > 0.
pub fn floor_to_grid(x: &Rational, step: &Rational) -> Result<Rational, NumberError> {
    check_grid_args(x, step)?;
    Ok((x / step).floor() * step)
}

/// min{kΔ ≥ x | k ∈ ℕ₀} for x ≥ 0, Δ > 0.
pub fn ceil_to_grid(x: &Rational, step: &Rational) -> Result<Rational, NumberError> {
    check_grid_args(x, step)?;
    Ok((x / step).ceil() * step)
}

/// True iff x is a nonnegative integer multiple of step.
pub fn is_on_grid(x: &Rational, step: &Rational) -> bool {
    !x.is_negative() && step.is_positive() && (x / step).is_integer()
}

/// ⌊x/y⌋ as a big integer, for x ≥ 0, y > 0.
pub fn floor_div(x: &Rational, y: &Rational) -> BigInt {
    (x / y).floor().to_integer()
}
