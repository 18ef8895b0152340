//! Exact rational time arithmetic.
//!
//! Grids keep every node coordinate as an `i64` rational so that delayed
//! lookups are exact index shifts and regime boundaries never drift by a
//! node. Floating point only appears at evaluation sites.

use num_integer::Integer;
use num_rational::Rational64;
use num_traits::{Signed, Zero};

use crate::error::{Error, Result};

pub type Rat = Rational64;

/// Largest denominator accepted when snapping a float to a rational.
pub const MAX_DENOMINATOR: i64 = 1_000_000;

/// Relative tolerance for float-to-rational snapping.
pub const SNAP_TOLERANCE: f64 = 1e-12;

pub fn to_f64(r: Rat) -> f64 {
    *r.numer() as f64 / *r.denom() as f64
}

fn checked_ratio(n: i128, d: i128) -> Result<Rat> {
    if d == 0 {
        return Err(Error::NonCommensurate("zero denominator".into()));
    }
    let g = n.gcd(&d);
    let (mut n, mut d) = (n / g, d / g);
    if d < 0 {
        n = -n;
        d = -d;
    }
    if n > i64::MAX as i128 || n < i64::MIN as i128 || d > i64::MAX as i128 {
        return Err(Error::NonCommensurate(format!(
            "rational {n}/{d} overflows 64-bit arithmetic"
        )));
    }
    Ok(Rat::new(n as i64, d as i64))
}

/// Greatest common divisor of two positive rationals:
/// gcd(a/b, c/d) = gcd(a*d, c*b) / (b*d).
pub fn rat_gcd(x: Rat, y: Rat) -> Result<Rat> {
    if x.is_zero() {
        return Ok(y.abs());
    }
    if y.is_zero() {
        return Ok(x.abs());
    }
    let (a, b) = (*x.numer() as i128, *x.denom() as i128);
    let (c, d) = (*y.numer() as i128, *y.denom() as i128);
    let num = (a * d).abs().gcd(&(c * b).abs());
    checked_ratio(num, b * d)
}

/// Parses "2", "-0.25" or "3/8" into an exact rational.
pub fn parse_rat(text: &str) -> Result<Rat> {
    let s = text.trim();
    let bad = |m: &str| Error::NonCommensurate(format!("cannot parse {s:?} as a rational: {m}"));
    if s.is_empty() {
        return Err(bad("empty string"));
    }
    if let Some((num, den)) = s.split_once('/') {
        let n: i64 = num.trim().parse().map_err(|_| bad("bad numerator"))?;
        let d: i64 = den.trim().parse().map_err(|_| bad("bad denominator"))?;
        return checked_ratio(n as i128, d as i128);
    }
    let (sign, body) = match s.strip_prefix('-') {
        Some(rest) => (-1i128, rest),
        None => (1i128, s.strip_prefix('+').unwrap_or(s)),
    };
    let (int_part, frac_part) = match body.split_once('.') {
        Some((i, f)) => (i, f),
        None => (body, ""),
    };
    if int_part.is_empty() && frac_part.is_empty() {
        return Err(bad("no digits"));
    }
    if !int_part.chars().all(|c| c.is_ascii_digit()) || !frac_part.chars().all(|c| c.is_ascii_digit()) {
        return Err(bad("non-digit characters"));
    }
    if frac_part.len() > 18 {
        return Err(bad("too many decimal places"));
    }
    let mut num: i128 = if int_part.is_empty() { 0 } else { int_part.parse().map_err(|_| bad("integer part overflow"))? };
    let mut den: i128 = 1;
    for c in frac_part.chars() {
        num = num * 10 + (c as u8 - b'0') as i128;
        den *= 10;
    }
    checked_ratio(sign * num, den)
}

/// Renders a rational as a terminating decimal when one exists,
/// otherwise as "p/q". `parse_rat` inverts both forms exactly.
pub fn format_rat(r: Rat) -> String {
    let mut d = *r.denom();
    let mut twos = 0u32;
    let mut fives = 0u32;
    while d % 2 == 0 {
        d /= 2;
        twos += 1;
    }
    while d % 5 == 0 {
        d /= 5;
        fives += 1;
    }
    let places = twos.max(fives);
    if d == 1 && places <= 18 {
        if places == 0 {
            return r.numer().to_string();
        }
        let scale = 10i128.pow(places);
        let scaled = *r.numer() as i128 * scale / *r.denom() as i128;
        let sign = if scaled < 0 { "-" } else { "" };
        let mag = scaled.unsigned_abs();
        let int = mag / scale as u128;
        let frac = mag % scale as u128;
        let mut frac_s = format!("{frac:0width$}", width = places as usize);
        while frac_s.ends_with('0') {
            frac_s.pop();
        }
        if frac_s.is_empty() {
            return format!("{sign}{int}");
        }
        return format!("{sign}{int}.{frac_s}");
    }
    format!("{}/{}", r.numer(), r.denom())
}

/// Snaps a float to the simplest nearby rational via continued fractions.
///
/// Fails with `NonCommensurate` when no denominator up to
/// [`MAX_DENOMINATOR`] reproduces the value to [`SNAP_TOLERANCE`].
pub fn rat_from_f64(x: f64) -> Result<Rat> {
    if !x.is_finite() {
        return Err(Error::NonCommensurate(format!("{x} is not finite")));
    }
    let tol = SNAP_TOLERANCE * x.abs().max(1.0);
    // Continued-fraction convergents p/q of |x|.
    let target = x.abs();
    let (mut p0, mut q0, mut p1, mut q1) = (0i128, 1i128, 1i128, 0i128);
    let mut frac = target;
    for _ in 0..64 {
        let a = frac.floor();
        if a > i64::MAX as f64 {
            break;
        }
        let a_i = a as i128;
        let p2 = a_i * p1 + p0;
        let q2 = a_i * q1 + q0;
        if q2 > MAX_DENOMINATOR as i128 {
            break;
        }
        (p0, q0, p1, q1) = (p1, q1, p2, q2);
        let approx = p1 as f64 / q1 as f64;
        if (approx - target).abs() <= tol {
            let signed = if x < 0.0 { -p1 } else { p1 };
            return checked_ratio(signed, q1);
        }
        let rem = frac - a;
        if rem.abs() < f64::EPSILON {
            break;
        }
        frac = 1.0 / rem;
    }
    if q1 > 0 {
        let approx = p1 as f64 / q1 as f64;
        if (approx - target).abs() <= tol {
            let signed = if x < 0.0 { -p1 } else { p1 };
            return checked_ratio(signed, q1);
        }
    }
    Err(Error::NonCommensurate(format!(
        "{x} has no rational representation with denominator <= {MAX_DENOMINATOR}"
    )))
}
