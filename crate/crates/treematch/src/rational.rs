//! Exact rational arithmetic used throughout the crate.
//!
//! Every matched fraction, dual value, weight, and probability is a
//! [`Rational`]: an arbitrary-precision fraction kept in lowest terms with a
//! positive denominator. No floating point enters any algorithmic decision;
//! floats appear only in presentation-layer output (e.g. z-scores in
//! reports), where they are clearly labeled.

use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::{One, Signed, Zero};

/// Arbitrary-precision rational, always normalized (lowest terms, positive
/// denominator). `num_rational::BigRational` guarantees both on construction.
pub type Rational = BigRational;

/// Shorthand constructor for small fractions. Panics if `den == 0`.
pub fn rat(num: i64, den: i64) -> Rational {
    assert!(den != 0, "rational denominator must be nonzero");
    Rational::new(BigInt::from(num), BigInt::from(den))
}

/// Shorthand for integer-valued rationals.
pub fn rint(n: i64) -> Rational {
    Rational::from_integer(BigInt::from(n))
}

/// Parses `p/q` or a bare integer `p`. Rejects empty input, a zero
/// denominator, garbage digits, and embedded whitespace.
pub fn parse_rational(s: &str) -> Result<Rational, String> {
    let s = s.trim();
    if s.is_empty() {
        return Err("empty rational".to_string());
    }
    let (num_str, den_str) = match s.split_once('/') {
        Some((n, d)) => (n, Some(d)),
        None => (s, None),
    };
    let num: BigInt = num_str
        .parse()
        .map_err(|_| format!("bad numerator in rational `{s}`"))?;
    let den: BigInt = match den_str {
        Some(d) => d
            .parse()
            .map_err(|_| format!("bad denominator in rational `{s}`"))?,
        None => BigInt::one(),
    };
    if den.is_zero() {
        return Err(format!("zero denominator in rational `{s}`"));
    }
    Ok(Rational::new(num, den))
}

/// Renders in lowest terms: `p/q`, or just `p` when the value is an integer.
/// This is the canonical interchange form used by the stream format and the
/// JSON reports; `parse_rational` round-trips it.
pub fn format_rational(r: &Rational) -> String {
    if r.denom().is_one() {
        r.numer().to_string()
    } else {
        format!("{}/{}", r.numer(), r.denom())
    }
}

/// True iff `r` is expressible with the given denominator, i.e. `r * grid`
/// is an integer. Used to assert fraction grids such as thirds or eighths.
pub fn on_grid(r: &Rational, grid: i64) -> bool {
    (r * rint(grid)).denom().is_one()
}

/// True iff `0 <= r <= 1`.
pub fn is_probability(r: &Rational) -> bool {
    !r.is_negative() && *r <= rint(1)
}
