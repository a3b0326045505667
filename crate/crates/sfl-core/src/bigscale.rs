//! Configurable-precision real arithmetic and dyadic scale bookkeeping.
//!
//! Scale ladders of the form x^(2^n) leave the range of hardware floats
//! almost immediately (0.1^(2^5) = 1e-32, 0.1^(2^7) = 1e-128), so every
//! real quantity in this crate is a [`BigReal`]: an MPFR float tagged with
//! an explicit working precision.
//!
//! Semantics guaranteed by this module:
//!
//! * every operation rounds to nearest, ties to even;
//! * every operation is correctly rounded into the result precision, which
//!   is well inside the documented 2-ulp contract;
//! * a binary operation's result precision is the maximum of the operand
//!   precisions;
//! * decimal output ([`BigReal::to_decimal_shortest`]) is the shortest
//!   string that parses back to the identical bit pattern at the same
//!   precision, so serialized values are canonical.

use std::cmp::Ordering;
use std::fmt;

use rug::float::ParseFloatError;
use rug::ops::CompleteRound;
use rug::Float;

use crate::error::SflError;
use crate::Result;

/// Smallest allowed working precision in bits.
pub const MIN_PRECISION: u32 = 64;
/// Default working precision in bits; enough for depth-5 ladders at base 0.1.
pub const DEFAULT_PRECISION: u32 = 256;
/// Hard ceiling on working precision in bits.
pub const PRECISION_CEILING: u32 = 1 << 20;

/// Guard bits carried by internal accumulations before the final rounding.
const ACCUMULATE_GUARD_BITS: u32 = 64;

/// An extended-precision real number with explicit precision bookkeeping.
///
/// Cloning is cheap relative to the arithmetic itself; values are immutable
/// through the public API and safe to share across threads.
#[derive(Debug, Clone)]
pub struct BigReal {
    x: Float,
}

impl BigReal {
    // ----- constructors -------------------------------------------------

    /// Zero at the given precision.
    pub fn zero(precision: u32) -> Self {
        BigReal {
            x: Float::new(precision.max(MIN_PRECISION)),
        }
    }

    /// One at the given precision.
    pub fn one(precision: u32) -> Self {
        BigReal::from_u64(1, precision)
    }

    /// Exact conversion from an unsigned integer.
    pub fn from_u64(v: u64, precision: u32) -> Self {
        BigReal {
            x: Float::with_val(precision.max(MIN_PRECISION), v),
        }
    }

    /// Exact conversion from a signed integer.
    pub fn from_i64(v: i64, precision: u32) -> Self {
        BigReal {
            x: Float::with_val(precision.max(MIN_PRECISION), v),
        }
    }

    /// Conversion from a hardware float (exact: every f64 is representable).
    pub fn from_f64(v: f64, precision: u32) -> Self {
        BigReal {
            x: Float::with_val(precision.max(MIN_PRECISION), v),
        }
    }

    /// Parses a decimal string (plain or scientific notation) at the given
    /// precision, rounding to nearest-even.
    pub fn parse_decimal(s: &str, precision: u32) -> Result<Self> {
        let incomplete = Float::parse(s)
            .map_err(|e: ParseFloatError| SflError::Parse(format!("{e}: {s:?}")))?;
        Ok(BigReal {
            x: Float::with_val(precision.max(MIN_PRECISION), incomplete),
        })
    }

    pub(crate) fn from_float(x: Float) -> Self {
        debug_assert!(x.prec() >= MIN_PRECISION);
        BigReal { x }
    }

    pub(crate) fn float(&self) -> &Float {
        &self.x
    }

    // ----- queries ------------------------------------------------------

    /// Working precision in bits.
    pub fn prec(&self) -> u32 {
        self.x.prec()
    }

    pub fn is_zero(&self) -> bool {
        self.x.is_zero()
    }

    pub fn is_finite(&self) -> bool {
        self.x.is_finite()
    }

    pub fn is_sign_negative(&self) -> bool {
        self.x.is_sign_negative()
    }

    /// Nearest f64 (for diagnostics; lossy by design).
    pub fn to_f64(&self) -> f64 {
        self.x.to_f64()
    }

    /// Rounds to a (possibly different) precision, nearest-even.
    pub fn with_precision(&self, precision: u32) -> Self {
        BigReal {
            x: Float::with_val(precision.max(MIN_PRECISION), &self.x),
        }
    }

    fn join(&self, other: &BigReal) -> u32 {
        self.prec().max(other.prec())
    }

    // ----- arithmetic ---------------------------------------------------

    pub fn add(&self, other: &BigReal) -> BigReal {
        BigReal {
            x: Float::with_val(self.join(other), &self.x + &other.x),
        }
    }

    pub fn sub(&self, other: &BigReal) -> BigReal {
        BigReal {
            x: Float::with_val(self.join(other), &self.x - &other.x),
        }
    }

    pub fn mul(&self, other: &BigReal) -> BigReal {
        BigReal {
            x: Float::with_val(self.join(other), &self.x * &other.x),
        }
    }

    pub fn div(&self, other: &BigReal) -> Result<BigReal> {
        if other.is_zero() {
            return Err(SflError::DivisionByZero("divisor is zero".into()));
        }
        Ok(BigReal {
            x: Float::with_val(self.join(other), &self.x / &other.x),
        })
    }

    pub fn neg(&self) -> BigReal {
        BigReal {
            x: Float::with_val(self.prec(), -&self.x),
        }
    }

    pub fn abs(&self) -> BigReal {
        BigReal {
            x: Float::with_val(self.prec(), self.x.abs_ref()),
        }
    }

    pub fn square(&self) -> BigReal {
        BigReal {
            x: Float::with_val(self.prec(), self.x.square_ref()),
        }
    }

    pub fn sqrt(&self) -> Result<BigReal> {
        if self.is_sign_negative() && !self.is_zero() {
            return Err(SflError::Domain("sqrt of a negative value".into()));
        }
        Ok(BigReal {
            x: Float::with_val(self.prec(), self.x.sqrt_ref()),
        })
    }

    pub fn ln(&self) -> Result<BigReal> {
        if self.is_zero() || self.is_sign_negative() {
            return Err(SflError::Domain("ln of a non-positive value".into()));
        }
        Ok(BigReal {
            x: Float::with_val(self.prec(), self.x.ln_ref()),
        })
    }

    pub fn exp(&self) -> BigReal {
        BigReal {
            x: Float::with_val(self.prec(), self.x.exp_ref()),
        }
    }

    pub fn recip(&self) -> Result<BigReal> {
        if self.is_zero() {
            return Err(SflError::DivisionByZero("reciprocal of zero".into()));
        }
        Ok(BigReal {
            x: Float::with_val(self.prec(), self.x.recip_ref()),
        })
    }

    /// Exact multiplication by 2^k (exponent shift, never rounds).
    pub fn mul_exp2(&self, k: i32) -> BigReal {
        BigReal {
            x: Float::with_val(self.prec(), &self.x << k),
        }
    }

    pub fn min(&self, other: &BigReal) -> BigReal {
        if self <= other {
            self.clone()
        } else {
            other.clone()
        }
    }

    pub fn max(&self, other: &BigReal) -> BigReal {
        if self >= other {
            self.clone()
        } else {
            other.clone()
        }
    }

    // ----- decimal I/O --------------------------------------------------

    /// Decimal string with exactly `digits` significant digits
    /// (scientific notation), correctly rounded. `digits` is clamped to 2,
    /// the smallest count the base-10 printer supports.
    pub fn to_decimal(&self, digits: usize) -> String {
        self.x.to_string_radix(10, Some(digits.max(2)))
    }

    /// Shortest decimal string that parses back to the identical value at
    /// this precision. Binary-searches the digit count; the round-trip
    /// predicate is monotone in the number of digits.
    pub fn to_decimal_shortest(&self) -> String {
        if self.x.is_zero() {
            return "0".into();
        }
        if !self.x.is_finite() {
            return self.x.to_string();
        }
        let p = self.prec();
        let round_trips = |d: u32| -> bool {
            let s = self.x.to_string_radix(10, Some(d as usize));
            match Float::parse(&s) {
                Ok(inc) => Float::with_val(p, inc) == self.x,
                Err(_) => false,
            }
        };
        // p * log10(2) + 2 digits always round-trip.
        let mut hi = (p as f64 * std::f64::consts::LOG10_2).ceil() as u32 + 2;
        let mut lo = 2u32;
        debug_assert!(round_trips(hi));
        while lo < hi {
            let mid = lo + (hi - lo) / 2;
            if round_trips(mid) {
                hi = mid;
            } else {
                lo = mid + 1;
            }
        }
        self.x.to_string_radix(10, Some(lo as usize))
    }

    // ----- diagnostics --------------------------------------------------

    /// One unit in the last place of this value at its own precision.
    pub fn ulp(&self) -> BigReal {
        assert!(self.is_finite() && !self.is_zero(), "ulp of zero/non-finite");
        let e = self.x.get_exp().expect("finite nonzero float has an exponent");
        BigReal::one(self.prec()).mul_exp2(e - self.prec() as i32)
    }

    /// Distance between two values measured in ulps of `reference`.
    /// Diagnostic helper for accuracy assertions; saturates to f64 range.
    pub fn ulp_distance(&self, reference: &BigReal) -> f64 {
        if self == reference {
            return 0.0;
        }
        if reference.is_zero() {
            return f64::INFINITY;
        }
        let diff = self.sub(reference).abs();
        diff.div(&reference.ulp()).expect("ulp is nonzero").to_f64()
    }
}

impl PartialEq for BigReal {
    fn eq(&self, other: &Self) -> bool {
        self.x == other.x
    }
}

impl PartialOrd for BigReal {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        self.x.partial_cmp(&other.x)
    }
}

impl fmt::Display for BigReal {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.to_decimal_shortest())
    }
}

impl serde::Serialize for BigReal {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.serialize_str(&self.to_decimal_shortest())
    }
}

// Compile-time witness that values may be shared across worker threads.
fn _assert_send_sync() {
    fn check<T: Send + Sync>() {}
    check::<BigReal>();
}

// ----- scale ladder ------------------------------------------------------

/// One rung of the ladder base^(2^level), carrying its log-domain mirror.
#[derive(Debug, Clone)]
pub struct DyadicScale {
    /// Ladder base, in (0, 1).
    pub base: BigReal,
    /// Ladder level n; the materialized value is base^(2^n).
    pub level: u32,
    /// 2^level * ln(base); finite and negative for base in (0, 1).
    pub log_value: BigReal,
}

impl DyadicScale {
    pub fn new(base: BigReal, level: u32) -> Result<Self> {
        check_open_unit(&base, "scale base")?;
        // The shift by 2^level is exact; only ln rounds.
        let log_value = base.ln()?.mul_exp2(level as i32);
        Ok(DyadicScale {
            base,
            level,
            log_value,
        })
    }

    /// Materializes base^(2^level) by repeated squaring.
    pub fn value(&self) -> BigReal {
        pow_tower(&self.base, self.level).expect("base validated at construction")
    }
}

fn check_open_unit(v: &BigReal, what: &str) -> Result<()> {
    let p = v.prec();
    if !(v > &BigReal::zero(p) && v < &BigReal::one(p)) {
        return Err(SflError::Domain(format!(
            "{what} must lie strictly inside (0, 1), got {v}"
        )));
    }
    Ok(())
}

// ----- operations ---------------------------------------------------------

/// base^(2^level) by `level` successive squarings at the working precision.
///
/// Repeated squaring keeps the relative error near level/2 ulp instead of
/// the 2^level ulps a naive power loop would accumulate.
pub fn pow_tower(base: &BigReal, level: u32) -> Result<BigReal> {
    check_open_unit(base, "pow_tower base")?;
    let mut x = base.clone();
    for _ in 0..level {
        x = x.square();
    }
    Ok(x)
}

/// Smallest working precision at which eta^(2^(depth+1)) still carries
/// `guard_digits` significant decimal digits:
///
///   bits = ceil(2^(depth+1) * log2(1/eta) + guard_digits * log2(10))
///
/// clamped below by [`MIN_PRECISION`]. Monotone non-decreasing in `depth`
/// and in `guard_digits`.
pub fn required_precision(eta: &BigReal, depth: u32, guard_digits: u32) -> Result<u32> {
    check_open_unit(eta, "eta")?;
    const P: u32 = 128;
    let neg_log2_eta = -Float::with_val(P, eta.float().log2_ref());
    let ladder = Float::with_val(P, &neg_log2_eta << depth.saturating_add(1));
    let guard = Float::with_val(P, guard_digits) * Float::with_val(P, 10u32).log2();
    let bits = Float::with_val(P, &ladder + &guard).ceil();
    if bits > PRECISION_CEILING {
        let required = bits.to_f64();
        let required = if required.is_finite() && required < u64::MAX as f64 {
            required as u64
        } else {
            u64::MAX
        };
        return Err(SflError::PrecisionOverflow {
            required,
            ceiling: PRECISION_CEILING as u64,
        });
    }
    let bits = bits
        .to_integer()
        .expect("finite ceiling-checked value")
        .to_u32()
        .expect("value at most the precision ceiling");
    Ok(bits.max(MIN_PRECISION))
}

/// Sum of ln(term_i) over the sequence, in index order.
///
/// The accumulation carries 64 guard bits and rounds once at the end, so
/// exp of the result stays within a few ulp of the directly computed
/// product even over thousands of factors.
pub fn log_product_accumulate(terms: &[BigReal]) -> Result<BigReal> {
    let p = terms.iter().map(BigReal::prec).max().unwrap_or(MIN_PRECISION);
    let mut acc = Float::new(p + ACCUMULATE_GUARD_BITS);
    for (i, t) in terms.iter().enumerate() {
        if t.is_zero() || t.is_sign_negative() {
            return Err(SflError::Domain(format!(
                "log_product_accumulate term {i} is non-positive: {t}"
            )));
        }
        acc += t.float().ln_ref().complete(p + ACCUMULATE_GUARD_BITS);
    }
    Ok(BigReal::from_float(Float::with_val(p, acc)))
}
