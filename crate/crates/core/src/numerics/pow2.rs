use std::fmt;
use std::ops::{Add, Neg, Sub};

use num_bigint::BigUint;
use serde::{Deserialize, Serialize};

use super::FixedTensor;
use crate::error::{Error, Result};

/// Exponent `k` standing for the exact value `2^k`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Pow2Exponent(pub i32);

impl Pow2Exponent {
    pub fn value(self) -> f64 {
        (self.0 as f64).exp2()
    }
}

impl Add for Pow2Exponent {
    type Output = Self;
    fn add(self, rhs: Self) -> Self {
        Self(self.0 + rhs.0)
    }
}

impl Sub for Pow2Exponent {
    type Output = Self;
    fn sub(self, rhs: Self) -> Self {
        Self(self.0 - rhs.0)
    }
}

impl Neg for Pow2Exponent {
    type Output = Self;
    fn neg(self) -> Self {
        Self(-self.0)
    }
}

impl fmt::Display for Pow2Exponent {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "2^{}", self.0)
    }
}

/// How a positive value is snapped to a power of two.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum RoundMode {
    /// `ceil(log2 x)`.
    Ceil,
    /// The integer nearest to `log2 x`, ties upward.
    #[default]
    RoundNearest,
}

impl std::str::FromStr for RoundMode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "ceil" => Ok(Self::Ceil),
            "round" | "round_nearest" | "nearest" => Ok(Self::RoundNearest),
            other => Err(Error::Domain(format!("unknown rounding mode `{other}`"))),
        }
    }
}

impl fmt::Display for RoundMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Ceil => "ceil",
            Self::RoundNearest => "round",
        })
    }
}

/// Non-negative dyadic scalar `mantissa * 2^scale`.
///
/// Fixed-point scalars map onto it with `scale = -frac_bits`; sums of powers of
/// two with mixed exponents use a negative or positive `scale` as needed.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Dyadic {
    pub mantissa: u128,
    pub scale: i32,
}

impl Dyadic {
    pub fn new(mantissa: u128, scale: i32) -> Self {
        Self { mantissa, scale }
    }

    pub fn from_fixed(mantissa: i64, frac_bits: u32) -> Result<Self> {
        if mantissa <= 0 {
            return Err(Error::Domain(format!(
                "power-of-two snapping needs x > 0, got mantissa {mantissa}"
            )));
        }
        Ok(Self::new(mantissa as u128, -(frac_bits as i32)))
    }

    pub fn integer(v: u64) -> Self {
        Self::new(v as u128, 0)
    }

    pub fn to_f64(self) -> f64 {
        self.mantissa as f64 * (self.scale as f64).exp2()
    }
}

/// `floor(log2 m)` for `m > 0`.
pub fn floor_log2(m: u128) -> u32 {
    127 - m.leading_zeros()
}

/// Exact `m >= sqrt(2) * 2^p`, where `p = floor_log2(m)`.
fn above_sqrt2_threshold(m: u128, p: u32) -> bool {
    // sqrt(2) * 2^p is irrational, so m^2 == 2^(2p+1) never happens.
    if p < 63 {
        m * m >= 1u128 << (2 * p + 1)
    } else {
        let m = BigUint::from(m);
        &m * &m >= BigUint::from(1u8) << (2 * p as usize + 1)
    }
}

/// Snaps `x > 0` to a power of two using the exact binary logarithm.
///
/// `floor(log2 x)` comes from the bit length of the mantissa; the rounding
/// decision is an exact integer comparison, so the result is correct for every
/// representable input.
pub fn nearest_pow2_exponent(x: Dyadic, mode: RoundMode) -> Result<Pow2Exponent> {
    if x.mantissa == 0 {
        return Err(Error::Domain("power-of-two snapping needs x > 0".into()));
    }
    let p = floor_log2(x.mantissa);
    let base = p as i32 + x.scale;
    let bump = match mode {
        RoundMode::Ceil => !x.mantissa.is_power_of_two(),
        RoundMode::RoundNearest => above_sqrt2_threshold(x.mantissa, p),
    };
    Ok(Pow2Exponent(base + i32::from(bump)))
}

/// Largest mantissa the lookup table accepts.
pub const LUT_MAX_MANTISSA: u128 = 1 << 24;

const FRAC_BITS: u32 = 8;
const FRAC_ENTRIES: usize = 1 << FRAC_BITS;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Entry {
    Keep,
    Bump,
    /// The `sqrt(2)` (round) or exact-power (ceil) boundary falls inside this bucket.
    Split,
}

const fn build_round_table() -> [Entry; FRAC_ENTRIES] {
    let mut t = [Entry::Keep; FRAC_ENTRIES];
    let two_unit_sq = 2 * (FRAC_ENTRIES as u64) * (FRAC_ENTRIES as u64);
    let mut i = 0;
    while i < FRAC_ENTRIES {
        let lo = (FRAC_ENTRIES + i) as u64;
        let hi = lo + 1;
        t[i] = if hi * hi <= two_unit_sq {
            Entry::Keep
        } else if lo * lo >= two_unit_sq {
            Entry::Bump
        } else {
            Entry::Split
        };
        i += 1;
    }
    t
}

const fn build_ceil_table() -> [Entry; FRAC_ENTRIES] {
    let mut t = [Entry::Bump; FRAC_ENTRIES];
    t[0] = Entry::Split;
    t
}

const fn isqrt(n: u64) -> u64 {
    if n < 2 {
        return n;
    }
    let mut x = n;
    let mut y = x.div_ceil(2);
    while y < x {
        x = y;
        y = (x + n / x) / 2;
    }
    x
}

/// `ceil(sqrt(2) * 2^p)` for every leading-one position the table covers.
const fn build_thresholds() -> [u64; 25] {
    let mut t = [0u64; 25];
    let mut p = 0;
    while p < 25 {
        t[p] = isqrt(1u64 << (2 * p + 1)) + 1;
        p += 1;
    }
    t
}

static ROUND_TABLE: [Entry; FRAC_ENTRIES] = build_round_table();
static CEIL_TABLE: [Entry; FRAC_ENTRIES] = build_ceil_table();
static SQRT2_THRESHOLDS: [u64; 25] = build_thresholds();

/// Leading-zero count plus a 256-entry table over the 8 bits that follow the
/// leading one. Buckets that straddle the rounding boundary are settled by a
/// per-exponent threshold word, so results agree bit for bit with
/// [`nearest_pow2_exponent`].
#[derive(Debug, Clone, Copy, Default)]
pub struct Pow2Lut;

impl Pow2Lut {
    pub fn in_range(x: Dyadic) -> bool {
        x.mantissa >= 1 && x.mantissa <= LUT_MAX_MANTISSA
    }

    pub fn lookup(self, x: Dyadic, mode: RoundMode) -> Result<Pow2Exponent> {
        if !Self::in_range(x) {
            return Err(Error::Range {
                value: format!("{}*2^{}", x.mantissa, x.scale),
            });
        }
        let m = x.mantissa as u64;
        let p = 63 - m.leading_zeros();
        let (idx, residual) = if p >= FRAC_BITS {
            let drop = p - FRAC_BITS;
            (((m >> drop) & 0xff) as usize, m & ((1u64 << drop) - 1))
        } else {
            (((m << (FRAC_BITS - p)) & 0xff) as usize, 0)
        };
        let table = match mode {
            RoundMode::Ceil => &CEIL_TABLE,
            RoundMode::RoundNearest => &ROUND_TABLE,
        };
        let bump = match table[idx] {
            Entry::Keep => false,
            Entry::Bump => true,
            Entry::Split => match mode {
                RoundMode::Ceil => residual != 0,
                RoundMode::RoundNearest => m >= SQRT2_THRESHOLDS[p as usize],
            },
        };
        Ok(Pow2Exponent(p as i32 + x.scale + i32::from(bump)))
    }

    /// Table lookup when in range, otherwise the exact log path. The second
    /// value reports whether the fallback was taken.
    pub fn lookup_or_fallback(self, x: Dyadic, mode: RoundMode) -> Result<(Pow2Exponent, bool)> {
        if Self::in_range(x) {
            Ok((self.lookup(x, mode)?, false))
        } else {
            Ok((nearest_pow2_exponent(x, mode)?, true))
        }
    }
}

/// Table-driven snapping of an in-range positive value.
pub fn pow2_lut(x: Dyadic, mode: RoundMode) -> Result<Pow2Exponent> {
    Pow2Lut.lookup(x, mode)
}

/// `m * 2^-k` with floor rounding; negative `k` shifts left and checks for
/// overflow.
pub fn shift_i64(m: i64, left: i32) -> Result<i64> {
    if left >= 0 {
        if m == 0 {
            return Ok(0);
        }
        let bits = left as u32;
        if bits >= 63 || m.unsigned_abs().leading_zeros() <= bits {
            return Err(Error::Overflow(format!("{m} << {left}")));
        }
        Ok(m << bits)
    } else {
        let bits = left.unsigned_abs();
        Ok(if bits >= 64 {
            if m < 0 {
                -1
            } else {
                0
            }
        } else {
            m >> bits
        })
    }
}

/// Arithmetic right shift of every mantissa by `k` (left shift when `k < 0`).
/// The binary point is unchanged.
pub fn shift_div(x: &FixedTensor, k: Pow2Exponent) -> Result<FixedTensor> {
    let out = x
        .mantissas()
        .iter()
        .map(|&m| shift_i64(m, -k.0))
        .collect::<Result<Vec<_>>>()?;
    x.with_mantissas(out, x.shape().to_vec())
}
