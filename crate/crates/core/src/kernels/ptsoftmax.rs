//! Power-of-two softmax.
//!
//! Scores are clamped from above, each exponent becomes `ceil(score)`, the
//! normalizer `sum_j 2^e_j` is snapped to a power of two `2^k`, and every
//! output is the exact power of two `2^(e_i - k)`. Outputs are carried as
//! exponents, so small probabilities never underflow.
//!
//! Counted operations per row of length `n`: `n` shifts forming `1 << e_i`,
//! `n - 1` additions for the normalizer, one table lookup for `k`, and `n`
//! subtractions `e_i - k`. Clamping, ceiling extraction and re-referencing
//! exponents against the row maximum are bit selects and are not counted.

use serde::{Deserialize, Serialize};

use crate::energy::{Op, OpCounter};
use crate::error::{Error, Result};
use crate::numerics::{Dyadic, FixedTensor, Pow2Lut, RoundMode};

/// Upper clamp applied to scores before exponentiation.
pub const DEFAULT_CLAMP_MAX: f64 = 0.001;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PtSoftmaxConfig {
    /// `None` disables the clamp.
    pub clamp_max: Option<f64>,
    pub k_mode: RoundMode,
}

impl Default for PtSoftmaxConfig {
    fn default() -> Self {
        Self {
            clamp_max: Some(DEFAULT_CLAMP_MAX),
            k_mode: RoundMode::RoundNearest,
        }
    }
}

impl PtSoftmaxConfig {
    pub fn unclamped(k_mode: RoundMode) -> Self {
        Self {
            clamp_max: None,
            k_mode,
        }
    }
}

/// Distribution whose entries are exact powers of two `2^exponents[i]`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Pow2Distribution {
    pub exponents: Vec<i32>,
}

impl Pow2Distribution {
    pub fn len(&self) -> usize {
        self.exponents.len()
    }

    pub fn is_empty(&self) -> bool {
        self.exponents.is_empty()
    }

    pub fn probability(&self, i: usize) -> f64 {
        (self.exponents[i] as f64).exp2()
    }

    pub fn to_f64(&self) -> Vec<f64> {
        (0..self.len()).map(|i| self.probability(i)).collect()
    }

    pub fn sum(&self) -> f64 {
        self.to_f64().iter().sum()
    }
}

/// Widest accumulator window, leaving headroom for the sticky bit.
const WINDOW_BITS: u32 = 125;

/// Exact `sum_j 2^e_j` as a dyadic scalar.
///
/// Terms more than the window width below the maximum collapse into a sticky
/// low bit: the result stays strictly between its neighbours on the finer
/// grid, which preserves both the exact-power test (ceil) and the
/// `sqrt(2)` comparison (round) short of a 120-bit coincidence.
pub(crate) fn pow2_sum(exponents: &[i64]) -> Dyadic {
    let max = *exponents.iter().max().expect("non-empty");
    let min = *exponents.iter().min().expect("non-empty");
    let headroom = 64 - (exponents.len() as u64).leading_zeros();
    let span = WINDOW_BITS - headroom;
    let reference = min.max(max - span as i64);
    let mut acc: u128 = 0;
    let mut sticky = false;
    for &e in exponents {
        if e >= reference {
            acc += 1u128 << (e - reference);
        } else {
            sticky = true;
        }
    }
    if sticky {
        Dyadic::new((acc << 1) | 1, (reference - 1) as i32)
    } else {
        Dyadic::new(acc, reference as i32)
    }
}

fn to_i32(v: i64) -> Result<i32> {
    i32::try_from(v).map_err(|_| Error::Overflow(format!("exponent {v} exceeds i32")))
}

/// Core of the kernel once integer exponents `e_i` are known.
pub fn ptsoftmax_exponents(
    exponents: &[i64],
    k_mode: RoundMode,
    ops: &mut OpCounter,
) -> Result<Pow2Distribution> {
    let n = exponents.len();
    if n == 0 {
        return Err(Error::Domain("PTsoftmax over an empty row".into()));
    }
    ops.record(Op::Shift, n as u64);
    ops.record(Op::Add, n as u64 - 1);
    let sum = pow2_sum(exponents);
    let (k, fell_back) = Pow2Lut.lookup_or_fallback(sum, k_mode)?;
    ops.record(Op::Lut, 1);
    if fell_back {
        ops.record(Op::LutFallback, 1);
    }
    ops.record(Op::Sub, n as u64);
    let k = k.0 as i64;
    let exponents = exponents
        .iter()
        .map(|&e| to_i32(e - k))
        .collect::<Result<Vec<_>>>()?;
    Ok(Pow2Distribution { exponents })
}

/// Smallest grid value `>= clamp`, so a positive clamp stays positive.
fn clamp_mantissa(clamp: f64, frac_bits: u32) -> Result<i64> {
    if !clamp.is_finite() {
        return Err(Error::Domain(format!("clamp {clamp} is not finite")));
    }
    Ok((clamp * (frac_bits as f64).exp2()).ceil() as i64)
}

/// `ceil(m * 2^-f)`.
fn ceil_fixed(m: i64, frac_bits: u32) -> i64 {
    if frac_bits >= 63 {
        return i64::from(m > 0);
    }
    -((-m) >> frac_bits)
}

/// PTsoftmax over one row of fixed-point scores.
pub fn ptsoftmax_counted(
    row: &FixedTensor,
    cfg: &PtSoftmaxConfig,
    ops: &mut OpCounter,
) -> Result<Pow2Distribution> {
    ptsoftmax_mantissas(row.mantissas(), row.frac_bits(), cfg, ops)
}

pub fn ptsoftmax(row: &FixedTensor, cfg: &PtSoftmaxConfig) -> Result<Pow2Distribution> {
    ptsoftmax_counted(row, cfg, &mut OpCounter::new())
}

/// Same kernel on a raw mantissa slice.
pub fn ptsoftmax_mantissas(
    mantissas: &[i64],
    frac_bits: u32,
    cfg: &PtSoftmaxConfig,
    ops: &mut OpCounter,
) -> Result<Pow2Distribution> {
    if mantissas.is_empty() {
        return Err(Error::Domain("PTsoftmax over an empty row".into()));
    }
    let clamp = cfg
        .clamp_max
        .map(|c| clamp_mantissa(c, frac_bits))
        .transpose()?;
    let exps: Vec<i64> = mantissas
        .iter()
        .map(|&m| {
            let m = clamp.map_or(m, |c| m.min(c));
            ceil_fixed(m, frac_bits)
        })
        .collect();
    ptsoftmax_exponents(&exps, cfg.k_mode, ops)
}

/// PTsoftmax on real-valued scores (used by the simulated-quantization stage).
pub fn ptsoftmax_real(scores: &[f64], cfg: &PtSoftmaxConfig) -> Result<Pow2Distribution> {
    if scores.is_empty() {
        return Err(Error::Domain("PTsoftmax over an empty row".into()));
    }
    let mut exps = Vec::with_capacity(scores.len());
    for &s in scores {
        if !s.is_finite() {
            return Err(Error::Domain(format!("non-finite score {s}")));
        }
        let s = cfg.clamp_max.map_or(s, |c| s.min(c));
        exps.push(s.ceil() as i64);
    }
    ptsoftmax_exponents(&exps, cfg.k_mode, &mut OpCounter::new())
}
