//! Fixed-point carriers and power-of-two arithmetic.
//!
//! Every inference-path value is a [`FixedTensor`]: integer mantissas sharing
//! one binary point. Scaling by powers of two is expressed as [`Pow2Exponent`]
//! and applied with arithmetic shifts, never with multiplication.

mod fixed;
mod pow2;

pub use fixed::{FixedTensor, DEFAULT_BIT_WIDTH, DEFAULT_FRAC_BITS};
pub use pow2::{
    floor_log2, nearest_pow2_exponent, pow2_lut, shift_div, shift_i64, Dyadic, Pow2Exponent,
    Pow2Lut, RoundMode, LUT_MAX_MANTISSA,
};
