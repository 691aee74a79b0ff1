use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Mantissa width used when none is requested.
pub const DEFAULT_BIT_WIDTH: u32 = 32;
/// Binary point used for activations unless a model config overrides it.
pub const DEFAULT_FRAC_BITS: u32 = 8;

/// Integer-mantissa tensor with one shared binary point.
///
/// Element `i` has the real value `mantissas[i] * 2^-frac_bits`. Mantissas are
/// stored as `i64` but must fit in a signed `bit_width`-bit integer; every
/// constructor and arithmetic helper checks this and reports
/// [`Error::Overflow`] instead of wrapping.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FixedTensor {
    mantissas: Vec<i64>,
    frac_bits: u32,
    shape: Vec<usize>,
    bit_width: u32,
}

fn check_width(m: i64, bit_width: u32) -> Result<()> {
    if bit_width >= 64 {
        return Ok(());
    }
    let lo = -(1i64 << (bit_width - 1));
    let hi = (1i64 << (bit_width - 1)) - 1;
    if m < lo || m > hi {
        return Err(Error::Overflow(format!(
            "mantissa {m} does not fit in {bit_width} bits"
        )));
    }
    Ok(())
}

impl FixedTensor {
    pub fn new(mantissas: Vec<i64>, shape: Vec<usize>, frac_bits: u32) -> Result<Self> {
        Self::with_width(mantissas, shape, frac_bits, DEFAULT_BIT_WIDTH)
    }

    pub fn with_width(
        mantissas: Vec<i64>,
        shape: Vec<usize>,
        frac_bits: u32,
        bit_width: u32,
    ) -> Result<Self> {
        if !(2..=64).contains(&bit_width) {
            return Err(Error::Domain(format!(
                "bit width {bit_width} not in 2..=64"
            )));
        }
        let expected: usize = shape.iter().product();
        if expected != mantissas.len() {
            return Err(Error::Shape(format!(
                "shape {shape:?} needs {expected} elements, got {}",
                mantissas.len()
            )));
        }
        for &m in &mantissas {
            check_width(m, bit_width)?;
        }
        Ok(Self {
            mantissas,
            frac_bits,
            shape,
            bit_width,
        })
    }

    pub fn zeros(shape: Vec<usize>, frac_bits: u32) -> Self {
        let n = shape.iter().product();
        Self {
            mantissas: vec![0; n],
            frac_bits,
            shape,
            bit_width: DEFAULT_BIT_WIDTH,
        }
    }

    /// Quantizes reals onto the `2^-frac_bits` grid, rounding half up.
    pub fn from_reals(values: &[f64], shape: Vec<usize>, frac_bits: u32) -> Result<Self> {
        let scale = (frac_bits as f64).exp2();
        let mut mantissas = Vec::with_capacity(values.len());
        for &v in values {
            if !v.is_finite() {
                return Err(Error::Domain(format!("non-finite value {v}")));
            }
            let m = (v * scale + 0.5).floor();
            if m.abs() >= 9.0e18 {
                return Err(Error::Overflow(format!(
                    "{v} at {frac_bits} fractional bits"
                )));
            }
            mantissas.push(m as i64);
        }
        Self::new(mantissas, shape, frac_bits)
    }

    pub fn from_real_vec(values: &[f64], frac_bits: u32) -> Result<Self> {
        Self::from_reals(values, vec![values.len()], frac_bits)
    }

    pub fn to_reals(&self) -> Vec<f64> {
        let scale = (-(self.frac_bits as f64)).exp2();
        self.mantissas.iter().map(|&m| m as f64 * scale).collect()
    }

    pub fn real(&self, i: usize) -> f64 {
        self.mantissas[i] as f64 * (-(self.frac_bits as f64)).exp2()
    }

    pub fn mantissas(&self) -> &[i64] {
        &self.mantissas
    }

    pub fn into_mantissas(self) -> Vec<i64> {
        self.mantissas
    }

    pub fn frac_bits(&self) -> u32 {
        self.frac_bits
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn bit_width(&self) -> u32 {
        self.bit_width
    }

    pub fn len(&self) -> usize {
        self.mantissas.len()
    }

    pub fn is_empty(&self) -> bool {
        self.mantissas.is_empty()
    }

    /// Size of the trailing dimension (1 for scalars).
    pub fn last_dim(&self) -> usize {
        self.shape.last().copied().unwrap_or(1)
    }

    /// Builds a tensor with the same binary point and width from new mantissas.
    pub fn with_mantissas(&self, mantissas: Vec<i64>, shape: Vec<usize>) -> Result<Self> {
        Self::with_width(mantissas, shape, self.frac_bits, self.bit_width)
    }

    pub fn reshape(mut self, shape: Vec<usize>) -> Result<Self> {
        if shape.iter().product::<usize>() != self.mantissas.len() {
            return Err(Error::Shape(format!(
                "cannot reshape {:?} into {shape:?}",
                self.shape
            )));
        }
        self.shape = shape;
        Ok(self)
    }

    /// Moves the binary point to `frac_bits`, flooring when bits are dropped.
    pub fn rescale(&self, frac_bits: u32) -> Result<Self> {
        let delta = frac_bits as i32 - self.frac_bits as i32;
        let mut out = Vec::with_capacity(self.mantissas.len());
        for &m in &self.mantissas {
            let v = super::shift_i64(m, delta)?;
            check_width(v, self.bit_width)?;
            out.push(v);
        }
        Ok(Self {
            mantissas: out,
            frac_bits,
            shape: self.shape.clone(),
            bit_width: self.bit_width,
        })
    }

    /// Elementwise sum of two tensors on the same grid.
    pub fn checked_add(&self, other: &Self) -> Result<Self> {
        if self.shape != other.shape {
            return Err(Error::Shape(format!(
                "{:?} + {:?}",
                self.shape, other.shape
            )));
        }
        if self.frac_bits != other.frac_bits {
            return Err(Error::Domain(format!(
                "binary points differ: {} vs {}",
                self.frac_bits, other.frac_bits
            )));
        }
        let mut out = Vec::with_capacity(self.len());
        for (&a, &b) in self.mantissas.iter().zip(&other.mantissas) {
            let s = a
                .checked_add(b)
                .ok_or_else(|| Error::Overflow(format!("{a} + {b}")))?;
            check_width(s, self.bit_width)?;
            out.push(s);
        }
        self.with_mantissas(out, self.shape.clone())
    }

    /// Row `r` of a rank-2 tensor.
    pub fn row(&self, r: usize) -> &[i64] {
        let w = self.last_dim();
        &self.mantissas[r * w..(r + 1) * w]
    }

    pub fn rows(&self) -> usize {
        if self.shape.len() < 2 {
            1
        } else {
            self.len() / self.last_dim()
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn width_overflow_is_an_error() {
        assert!(FixedTensor::new(vec![1 << 31], vec![1], 0).is_err());
        assert!(FixedTensor::new(vec![(1 << 31) - 1], vec![1], 0).is_ok());
        assert!(FixedTensor::new(vec![-(1 << 31)], vec![1], 0).is_ok());
        assert!(FixedTensor::with_width(vec![1 << 40], vec![1], 0, 48).is_ok());
    }

    #[test]
    fn shape_must_match_len() {
        assert!(matches!(
            FixedTensor::new(vec![1, 2, 3], vec![2, 2], 0),
            Err(Error::Shape(_))
        ));
    }

    #[test]
    fn rescale_floors() {
        let t = FixedTensor::new(vec![-3, 3, 5], vec![3], 2).unwrap();
        let r = t.rescale(1).unwrap();
        assert_eq!(r.mantissas(), &[-2, 1, 2]);
        let up = t.rescale(4).unwrap();
        assert_eq!(up.mantissas(), &[-12, 12, 20]);
    }

    #[test]
    fn add_checks_grid_and_width() {
        let a = FixedTensor::new(vec![1 << 30], vec![1], 0).unwrap();
        assert!(matches!(a.checked_add(&a), Err(Error::Overflow(_))));
        let b = FixedTensor::new(vec![1], vec![1], 1).unwrap();
        assert!(a.checked_add(&b).is_err());
    }

    proptest! {
        #[test]
        fn real_round_trip_is_lossless(ms in proptest::collection::vec(-(1i64 << 30)..(1i64 << 30), 1..32), f in 0u32..20) {
            let t = FixedTensor::new(ms.clone(), vec![ms.len()], f).unwrap();
            let back = FixedTensor::from_reals(&t.to_reals(), vec![ms.len()], f).unwrap();
            prop_assert_eq!(back, t);
        }
    }
}
