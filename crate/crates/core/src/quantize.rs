//! Power-of-two elastic activation quantization and 1-bit weights.

use serde::{Deserialize, Serialize};

use crate::energy::{Op, OpCounter};
use crate::error::{Error, Result};
use crate::kernels::pow2_of_real;
use crate::numerics::{shift_i64, FixedTensor};

/// Default activation width.
pub const DEFAULT_ACT_BITS: u32 = 4;

/// `alpha` snapped to the nearest power of two (`log2` rounded, ties up).
pub fn pow2_scale(alpha: f64) -> Result<i32> {
    if !(alpha > 0.0) {
        return Err(Error::Domain(format!("scale {alpha} must be positive")));
    }
    Ok(pow2_of_real(alpha)?.0)
}

/// Elastic quantizer parameters: scale `alpha = 2^k_alpha`, threshold `beta`,
/// `bits`-bit unsigned levels.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ElasticParams {
    pub alpha: f64,
    pub beta: f64,
    pub k_alpha: i32,
    pub bits: u32,
}

impl ElasticParams {
    pub fn new(alpha: f64, beta: f64, bits: u32) -> Result<Self> {
        let k_alpha = pow2_scale(alpha)?;
        Self::check_bits(bits)?;
        Ok(Self {
            alpha,
            beta,
            k_alpha,
            bits,
        })
    }

    pub fn from_exponent(k_alpha: i32, beta: f64, bits: u32) -> Result<Self> {
        Self::check_bits(bits)?;
        Ok(Self {
            alpha: (k_alpha as f64).exp2(),
            beta,
            k_alpha,
            bits,
        })
    }

    fn check_bits(bits: u32) -> Result<()> {
        if !(1..=16).contains(&bits) {
            return Err(Error::Domain(format!(
                "activation width {bits} not in 1..=16"
            )));
        }
        Ok(())
    }

    pub fn max_level(&self) -> i64 {
        (1i64 << self.bits) - 1
    }

    /// Snaps `beta` onto a `2^-frac_bits` grid.
    pub fn snap_beta(mut self, frac_bits: u32) -> Self {
        let s = (frac_bits as f64).exp2();
        self.beta = (self.beta * s).round() / s;
        self
    }

    /// Level for a real input: `round_half_up(clip((x - beta) 2^-k, 0, max))`.
    pub fn level_of(&self, x: f64) -> i64 {
        let v = (x - self.beta) * (-(self.k_alpha as f64)).exp2();
        ((v + 0.5).floor() as i64).clamp(0, self.max_level())
    }

    /// Quantized real value `2^k * level`.
    pub fn quantize_real(&self, x: f64) -> f64 {
        self.level_of(x) as f64 * self.alpha_pow2()
    }

    pub fn alpha_pow2(&self) -> f64 {
        (self.k_alpha as f64).exp2()
    }
}

/// Integer levels of `x` under `p`, computed with one subtraction, one
/// rounding addition and one shift per element.
pub fn elastic_levels(x: &FixedTensor, p: &ElasticParams, ops: &mut OpCounter) -> Result<Vec<i64>> {
    let f = x.frac_bits();
    let beta_m = (p.beta * (f as f64).exp2()).round() as i64;
    let shift = f as i32 + p.k_alpha;
    let max = p.max_level();
    let n = x.len() as u64;
    ops.record(Op::Sub, n);
    ops.record(Op::Shift, n);
    if shift > 0 {
        ops.record(Op::Add, n);
    }
    x.mantissas()
        .iter()
        .map(|&m| {
            let d = m
                .checked_sub(beta_m)
                .ok_or_else(|| Error::Overflow("threshold subtraction".into()))?;
            let q = if shift > 0 {
                (d + (1i64 << (shift - 1))) >> shift
            } else {
                // Below-grid scales saturate quickly, so clamp before shifting.
                let bound = (max + 1) << 1;
                shift_i64(d.clamp(-bound, bound), -shift)?
            };
            Ok(q.clamp(0, max))
        })
        .collect()
}

/// `round(clip((X_R - beta) >> k, 0, 2^a - 1)) << k` on the input grid.
pub fn elastic_binarize(x: &FixedTensor, p: &ElasticParams) -> Result<FixedTensor> {
    let levels = elastic_levels(x, p, &mut OpCounter::new())?;
    let back = p.k_alpha + x.frac_bits() as i32;
    let out = levels
        .into_iter()
        .map(|q| shift_i64(q, back))
        .collect::<Result<Vec<_>>>()?;
    x.with_mantissas(out, x.shape().to_vec())
}

/// Fraction of samples where dividing by `alpha` and shifting by its
/// power-of-two exponent round to different levels.
pub fn division_shift_disagreement(samples: &[f64], p: &ElasticParams) -> f64 {
    if samples.is_empty() {
        return 0.0;
    }
    let max = p.max_level();
    let differ = samples
        .iter()
        .filter(|&&x| {
            let by_div = (((x - p.beta) / p.alpha + 0.5).floor() as i64).clamp(0, max);
            by_div != p.level_of(x)
        })
        .count();
    differ as f64 / samples.len() as f64
}

/// Fits a power-of-two scale (`beta = 0`) minimizing squared quantization
/// error over the samples.
pub fn fit_elastic(samples: &[f64], bits: u32) -> Result<ElasticParams> {
    let max = samples.iter().copied().fold(0.0f64, f64::max);
    let levels = ((1u64 << bits) - 1) as f64;
    let center = if max > 0.0 {
        pow2_scale(max / levels)?
    } else {
        0
    };
    let mut best: Option<(f64, i32)> = None;
    for k in center - 4..=center + 4 {
        let p = ElasticParams::from_exponent(k, 0.0, bits)?;
        let err: f64 = samples
            .iter()
            .map(|&x| (x - p.quantize_real(x)).powi(2))
            .sum();
        if best.is_none_or(|(e, _)| err < e) {
            best = Some((err, k));
        }
    }
    let (_, k) = best.expect("non-empty scan");
    ElasticParams::from_exponent(k, 0.0, bits)
}

/// Sign matrix `[rows x cols]` with one power-of-two scale.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BinaryLinear {
    pub rows: usize,
    pub cols: usize,
    /// Row-major, entries in `{-1, +1}`.
    pub signs: Vec<i8>,
    pub scale_exponent: i32,
    pub out_bias: FixedTensor,
}

impl BinaryLinear {
    pub fn new(rows: usize, cols: usize, signs: Vec<i8>, scale_exponent: i32) -> Result<Self> {
        if signs.len() != rows * cols {
            return Err(Error::Shape(format!(
                "{} signs for a {rows}x{cols} matrix",
                signs.len()
            )));
        }
        if signs.iter().any(|&s| s != 1 && s != -1) {
            return Err(Error::Domain("binary weights must be +1 or -1".into()));
        }
        Ok(Self {
            rows,
            cols,
            signs,
            scale_exponent,
            out_bias: FixedTensor::zeros(vec![cols], 0),
        })
    }

    pub fn with_bias(mut self, bias: FixedTensor) -> Result<Self> {
        if bias.len() != self.cols {
            return Err(Error::Shape(format!(
                "{} biases for {} outputs",
                bias.len(),
                self.cols
            )));
        }
        self.out_bias = bias;
        Ok(self)
    }

    pub fn sign(&self, r: usize, c: usize) -> i8 {
        self.signs[r * self.cols + c]
    }

    /// Dense real weights `sign * 2^scale_exponent`.
    pub fn dequantize(&self) -> Vec<f64> {
        let s = (self.scale_exponent as f64).exp2();
        self.signs.iter().map(|&v| v as f64 * s).collect()
    }

    pub fn signs_i64(&self) -> Vec<i64> {
        self.signs.iter().map(|&s| s as i64).collect()
    }
}

/// Exponent `k` minimizing `sum (|w| - 2^k)^2` for the given mean magnitude.
fn best_pow2_for_mean(mean_abs: f64) -> Result<i32> {
    let lo = pow2_of_real(mean_abs)?.0 - 1;
    // Error is a parabola in 2^k centered on the mean: compare neighbours.
    let candidates = [lo - 1, lo, lo + 1, lo + 2];
    let err = |k: i32| ((k as f64).exp2() - mean_abs).abs();
    let mut best = candidates[0];
    for &k in &candidates[1..] {
        if err(k) <= err(best) {
            best = k;
        }
    }
    Ok(best)
}

/// Signs of `w` (zero maps to `+1`) with the power-of-two scale that
/// minimizes the reconstruction error.
pub fn binarize_weights(w: &[f64], rows: usize, cols: usize) -> Result<BinaryLinear> {
    if w.len() != rows * cols {
        return Err(Error::Shape(format!(
            "{} weights for {rows}x{cols}",
            w.len()
        )));
    }
    if w.iter().any(|v| !v.is_finite()) {
        return Err(Error::Domain("non-finite weight".into()));
    }
    let mean_abs = w.iter().map(|v| v.abs()).sum::<f64>() / w.len().max(1) as f64;
    if !(mean_abs > 0.0) {
        return Err(Error::Degenerate(
            "cannot binarize an all-zero matrix".into(),
        ));
    }
    let signs = w.iter().map(|&v| if v < 0.0 { -1 } else { 1 }).collect();
    BinaryLinear::new(rows, cols, signs, best_pow2_for_mean(mean_abs)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, Normal};

    #[test]
    fn pow2_scale_examples() {
        assert_eq!(pow2_scale(1.0).unwrap(), 0);
        assert_eq!(pow2_scale(0.25).unwrap(), -2);
        // log2 0.3 = -1.737
        assert_eq!(0.3f64.log2().round(), -2.0);
        assert_eq!(pow2_scale(0.3).unwrap(), -2);
        assert!(pow2_scale(0.0).is_err());
        assert!(pow2_scale(-1.0).is_err());
    }

    #[test]
    fn one_bit_examples() {
        let one_bit = |alpha: f64, beta: f64| ElasticParams::new(alpha, beta, 1).unwrap();
        let x = FixedTensor::from_real_vec(&[0.7, -5.0], 8).unwrap();
        let y = elastic_binarize(&x, &one_bit(1.0, 0.0)).unwrap();
        assert_eq!(y.to_reals(), vec![1.0, 0.0]);
        // (0.8 - 0.5) * 2 = 0.6 -> 1 -> 0.5
        let x = FixedTensor::from_real_vec(&[0.8], 8).unwrap();
        let y = elastic_binarize(&x, &one_bit(0.5, 0.5)).unwrap();
        assert_eq!(y.to_reals(), vec![0.5]);
    }

    #[test]
    fn multi_level_grid() {
        let p = ElasticParams::from_exponent(-2, 0.0, 4).unwrap();
        let x = FixedTensor::from_real_vec(&[-1.0, 0.1, 0.125, 0.3, 3.6, 10.0], 8).unwrap();
        let lv = elastic_levels(&x, &p, &mut OpCounter::new()).unwrap();
        // 0.1/0.25 = 0.39 (0.1 on the grid is 26/256) -> 0; 0.125/0.25 = 0.5 -> 1 (half up)
        assert_eq!(lv, vec![0, 0, 1, 1, 14, 15]);
        for (x, q) in [-1.0f64, 0.1, 0.125, 0.3, 3.6, 10.0].iter().zip(&lv) {
            let xr = (x * 256.0 + 0.5).floor() / 256.0;
            assert_eq!(p.level_of(xr), *q);
        }
    }

    #[test]
    fn fine_scale_below_grid() {
        // alpha = 2^-10 with 8 fractional bits: shift left by 2.
        let p = ElasticParams::from_exponent(-10, 0.0, 4).unwrap();
        let x = FixedTensor::new(vec![1, 3, 100, -4], vec![4], 8).unwrap();
        let lv = elastic_levels(&x, &p, &mut OpCounter::new()).unwrap();
        assert_eq!(lv, vec![4, 12, 15, 0]);
    }

    #[test]
    fn quantizer_is_multiplier_free() {
        let p = ElasticParams::from_exponent(-3, 0.25, 4).unwrap();
        let x = FixedTensor::from_real_vec(&[0.5; 10], 8).unwrap();
        let mut ops = OpCounter::new();
        elastic_levels(&x, &p, &mut ops).unwrap();
        assert!(ops.is_multiplier_free());
        assert_eq!(ops.sub, 10);
    }

    #[test]
    fn disagreement_is_zero_for_pow2_alpha() {
        let p = ElasticParams::new(0.25, 0.0, 4).unwrap();
        let xs: Vec<f64> = (0..1000).map(|i| i as f64 / 250.0).collect();
        assert_eq!(division_shift_disagreement(&xs, &p), 0.0);
        let p = ElasticParams::new(0.3, 0.0, 4).unwrap();
        assert!(division_shift_disagreement(&xs, &p) > 0.0);
    }

    #[test]
    fn binarize_examples() {
        let b = binarize_weights(&[0.5, -0.5], 1, 2).unwrap();
        assert_eq!(b.signs, vec![1, -1]);
        assert_eq!(b.scale_exponent, -1);
        assert_eq!(b.dequantize(), vec![0.5, -0.5]);

        let w = [0.25, -0.25, 0.25, 0.25, -0.25, -0.25];
        let b = binarize_weights(&w, 2, 3).unwrap();
        assert_eq!(b.dequantize(), w.to_vec());
        assert!(matches!(
            binarize_weights(&[0.0, -0.0], 1, 2),
            Err(Error::Degenerate(_))
        ));
        let b = binarize_weights(&[0.0, 1.0], 1, 2).unwrap();
        assert_eq!(b.signs, vec![1, 1]);
    }

    #[test]
    fn binarize_scale_beats_neighbours() {
        let mut rng = ChaCha8Rng::seed_from_u64(41);
        for trial in 0..200 {
            let std = 0.01 * (1.0 + trial as f64);
            let normal = Normal::new(0.0, std).unwrap();
            let w: Vec<f64> = (0..64).map(|_| normal.sample(&mut rng)).collect();
            let b = binarize_weights(&w, 8, 8).unwrap();
            let err = |k: i32| -> f64 {
                w.iter()
                    .map(|v| (v - v.signum() * (k as f64).exp2()).powi(2))
                    .sum()
            };
            let k_star = b.scale_exponent;
            for k in k_star - 2..=k_star + 2 {
                assert!(err(k_star) <= err(k) + 1e-15, "k*={k_star} beaten by {k}");
            }
        }
    }

    #[test]
    fn fit_prefers_covering_scale() {
        let xs: Vec<f64> = (0..200).map(|i| i as f64 / 100.0).collect();
        let p = fit_elastic(&xs, 4).unwrap();
        // 2.0 / 15 = 0.133: the fitted scale is within one octave of it.
        assert!((-4..=-2).contains(&p.k_alpha), "{}", p.k_alpha);
    }

    proptest! {
        #[test]
        fn outputs_on_grid_and_monotone(mut v in proptest::collection::vec(-4000i64..4000, 2..40), k in -6i32..2, beta in -2.0f64..2.0, bits in 1u32..5) {
            v.sort();
            let x = FixedTensor::new(v.clone(), vec![v.len()], 8).unwrap();
            let p = ElasticParams::from_exponent(k, beta, bits).unwrap().snap_beta(8);
            let y = elastic_binarize(&x, &p).unwrap();
            let step = (k as f64).exp2();
            let mut distinct = std::collections::BTreeSet::new();
            for w in y.to_reals().windows(2) {
                prop_assert!(w[0] <= w[1]);
            }
            for r in y.to_reals() {
                let q = r / step;
                prop_assert!(q.fract() == 0.0);
                distinct.insert(q as i64);
            }
            prop_assert!(distinct.len() <= 1 << bits);
        }

        #[test]
        fn signs_agree_with_weights(w in proptest::collection::vec(-1.0f64..1.0, 1..50)) {
            prop_assume!(w.iter().any(|v| *v != 0.0));
            let b = binarize_weights(&w, 1, w.len()).unwrap();
            for (s, v) in b.signs.iter().zip(&w) {
                prop_assert!(*s as f64 * v >= 0.0);
            }
        }
    }
}
