//! Floating-point reference versions of the functions the shift kernels
//! replace. They are the comparison targets in tests and in the
//! full-precision model stages.

use crate::energy::{Op, OpCounter};
use crate::error::{Error, Result};

fn check_finite(z: &[f64]) -> Result<()> {
    if z.is_empty() {
        return Err(Error::Domain("empty input".into()));
    }
    if let Some(v) = z.iter().find(|v| !v.is_finite()) {
        return Err(Error::Domain(format!("non-finite input {v}")));
    }
    Ok(())
}

fn normalized_powers(z: &[f64], pow: impl Fn(f64) -> f64) -> Result<Vec<f64>> {
    check_finite(z)?;
    let max = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = z.iter().map(|&v| pow(v - max)).collect();
    let sum: f64 = e.iter().sum();
    Ok(e.into_iter().map(|v| v / sum).collect())
}

/// `e^z_i / sum_j e^z_j`, max-subtracted.
pub fn softmax_ref(z: &[f64]) -> Result<Vec<f64>> {
    normalized_powers(z, f64::exp)
}

/// `2^z_i / sum_j 2^z_j`, max-subtracted.
pub fn base2_softmax_ref(z: &[f64]) -> Result<Vec<f64>> {
    normalized_powers(z, f64::exp2)
}

/// Unstabilized `e^z_i / sum_j e^z_j` with operation counting: `n`
/// exponentials, `n - 1` additions and `n` divisions.
pub fn softmax_counted(z: &[f64], ops: &mut OpCounter) -> Result<Vec<f64>> {
    check_finite(z)?;
    let n = z.len() as u64;
    ops.record(Op::Exp, n);
    let e: Vec<f64> = z.iter().map(|v| v.exp()).collect();
    ops.record(Op::Add, n - 1);
    let sum: f64 = e.iter().sum();
    if !sum.is_finite() || sum == 0.0 {
        return Err(Error::Domain("softmax normalizer out of range".into()));
    }
    ops.record(Op::Div, n);
    Ok(e.into_iter().map(|v| v / sum).collect())
}

/// `x / sqrt(mean(x^2))`.
pub fn rmsln_ref(x: &[f64]) -> Result<Vec<f64>> {
    check_finite(x)?;
    let ms = x.iter().map(|v| v * v).sum::<f64>() / x.len() as f64;
    if ms == 0.0 {
        return Err(Error::Degenerate("RMS norm of an all-zero vector".into()));
    }
    let rms = ms.sqrt();
    Ok(x.iter().map(|v| v / rms).collect())
}

/// Layer norm with `eps` added to the variance; `eps = 0` rejects constant rows.
pub fn layernorm_eps(x: &[f64], gamma: &[f64], beta: &[f64], eps: f64) -> Result<Vec<f64>> {
    check_finite(x)?;
    if gamma.len() != x.len() || beta.len() != x.len() {
        return Err(Error::Shape(format!(
            "layer norm over {} features with {} gammas and {} betas",
            x.len(),
            gamma.len(),
            beta.len()
        )));
    }
    let n = x.len() as f64;
    let mean = x.iter().sum::<f64>() / n;
    let var = x.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    if var + eps <= 0.0 {
        return Err(Error::Degenerate(
            "layer norm of a zero-variance vector".into(),
        ));
    }
    let inv = 1.0 / (var + eps).sqrt();
    Ok(x.iter()
        .zip(gamma.iter().zip(beta))
        .map(|(v, (g, b))| g * (v - mean) * inv + b)
        .collect())
}

/// Textbook layer norm (population variance, no epsilon).
pub fn layernorm_ref(x: &[f64], gamma: &[f64], beta: &[f64]) -> Result<Vec<f64>> {
    layernorm_eps(x, gamma, beta, 0.0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn softmax_examples() {
        assert_eq!(softmax_ref(&[0.0, 0.0]).unwrap(), vec![0.5, 0.5]);
        let p = softmax_ref(&[1000.0, 1000.0, 1000.0]).unwrap();
        for v in p {
            assert_abs_diff_eq!(v, 1.0 / 3.0, epsilon = 1e-15);
        }
        let p = softmax_ref(&[0.0, 3f64.ln()]).unwrap();
        assert_abs_diff_eq!(p[0], 0.25, epsilon = 1e-15);
        assert_abs_diff_eq!(p[1], 0.75, epsilon = 1e-15);
        assert!(softmax_ref(&[f64::NAN]).is_err());
        assert!(softmax_ref(&[f64::INFINITY, 0.0]).is_err());
    }

    #[test]
    fn base2_examples() {
        assert_eq!(base2_softmax_ref(&[0.0; 4]).unwrap(), vec![0.25; 4]);
        let p = base2_softmax_ref(&[1.0, 0.0]).unwrap();
        assert_abs_diff_eq!(p[0], 2.0 / 3.0, epsilon = 1e-15);
        let p = base2_softmax_ref(&[3.0, 1.0, 0.0]).unwrap();
        for (got, want) in p.iter().zip([8.0 / 11.0, 2.0 / 11.0, 1.0 / 11.0]) {
            assert_abs_diff_eq!(*got, want, epsilon = 1e-15);
        }
    }

    #[test]
    fn softmax_sums_to_one() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..200 {
            let n = rng.gen_range(1..50);
            let z: Vec<f64> = (0..n).map(|_| rng.gen_range(-30.0..30.0)).collect();
            for p in [softmax_ref(&z).unwrap(), base2_softmax_ref(&z).unwrap()] {
                assert_abs_diff_eq!(p.iter().sum::<f64>(), 1.0, epsilon = 1e-9);
                assert!(p.iter().all(|&v| v > 0.0 && v <= 1.0));
            }
        }
    }

    #[test]
    fn rmsln_examples() {
        assert_eq!(rmsln_ref(&[2.0; 4]).unwrap(), vec![1.0; 4]);
        assert_eq!(rmsln_ref(&[3.0, -3.0]).unwrap(), vec![1.0, -1.0]);
        assert!(matches!(rmsln_ref(&[0.0, 0.0]), Err(Error::Degenerate(_))));
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let x: Vec<f64> = (0..33).map(|_| rng.gen_range(-5.0..5.0)).collect();
        let y = rmsln_ref(&x).unwrap();
        let rms = (y.iter().map(|v| v * v).sum::<f64>() / y.len() as f64).sqrt();
        assert_abs_diff_eq!(rms, 1.0, epsilon = 1e-9);
        let r = (x.iter().map(|v| v * v).sum::<f64>() / 33.0).sqrt();
        for (a, b) in x.iter().zip(&y) {
            assert_abs_diff_eq!(a / r, *b, epsilon = 1e-12);
        }
    }

    #[test]
    fn layernorm_examples() {
        let ones = [1.0; 4];
        let zeros = [0.0; 4];
        assert!(matches!(
            layernorm_ref(&[1.0; 4], &ones, &zeros),
            Err(Error::Degenerate(_))
        ));
        let y = layernorm_ref(&[-1.0, 1.0], &[1.0, 1.0], &[0.0, 0.0]).unwrap();
        assert_eq!(y, vec![-1.0, 1.0]);

        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let x: Vec<f64> = (0..16).map(|_| rng.gen_range(-5.0..5.0)).collect();
        let y = layernorm_ref(&x, &[1.0; 16], &[0.0; 16]).unwrap();
        let mean = y.iter().sum::<f64>() / 16.0;
        let var = y.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / 16.0;
        assert_abs_diff_eq!(mean, 0.0, epsilon = 1e-9);
        assert_abs_diff_eq!(var, 1.0, epsilon = 1e-9);
        assert!(layernorm_ref(&x, &[1.0; 3], &[0.0; 16]).is_err());
    }
}
