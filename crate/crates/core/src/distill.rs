//! Distillation objective `L = KL(p, q) + sum_i ||r_s_i - r_t_i||^2` and its
//! gradient with respect to the student outputs. The teacher is frozen, so
//! its partials vanish.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Tolerance on a probability row summing to one.
pub const ROW_SUM_TOL: f64 = 1e-9;

/// Teacher and student outputs for one batch. Probability rows are
/// `[B x classes]`; representations hold one flattened tensor per block.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DistillBatch {
    pub teacher_probs: Vec<Vec<f64>>,
    pub student_probs: Vec<Vec<f64>>,
    pub teacher_reps: Vec<Vec<f64>>,
    pub student_reps: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LossGrad {
    pub loss: f64,
    pub logits_loss: f64,
    pub reps_loss: f64,
    /// `dL/dq`, shaped like the student probabilities.
    pub grad_q: Vec<Vec<f64>>,
    /// `dL/dr_s`, shaped like the student representations.
    pub grad_reps: Vec<Vec<f64>>,
}

/// Row-wise `softmax(z / temperature)`.
pub fn soften(logits: &[Vec<f64>], temperature: f64) -> Result<Vec<Vec<f64>>> {
    if !(temperature > 0.0) {
        return Err(Error::Domain(format!(
            "temperature {temperature} must be positive"
        )));
    }
    logits
        .iter()
        .map(|row| {
            let scaled: Vec<f64> = row.iter().map(|z| z / temperature).collect();
            crate::kernels::softmax_ref(&scaled)
        })
        .collect()
}

fn check_distributions(p: &[Vec<f64>], q: &[Vec<f64>]) -> Result<()> {
    if p.len() != q.len() || p.is_empty() {
        return Err(Error::Shape(format!(
            "batches of {} and {} rows",
            p.len(),
            q.len()
        )));
    }
    for (i, (pr, qr)) in p.iter().zip(q).enumerate() {
        if pr.len() != qr.len() {
            return Err(Error::Shape(format!(
                "row {i}: {} vs {} classes",
                pr.len(),
                qr.len()
            )));
        }
        for row in [pr, qr] {
            if row.iter().any(|&v| !(0.0..=1.0).contains(&v)) {
                return Err(Error::Domain(format!(
                    "row {i} has an entry outside [0, 1]"
                )));
            }
            let s: f64 = row.iter().sum();
            if (s - 1.0).abs() > ROW_SUM_TOL {
                return Err(Error::Domain(format!("row {i} sums to {s}")));
            }
        }
    }
    Ok(())
}

/// `sum p log(p / q)` per row (with `0 log 0 = 0`), averaged over rows.
/// Does not check that rows are normalized.
fn kl_unchecked(p: &[Vec<f64>], q: &[Vec<f64>]) -> Result<f64> {
    let mut total = 0.0;
    for (pr, qr) in p.iter().zip(q) {
        for (&pi, &qi) in pr.iter().zip(qr) {
            if pi > 0.0 {
                if !(qi > 0.0) {
                    return Err(Error::Domain(format!("q = {qi} where p = {pi} > 0")));
                }
                total += pi * (pi / qi).ln();
            }
        }
    }
    Ok(total / p.len() as f64)
}

/// Batch-averaged `KL(p || q)`.
pub fn kl_logits_loss(p: &[Vec<f64>], q: &[Vec<f64>]) -> Result<f64> {
    check_distributions(p, q)?;
    kl_unchecked(p, q)
}

fn check_reps(r_s: &[Vec<f64>], r_t: &[Vec<f64>]) -> Result<()> {
    if r_s.len() != r_t.len() {
        return Err(Error::Shape(format!(
            "{} vs {} blocks",
            r_s.len(),
            r_t.len()
        )));
    }
    for (i, (a, b)) in r_s.iter().zip(r_t).enumerate() {
        if a.len() != b.len() {
            return Err(Error::Shape(format!(
                "block {i}: {} vs {} elements",
                a.len(),
                b.len()
            )));
        }
    }
    Ok(())
}

/// `sum_i ||r_s_i - r_t_i||_F^2`.
pub fn reps_loss(r_s: &[Vec<f64>], r_t: &[Vec<f64>]) -> Result<f64> {
    check_reps(r_s, r_t)?;
    Ok(r_s
        .iter()
        .zip(r_t)
        .map(|(a, b)| a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>())
        .sum())
}

/// Loss value with `q` and `r_s` treated as free variables (no row-sum
/// check), for finite differencing.
pub fn total_loss_unchecked(batch: &DistillBatch) -> Result<f64> {
    check_reps(&batch.student_reps, &batch.teacher_reps)?;
    Ok(kl_unchecked(&batch.teacher_probs, &batch.student_probs)?
        + reps_loss(&batch.student_reps, &batch.teacher_reps)?)
}

/// Loss and its gradient: `dL/dq = -p / (B q)` and `dL/dr_s = 2 (r_s - r_t)`.
pub fn total_loss_grad(batch: &DistillBatch) -> Result<LossGrad> {
    let (p, q) = (&batch.teacher_probs, &batch.student_probs);
    let logits_loss = kl_logits_loss(p, q)?;
    let reps_loss = reps_loss(&batch.student_reps, &batch.teacher_reps)?;
    let b = p.len() as f64;
    let grad_q = p
        .iter()
        .zip(q)
        .map(|(pr, qr)| pr.iter().zip(qr).map(|(&pi, &qi)| -pi / (b * qi)).collect())
        .collect();
    let grad_reps = batch
        .student_reps
        .iter()
        .zip(&batch.teacher_reps)
        .map(|(s, t)| s.iter().zip(t).map(|(x, y)| 2.0 * (x - y)).collect())
        .collect();
    Ok(LossGrad {
        loss: logits_loss + reps_loss,
        logits_loss,
        reps_loss,
        grad_q,
        grad_reps,
    })
}

/// Worst relative error between analytic and central-difference gradients.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GradientCheck {
    pub max_rel_err_q: f64,
    pub max_rel_err_reps: f64,
    pub components: usize,
}

impl GradientCheck {
    pub fn max_rel_err(&self) -> f64 {
        self.max_rel_err_q.max(self.max_rel_err_reps)
    }
}

/// Denominator floor of the relative error, so components whose gradient
/// is near zero are judged on absolute error.
pub const REL_ERR_FLOOR: f64 = 1e-3;

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(REL_ERR_FLOOR)
}

/// Compares [`total_loss_grad`] with central differences of step `h` on
/// every component of `q` and `r_s`.
pub fn gradient_check(batch: &DistillBatch, h: f64) -> Result<GradientCheck> {
    let grads = total_loss_grad(batch)?;
    let mut probe = batch.clone();
    let central =
        |probe: &mut DistillBatch, get: &dyn Fn(&mut DistillBatch) -> &mut f64| -> Result<f64> {
            let x = *get(probe);
            *get(probe) = x + h;
            let up = total_loss_unchecked(probe)?;
            *get(probe) = x - h;
            let down = total_loss_unchecked(probe)?;
            *get(probe) = x;
            Ok((up - down) / (2.0 * h))
        };
    let (mut eq, mut er, mut n) = (0.0f64, 0.0f64, 0usize);
    for i in 0..batch.student_probs.len() {
        for j in 0..batch.student_probs[i].len() {
            let fd = central(&mut probe, &|b| &mut b.student_probs[i][j])?;
            eq = eq.max(relative_error(grads.grad_q[i][j], fd));
            n += 1;
        }
    }
    for i in 0..batch.student_reps.len() {
        for j in 0..batch.student_reps[i].len() {
            let fd = central(&mut probe, &|b| &mut b.student_reps[i][j])?;
            er = er.max(relative_error(grads.grad_reps[i][j], fd));
            n += 1;
        }
    }
    Ok(GradientCheck {
        max_rel_err_q: eq,
        max_rel_err_reps: er,
        components: n,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_batch(rng: &mut ChaCha8Rng) -> DistillBatch {
        let b = rng.gen_range(1..5);
        let c = rng.gen_range(2..6);
        let logits = |rng: &mut ChaCha8Rng| -> Vec<Vec<f64>> {
            (0..b)
                .map(|_| (0..c).map(|_| rng.gen_range(-3.0..3.0)).collect())
                .collect()
        };
        let blocks = rng.gen_range(1..4);
        let width = rng.gen_range(1..8);
        let reps = |rng: &mut ChaCha8Rng| -> Vec<Vec<f64>> {
            (0..blocks)
                .map(|_| (0..width).map(|_| rng.gen_range(-1.0..1.0)).collect())
                .collect()
        };
        DistillBatch {
            teacher_probs: soften(&logits(rng), 1.0).unwrap(),
            student_probs: soften(&logits(rng), 1.0).unwrap(),
            teacher_reps: reps(rng),
            student_reps: reps(rng),
        }
    }

    #[test]
    fn kl_examples() {
        let p = vec![vec![0.3, 0.7]];
        assert_eq!(kl_logits_loss(&p, &p).unwrap(), 0.0);
        let v = kl_logits_loss(&[vec![1.0, 0.0]], &[vec![0.5, 0.5]]).unwrap();
        assert_relative_eq!(v, std::f64::consts::LN_2, max_relative = 1e-15);
        assert!(matches!(
            kl_logits_loss(&[vec![0.5, 0.5]], &[vec![1.0, 0.0]]),
            Err(Error::Domain(_))
        ));
        assert!(kl_logits_loss(&[vec![0.5, 0.6]], &[vec![0.5, 0.5]]).is_err());
    }

    #[test]
    fn kl_matches_two_pass_oracle() {
        // Oracle: KL = cross-entropy - entropy, accumulated separately.
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for _ in 0..50 {
            let b = random_batch(&mut rng);
            let (p, q) = (&b.teacher_probs, &b.student_probs);
            let mut ce = 0.0;
            let mut ent = 0.0;
            for (pr, qr) in p.iter().zip(q) {
                for (&pi, &qi) in pr.iter().zip(qr) {
                    ce -= pi * qi.ln();
                    ent -= pi * pi.ln();
                }
            }
            let want = (ce - ent) / p.len() as f64;
            assert_relative_eq!(kl_logits_loss(p, q).unwrap(), want, epsilon = 1e-12);
        }
    }

    #[test]
    fn reps_examples() {
        let r = vec![vec![1.0, 2.0], vec![3.0]];
        assert_eq!(reps_loss(&r, &r).unwrap(), 0.0);
        let s = vec![vec![1.0, 3.0], vec![3.0]];
        assert_eq!(reps_loss(&s, &r).unwrap(), 1.0);
        assert!(matches!(reps_loss(&s, &[vec![1.0]]), Err(Error::Shape(_))));
    }

    #[test]
    fn gradient_examples() {
        let p = vec![vec![0.25, 0.75]];
        let batch = DistillBatch {
            teacher_probs: p.clone(),
            student_probs: p,
            teacher_reps: vec![vec![0.5, -1.0]],
            student_reps: vec![vec![0.5, -1.0]],
        };
        let g = total_loss_grad(&batch).unwrap();
        assert_eq!(g.grad_q, vec![vec![-1.0, -1.0]]);
        assert_eq!(g.grad_reps, vec![vec![0.0, 0.0]]);
        assert_eq!(g.loss, 0.0);
    }

    #[test]
    fn frozen_teacher_reduction_of_full_expansion() {
        // Full expansion: sum (log(p/q) + 1) dp - (p/q) dq; with dp = 0 only
        // the student term survives, matching B * dL/dq for one row.
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let b = random_batch(&mut rng);
        let g = total_loss_grad(&b).unwrap();
        let rows = b.teacher_probs.len() as f64;
        for (i, (pr, qr)) in b.teacher_probs.iter().zip(&b.student_probs).enumerate() {
            for (j, (&pi, &qi)) in pr.iter().zip(qr).enumerate() {
                let dp = 0.0;
                let full = ((pi / qi).ln() + 1.0) * dp - pi / qi;
                assert_relative_eq!(full / rows, g.grad_q[i][j], max_relative = 1e-15);
            }
        }
    }

    #[test]
    fn gradients_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        for _ in 0..100 {
            let b = random_batch(&mut rng);
            let c = gradient_check(&b, 1e-5).unwrap();
            assert!(c.max_rel_err() < 1e-4, "{c:?}");
        }
    }

    proptest! {
        #[test]
        fn decomposition_and_non_negativity(seed in any::<u64>()) {
            let b = random_batch(&mut ChaCha8Rng::seed_from_u64(seed));
            let g = total_loss_grad(&b).unwrap();
            let kl = kl_logits_loss(&b.teacher_probs, &b.student_probs).unwrap();
            let reps = reps_loss(&b.student_reps, &b.teacher_reps).unwrap();
            prop_assert_eq!(g.loss, kl + reps);
            prop_assert!(kl >= -1e-15);
            prop_assert!(reps >= 0.0);
        }
    }
}
