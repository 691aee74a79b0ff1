//! Oracles and seeded property suites.
//!
//! Every sample is generated from its own seed, derived from the suite seed,
//! the suite family and the sample index, so any failure can be replayed in
//! isolation with [`replay`].

use std::collections::BTreeMap;
use std::f64::consts::SQRT_2;
use std::fmt;
use std::str::FromStr;

use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::{One, ToPrimitive};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::distill::{gradient_check, soften, DistillBatch};
use crate::energy::{measure_kernel, table_cost, Kernel, OpCounter};
use crate::error::{Error, Result};
use crate::kernels::{pow2_sum, ptsoftmax_real, PtSoftmaxConfig};
use crate::model::{
    block_with, random_block, random_block_input, BlockShape, LevelEngine, Norms, SpikeEngine,
};
use crate::numerics::{nearest_pow2_exponent, RoundMode};
use crate::quantize::binarize_weights;
use crate::spiking::{encode_rate, spiking_matmul_counted, Encoder};

/// Relative padding on float comparisons against exact algebraic bounds.
pub const BOUND_PAD: f64 = 1e-12;
/// Lower end of the composed bound, `1 / (2 sqrt 2)`.
pub const LEMMA_LOW: f64 = 1.0 / (2.0 * SQRT_2);
pub const LEMMA_HIGH: f64 = 2.0 * SQRT_2;

/// Extremes of `num_i / den_i` over a vector.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RatioRange {
    pub min: f64,
    pub max: f64,
}

impl RatioRange {
    fn of(num: &[f64], den: &[f64]) -> Self {
        num.iter().zip(den).fold(
            Self {
                min: f64::INFINITY,
                max: f64::NEG_INFINITY,
            },
            |r, (a, b)| {
                let q = a / b;
                Self {
                    min: r.min.min(q),
                    max: r.max.max(q),
                }
            },
        )
    }

    /// `lo <= ratio <= hi`, padded by [`BOUND_PAD`].
    pub fn within(&self, lo: f64, hi: f64) -> bool {
        self.min >= lo * (1.0 - BOUND_PAD) && self.max <= hi * (1.0 + BOUND_PAD)
    }
}

/// The quantities of the error bound for one score vector:
/// `a = F2(x)`, `b = F2(ceil x)`, `c = 2^(ceil x - k)` with
/// `k = round(log2 sum 2^ceil x)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Lemma1Sample {
    pub x: Vec<f64>,
    pub a: Vec<f64>,
    pub b: Vec<f64>,
    /// `c_i = 2^c_exponents[i]`.
    pub c_exponents: Vec<i32>,
    pub k: i32,
    pub k_mode: RoundMode,
    /// `a / b`, bounded by `[1/2, 2]`.
    pub a_over_b: RatioRange,
    /// `b / c`, bounded by `[1/sqrt 2, sqrt 2]`.
    pub b_over_c: RatioRange,
    /// Kernel output over `a`, bounded by `[1/(2 sqrt 2), 2 sqrt 2]`.
    pub kernel_over_a: RatioRange,
    pub holds_ab: bool,
    pub holds_bc: bool,
    pub holds_bound: bool,
    /// The kernel's output exponents equal `c`.
    pub kernel_matches_c: bool,
}

impl Lemma1Sample {
    pub fn c(&self) -> Vec<f64> {
        self.c_exponents
            .iter()
            .map(|&e| (e as f64).exp2())
            .collect()
    }

    /// The composed bound must follow from the two intermediate ones.
    pub fn consistent(&self) -> bool {
        !(self.holds_ab && self.holds_bc && self.kernel_matches_c) || self.holds_bound
    }
}

/// `F2(x)` in double precision, referenced to the maximum.
fn base2_softmax(x: &[f64]) -> Vec<f64> {
    let m = x.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let w: Vec<f64> = x.iter().map(|v| (v - m).exp2()).collect();
    let s: f64 = w.iter().sum();
    w.iter().map(|v| v / s).collect()
}

/// `F2` of integer exponents: the normalizer is summed exactly, so each
/// entry carries one rounding.
fn base2_softmax_int(e: &[i64]) -> Vec<f64> {
    let lo = *e.iter().min().expect("non-empty");
    let hi = *e.iter().max().expect("non-empty");
    if hi - lo < 120 {
        let terms: Vec<u128> = e.iter().map(|&v| 1u128 << (v - lo)).collect();
        let s: u128 = terms.iter().sum();
        let s = s as f64;
        terms.iter().map(|&t| t as f64 / s).collect()
    } else {
        let exact = exact_base2(e);
        exact.iter().map(|r| r.to_f64().unwrap_or(0.0)).collect()
    }
}

fn exact_base2(d: &[i64]) -> Vec<BigRational> {
    let lo = *d.iter().min().expect("non-empty");
    let terms: Vec<BigInt> = d
        .iter()
        .map(|&v| BigInt::one() << ((v - lo) as usize))
        .collect();
    let s: BigInt = terms.iter().sum();
    terms
        .into_iter()
        .map(|t| BigRational::new(t, s.clone()))
        .collect()
}

/// Checks the bound for `x` with round-to-nearest `k`.
pub fn lemma1_check(x: &[f64]) -> Result<Lemma1Sample> {
    lemma1_check_with(x, RoundMode::RoundNearest)
}

/// As [`lemma1_check`], choosing `k` with `mode` in both the oracle and the
/// kernel. Ceil mode is not covered by the bound.
pub fn lemma1_check_with(x: &[f64], mode: RoundMode) -> Result<Lemma1Sample> {
    if x.is_empty() || x.iter().any(|v| !v.is_finite()) {
        return Err(Error::Domain(
            "score vector must be non-empty and finite".into(),
        ));
    }
    let ceil: Vec<i64> = x.iter().map(|v| v.ceil() as i64).collect();
    let a = base2_softmax(x);
    let b = base2_softmax_int(&ceil);
    let k = nearest_pow2_exponent(pow2_sum(&ceil), mode)?.0;
    let c_exponents: Vec<i32> = ceil.iter().map(|&e| (e - k as i64) as i32).collect();
    let c: Vec<f64> = c_exponents.iter().map(|&e| (e as f64).exp2()).collect();

    let kernel = ptsoftmax_real(x, &PtSoftmaxConfig::unclamped(mode))?;
    let out = kernel.to_f64();
    let a_over_b = RatioRange::of(&a, &b);
    let b_over_c = RatioRange::of(&b, &c);
    let kernel_over_a = RatioRange::of(&out, &a);
    Ok(Lemma1Sample {
        x: x.to_vec(),
        holds_ab: a_over_b.within(0.5, 2.0),
        holds_bc: b_over_c.within(1.0 / SQRT_2, SQRT_2),
        holds_bound: kernel_over_a.within(LEMMA_LOW, LEMMA_HIGH),
        kernel_matches_c: kernel.exponents == c_exponents,
        a,
        b,
        c_exponents,
        k,
        k_mode: mode,
        a_over_b,
        b_over_c,
        kernel_over_a,
    })
}

/// Exact `F2(x)` when every pairwise difference of `x` is an integer.
pub fn oracle_base2(x: &[f64]) -> Result<Vec<BigRational>> {
    if x.is_empty() {
        return Ok(Vec::new());
    }
    let exact = x
        .iter()
        .map(|&v| {
            BigRational::from_float(v).ok_or_else(|| Error::Domain(format!("{v} is not finite")))
        })
        .collect::<Result<Vec<_>>>()?;
    let lo = exact.iter().min().expect("non-empty").clone();
    let mut d = Vec::with_capacity(x.len());
    for v in &exact {
        let diff = v - &lo;
        if !diff.is_integer() {
            return Err(Error::Unsupported(
                "exact base-2 softmax needs integer pairwise differences".into(),
            ));
        }
        let diff = diff
            .to_integer()
            .to_i64()
            .filter(|&v| v <= 1 << 16)
            .ok_or_else(|| {
                Error::Unsupported("score range too wide for the exact oracle".into())
            })?;
        d.push(diff);
    }
    Ok(exact_base2(&d))
}

/// Registered property families.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SuiteKind {
    /// Composed bound on random score vectors.
    Lemma1,
    /// The two intermediate inequalities on the same vectors.
    Appendix,
    /// Spiking versus integer products, and whole blocks.
    Equivalence,
    /// Instrumented kernels versus the cost table.
    OpCounts,
    /// Analytic versus finite-difference distillation gradients.
    Gradients,
}

impl SuiteKind {
    pub const ALL: [SuiteKind; 5] = [
        SuiteKind::Lemma1,
        SuiteKind::Appendix,
        SuiteKind::Equivalence,
        SuiteKind::OpCounts,
        SuiteKind::Gradients,
    ];

    fn name(self) -> &'static str {
        match self {
            SuiteKind::Lemma1 => "lemma1",
            SuiteKind::Appendix => "appendix",
            SuiteKind::Equivalence => "equivalence",
            SuiteKind::OpCounts => "op_counts",
            SuiteKind::Gradients => "gradients",
        }
    }

    /// Seed family; the two bound suites share their samples.
    fn family(self) -> u64 {
        match self {
            SuiteKind::Lemma1 | SuiteKind::Appendix => 1,
            SuiteKind::Equivalence => 2,
            SuiteKind::OpCounts => 3,
            SuiteKind::Gradients => 4,
        }
    }
}

impl fmt::Display for SuiteKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for SuiteKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        SuiteKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| Error::Domain(format!("unknown suite {s:?}")))
    }
}

/// Lengths at which instrumented kernels are compared with the table.
pub const OP_COUNT_LENGTHS: [usize; 4] = [1, 8, 64, 512];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SuiteConfig {
    pub seed: u64,
    pub suites: Vec<SuiteKind>,
    pub lemma_samples: usize,
    pub equivalence_instances: usize,
    pub gradient_batches: usize,
    pub k_mode: RoundMode,
    pub timesteps: usize,
    /// Block shape for the equivalence suite.
    pub block: BlockShape,
    pub fd_step: f64,
    pub fd_tolerance: f64,
}

impl Default for SuiteConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            suites: SuiteKind::ALL.to_vec(),
            lemma_samples: 100_000,
            equivalence_instances: 1_000,
            gradient_batches: 100,
            k_mode: RoundMode::RoundNearest,
            timesteps: 16,
            block: BlockShape::default(),
            fd_step: 1e-5,
            fd_tolerance: 1e-4,
        }
    }
}

impl SuiteConfig {
    fn samples(&self, kind: SuiteKind) -> usize {
        match kind {
            SuiteKind::Lemma1 | SuiteKind::Appendix => self.lemma_samples,
            SuiteKind::Equivalence => self.equivalence_instances,
            SuiteKind::OpCounts => OP_COUNT_LENGTHS.len(),
            SuiteKind::Gradients => self.gradient_batches,
        }
    }
}

/// A failing sample and how to regenerate it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Counterexample {
    pub index: usize,
    pub seed: u64,
    pub detail: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SuiteResult {
    pub suite: SuiteKind,
    pub samples: usize,
    pub failures: usize,
    pub passed: bool,
    /// `min_*` entries are minima over samples, all others maxima.
    pub metrics: BTreeMap<String, f64>,
    /// The first [`MAX_COUNTEREXAMPLES`] failures.
    pub counterexamples: Vec<Counterexample>,
}

pub const MAX_COUNTEREXAMPLES: usize = 16;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SuiteReport {
    pub config: SuiteConfig,
    pub results: Vec<SuiteResult>,
    pub passed: bool,
}

impl SuiteReport {
    pub fn result(&self, kind: SuiteKind) -> Option<&SuiteResult> {
        self.results.iter().find(|r| r.suite == kind)
    }
}

/// Outcome of one sample.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleOutcome {
    pub ok: bool,
    pub detail: String,
    pub metrics: Vec<(String, f64)>,
}

impl SampleOutcome {
    fn new(ok: bool, detail: String, metrics: Vec<(&str, f64)>) -> Self {
        Self {
            ok,
            detail,
            metrics: metrics
                .into_iter()
                .map(|(k, v)| (k.to_string(), v))
                .collect(),
        }
    }
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Seed of sample `index` of `kind` under suite seed `seed`.
pub fn sample_seed(seed: u64, kind: SuiteKind, index: usize) -> u64 {
    splitmix64(splitmix64(seed ^ (kind.family() << 56)) ^ index as u64)
}

/// Random score vector of the bound suites: `n` in `[2, 64]`, values in
/// `[-10, 4]`.
pub fn lemma_vector(sample_seed: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(sample_seed);
    let n = rng.gen_range(2..=64);
    (0..n).map(|_| rng.gen_range(-10.0..=4.0)).collect()
}

fn lemma_sample(kind: SuiteKind, seed: u64, cfg: &SuiteConfig) -> Result<SampleOutcome> {
    let x = lemma_vector(seed);
    let s = lemma1_check_with(&x, cfg.k_mode)?;
    if !s.kernel_matches_c {
        return Ok(SampleOutcome::new(
            false,
            "kernel output differs from 2^(ceil x - k)".into(),
            vec![],
        ));
    }
    if !s.consistent() {
        return Ok(SampleOutcome::new(
            false,
            "intermediate bounds hold but the composed one fails".into(),
            vec![],
        ));
    }
    Ok(match kind {
        SuiteKind::Lemma1 => SampleOutcome::new(
            s.holds_bound,
            format!(
                "kernel/F2 in [{}, {}] for n={}",
                s.kernel_over_a.min,
                s.kernel_over_a.max,
                x.len()
            ),
            vec![
                ("min_ratio", s.kernel_over_a.min),
                ("max_ratio", s.kernel_over_a.max),
            ],
        ),
        _ => SampleOutcome::new(
            s.holds_ab && s.holds_bc,
            format!(
                "a/b in [{}, {}], b/c in [{}, {}]",
                s.a_over_b.min, s.a_over_b.max, s.b_over_c.min, s.b_over_c.max
            ),
            vec![
                ("min_a_over_b", s.a_over_b.min),
                ("max_a_over_b", s.a_over_b.max),
                ("min_b_over_c", s.b_over_c.min),
                ("max_b_over_c", s.b_over_c.max),
            ],
        ),
    })
}

fn equivalence_sample(seed: u64, cfg: &SuiteConfig) -> Result<SampleOutcome> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let t = cfg.timesteps;
    let max = ((1i64 << cfg.block.act_bits) - 1).min(t as i64);

    // Product: levels [rows x m] against signs [m x p].
    let (rows, m, p) = (
        rng.gen_range(1..=4),
        rng.gen_range(1..=32),
        rng.gen_range(1..=16),
    );
    let w: Vec<f64> = (0..m * p).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let w = binarize_weights(&w, m, p)?;
    let levels: Vec<i64> = (0..rows * m).map(|_| rng.gen_range(0..=max)).collect();
    let train = encode_rate(&levels, vec![rows, m], t)?;
    let mut ops = OpCounter::new();
    let got = spiking_matmul_counted(&train, &w, &mut ops)?;
    let mut product_ok = ops.add == train.spike_count() * p as u64 && ops.is_multiplier_free();
    let unit = (w.scale_exponent as f64).exp2();
    for r in 0..rows {
        for j in 0..p {
            let acc: i64 = (0..m)
                .map(|i| levels[r * m + i] * w.sign(i, j) as i64)
                .sum();
            product_ok &= got.real(r * p + j) == acc as f64 * unit;
        }
    }

    // Whole block on both engines.
    let shape = BlockShape {
        timesteps: t,
        ..cfg.block
    };
    let block = random_block(&shape, rng.gen())?;
    let seq = rng.gen_range(1..=8);
    let x = random_block_input(&shape, seq, rng.gen())?;
    let mut spike_ops = OpCounter::new();
    let spiking = block_with(
        &x,
        &block,
        Norms::Infer,
        &mut SpikeEngine::new(t, Encoder::Rate),
        &mut spike_ops,
    )?;
    let level = block_with(
        &x,
        &block,
        Norms::Infer,
        &mut LevelEngine,
        &mut OpCounter::new(),
    )?;
    let block_ok = spiking == level;
    let free = !shape.pow2_norm || spike_ops.is_multiplier_free();
    Ok(SampleOutcome::new(
        product_ok && block_ok && free,
        format!("product {product_ok}, block {block_ok}, multiplier-free {free} (seq={seq})"),
        vec![],
    ))
}

fn op_count_sample(index: usize, seed: u64) -> Result<SampleOutcome> {
    let n = OP_COUNT_LENGTHS[index % OP_COUNT_LENGTHS.len()];
    let mut ok = true;
    let mut detail = Vec::new();
    for kernel in [Kernel::Softmax, Kernel::Ptsoftmax, Kernel::Bspn] {
        let measured = measure_kernel(kernel, n, seed)?;
        let table = table_cost(kernel, n as u64)?;
        let same = measured.same_table_counts(&table);
        ok &= same;
        detail.push(format!(
            "{kernel} n={n}: {}",
            if same { "match" } else { "MISMATCH" }
        ));
    }
    Ok(SampleOutcome::new(ok, detail.join("; "), vec![]))
}

/// Random batch: `B` in `[1, 8]`, 2 to 8 classes with logits in `[-2, 2]`,
/// 1 to 4 blocks of up to 16 elements.
///
/// The logit range keeps every `q` above about `2e-3`: the central
/// difference of `log q` has relative truncation error `h^2 / (3 q^2)`, which
/// would exceed the tolerance for much smaller probabilities.
pub fn random_distill_batch(sample_seed: u64) -> Result<DistillBatch> {
    let mut rng = ChaCha8Rng::seed_from_u64(sample_seed);
    let (b, c) = (rng.gen_range(1..=8), rng.gen_range(2..=8));
    let (blocks, width) = (rng.gen_range(1..=4), rng.gen_range(1..=16));
    let mut logits = || -> Vec<Vec<f64>> {
        (0..b)
            .map(|_| (0..c).map(|_| rng.gen_range(-2.0..2.0)).collect())
            .collect()
    };
    let (pl, ql) = (logits(), logits());
    let mut reps = || -> Vec<Vec<f64>> {
        (0..blocks)
            .map(|_| (0..width).map(|_| rng.gen_range(-2.0..2.0)).collect())
            .collect()
    };
    let (rt, rs) = (reps(), reps());
    Ok(DistillBatch {
        teacher_probs: soften(&pl, 1.0)?,
        student_probs: soften(&ql, 1.0)?,
        teacher_reps: rt,
        student_reps: rs,
    })
}

fn gradient_sample(seed: u64, cfg: &SuiteConfig) -> Result<SampleOutcome> {
    let batch = random_distill_batch(seed)?;
    let c = gradient_check(&batch, cfg.fd_step)?;
    Ok(SampleOutcome::new(
        c.max_rel_err() < cfg.fd_tolerance,
        format!(
            "max relative error {:e} over {} components",
            c.max_rel_err(),
            c.components
        ),
        vec![("max_rel_err", c.max_rel_err())],
    ))
}

/// Re-runs sample `index` of `kind` from its recorded seed.
pub fn replay(
    kind: SuiteKind,
    index: usize,
    seed: u64,
    cfg: &SuiteConfig,
) -> Result<SampleOutcome> {
    match kind {
        SuiteKind::Lemma1 | SuiteKind::Appendix => lemma_sample(kind, seed, cfg),
        SuiteKind::Equivalence => equivalence_sample(seed, cfg),
        SuiteKind::OpCounts => op_count_sample(index, seed),
        SuiteKind::Gradients => gradient_sample(seed, cfg),
    }
}

fn run_one(kind: SuiteKind, cfg: &SuiteConfig) -> SuiteResult {
    let n = cfg.samples(kind);
    let outcomes: Vec<(usize, u64, SampleOutcome)> = (0..n)
        .into_par_iter()
        .map(|i| {
            let seed = sample_seed(cfg.seed, kind, i);
            let out = replay(kind, i, seed, cfg)
                .unwrap_or_else(|e| SampleOutcome::new(false, format!("error: {e}"), vec![]));
            (i, seed, out)
        })
        .collect();
    let mut metrics: BTreeMap<String, f64> = BTreeMap::new();
    let mut counterexamples = Vec::new();
    let mut failures = 0;
    for (index, seed, out) in outcomes {
        for (k, v) in out.metrics {
            let e = metrics.entry(k.clone()).or_insert(v);
            *e = if k.starts_with("min_") {
                e.min(v)
            } else {
                e.max(v)
            };
        }
        if !out.ok {
            failures += 1;
            if counterexamples.len() < MAX_COUNTEREXAMPLES {
                counterexamples.push(Counterexample {
                    index,
                    seed,
                    detail: out.detail,
                });
            }
        }
    }
    SuiteResult {
        suite: kind,
        samples: n,
        failures,
        passed: failures == 0,
        metrics,
        counterexamples,
    }
}

/// Runs the configured suites. Failures are reported, never raised.
pub fn run_suite(cfg: &SuiteConfig) -> SuiteReport {
    let results: Vec<SuiteResult> = cfg.suites.iter().map(|&k| run_one(k, cfg)).collect();
    SuiteReport {
        passed: results.iter().all(|r| r.passed),
        config: cfg.clone(),
        results,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::{prop_assert, proptest};

    fn q(n: i64, d: i64) -> BigRational {
        BigRational::new(BigInt::from(n), BigInt::from(d))
    }

    #[test]
    fn oracle_examples() {
        assert_eq!(oracle_base2(&[1.0, 0.0]).unwrap(), vec![q(2, 3), q(1, 3)]);
        assert_eq!(
            oracle_base2(&[3.0, 1.0, 0.0]).unwrap(),
            vec![q(8, 11), q(2, 11), q(1, 11)]
        );
        for k in [-7.5, 0.0, 2.25, 40.0] {
            assert_eq!(oracle_base2(&[k, k]).unwrap(), vec![q(1, 2), q(1, 2)]);
        }
        assert_eq!(oracle_base2(&[0.5, -1.5]).unwrap(), vec![q(4, 5), q(1, 5)]);
        assert!(matches!(
            oracle_base2(&[0.5, 0.0]),
            Err(Error::Unsupported(_))
        ));
        assert!(oracle_base2(&[]).unwrap().is_empty());
    }

    #[test]
    fn single_score() {
        let s = lemma1_check(&[-3.7]).unwrap();
        assert_eq!(
            (s.a.clone(), s.b.clone(), s.c()),
            (vec![1.0], vec![1.0], vec![1.0])
        );
        assert_eq!(s.kernel_over_a.min, 1.0);
        assert!(s.holds_ab && s.holds_bc && s.holds_bound && s.kernel_matches_c);
    }

    #[test]
    fn integer_scores_give_a_equal_b() {
        let s = lemma1_check(&[2.0, -1.0, 0.0, 0.0, -9.0]).unwrap();
        assert_eq!(s.a, s.b);
        assert_eq!(s.a_over_b.min, 1.0);
        assert!(s.holds_ab && s.holds_bc && s.holds_bound);
    }

    #[test]
    fn float_base2_agrees_with_exact_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        for _ in 0..200 {
            let frac = rng.gen_range(0..4) as f64 * 0.25;
            let x: Vec<f64> = (0..rng.gen_range(1..30))
                .map(|_| rng.gen_range(-20..20) as f64 + frac)
                .collect();
            let exact = oracle_base2(&x).unwrap();
            for (got, want) in base2_softmax(&x).iter().zip(&exact) {
                let want = want.to_f64().unwrap();
                assert!((got - want).abs() <= 1e-14 * want, "{got} vs {want}");
            }
        }
    }

    #[test]
    fn empty_suite_passes() {
        let cfg = SuiteConfig {
            suites: vec![],
            ..SuiteConfig::default()
        };
        let r = run_suite(&cfg);
        assert!(r.passed && r.results.is_empty());
    }

    fn small(k_mode: RoundMode) -> SuiteConfig {
        SuiteConfig {
            seed: 5,
            lemma_samples: 4000,
            equivalence_instances: 20,
            gradient_batches: 10,
            k_mode,
            ..SuiteConfig::default()
        }
    }

    #[test]
    fn good_config_passes_and_is_deterministic() {
        let cfg = small(RoundMode::RoundNearest);
        let a = run_suite(&cfg);
        assert!(a.passed, "{:#?}", a.results);
        assert_eq!(a, run_suite(&cfg));
        let lemma = a.result(SuiteKind::Lemma1).unwrap();
        assert!(lemma.metrics["min_ratio"] >= LEMMA_LOW);
        assert!(lemma.metrics["max_ratio"] <= LEMMA_HIGH);
    }

    #[test]
    fn ceil_k_is_caught_and_replayable() {
        let cfg = SuiteConfig {
            suites: vec![SuiteKind::Lemma1, SuiteKind::Appendix],
            lemma_samples: 20_000,
            ..small(RoundMode::Ceil)
        };
        let r = run_suite(&cfg);
        let lemma = r.result(SuiteKind::Lemma1).unwrap();
        assert!(lemma.failures > 0, "no violation found under ceil k");
        assert!(lemma.metrics["min_ratio"] < LEMMA_LOW);
        for cx in &lemma.counterexamples {
            assert_eq!(cx.seed, sample_seed(cfg.seed, SuiteKind::Lemma1, cx.index));
            let again = replay(SuiteKind::Lemma1, cx.index, cx.seed, &cfg).unwrap();
            assert!(!again.ok);
            assert_eq!(again.detail, cx.detail);
        }
        // The a/b inequality does not involve k.
        assert!(r.result(SuiteKind::Appendix).unwrap().metrics["min_a_over_b"] >= 0.5);
    }

    #[test]
    fn suite_names_round_trip() {
        for k in SuiteKind::ALL {
            assert_eq!(k.to_string().parse::<SuiteKind>().unwrap(), k);
        }
        assert!("nope".parse::<SuiteKind>().is_err());
    }

    proptest! {
        #[test]
        fn composed_bound_follows_from_parts(x in proptest::collection::vec(-10.0f64..4.0, 1..64)) {
            let s = lemma1_check(&x).unwrap();
            prop_assert!(s.kernel_matches_c);
            prop_assert!(s.holds_ab && s.holds_bc);
            prop_assert!(s.holds_bound);
            prop_assert!(s.consistent());
            let total: f64 = s.a.iter().sum();
            prop_assert!((total - 1.0).abs() < 1e-12);
        }
    }
}
