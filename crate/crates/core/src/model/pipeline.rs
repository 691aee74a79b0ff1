//! Toy initialization and the `M0 -> M1 -> M2 -> M3 -> S` conversion chain.
//!
//! Between stages only the forward behaviour is measured; no retraining
//! happens here.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::config::ModelConfig;
use super::fixed::{BlockParams, FixedModel};
use super::float::{
    Activation, DenseLinear, FloatBlock, FloatLinear, FloatModel, LayerNormParams, SoftmaxKind,
};
use super::sites::{BlockSites, Site};
use super::{forward, Stage, StageModel, StageParams};
use crate::energy::OpCounter;
use crate::error::{Error, Result};
use crate::kernels::BspnState;
use crate::numerics::FixedTensor;
use crate::quantize::{binarize_weights, fit_elastic, pow2_scale, BinaryLinear, ElasticParams};

fn normal(rng: &mut ChaCha8Rng, n: usize, std: f64) -> Vec<f64> {
    let dist = Normal::new(0.0, std).expect("positive std");
    (0..n).map(|_| dist.sample(rng)).collect()
}

fn dense(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> FloatLinear {
    let w = normal(rng, rows * cols, 1.0 / (rows as f64).sqrt());
    let b = normal(rng, cols, 0.1);
    FloatLinear::Dense(DenseLinear::new(rows, cols, w, b).expect("consistent shapes"))
}

fn layernorm(rng: &mut ChaCha8Rng, d: usize) -> LayerNormParams {
    LayerNormParams {
        gamma: normal(rng, d, 0.1)
            .into_iter()
            .map(|g| (1.0 + g).abs().max(0.25))
            .collect(),
        beta: normal(rng, d, 0.1),
    }
}

/// Full-precision encoder with Gaussian weights drawn from `seed`.
pub fn random_float_model(config: &ModelConfig, seed: u64) -> Result<StageModel> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (d, f) = (config.dim, config.ffn_dim);
    let embedding = normal(&mut rng, config.vocab * d, 1.0);
    let position = normal(&mut rng, config.max_seq * d, 0.1);
    let blocks = (0..config.blocks)
        .map(|_| FloatBlock {
            wq: dense(&mut rng, d, d),
            wk: dense(&mut rng, d, d),
            wv: dense(&mut rng, d, d),
            wo: dense(&mut rng, d, d),
            ffn_in: dense(&mut rng, d, f),
            ffn_out: dense(&mut rng, f, d),
            attn_norm: layernorm(&mut rng, d),
            ffn_norm: layernorm(&mut rng, d),
            sites: None,
        })
        .collect();
    let classifier = dense(&mut rng, d, config.classes);
    let m0 = FloatModel {
        config: config.clone(),
        embedding,
        position,
        blocks,
        classifier,
        cls_site: None,
        score_scale: 1.0 / (config.head_dim() as f64).sqrt(),
        activation: Activation::Gelu,
        softmax: SoftmaxKind::Exact,
    };
    StageModel::new(Stage::M0, StageParams::Float(m0))
}

/// `count` uniformly random sequences of `len` token ids.
pub fn random_inputs(config: &ModelConfig, count: usize, len: usize, seed: u64) -> Vec<Vec<usize>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count)
        .map(|_| (0..len).map(|_| rng.gen_range(0..config.vocab)).collect())
        .collect()
}

fn snap(values: &[f64], frac_bits: u32) -> Result<Vec<f64>> {
    Ok(FixedTensor::from_real_vec(values, frac_bits)?.to_reals())
}

/// Binary version of a dense layer whose output is additionally scaled by
/// `2^extra`; the bias lands on the activation grid.
fn binarize(layer: &FloatLinear, extra: i32, frac_bits: u32) -> Result<BinaryLinear> {
    let FloatLinear::Dense(l) = layer else {
        return Err(Error::State("layer is already binary".into()));
    };
    let mut b = binarize_weights(&l.weights, l.rows, l.cols)?;
    b.scale_exponent += extra;
    let s = (extra as f64).exp2();
    let bias: Vec<f64> = l.bias.iter().map(|v| v * s).collect();
    b.with_bias(FixedTensor::from_real_vec(&bias, frac_bits)?.reshape(vec![l.cols])?)
}

fn expect_float(m: &StageModel, stage: Stage) -> Result<&FloatModel> {
    match (m.stage(), m.float()) {
        (s, Some(f)) if s == stage => Ok(f),
        _ => Err(Error::State(format!(
            "expected a stage {stage} model, got {}",
            m.stage()
        ))),
    }
}

/// `M1`: binary weights with power-of-two scales (the score scale merged
/// into the query layer), ReLU, and activation sites fitted on a
/// calibration pass of the unquantized `M1` network.
pub fn to_m1(m0: &StageModel, calibration: &[Vec<usize>]) -> Result<StageModel> {
    let src = expect_float(m0, Stage::M0)?;
    let cfg = &src.config;
    let f = cfg.frac_bits;
    let k_score = pow2_scale(src.score_scale)?;
    let blocks = src
        .blocks
        .iter()
        .map(|b| {
            Ok(FloatBlock {
                wq: FloatLinear::Binary(binarize(&b.wq, k_score, f)?),
                wk: FloatLinear::Binary(binarize(&b.wk, 0, f)?),
                wv: FloatLinear::Binary(binarize(&b.wv, 0, f)?),
                wo: FloatLinear::Binary(binarize(&b.wo, 0, f)?),
                ffn_in: FloatLinear::Binary(binarize(&b.ffn_in, 0, f)?),
                ffn_out: FloatLinear::Binary(binarize(&b.ffn_out, 0, f)?),
                attn_norm: b.attn_norm.clone(),
                ffn_norm: b.ffn_norm.clone(),
                sites: None,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let mut m1 = FloatModel {
        config: cfg.clone(),
        embedding: snap(&src.embedding, f)?,
        position: snap(&src.position, f)?,
        blocks,
        classifier: FloatLinear::Binary(binarize(&src.classifier, 0, f)?),
        cls_site: None,
        score_scale: 1.0,
        activation: Activation::Relu,
        softmax: SoftmaxKind::Exact,
    };

    let mut samples: BTreeMap<(usize, Site), Vec<f64>> = BTreeMap::new();
    let mut ops = OpCounter::new();
    for ids in calibration {
        let mut probe = |b: usize, s: Site, v: &[f64]| {
            samples.entry((b, s)).or_default().extend_from_slice(v);
        };
        m1.trace(ids, &mut ops, Some(&mut probe))?;
    }
    let bits = cfg.act_bits;
    for (b, blk) in m1.blocks.iter_mut().enumerate() {
        let get = |s: Site| samples.get(&(b, s)).cloned().unwrap_or_default();
        blk.sites = Some(BlockSites::fit(&get, bits)?);
    }
    let cls = samples
        .get(&(cfg.blocks, Site::ClsIn))
        .cloned()
        .unwrap_or_default();
    m1.cls_site = Some(fit_elastic(&cls, bits)?);
    StageModel::new(Stage::M1, StageParams::Float(m1))
}

/// `M2`: `M1` with the power-of-two softmax.
pub fn to_m2(m1: &StageModel) -> Result<StageModel> {
    let mut m = expect_float(m1, Stage::M1)?.clone();
    m.softmax = SoftmaxKind::PowerOfTwo;
    StageModel::new(Stage::M2, StageParams::Float(m))
}

fn binary(l: &FloatLinear) -> Result<BinaryLinear> {
    match l {
        FloatLinear::Binary(b) => Ok(b.clone()),
        FloatLinear::Dense(_) => Err(Error::State("dense layer in a quantized stage".into())),
    }
}

fn mantissas(values: &[f64], frac_bits: u32) -> Result<Vec<i64>> {
    Ok(FixedTensor::from_real_vec(values, frac_bits)?.into_mantissas())
}

/// `M3`: integer `M2` with shift power-norm in place of layer norm. The
/// norm statistics are gathered by training-mode passes over `calibration`
/// and then frozen.
pub fn to_m3(m2: &StageModel, calibration: &[Vec<usize>]) -> Result<StageModel> {
    let src = expect_float(m2, Stage::M2)?;
    let cfg = &src.config;
    let f = cfg.frac_bits;
    let norm = |ln: &LayerNormParams| -> Result<BspnState> {
        Ok(BspnState::with_affine(
            ln.gamma.clone(),
            ln.beta.clone(),
            cfg.heads,
            cfg.norm_momentum,
        )?
        .with_pow2_scale(cfg.pow2_norm))
    };
    let blocks = src
        .blocks
        .iter()
        .map(|b| {
            let sites = b
                .sites
                .ok_or_else(|| Error::State("block without activation sites".into()))?;
            Ok(BlockParams {
                wq: binary(&b.wq)?,
                wk: binary(&b.wk)?,
                wv: binary(&b.wv)?,
                wo: binary(&b.wo)?,
                ffn_in: binary(&b.ffn_in)?,
                ffn_out: binary(&b.ffn_out)?,
                attn_norm: norm(&b.attn_norm)?,
                ffn_norm: norm(&b.ffn_norm)?,
                d_k: cfg.head_dim(),
                heads: cfg.heads,
                timesteps: cfg.timesteps,
                frac_bits: f,
                sites,
                softmax: cfg.softmax,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let mut m3 = FixedModel {
        config: cfg.clone(),
        embedding: mantissas(&src.embedding, f)?,
        position: mantissas(&src.position, f)?,
        blocks,
        cls_site: src
            .cls_site
            .ok_or_else(|| Error::State("classifier without an activation site".into()))?,
        classifier: binary(&src.classifier)?,
    };
    if calibration.is_empty() {
        m3.freeze_norms()?;
    } else {
        m3.calibrate_norms(calibration)?;
    }
    StageModel::new(Stage::M3, StageParams::Fixed(m3))
}

/// `S`: the same integer parameters evaluated on spike trains.
pub fn to_s(m3: &StageModel) -> Result<StageModel> {
    match (m3.stage(), m3.fixed()) {
        (Stage::M3, Some(m)) => StageModel::new(Stage::S, StageParams::Fixed(m.clone())),
        _ => Err(Error::State(format!(
            "expected a stage m3 model, got {}",
            m3.stage()
        ))),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineConfig {
    pub seed: u64,
    pub calibration: usize,
    pub evaluation: usize,
    pub seq: usize,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            calibration: 32,
            evaluation: 32,
            seq: 8,
        }
    }
}

/// Logit deviation between two adjacent stages over the evaluation inputs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageReport {
    pub from: Stage,
    pub to: Stage,
    pub samples: usize,
    pub max_abs_diff: f64,
    pub mean_abs_diff: f64,
    /// Fraction of inputs with the same arg-max class.
    pub argmax_agreement: f64,
    pub exact: bool,
    /// Per-probability ratio bound of the power-of-two softmax, for the
    /// transition that introduces it.
    pub softmax_ratio_bound: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct Pipeline {
    pub m1: StageModel,
    pub m2: StageModel,
    pub m3: StageModel,
    pub s: StageModel,
    pub reports: Vec<StageReport>,
}

impl Pipeline {
    pub fn stages(&self) -> [&StageModel; 4] {
        [&self.m1, &self.m2, &self.m3, &self.s]
    }
}

fn argmax(v: &[f64]) -> usize {
    v.iter()
        .enumerate()
        .fold((0, f64::NEG_INFINITY), |(bi, bv), (i, &x)| {
            if x > bv {
                (i, x)
            } else {
                (bi, bv)
            }
        })
        .0
}

fn compare(a: &StageModel, b: &StageModel, inputs: &[Vec<usize>]) -> Result<StageReport> {
    let (mut max, mut sum, mut count, mut agree) = (0.0f64, 0.0, 0usize, 0usize);
    for ids in inputs {
        let la = forward(a, ids)?;
        let lb = forward(b, ids)?;
        for (x, y) in la.iter().zip(&lb) {
            let d = (x - y).abs();
            max = max.max(d);
            sum += d;
            count += 1;
        }
        agree += usize::from(argmax(&la) == argmax(&lb));
    }
    let to = b.stage();
    Ok(StageReport {
        from: a.stage(),
        to,
        samples: inputs.len(),
        max_abs_diff: max,
        mean_abs_diff: if count == 0 { 0.0 } else { sum / count as f64 },
        argmax_agreement: if inputs.is_empty() {
            1.0
        } else {
            agree as f64 / inputs.len() as f64
        },
        exact: max == 0.0,
        softmax_ratio_bound: (to == Stage::M2).then_some(2.0 * std::f64::consts::SQRT_2),
    })
}

/// Builds every successor of `m0` and measures each transition.
pub fn transform_pipeline(m0: &StageModel, cfg: &PipelineConfig) -> Result<Pipeline> {
    let mc = m0.config();
    if cfg.seq == 0 || cfg.seq > mc.max_seq {
        return Err(Error::Shape(format!(
            "sequence length {} not in 1..={}",
            cfg.seq, mc.max_seq
        )));
    }
    let calibration = random_inputs(mc, cfg.calibration, cfg.seq, cfg.seed ^ 0xca11_b4a7e);
    let evaluation = random_inputs(mc, cfg.evaluation, cfg.seq, cfg.seed ^ 0x0e7a_1a7e);
    let m1 = to_m1(m0, &calibration)?;
    let m2 = to_m2(&m1)?;
    let m3 = to_m3(&m2, &calibration)?;
    let s = to_s(&m3)?;
    let reports = vec![
        compare(m0, &m1, &evaluation)?,
        compare(&m1, &m2, &evaluation)?,
        compare(&m2, &m3, &evaluation)?,
        compare(&m3, &s, &evaluation)?,
    ];
    Ok(Pipeline {
        m1,
        m2,
        m3,
        s,
        reports,
    })
}

/// Shape of a standalone random block.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct BlockShape {
    pub dim: usize,
    pub heads: usize,
    pub ffn_dim: usize,
    pub timesteps: usize,
    pub act_bits: u32,
    pub frac_bits: u32,
    pub pow2_norm: bool,
}

impl Default for BlockShape {
    fn default() -> Self {
        Self {
            dim: 16,
            heads: 2,
            ffn_dim: 32,
            timesteps: 16,
            act_bits: 4,
            frac_bits: 8,
            pow2_norm: true,
        }
    }
}

fn random_binary(
    rng: &mut ChaCha8Rng,
    rows: usize,
    cols: usize,
    frac_bits: u32,
) -> Result<BinaryLinear> {
    let signs = (0..rows * cols)
        .map(|_| if rng.gen::<bool>() { 1 } else { -1 })
        .collect();
    let scale = rng.gen_range(-5..=-1);
    let bias: Vec<i64> = (0..cols)
        .map(|_| rng.gen_range(-(1i64 << frac_bits)..=(1i64 << frac_bits)))
        .collect();
    BinaryLinear::new(rows, cols, signs, scale)?.with_bias(FixedTensor::new(
        bias,
        vec![cols],
        frac_bits,
    )?)
}

fn random_norm(rng: &mut ChaCha8Rng, shape: &BlockShape) -> Result<BspnState> {
    let d = shape.dim;
    let gamma = (0..d).map(|_| rng.gen_range(0.25..2.0)).collect();
    let beta = (0..d).map(|_| rng.gen_range(-0.5..0.5)).collect();
    let psi: Vec<f64> = (0..d).map(|_| rng.gen_range(0.02..0.5)).collect();
    let mut norm =
        BspnState::with_affine(gamma, beta, shape.heads, 0.9)?.with_pow2_scale(shape.pow2_norm);
    norm.set_psi(&psi)?;
    norm.freeze(shape.frac_bits)?;
    Ok(norm)
}

/// Block with random binary weights, site scales and frozen norms.
pub fn random_block(shape: &BlockShape, seed: u64) -> Result<BlockParams> {
    if shape.heads == 0 || !shape.dim.is_multiple_of(shape.heads) {
        return Err(Error::Shape(format!(
            "dim {} over {} heads",
            shape.dim, shape.heads
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (d, f, fb) = (shape.dim, shape.ffn_dim, shape.frac_bits);
    let site = |rng: &mut ChaCha8Rng| {
        ElasticParams::from_exponent(rng.gen_range(-4..=-1), 0.0, shape.act_bits)
    };
    let sites = BlockSites {
        attn_in: site(&mut rng)?,
        query: site(&mut rng)?,
        prob: BlockSites::prob_params(shape.act_bits)?,
        attn_out: site(&mut rng)?,
        ffn_in: site(&mut rng)?,
        ffn_hidden: site(&mut rng)?,
    };
    let p = BlockParams {
        wq: random_binary(&mut rng, d, d, fb)?,
        wk: random_binary(&mut rng, d, d, fb)?,
        wv: random_binary(&mut rng, d, d, fb)?,
        wo: random_binary(&mut rng, d, d, fb)?,
        ffn_in: random_binary(&mut rng, d, f, fb)?,
        ffn_out: random_binary(&mut rng, f, d, fb)?,
        attn_norm: random_norm(&mut rng, shape)?,
        ffn_norm: random_norm(&mut rng, shape)?,
        d_k: d / shape.heads,
        heads: shape.heads,
        timesteps: shape.timesteps,
        frac_bits: fb,
        sites,
        softmax: Default::default(),
    };
    p.validate()?;
    Ok(p)
}

/// Random block input `[seq x dim]` with values in `[-4, 4)`.
pub fn random_block_input(shape: &BlockShape, seq: usize, seed: u64) -> Result<FixedTensor> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let lim = 4i64 << shape.frac_bits;
    let m = (0..seq * shape.dim)
        .map(|_| rng.gen_range(-lim..lim))
        .collect();
    FixedTensor::new(m, vec![seq, shape.dim], shape.frac_bits)
}
