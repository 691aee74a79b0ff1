//! Integer stages: the level-domain model and its spiking conversion.
//!
//! Both run the same code; they differ only in the [`Engine`] that forms
//! products between unsigned activation levels and an integer right operand.
//! The level engine multiplies, the spike engine rate-codes the levels and
//! accumulates the right operand once per spike. Because a level `q` becomes
//! exactly `q` spikes, the two agree bit for bit.

use serde::{Deserialize, Serialize};

use super::config::ModelConfig;
use super::float::check_ids;
use super::sites::{BlockSites, Site};
use crate::energy::{Op, OpCounter};
use crate::error::{Error, Result};
use crate::kernels::{
    bspn_forward_infer_counted, bspn_forward_train, ptsoftmax_mantissas, relu, BspnState,
    PtSoftmaxConfig,
};
use crate::numerics::{shift_i64, FixedTensor};
use crate::quantize::{elastic_levels, BinaryLinear, ElasticParams};
use crate::spiking::{encode, spike_accumulate, Encoder, SpikeTrain};

/// Declared mantissa width of activations inside the model.
pub const MODEL_BIT_WIDTH: u32 = 48;

/// Parameters of one encoder block in the integer stages.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BlockParams {
    /// Carries the merged `1 / sqrt(d_k)` score scale.
    pub wq: BinaryLinear,
    pub wk: BinaryLinear,
    pub wv: BinaryLinear,
    pub wo: BinaryLinear,
    pub ffn_in: BinaryLinear,
    pub ffn_out: BinaryLinear,
    pub attn_norm: BspnState,
    pub ffn_norm: BspnState,
    pub d_k: usize,
    pub heads: usize,
    pub timesteps: usize,
    pub frac_bits: u32,
    pub sites: BlockSites,
    pub softmax: PtSoftmaxConfig,
}

impl BlockParams {
    pub fn dim(&self) -> usize {
        self.d_k * self.heads
    }

    pub fn validate(&self) -> Result<()> {
        let d = self.dim();
        let f = self.ffn_in.cols;
        let shapes = [
            ("wq", &self.wq, d, d),
            ("wk", &self.wk, d, d),
            ("wv", &self.wv, d, d),
            ("wo", &self.wo, d, d),
            ("ffn_in", &self.ffn_in, d, f),
            ("ffn_out", &self.ffn_out, f, d),
        ];
        for (name, w, r, c) in shapes {
            if w.rows != r || w.cols != c {
                return Err(Error::Shape(format!(
                    "{name} is {}x{}, expected {r}x{c}",
                    w.rows, w.cols
                )));
            }
            if w.out_bias.frac_bits() != self.frac_bits {
                return Err(Error::Shape(format!(
                    "{name} bias has {} fractional bits, activations {}",
                    w.out_bias.frac_bits(),
                    self.frac_bits
                )));
            }
        }
        for norm in [&self.attn_norm, &self.ffn_norm] {
            if norm.channels != d {
                return Err(Error::Shape(format!(
                    "norm over {} channels, dim {d}",
                    norm.channels
                )));
            }
        }
        let sites = &self.sites;
        for s in [
            &sites.attn_in,
            &sites.query,
            &sites.prob,
            &sites.attn_out,
            &sites.ffn_in,
            &sites.ffn_hidden,
        ] {
            let level = (1i64 << s.bits) - 1;
            if (self.timesteps as i64) < level {
                return Err(Error::Capacity {
                    level,
                    timesteps: self.timesteps,
                });
            }
        }
        Ok(())
    }
}

/// Left operand of a product: unsigned levels `[rows x inner]`, plus their
/// spike train when the engine runs on spikes.
#[derive(Debug, Clone)]
pub struct Operand {
    pub levels: Vec<i64>,
    pub rows: usize,
    pub inner: usize,
    pub train: Option<SpikeTrain>,
}

/// Forms `levels [rows x inner] . right [inner x cols]`.
pub trait Engine {
    fn operand(
        &mut self,
        levels: Vec<i64>,
        rows: usize,
        inner: usize,
        site: Site,
    ) -> Result<Operand>;

    fn product(
        &mut self,
        a: &Operand,
        right: &[i64],
        cols: usize,
        ops: &mut OpCounter,
    ) -> Result<Vec<i64>>;

    /// Marks the start of block `b` (the classifier is block `blocks`).
    fn enter_block(&mut self, _b: usize) {}
}

fn check_right(a: &Operand, right: &[i64], cols: usize) -> Result<()> {
    if right.len() != a.inner * cols {
        return Err(Error::Shape(format!(
            "[{} x {}] operand against a {}-element matrix with {cols} columns",
            a.rows,
            a.inner,
            right.len()
        )));
    }
    Ok(())
}

/// Integer multiply-accumulate on levels.
#[derive(Debug, Clone, Copy, Default)]
pub struct LevelEngine;

impl Engine for LevelEngine {
    fn operand(
        &mut self,
        levels: Vec<i64>,
        rows: usize,
        inner: usize,
        _site: Site,
    ) -> Result<Operand> {
        Ok(Operand {
            levels,
            rows,
            inner,
            train: None,
        })
    }

    fn product(
        &mut self,
        a: &Operand,
        right: &[i64],
        cols: usize,
        ops: &mut OpCounter,
    ) -> Result<Vec<i64>> {
        check_right(a, right, cols)?;
        let mut out = vec![0i64; a.rows * cols];
        for r in 0..a.rows {
            for i in 0..a.inner {
                let q = a.levels[r * a.inner + i];
                for j in 0..cols {
                    out[r * cols + j] += q * right[i * cols + j];
                }
            }
        }
        let macs = (a.rows * a.inner * cols) as u64;
        ops.record(Op::Mul, macs);
        ops.record(Op::Add, macs);
        Ok(out)
    }
}

/// Spikes emitted at one site of one block.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SiteSpikes {
    pub block: usize,
    pub site: Site,
    pub spikes: u64,
    pub slots: u64,
}

/// Rate-codes every operand and accumulates the right operand per spike.
#[derive(Debug, Clone)]
pub struct SpikeEngine {
    pub timesteps: usize,
    pub encoder: Encoder,
    block: usize,
    stats: Vec<SiteSpikes>,
}

impl SpikeEngine {
    pub fn new(timesteps: usize, encoder: Encoder) -> Self {
        Self {
            timesteps,
            encoder,
            block: 0,
            stats: Vec::new(),
        }
    }

    /// Spike tallies merged per `(block, site)`, in first-seen order.
    pub fn stats(&self) -> &[SiteSpikes] {
        &self.stats
    }

    pub fn into_stats(self) -> Vec<SiteSpikes> {
        self.stats
    }
}

impl Engine for SpikeEngine {
    fn operand(
        &mut self,
        levels: Vec<i64>,
        rows: usize,
        inner: usize,
        site: Site,
    ) -> Result<Operand> {
        let train = encode(&levels, vec![rows, inner], self.timesteps, self.encoder)?;
        let block = self.block;
        match self
            .stats
            .iter_mut()
            .find(|s| s.block == block && s.site == site)
        {
            Some(s) => {
                s.spikes += train.spike_count();
                s.slots += train.slots();
            }
            None => self.stats.push(SiteSpikes {
                block,
                site,
                spikes: train.spike_count(),
                slots: train.slots(),
            }),
        }
        Ok(Operand {
            levels,
            rows,
            inner,
            train: Some(train),
        })
    }

    fn product(
        &mut self,
        a: &Operand,
        right: &[i64],
        cols: usize,
        ops: &mut OpCounter,
    ) -> Result<Vec<i64>> {
        check_right(a, right, cols)?;
        let train = a
            .train
            .as_ref()
            .ok_or_else(|| Error::State("operand was not spike-encoded".into()))?;
        spike_accumulate(train, right, cols, ops)
    }

    fn enter_block(&mut self, b: usize) {
        self.block = b;
    }
}

fn tensor(m: Vec<i64>, shape: Vec<usize>, frac_bits: u32) -> Result<FixedTensor> {
    FixedTensor::with_width(m, shape, frac_bits, MODEL_BIT_WIDTH)
}

/// Levels at a site, wrapped as an operand.
fn site_operand<E: Engine>(
    x: &FixedTensor,
    p: &ElasticParams,
    site: Site,
    engine: &mut E,
    ops: &mut OpCounter,
) -> Result<Operand> {
    let levels = elastic_levels(x, p, ops)?;
    let inner = x.last_dim();
    let rows = x.len().checked_div(inner).unwrap_or(0);
    engine.operand(levels, rows, inner, site)
}

/// Binary layer on levels quantized with exponent `k_in`: the accumulator
/// carries weight `2^(k_in + scale)` and is shifted onto the `frac_bits` grid
/// before the bias is added.
fn binary_layer<E: Engine>(
    a: &Operand,
    k_in: i32,
    w: &BinaryLinear,
    frac_bits: u32,
    engine: &mut E,
    ops: &mut OpCounter,
) -> Result<FixedTensor> {
    if a.inner != w.rows {
        return Err(Error::Shape(format!(
            "operand width {} against {}x{} weights",
            a.inner, w.rows, w.cols
        )));
    }
    let acc = engine.product(a, &w.signs_i64(), w.cols, ops)?;
    let shift = k_in + w.scale_exponent + frac_bits as i32;
    let bias = w.out_bias.mantissas();
    ops.record(Op::Shift, acc.len() as u64);
    ops.record(Op::Add, acc.len() as u64);
    let out = acc
        .iter()
        .enumerate()
        .map(|(i, &v)| {
            shift_i64(v, shift)?
                .checked_add(bias[i % w.cols])
                .ok_or_else(|| Error::Overflow("bias add".into()))
        })
        .collect::<Result<Vec<_>>>()?;
    tensor(out, vec![a.rows, w.cols], frac_bits)
}

fn check_input(x: &FixedTensor, p: &BlockParams) -> Result<usize> {
    if x.shape().len() != 2 || x.last_dim() != p.dim() {
        return Err(Error::Shape(format!(
            "block input {:?}, expected [seq, {}]",
            x.shape(),
            p.dim()
        )));
    }
    if x.frac_bits() != p.frac_bits {
        return Err(Error::Shape(format!(
            "input on a 2^-{} grid, block expects 2^-{}",
            x.frac_bits(),
            p.frac_bits
        )));
    }
    Ok(x.shape()[0])
}

/// `SN(PTsoftmax(alpha SN(Q) K^T)) V` for every head, concatenated
/// `[seq x d]`. `alpha` lives in the query weights.
pub fn attention_with<E: Engine>(
    x: &FixedTensor,
    p: &BlockParams,
    engine: &mut E,
    ops: &mut OpCounter,
) -> Result<FixedTensor> {
    let n = check_input(x, p)?;
    let (d, dk, f) = (p.dim(), p.d_k, p.frac_bits);
    let s = &p.sites;
    let xa = site_operand(x, &s.attn_in, Site::AttnIn, engine, ops)?;
    let q = binary_layer(&xa, s.attn_in.k_alpha, &p.wq, f, engine, ops)?;
    let k = binary_layer(&xa, s.attn_in.k_alpha, &p.wk, f, engine, ops)?;
    let v = binary_layer(&xa, s.attn_in.k_alpha, &p.wv, f, engine, ops)?;
    let q_levels = elastic_levels(&q, &s.query, ops)?;
    let (km, vm) = (k.mantissas(), v.mantissas());

    let mut out = vec![0i64; n * d];
    for h in 0..p.heads {
        let off = h * dk;
        let head_levels: Vec<i64> = (0..n)
            .flat_map(|i| q_levels[i * d + off..i * d + off + dk].iter().copied())
            .collect();
        let qa = engine.operand(head_levels, n, dk, Site::Query)?;
        // K^T as [dk x n].
        let kt: Vec<i64> = (0..dk)
            .flat_map(|c| (0..n).map(move |j| km[j * d + off + c]))
            .collect();
        let acc = engine.product(&qa, &kt, n, ops)?;
        ops.record(Op::Shift, acc.len() as u64);
        let scores = acc
            .iter()
            .map(|&a| shift_i64(a, s.query.k_alpha))
            .collect::<Result<Vec<_>>>()?;

        let mut probs = Vec::with_capacity(n * n);
        for row in scores.chunks(n) {
            let dist = ptsoftmax_mantissas(row, f, &p.softmax, ops)?;
            ops.record(Op::Shift, n as u64);
            for &e in &dist.exponents {
                let at = f as i64 + e as i64;
                probs.push(if at >= 0 { 1i64 << at } else { 0 });
            }
        }
        let probs = tensor(probs, vec![n, n], f)?;
        let pa = site_operand(&probs, &s.prob, Site::Prob, engine, ops)?;
        let vh: Vec<i64> = (0..n)
            .flat_map(|j| vm[j * d + off..j * d + off + dk].iter().copied())
            .collect();
        let acc = engine.product(&pa, &vh, dk, ops)?;
        ops.record(Op::Shift, acc.len() as u64);
        for i in 0..n {
            for c in 0..dk {
                out[i * d + off + c] = shift_i64(acc[i * dk + c], s.prob.k_alpha)?;
            }
        }
    }
    tensor(out, vec![n, d], f)
}

/// Normalization used by a block pass.
pub enum Norms<'a> {
    /// Frozen inference constants of the block itself.
    Infer,
    /// Running-statistic updates on the given states.
    Train(&'a mut BspnState, &'a mut BspnState),
}

fn add_residual(x: &FixedTensor, y: &FixedTensor, ops: &mut OpCounter) -> Result<FixedTensor> {
    if x.shape() != y.shape() || x.frac_bits() != y.frac_bits() {
        return Err(Error::Shape(format!(
            "residual {:?} + {:?}",
            x.shape(),
            y.shape()
        )));
    }
    ops.record(Op::Add, x.len() as u64);
    let sum = x
        .mantissas()
        .iter()
        .zip(y.mantissas())
        .map(|(&a, &b)| {
            a.checked_add(b)
                .ok_or_else(|| Error::Overflow("residual add".into()))
        })
        .collect::<Result<Vec<_>>>()?;
    tensor(sum, x.shape().to_vec(), x.frac_bits())
}

/// `x1 = BSPN(x + W_o SN(attn(x)))`, `BSPN(x1 + W_2 SN(relu(W_1 SN(x1))))`.
pub fn block_with<E: Engine>(
    x: &FixedTensor,
    p: &BlockParams,
    norms: Norms<'_>,
    engine: &mut E,
    ops: &mut OpCounter,
) -> Result<FixedTensor> {
    let f = p.frac_bits;
    let s = &p.sites;
    let attn = attention_with(x, p, engine, ops)?;
    let ao = site_operand(&attn, &s.attn_out, Site::AttnOut, engine, ops)?;
    let a = binary_layer(&ao, s.attn_out.k_alpha, &p.wo, f, engine, ops)?;
    let r1 = add_residual(x, &a, ops)?;
    let mut train = match norms {
        Norms::Infer => None,
        Norms::Train(an, fnorm) => Some((an, fnorm)),
    };
    let x1 = match train.as_mut() {
        None => bspn_forward_infer_counted(&r1, &p.attn_norm, ops)?,
        Some((an, _)) => bspn_forward_train(&r1, an)?,
    };

    let fi = site_operand(&x1, &s.ffn_in, Site::FfnIn, engine, ops)?;
    let hidden = relu(&binary_layer(
        &fi,
        s.ffn_in.k_alpha,
        &p.ffn_in,
        f,
        engine,
        ops,
    )?);
    let fh = site_operand(&hidden, &s.ffn_hidden, Site::FfnHidden, engine, ops)?;
    let y = binary_layer(&fh, s.ffn_hidden.k_alpha, &p.ffn_out, f, engine, ops)?;
    let r2 = add_residual(&x1, &y, ops)?;
    match train {
        None => bspn_forward_infer_counted(&r2, &p.ffn_norm, ops),
        Some((_, fnorm)) => bspn_forward_train(&r2, fnorm),
    }
}

/// Spiking attention sublayer, rate-coded over `p.timesteps` steps.
pub fn spiking_attention(
    x: &FixedTensor,
    p: &BlockParams,
    ops: &mut OpCounter,
) -> Result<FixedTensor> {
    attention_with(x, p, &mut SpikeEngine::new(p.timesteps, Encoder::Rate), ops)
}

/// Level-domain attention: spike trains replaced by their counts.
pub fn level_attention(
    x: &FixedTensor,
    p: &BlockParams,
    ops: &mut OpCounter,
) -> Result<FixedTensor> {
    attention_with(x, p, &mut LevelEngine, ops)
}

/// Spiking encoder block with frozen normalization.
pub fn encoder_block(x: &FixedTensor, p: &BlockParams, ops: &mut OpCounter) -> Result<FixedTensor> {
    block_with(
        x,
        p,
        Norms::Infer,
        &mut SpikeEngine::new(p.timesteps, Encoder::Rate),
        ops,
    )
}

pub fn level_block(x: &FixedTensor, p: &BlockParams, ops: &mut OpCounter) -> Result<FixedTensor> {
    block_with(x, p, Norms::Infer, &mut LevelEngine, ops)
}

/// Integer encoder: fixed-point embeddings, blocks and a binary classifier
/// over the first token.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FixedModel {
    pub config: ModelConfig,
    /// `[vocab x dim]` mantissas on the activation grid.
    pub embedding: Vec<i64>,
    /// `[max_seq x dim]` mantissas on the activation grid.
    pub position: Vec<i64>,
    pub blocks: Vec<BlockParams>,
    pub cls_site: ElasticParams,
    pub classifier: BinaryLinear,
}

/// Logits and every block output of an integer forward pass.
#[derive(Debug, Clone, PartialEq)]
pub struct FixedTrace {
    pub logits: FixedTensor,
    pub block_outputs: Vec<FixedTensor>,
}

impl FixedModel {
    pub fn validate(&self) -> Result<()> {
        let c = &self.config;
        c.validate()?;
        if self.embedding.len() != c.vocab * c.dim || self.position.len() != c.max_seq * c.dim {
            return Err(Error::Shape(
                "embedding tables do not match the config".into(),
            ));
        }
        if self.blocks.len() != c.blocks {
            return Err(Error::Shape(format!(
                "{} blocks, config says {}",
                self.blocks.len(),
                c.blocks
            )));
        }
        for b in &self.blocks {
            b.validate()?;
            if b.dim() != c.dim || b.frac_bits != c.frac_bits {
                return Err(Error::Shape("block does not match the config".into()));
            }
        }
        if self.classifier.rows != c.dim || self.classifier.cols != c.classes {
            return Err(Error::Shape("classifier does not match the config".into()));
        }
        Ok(())
    }

    /// `embedding[id] + position[t]` on the activation grid.
    pub fn embed(&self, ids: &[usize], ops: &mut OpCounter) -> Result<FixedTensor> {
        let c = &self.config;
        check_ids(c, ids)?;
        let d = c.dim;
        let mut m = Vec::with_capacity(ids.len() * d);
        for (t, &id) in ids.iter().enumerate() {
            for j in 0..d {
                m.push(self.embedding[id * d + j] + self.position[t * d + j]);
            }
        }
        ops.record(Op::Add, m.len() as u64);
        tensor(m, vec![ids.len(), d], c.frac_bits)
    }

    fn classify<E: Engine>(
        &self,
        x: &FixedTensor,
        engine: &mut E,
        ops: &mut OpCounter,
    ) -> Result<FixedTensor> {
        let d = self.config.dim;
        let first = tensor(x.mantissas()[..d].to_vec(), vec![1, d], x.frac_bits())?;
        engine.enter_block(self.blocks.len());
        let a = site_operand(&first, &self.cls_site, Site::ClsIn, engine, ops)?;
        let logits = binary_layer(
            &a,
            self.cls_site.k_alpha,
            &self.classifier,
            self.config.frac_bits,
            engine,
            ops,
        )?;
        logits.reshape(vec![self.config.classes])
    }

    pub fn trace_with<E: Engine>(
        &self,
        ids: &[usize],
        engine: &mut E,
        ops: &mut OpCounter,
    ) -> Result<FixedTrace> {
        let mut x = self.embed(ids, ops)?;
        let mut block_outputs = Vec::with_capacity(self.blocks.len());
        for (b, blk) in self.blocks.iter().enumerate() {
            engine.enter_block(b);
            x = block_with(&x, blk, Norms::Infer, engine, ops)?;
            block_outputs.push(x.clone());
        }
        let logits = self.classify(&x, engine, ops)?;
        Ok(FixedTrace {
            logits,
            block_outputs,
        })
    }

    /// Training-mode pass that folds each sequence into the running
    /// normalization statistics. The first sequence replaces the initial
    /// statistics outright.
    pub fn calibrate_norms(&mut self, inputs: &[Vec<usize>]) -> Result<()> {
        let momentum = self.config.norm_momentum;
        let mut ops = OpCounter::new();
        for (i, ids) in inputs.iter().enumerate() {
            let alpha = if i == 0 { 0.0 } else { momentum };
            let mut x = self.embed(ids, &mut ops)?;
            for b in 0..self.blocks.len() {
                let mut an = self.blocks[b].attn_norm.clone();
                let mut fnorm = self.blocks[b].ffn_norm.clone();
                an.momentum_alpha = alpha;
                fnorm.momentum_alpha = alpha;
                x = block_with(
                    &x,
                    &self.blocks[b],
                    Norms::Train(&mut an, &mut fnorm),
                    &mut LevelEngine,
                    &mut ops,
                )?;
                an.momentum_alpha = momentum;
                fnorm.momentum_alpha = momentum;
                self.blocks[b].attn_norm = an;
                self.blocks[b].ffn_norm = fnorm;
            }
        }
        self.freeze_norms()
    }

    /// Fixes the inference constants of every normalization layer.
    pub fn freeze_norms(&mut self) -> Result<()> {
        let (f, pow2) = (self.config.frac_bits, self.config.pow2_norm);
        for b in &mut self.blocks {
            for norm in [&mut b.attn_norm, &mut b.ffn_norm] {
                norm.pow2_scale_mode = pow2;
                norm.freeze(f)?;
            }
        }
        Ok(())
    }
}
