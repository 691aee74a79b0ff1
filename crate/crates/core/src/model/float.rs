//! Floating-point stages: the full-precision encoder and its simulated-
//! quantization successors.

use serde::{Deserialize, Serialize};

use super::config::ModelConfig;
use super::sites::{BlockSites, Site};
use crate::energy::{Op, OpCounter};
use crate::error::{Error, Result};
use crate::kernels::{layernorm_eps, ptsoftmax_real, softmax_counted};
use crate::quantize::{BinaryLinear, ElasticParams};

/// Variance floor of the float layer norm.
pub const LAYERNORM_EPS: f64 = 1e-5;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DenseLinear {
    pub rows: usize,
    pub cols: usize,
    /// Row-major `[rows x cols]`.
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

impl DenseLinear {
    pub fn new(rows: usize, cols: usize, weights: Vec<f64>, bias: Vec<f64>) -> Result<Self> {
        if weights.len() != rows * cols || bias.len() != cols {
            return Err(Error::Shape(format!(
                "{} weights and {} biases for {rows}x{cols}",
                weights.len(),
                bias.len()
            )));
        }
        Ok(Self {
            rows,
            cols,
            weights,
            bias,
        })
    }
}

/// A layer of a float stage: dense in the full-precision model, binary after
/// quantization (evaluated through its dequantized weights).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FloatLinear {
    Dense(DenseLinear),
    Binary(BinaryLinear),
}

impl FloatLinear {
    pub fn rows(&self) -> usize {
        match self {
            FloatLinear::Dense(l) => l.rows,
            FloatLinear::Binary(l) => l.rows,
        }
    }

    pub fn cols(&self) -> usize {
        match self {
            FloatLinear::Dense(l) => l.cols,
            FloatLinear::Binary(l) => l.cols,
        }
    }

    pub fn is_binary(&self) -> bool {
        matches!(self, FloatLinear::Binary(_))
    }

    /// `x [n x rows] -> [n x cols]`.
    pub fn forward(&self, x: &[f64], ops: &mut OpCounter) -> Vec<f64> {
        let (rows, cols) = (self.rows(), self.cols());
        let (w, b) = match self {
            FloatLinear::Dense(l) => (l.weights.clone(), l.bias.clone()),
            FloatLinear::Binary(l) => (l.dequantize(), l.out_bias.to_reals()),
        };
        let n = x.len() / rows;
        ops.record(Op::Mul, (n * rows * cols) as u64);
        ops.record(Op::Add, (n * rows * cols) as u64);
        let mut out = Vec::with_capacity(n * cols);
        for r in 0..n {
            let xr = &x[r * rows..(r + 1) * rows];
            for j in 0..cols {
                let dot: f64 = (0..rows).map(|i| xr[i] * w[i * cols + j]).sum();
                out.push(dot + b[j]);
            }
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerNormParams {
    pub gamma: Vec<f64>,
    pub beta: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FloatBlock {
    pub wq: FloatLinear,
    pub wk: FloatLinear,
    pub wv: FloatLinear,
    pub wo: FloatLinear,
    pub ffn_in: FloatLinear,
    pub ffn_out: FloatLinear,
    pub attn_norm: LayerNormParams,
    pub ffn_norm: LayerNormParams,
    /// Simulated activation quantization; `None` in full precision.
    pub sites: Option<BlockSites>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    /// Tanh approximation.
    Gelu,
    Relu,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SoftmaxKind {
    Exact,
    PowerOfTwo,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FloatModel {
    pub config: ModelConfig,
    /// `[vocab x dim]`.
    pub embedding: Vec<f64>,
    /// `[max_seq x dim]`.
    pub position: Vec<f64>,
    pub blocks: Vec<FloatBlock>,
    pub classifier: FloatLinear,
    pub cls_site: Option<ElasticParams>,
    /// Factor on attention scores; 1 once merged into the query weights.
    pub score_scale: f64,
    pub activation: Activation,
    pub softmax: SoftmaxKind,
}

/// Observer of pre-quantization activations: `(block, site, values)`.
pub type Probe<'a> = &'a mut dyn FnMut(usize, Site, &[f64]);

/// Logits and the output of every block.
#[derive(Debug, Clone, PartialEq)]
pub struct FloatTrace {
    pub logits: Vec<f64>,
    pub block_outputs: Vec<Vec<f64>>,
}

pub fn gelu(x: f64) -> f64 {
    const C: f64 = 0.797_884_560_802_865_4; // sqrt(2 / pi)
    0.5 * x * (1.0 + (C * (x + 0.044_715 * x * x * x)).tanh())
}

fn quantize(site: Option<&ElasticParams>, v: &mut [f64]) {
    if let Some(p) = site {
        for x in v {
            *x = p.quantize_real(*x);
        }
    }
}

pub(crate) fn check_ids(config: &ModelConfig, ids: &[usize]) -> Result<()> {
    if ids.is_empty() || ids.len() > config.max_seq {
        return Err(Error::Shape(format!(
            "sequence length {} not in 1..={}",
            ids.len(),
            config.max_seq
        )));
    }
    if let Some(&bad) = ids.iter().find(|&&t| t >= config.vocab) {
        return Err(Error::Domain(format!(
            "token {bad} outside vocabulary {}",
            config.vocab
        )));
    }
    Ok(())
}

impl FloatModel {
    pub fn forward(&self, ids: &[usize]) -> Result<Vec<f64>> {
        Ok(self.trace(ids, &mut OpCounter::new(), None)?.logits)
    }

    pub fn trace(
        &self,
        ids: &[usize],
        ops: &mut OpCounter,
        mut probe: Option<Probe<'_>>,
    ) -> Result<FloatTrace> {
        let cfg = &self.config;
        check_ids(cfg, ids)?;
        let (n, d) = (ids.len(), cfg.dim);
        let mut x = Vec::with_capacity(n * d);
        for (t, &id) in ids.iter().enumerate() {
            for c in 0..d {
                x.push(self.embedding[id * d + c] + self.position[t * d + c]);
            }
        }
        ops.record(Op::Add, (n * d) as u64);
        let mut block_outputs = Vec::with_capacity(self.blocks.len());
        for (b, blk) in self.blocks.iter().enumerate() {
            let mut see = |site: Site, v: &[f64]| {
                if let Some(p) = probe.as_mut() {
                    p(b, site, v);
                }
            };
            x = self.block(blk, x, n, ops, &mut see)?;
            block_outputs.push(x.clone());
        }
        let mut head = x[..d].to_vec();
        if let Some(p) = probe.as_mut() {
            p(self.blocks.len(), Site::ClsIn, &head);
        }
        quantize(self.cls_site.as_ref(), &mut head);
        let logits = self.classifier.forward(&head, ops);
        Ok(FloatTrace {
            logits,
            block_outputs,
        })
    }

    fn block(
        &self,
        blk: &FloatBlock,
        x: Vec<f64>,
        n: usize,
        ops: &mut OpCounter,
        see: &mut dyn FnMut(Site, &[f64]),
    ) -> Result<Vec<f64>> {
        let cfg = &self.config;
        let (d, h, dk) = (cfg.dim, cfg.heads, cfg.head_dim());
        let site = |s: Site| blk.sites.as_ref().and_then(|p| p.get(s));

        let mut xa = x.clone();
        see(Site::AttnIn, &xa);
        quantize(site(Site::AttnIn), &mut xa);
        let mut q = blk.wq.forward(&xa, ops);
        let k = blk.wk.forward(&xa, ops);
        let v = blk.wv.forward(&xa, ops);
        see(Site::Query, &q);
        quantize(site(Site::Query), &mut q);

        let mut attn = vec![0.0; n * d];
        let mut probs_seen = Vec::with_capacity(h * n * n);
        for head in 0..h {
            let off = head * dk;
            for i in 0..n {
                let scores: Vec<f64> = (0..n)
                    .map(|j| {
                        let dot: f64 = (0..dk)
                            .map(|c| q[i * d + off + c] * k[j * d + off + c])
                            .sum();
                        dot * self.score_scale
                    })
                    .collect();
                ops.record(Op::Mul, (n * dk) as u64);
                ops.record(Op::Add, (n * (dk - 1)) as u64);
                let mut p = match self.softmax {
                    SoftmaxKind::Exact => softmax_counted(&scores, ops)?,
                    SoftmaxKind::PowerOfTwo => ptsoftmax_real(&scores, &cfg.softmax)?.to_f64(),
                };
                probs_seen.extend_from_slice(&p);
                quantize(site(Site::Prob), &mut p);
                for c in 0..dk {
                    attn[i * d + off + c] = (0..n).map(|j| p[j] * v[j * d + off + c]).sum();
                }
                ops.record(Op::Mul, (n * dk) as u64);
                ops.record(Op::Add, ((n - 1) * dk) as u64);
            }
        }
        see(Site::Prob, &probs_seen);
        see(Site::AttnOut, &attn);
        quantize(site(Site::AttnOut), &mut attn);
        let a = blk.wo.forward(&attn, ops);
        let x1 = residual_norm(&x, &a, &blk.attn_norm, d, ops)?;

        let mut f_in = x1.clone();
        see(Site::FfnIn, &f_in);
        quantize(site(Site::FfnIn), &mut f_in);
        let mut hidden = blk.ffn_in.forward(&f_in, ops);
        for v in &mut hidden {
            *v = match self.activation {
                Activation::Gelu => gelu(*v),
                Activation::Relu => v.max(0.0),
            };
        }
        see(Site::FfnHidden, &hidden);
        quantize(site(Site::FfnHidden), &mut hidden);
        let f = blk.ffn_out.forward(&hidden, ops);
        residual_norm(&x1, &f, &blk.ffn_norm, d, ops)
    }
}

/// `LayerNorm(x + y)` row by row.
fn residual_norm(
    x: &[f64],
    y: &[f64],
    ln: &LayerNormParams,
    d: usize,
    ops: &mut OpCounter,
) -> Result<Vec<f64>> {
    let mut out = Vec::with_capacity(x.len());
    ops.record(Op::Add, x.len() as u64);
    for (xr, yr) in x.chunks(d).zip(y.chunks(d)) {
        let s: Vec<f64> = xr.iter().zip(yr).map(|(a, b)| a + b).collect();
        out.extend(layernorm_eps(&s, &ln.gamma, &ln.beta, LAYERNORM_EPS)?);
        let table = crate::energy::table_cost(crate::energy::Kernel::Layernorm, d as u64)?;
        *ops += table;
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gelu_reference_points() {
        assert_eq!(gelu(0.0), 0.0);
        assert!((gelu(1.0) - 0.841_191_990_607_477).abs() < 1e-12);
        assert!((gelu(-1.0) + 0.158_808_009_392_523).abs() < 1e-12);
    }

    #[test]
    fn dense_forward_matches_hand_product() {
        let l = FloatLinear::Dense(
            DenseLinear::new(
                2,
                3,
                vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0],
                vec![0.5, 0.0, -1.0],
            )
            .unwrap(),
        );
        let y = l.forward(&[1.0, -1.0, 2.0, 0.5], &mut OpCounter::new());
        assert_eq!(y, vec![-2.5, -3.0, -4.0, 4.5, 6.5, 8.0]);
    }
}
