use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kernels::PtSoftmaxConfig;
use crate::numerics::DEFAULT_FRAC_BITS;
use crate::quantize::DEFAULT_ACT_BITS;
use crate::spiking::{Encoder, DEFAULT_TIMESTEPS};

/// Hyperparameters shared by every stage of a toy encoder.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub vocab: usize,
    pub dim: usize,
    pub heads: usize,
    pub ffn_dim: usize,
    pub blocks: usize,
    pub max_seq: usize,
    pub classes: usize,
    pub timesteps: usize,
    pub act_bits: u32,
    /// Binary point of every fixed-point activation.
    pub frac_bits: u32,
    pub softmax: PtSoftmaxConfig,
    /// Snap each BSPN `gamma / psi` to a power of two so inference is shift-only.
    pub pow2_norm: bool,
    pub norm_momentum: f64,
    pub encoder: Encoder,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            vocab: 64,
            dim: 32,
            heads: 2,
            ffn_dim: 128,
            blocks: 2,
            max_seq: 16,
            classes: 2,
            timesteps: DEFAULT_TIMESTEPS,
            act_bits: DEFAULT_ACT_BITS,
            frac_bits: DEFAULT_FRAC_BITS,
            softmax: PtSoftmaxConfig::default(),
            pow2_norm: true,
            norm_momentum: 0.9,
            encoder: Encoder::Rate,
        }
    }
}

impl ModelConfig {
    pub fn head_dim(&self) -> usize {
        self.dim / self.heads.max(1)
    }

    pub fn max_level(&self) -> i64 {
        (1i64 << self.act_bits) - 1
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("vocab", self.vocab),
            ("dim", self.dim),
            ("heads", self.heads),
            ("ffn_dim", self.ffn_dim),
            ("blocks", self.blocks),
            ("max_seq", self.max_seq),
            ("classes", self.classes),
        ];
        for (name, v) in positive {
            if v == 0 {
                return Err(Error::Domain(format!("{name} must be positive")));
            }
        }
        if !self.dim.is_multiple_of(self.heads) {
            return Err(Error::Shape(format!(
                "dim {} is not divisible by {} heads",
                self.dim, self.heads
            )));
        }
        if !(1..=8).contains(&self.act_bits) {
            return Err(Error::Domain(format!(
                "act_bits {} not in 1..=8",
                self.act_bits
            )));
        }
        if (self.timesteps as i64) < self.max_level() {
            return Err(Error::Capacity {
                level: self.max_level(),
                timesteps: self.timesteps,
            });
        }
        // The probability site needs levels up to 2^(a-1).
        if self.frac_bits < self.act_bits || self.frac_bits > 24 {
            return Err(Error::Domain(format!(
                "frac_bits {} must lie in {}..=24",
                self.frac_bits, self.act_bits
            )));
        }
        if !(0.0..1.0).contains(&self.norm_momentum) {
            return Err(Error::Domain(format!(
                "norm momentum {} not in [0, 1)",
                self.norm_momentum
            )));
        }
        if let Some(c) = self.softmax.clamp_max {
            if !c.is_finite() {
                return Err(Error::Domain(format!("clamp_max {c} is not finite")));
            }
        }
        Ok(())
    }
}
