//! Bit-shift power normalization.
//!
//! Each channel group is divided by the power of two at or above its L1 norm
//! (a right shift), then normalized by a running second moment `psi` and an
//! affine `gamma`/`beta`. At inference the `gamma / psi` factor is either a
//! fixed-point multiplier or, in power-of-two mode, a pure shift.
//!
//! Counted operations per group of `n` channels in power-of-two mode:
//! `n - 1` additions for the L1 sum (`|x|` is a sign select), one table
//! lookup for the group exponent, `n` group shifts, `n` scale shifts and `n`
//! additions of `beta`: `2n - 1` adds, `2n` shifts, one lookup.

use serde::{Deserialize, Serialize};

use crate::energy::{Op, OpCounter};
use crate::error::{Error, Result};
use crate::numerics::{
    nearest_pow2_exponent, shift_i64, Dyadic, FixedTensor, Pow2Exponent, Pow2Lut, RoundMode,
};

/// Fractional bits of the `gamma / psi` multiplier outside power-of-two mode.
pub const SCALE_FRAC_BITS: u32 = 16;

/// How channels are split into groups for the L1 scaling step.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GroupLayout {
    /// `h` groups of `C / h` channels.
    #[default]
    HeadGroups,
    /// `C / h` groups of `h` channels.
    HeadSizedGroups,
}

/// Per-channel `gamma / psi` as applied at inference.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ChannelScale {
    /// Multiply by `2^shift`.
    Shift(i32),
    /// Multiply by `mantissa * 2^-SCALE_FRAC_BITS`.
    Fixed(i64),
}

/// Inference constants derived from a trained state.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FrozenBspn {
    pub frac_bits: u32,
    pub scales: Vec<ChannelScale>,
    pub beta_mantissas: Vec<i64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BspnState {
    /// Running second moment `psi^2` per channel.
    psi_sq: Vec<f64>,
    pub gamma: Vec<f64>,
    pub beta: Vec<f64>,
    pub momentum_alpha: f64,
    pub num_heads: usize,
    pub channels: usize,
    pub pow2_scale_mode: bool,
    pub layout: GroupLayout,
    frozen: Option<FrozenBspn>,
}

impl BspnState {
    pub fn new(channels: usize, num_heads: usize, momentum_alpha: f64) -> Result<Self> {
        Self::with_affine(
            vec![1.0; channels],
            vec![0.0; channels],
            num_heads,
            momentum_alpha,
        )
    }

    pub fn with_affine(
        gamma: Vec<f64>,
        beta: Vec<f64>,
        num_heads: usize,
        momentum_alpha: f64,
    ) -> Result<Self> {
        let channels = gamma.len();
        if beta.len() != channels {
            return Err(Error::Shape(format!(
                "{} gammas vs {} betas",
                channels,
                beta.len()
            )));
        }
        if num_heads == 0 || channels == 0 || !channels.is_multiple_of(num_heads) {
            return Err(Error::State(format!(
                "{channels} channels cannot be split across {num_heads} heads"
            )));
        }
        if !(0.0..=1.0).contains(&momentum_alpha) {
            return Err(Error::State(format!(
                "momentum {momentum_alpha} not in [0, 1]"
            )));
        }
        Ok(Self {
            psi_sq: vec![1.0; channels],
            gamma,
            beta,
            momentum_alpha,
            num_heads,
            channels,
            pow2_scale_mode: false,
            layout: GroupLayout::HeadGroups,
            frozen: None,
        })
    }

    pub fn with_layout(mut self, layout: GroupLayout) -> Self {
        self.layout = layout;
        self.frozen = None;
        self
    }

    pub fn with_pow2_scale(mut self, on: bool) -> Self {
        self.pow2_scale_mode = on;
        self.frozen = None;
        self
    }

    pub fn num_groups(&self) -> usize {
        match self.layout {
            GroupLayout::HeadGroups => self.num_heads,
            GroupLayout::HeadSizedGroups => self.channels / self.num_heads,
        }
    }

    pub fn psi(&self) -> Vec<f64> {
        self.psi_sq.iter().map(|v| v.sqrt()).collect()
    }

    pub fn psi_sq(&self) -> &[f64] {
        &self.psi_sq
    }

    pub fn set_psi(&mut self, psi: &[f64]) -> Result<()> {
        if psi.len() != self.channels {
            return Err(Error::Shape(format!(
                "{} psi values for {} channels",
                psi.len(),
                self.channels
            )));
        }
        if psi.iter().any(|&p| !(p > 0.0) || !p.is_finite()) {
            return Err(Error::State("psi must be positive".into()));
        }
        self.psi_sq = psi.iter().map(|p| p * p).collect();
        self.frozen = None;
        Ok(())
    }

    pub fn frozen(&self) -> Option<&FrozenBspn> {
        self.frozen.as_ref()
    }

    /// Fixes `psi` and precomputes the per-channel scales and the `beta` grid
    /// values for activations with `frac_bits` fractional bits.
    ///
    /// In power-of-two mode `gamma` is rewritten so that `gamma / psi` is
    /// exactly the chosen power of two.
    pub fn freeze(&mut self, frac_bits: u32) -> Result<&FrozenBspn> {
        let psi = self.psi();
        let mut scales = Vec::with_capacity(self.channels);
        #[allow(clippy::needless_range_loop)] // also rewrites gamma[c]
        for c in 0..self.channels {
            if !(psi[c] > 0.0) {
                return Err(Error::State(format!(
                    "psi[{c}] = {} is not positive",
                    psi[c]
                )));
            }
            let ratio = self.gamma[c] / psi[c];
            if self.pow2_scale_mode {
                if !(ratio > 0.0) {
                    return Err(Error::State(format!(
                        "power-of-two scale needs gamma/psi > 0 (channel {c}: {ratio})"
                    )));
                }
                let k = pow2_of_real(ratio)?;
                self.gamma[c] = psi[c] * k.value();
                scales.push(ChannelScale::Shift(k.0));
            } else {
                let m = (ratio * (SCALE_FRAC_BITS as f64).exp2()).round();
                if m.abs() >= (1u64 << 40) as f64 {
                    return Err(Error::Overflow(format!("gamma/psi = {ratio}")));
                }
                scales.push(ChannelScale::Fixed(m as i64));
            }
        }
        let beta_mantissas = self
            .beta
            .iter()
            .map(|b| (b * (frac_bits as f64).exp2()).round() as i64)
            .collect();
        self.frozen = Some(FrozenBspn {
            frac_bits,
            scales,
            beta_mantissas,
        });
        Ok(self.frozen.as_ref().expect("just set"))
    }

    fn check_channels(&self, x: &FixedTensor) -> Result<()> {
        if x.last_dim() != self.channels {
            return Err(Error::Shape(format!(
                "BSPN over {} channels got trailing dim {}",
                self.channels,
                x.last_dim()
            )));
        }
        Ok(())
    }
}

/// Round-nearest power of two of a positive real, via its exact dyadic value.
pub(crate) fn pow2_of_real(v: f64) -> Result<Pow2Exponent> {
    if !(v > 0.0) || !v.is_finite() {
        return Err(Error::Domain(format!(
            "power-of-two snapping needs a positive finite value, got {v}"
        )));
    }
    let bits = v.to_bits();
    let raw_exp = ((bits >> 52) & 0x7ff) as i32;
    let frac = bits & ((1u64 << 52) - 1);
    let (mantissa, scale) = if raw_exp == 0 {
        (frac, -1074)
    } else {
        (frac | (1u64 << 52), raw_exp - 1075)
    };
    nearest_pow2_exponent(
        Dyadic::new(mantissa as u128, scale),
        RoundMode::RoundNearest,
    )
}

/// Splits every row into `groups` contiguous groups, divides each group by
/// `2^ceil(log2 sum|x|)` with a shift, and returns the exponents row-major.
/// An all-zero group keeps exponent 0.
pub fn bspn_group_scale_counted(
    x: &FixedTensor,
    groups: usize,
    mode: RoundMode,
    ops: &mut OpCounter,
) -> Result<(FixedTensor, Vec<Pow2Exponent>)> {
    let width = x.last_dim();
    if groups == 0 || !width.is_multiple_of(groups) {
        return Err(Error::Shape(format!(
            "{width} channels into {groups} groups"
        )));
    }
    let size = width / groups;
    let mut out = Vec::with_capacity(x.len());
    let mut exps = Vec::with_capacity(x.rows() * groups);
    for chunk in x.mantissas().chunks(size) {
        let l1: u128 = chunk.iter().map(|m| m.unsigned_abs() as u128).sum();
        ops.record(Op::Add, size as u64 - 1);
        ops.record(Op::Lut, 1);
        let k = if l1 == 0 {
            Pow2Exponent(0)
        } else {
            let (k, fell_back) =
                Pow2Lut.lookup_or_fallback(Dyadic::new(l1, -(x.frac_bits() as i32)), mode)?;
            if fell_back {
                ops.record(Op::LutFallback, 1);
            }
            k
        };
        ops.record(Op::Shift, size as u64);
        for &m in chunk {
            out.push(shift_i64(m, -k.0)?);
        }
        exps.push(k);
    }
    Ok((x.with_mantissas(out, x.shape().to_vec())?, exps))
}

pub fn bspn_group_scale(
    x: &FixedTensor,
    groups: usize,
    mode: RoundMode,
) -> Result<(FixedTensor, Vec<Pow2Exponent>)> {
    bspn_group_scale_counted(x, groups, mode, &mut OpCounter::new())
}

/// Training-time forward over a batch `[B, C]` (a rank-1 input is one row).
///
/// Normalizes with the running `psi` held on entry, then folds the batch
/// second moment into it: `psi^2 <- max(alpha psi^2 + (1 - alpha) sigma_B^2, 4^-f)`.
/// Arithmetic here is floating point; outputs are rounded back onto the
/// input grid. Any frozen inference constants are discarded.
pub fn bspn_forward_train(x: &FixedTensor, state: &mut BspnState) -> Result<FixedTensor> {
    state.check_channels(x)?;
    let c = state.channels;
    let batch = if x.is_empty() { 0 } else { x.len() / c };
    if batch == 0 {
        return Err(Error::Domain(
            "BSPN training step over an empty batch".into(),
        ));
    }
    let (scaled, _) = bspn_group_scale(x, state.num_groups(), RoundMode::Ceil)?;
    let vals = scaled.to_reals();
    let mut second = vec![0.0; c];
    for row in vals.chunks(c) {
        for (s, v) in second.iter_mut().zip(row) {
            *s += v * v;
        }
    }
    for s in &mut second {
        *s /= batch as f64;
    }
    let psi = state.psi();
    let y: Vec<f64> = vals
        .iter()
        .enumerate()
        .map(|(i, v)| {
            let ch = i % c;
            state.gamma[ch] * v / psi[ch] + state.beta[ch]
        })
        .collect();
    // A channel that never leaves zero on the grid would otherwise freeze
    // to an unbounded scale; psi is floored at one grid step.
    let floor = (-2.0 * x.frac_bits() as f64).exp2();
    let a = state.momentum_alpha;
    for (p, s) in state.psi_sq.iter_mut().zip(&second) {
        *p = (a * *p + (1.0 - a) * s).max(floor);
    }
    state.frozen = None;
    FixedTensor::from_reals(&y, x.shape().to_vec(), x.frac_bits())
}

/// Inference forward: group shift, then `gamma / psi` and `beta`.
pub fn bspn_forward_infer_counted(
    x: &FixedTensor,
    state: &BspnState,
    ops: &mut OpCounter,
) -> Result<FixedTensor> {
    state.check_channels(x)?;
    if state.psi_sq.iter().any(|&p| !(p > 0.0)) {
        return Err(Error::State("psi must be positive".into()));
    }
    let frozen = state
        .frozen
        .as_ref()
        .ok_or_else(|| Error::State("BSPN state is not frozen".into()))?;
    if frozen.frac_bits != x.frac_bits() {
        return Err(Error::State(format!(
            "state frozen for {} fractional bits, input has {}",
            frozen.frac_bits,
            x.frac_bits()
        )));
    }
    let (scaled, _) = bspn_group_scale_counted(x, state.num_groups(), RoundMode::Ceil, ops)?;
    let c = state.channels;
    let mut out = Vec::with_capacity(x.len());
    for (i, &m) in scaled.mantissas().iter().enumerate() {
        let ch = i % c;
        let y = match frozen.scales[ch] {
            ChannelScale::Shift(k) => {
                ops.record(Op::Shift, 1);
                shift_i64(m, k)?
            }
            ChannelScale::Fixed(g) => {
                ops.record(Op::Mul, 1);
                ops.record(Op::Shift, 1);
                let p = m
                    .checked_mul(g)
                    .ok_or_else(|| Error::Overflow(format!("{m} * {g}")))?;
                shift_i64(p, -(SCALE_FRAC_BITS as i32))?
            }
        };
        ops.record(Op::Add, 1);
        let y = y
            .checked_add(frozen.beta_mantissas[ch])
            .ok_or_else(|| Error::Overflow("beta add".into()))?;
        out.push(y);
    }
    x.with_mantissas(out, x.shape().to_vec())
}

pub fn bspn_forward_infer(x: &FixedTensor, state: &BspnState) -> Result<FixedTensor> {
    bspn_forward_infer_counted(x, state, &mut OpCounter::new())
}
