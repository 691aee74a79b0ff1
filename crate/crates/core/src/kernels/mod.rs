//! Shift-based replacements for softmax and layer normalization, their
//! floating-point references, and ReLU.

mod bspn;
mod ptsoftmax;
mod reference;

pub(crate) use bspn::pow2_of_real;
pub use bspn::{
    bspn_forward_infer, bspn_forward_infer_counted, bspn_forward_train, bspn_group_scale,
    bspn_group_scale_counted, BspnState, ChannelScale, FrozenBspn, GroupLayout, SCALE_FRAC_BITS,
};
pub(crate) use ptsoftmax::pow2_sum;
pub use ptsoftmax::{
    ptsoftmax, ptsoftmax_counted, ptsoftmax_exponents, ptsoftmax_mantissas, ptsoftmax_real,
    Pow2Distribution, PtSoftmaxConfig, DEFAULT_CLAMP_MAX,
};
pub use reference::{
    base2_softmax_ref, layernorm_eps, layernorm_ref, rmsln_ref, softmax_counted, softmax_ref,
};

use crate::numerics::FixedTensor;

/// Elementwise `max(x, 0)`; a sign select, so nothing is counted.
pub fn relu(x: &FixedTensor) -> FixedTensor {
    let out = x.mantissas().iter().map(|&m| m.max(0)).collect();
    x.with_mantissas(out, x.shape().to_vec())
        .expect("relu never widens a mantissa")
}
