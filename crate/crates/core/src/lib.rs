//! Multiplier-free spiking transformer kernels.
//!
//! Inference values are [`FixedTensor`]s of integer mantissas. Softmax and
//! layer normalization are replaced by shift-based kernels, weights are
//! binary with power-of-two scales, and activations travel as rate-coded
//! spike trains, so a converted model runs on additions and shifts alone.

// `!(x > 0.0)` is used on purpose: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod distill;
pub mod energy;
pub mod error;
pub mod kernels;
pub mod model;
pub mod numerics;
pub mod quantize;
pub mod spiking;
pub mod verify;

pub use energy::{CostReport, EnergyModel, OpCounter};
pub use error::{Error, Result};
pub use kernels::{BspnState, Pow2Distribution};
pub use numerics::{FixedTensor, Pow2Exponent, RoundMode};
pub use quantize::{BinaryLinear, ElasticParams};
pub use spiking::{NeuronState, SpikeTrain};
