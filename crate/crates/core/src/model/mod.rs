//! Encoder composition and the stage-by-stage conversion to a spiking model.
//!
//! Stages: `M0` full precision; `M1` binary weights, 4-bit activation sites
//! and ReLU; `M2` adds the power-of-two softmax; `M3` replaces layer norm by
//! shift power-norm and runs in integers; `S` is `M3` on spike trains.

mod checkpoint;
mod config;
mod fixed;
mod float;
mod pipeline;
mod sites;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

pub use checkpoint::{load_checkpoint, save_checkpoint, CHECKPOINT_FORMAT, CHECKPOINT_VERSION};
pub use config::ModelConfig;
pub use fixed::{
    attention_with, block_with, encoder_block, level_attention, level_block, spiking_attention,
    BlockParams, Engine, FixedModel, FixedTrace, LevelEngine, Norms, Operand, SiteSpikes,
    SpikeEngine, MODEL_BIT_WIDTH,
};
pub use float::{
    gelu, Activation, DenseLinear, FloatBlock, FloatLinear, FloatModel, FloatTrace,
    LayerNormParams, Probe, SoftmaxKind, LAYERNORM_EPS,
};
pub use pipeline::{
    random_block, random_block_input, random_float_model, random_inputs, to_m1, to_m2, to_m3, to_s,
    transform_pipeline, BlockShape, Pipeline, PipelineConfig, StageReport,
};
pub use sites::{BlockSites, Site};

use crate::energy::OpCounter;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Stage {
    M0,
    M1,
    M2,
    M3,
    S,
}

impl Stage {
    pub const ALL: [Stage; 5] = [Stage::M0, Stage::M1, Stage::M2, Stage::M3, Stage::S];
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Stage::M0 => "m0",
            Stage::M1 => "m1",
            Stage::M2 => "m2",
            Stage::M3 => "m3",
            Stage::S => "s",
        };
        f.write_str(s)
    }
}

impl FromStr for Stage {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Stage::ALL
            .into_iter()
            .find(|st| st.to_string().eq_ignore_ascii_case(s))
            .ok_or_else(|| Error::Domain(format!("unknown stage {s:?}")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StageParams {
    Float(FloatModel),
    Fixed(FixedModel),
}

/// A model tagged with its conversion stage.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageModel {
    stage: Stage,
    params: StageParams,
}

impl StageModel {
    /// Checks that the parameters use the kernel set of `stage`.
    pub fn new(stage: Stage, params: StageParams) -> Result<Self> {
        let ok = match (&params, stage) {
            (StageParams::Float(m), Stage::M0) => {
                m.cls_site.is_none() && m.blocks.iter().all(|b| b.sites.is_none())
            }
            (StageParams::Float(m), Stage::M1 | Stage::M2) => {
                let want = if stage == Stage::M1 {
                    SoftmaxKind::Exact
                } else {
                    SoftmaxKind::PowerOfTwo
                };
                m.softmax == want
                    && m.activation == Activation::Relu
                    && m.classifier.is_binary()
                    && m.blocks
                        .iter()
                        .all(|b| b.sites.is_some() && b.wq.is_binary())
            }
            (StageParams::Fixed(m), Stage::M3 | Stage::S) => {
                m.validate()?;
                m.blocks
                    .iter()
                    .all(|b| b.attn_norm.frozen().is_some() && b.ffn_norm.frozen().is_some())
            }
            _ => false,
        };
        if !ok {
            return Err(Error::State(format!(
                "parameters do not match stage {stage}"
            )));
        }
        Ok(Self { stage, params })
    }

    pub fn stage(&self) -> Stage {
        self.stage
    }

    pub fn params(&self) -> &StageParams {
        &self.params
    }

    pub fn config(&self) -> &ModelConfig {
        match &self.params {
            StageParams::Float(m) => &m.config,
            StageParams::Fixed(m) => &m.config,
        }
    }

    pub fn float(&self) -> Option<&FloatModel> {
        match &self.params {
            StageParams::Float(m) => Some(m),
            StageParams::Fixed(_) => None,
        }
    }

    pub fn fixed(&self) -> Option<&FixedModel> {
        match &self.params {
            StageParams::Fixed(m) => Some(m),
            StageParams::Float(_) => None,
        }
    }

    pub fn into_params(self) -> StageParams {
        self.params
    }
}

/// Logits of `model` on token ids.
pub fn forward(model: &StageModel, ids: &[usize]) -> Result<Vec<f64>> {
    forward_counted(model, ids, &mut OpCounter::new())
}

/// As [`forward`], tallying executed operations into `ops`.
pub fn forward_counted(model: &StageModel, ids: &[usize], ops: &mut OpCounter) -> Result<Vec<f64>> {
    match (&model.params, model.stage) {
        (StageParams::Float(m), _) => Ok(m.trace(ids, ops, None)?.logits),
        (StageParams::Fixed(m), Stage::M3) => {
            Ok(m.trace_with(ids, &mut LevelEngine, ops)?.logits.to_reals())
        }
        (StageParams::Fixed(m), _) => {
            let mut engine = SpikeEngine::new(m.config.timesteps, m.config.encoder);
            Ok(m.trace_with(ids, &mut engine, ops)?.logits.to_reals())
        }
    }
}

/// Per-block output representations, as reals.
pub fn block_outputs(model: &StageModel, ids: &[usize]) -> Result<Vec<Vec<f64>>> {
    let mut ops = OpCounter::new();
    match (&model.params, model.stage) {
        (StageParams::Float(m), _) => Ok(m.trace(ids, &mut ops, None)?.block_outputs),
        (StageParams::Fixed(m), stage) => {
            let trace = if stage == Stage::M3 {
                m.trace_with(ids, &mut LevelEngine, &mut ops)?
            } else {
                m.trace_with(
                    ids,
                    &mut SpikeEngine::new(m.config.timesteps, m.config.encoder),
                    &mut ops,
                )?
            };
            Ok(trace.block_outputs.iter().map(|t| t.to_reals()).collect())
        }
    }
}
