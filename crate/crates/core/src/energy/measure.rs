//! Instrumented runs of the kernels and of a spiking model.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::cost::Kernel;
use super::counter::{measure, OpCounter};
use crate::error::{Error, Result};
use crate::kernels::{
    bspn_forward_infer_counted, ptsoftmax_counted, softmax_counted, BspnState, PtSoftmaxConfig,
};
use crate::model::{FixedModel, Site, SiteSpikes, SpikeEngine, Stage, StageModel};
use crate::numerics::{FixedTensor, RoundMode};

/// Operations executed by one inference call of `kernel` on a random
/// length-`n` input. For BSPN this is one group of `n` channels in
/// power-of-two mode. Layer norm has no instrumented kernel.
pub fn measure_kernel(kernel: Kernel, n: usize, seed: u64) -> Result<OpCounter> {
    if n == 0 {
        return Err(Error::Domain("kernel length must be at least 1".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let reals: Vec<f64> = (0..n).map(|_| rng.gen_range(-8.0..4.0)).collect();
    let (_, ops) = match kernel {
        Kernel::Softmax => measure(|ops| softmax_counted(&reals, ops).map(drop))?,
        Kernel::Ptsoftmax => {
            let row = FixedTensor::from_real_vec(&reals, 8)?;
            let cfg = PtSoftmaxConfig::unclamped(RoundMode::RoundNearest);
            measure(|ops| ptsoftmax_counted(&row, &cfg, ops).map(drop))?
        }
        Kernel::Bspn => {
            let x = FixedTensor::from_reals(&reals, vec![1, n], 8)?;
            let gamma: Vec<f64> = (0..n).map(|_| rng.gen_range(0.5..2.0)).collect();
            let beta: Vec<f64> = (0..n).map(|_| rng.gen_range(-0.5..0.5)).collect();
            let psi: Vec<f64> = (0..n).map(|_| rng.gen_range(0.1..1.0)).collect();
            let mut state = BspnState::with_affine(gamma, beta, 1, 0.9)?.with_pow2_scale(true);
            state.set_psi(&psi)?;
            state.freeze(8)?;
            measure(|ops| bspn_forward_infer_counted(&x, &state, ops).map(drop))?
        }
        Kernel::Layernorm => {
            return Err(Error::Unsupported(
                "layer norm is tabulated only; it has no instrumented kernel".into(),
            ))
        }
    };
    Ok(ops)
}

/// Spike statistics of one block over a set of inputs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BlockSpikeRate {
    /// Encoder block index; the classifier head is reported as `blocks`.
    pub block: usize,
    /// Spikes per `(timestep, element)` slot over every site of the block.
    pub rate: f64,
    /// Rate at the block's first encoder site (its input).
    pub input_rate: f64,
    pub spikes: u64,
    pub slots: u64,
    pub sites: Vec<SiteSpikes>,
}

fn rate(spikes: u64, slots: u64) -> f64 {
    if slots == 0 {
        0.0
    } else {
        spikes as f64 / slots as f64
    }
}

fn spiking(model: &StageModel) -> Result<&FixedModel> {
    match (model.stage(), model.fixed()) {
        (Stage::S, Some(m)) => Ok(m),
        _ => Err(Error::State(format!(
            "spike rates need a stage s model, got {}",
            model.stage()
        ))),
    }
}

/// Spike rate of every encoder block of a spiking model, pooled over
/// `inputs`. The classifier head is not included.
pub fn measure_block_spike_rates(
    model: &StageModel,
    inputs: &[Vec<usize>],
) -> Result<Vec<BlockSpikeRate>> {
    let m = spiking(model)?;
    let mut engine = SpikeEngine::new(m.config.timesteps, m.config.encoder);
    let mut ops = OpCounter::new();
    for ids in inputs {
        m.trace_with(ids, &mut engine, &mut ops)?;
    }
    let stats = engine.into_stats();
    Ok((0..m.blocks.len())
        .map(|b| {
            let sites: Vec<SiteSpikes> = stats.iter().filter(|s| s.block == b).copied().collect();
            let spikes = sites.iter().map(|s| s.spikes).sum();
            let slots = sites.iter().map(|s| s.slots).sum();
            let input = sites.iter().find(|s| s.site == Site::AttnIn);
            BlockSpikeRate {
                block: b,
                rate: rate(spikes, slots),
                input_rate: input.map_or(0.0, |s| rate(s.spikes, s.slots)),
                spikes,
                slots,
                sites,
            }
        })
        .collect())
}

/// `block,rate` lines with a header.
pub fn spike_rates_csv(rates: &[BlockSpikeRate]) -> String {
    let mut out = String::from("block,rate\n");
    for r in rates {
        out.push_str(&format!("{},{}\n", r.block, r.rate));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::energy::cost::table_cost;
    use crate::model::{random_float_model, transform_pipeline, ModelConfig, PipelineConfig};

    #[test]
    fn kernel_counts_match_the_table() {
        for kernel in [Kernel::Softmax, Kernel::Ptsoftmax, Kernel::Bspn] {
            for n in [1, 8, 64, 512] {
                let measured = measure_kernel(kernel, n, 9).unwrap();
                assert_eq!(
                    measured,
                    table_cost(kernel, n as u64).unwrap(),
                    "{kernel:?} n={n}"
                );
            }
        }
        assert!(matches!(
            measure_kernel(Kernel::Layernorm, 8, 0),
            Err(Error::Unsupported(_))
        ));
        assert!(measure_kernel(Kernel::Softmax, 0, 0).is_err());
    }

    fn spiking_model() -> StageModel {
        let cfg = ModelConfig::default();
        let m0 = random_float_model(&cfg, 2).unwrap();
        let pc = PipelineConfig {
            calibration: 4,
            evaluation: 2,
            ..PipelineConfig::default()
        };
        transform_pipeline(&m0, &pc).unwrap().s
    }

    fn with_embeddings(m: &StageModel, value: i64, zero_biases: bool) -> StageModel {
        let mut f = m.fixed().unwrap().clone();
        f.embedding.iter_mut().for_each(|v| *v = value);
        f.position.iter_mut().for_each(|v| *v = 0);
        if zero_biases {
            for b in &mut f.blocks {
                for w in [
                    &mut b.wq,
                    &mut b.wk,
                    &mut b.wv,
                    &mut b.wo,
                    &mut b.ffn_in,
                    &mut b.ffn_out,
                ] {
                    w.out_bias = FixedTensor::zeros(vec![w.cols], b.frac_bits);
                }
                for norm in [&mut b.attn_norm, &mut b.ffn_norm] {
                    norm.beta.iter_mut().for_each(|v| *v = 0.0);
                    norm.freeze(b.frac_bits).unwrap();
                }
            }
        }
        StageModel::new(Stage::S, crate::model::StageParams::Fixed(f)).unwrap()
    }

    #[test]
    fn zero_activations_never_spike() {
        let m = with_embeddings(&spiking_model(), 0, true);
        let rates = measure_block_spike_rates(&m, &[vec![0, 1, 2, 3]]).unwrap();
        assert_eq!(rates.len(), 2);
        for r in &rates {
            assert_eq!(r.input_rate, 0.0);
            assert!(r.slots > 0);
            // Zero scores still give uniform attention probabilities.
            for s in &r.sites {
                if s.site == Site::Prob {
                    assert!(s.spikes > 0);
                } else {
                    assert_eq!(s.spikes, 0, "{:?}", s.site);
                }
            }
        }
    }

    #[test]
    fn saturated_input_fires_at_max_rate() {
        let m = with_embeddings(&spiking_model(), 1 << 20, false);
        let rates = measure_block_spike_rates(&m, &[vec![4, 5, 6]]).unwrap();
        assert_eq!(rates[0].input_rate, 15.0 / 16.0);
        assert!(rates.iter().all(|r| r.rate <= 1.0));
        let csv = spike_rates_csv(&rates);
        assert!(csv.starts_with("block,rate\n0,"));
        assert_eq!(csv.lines().count(), 3);
    }

    #[test]
    fn rates_need_a_spiking_model() {
        let cfg = ModelConfig::default();
        let m0 = random_float_model(&cfg, 2).unwrap();
        assert!(matches!(
            measure_block_spike_rates(&m0, &[vec![1]]),
            Err(Error::State(_))
        ));
    }
}
