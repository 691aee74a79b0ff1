//! Integrate-and-fire neurons, rate-coded spike trains and multiplier-free
//! spike-driven matrix products.

use serde::{Deserialize, Serialize};

use crate::energy::{Op, OpCounter};
use crate::error::{Error, Result};
use crate::numerics::{shift_i64, FixedTensor};
use crate::quantize::BinaryLinear;

pub const DEFAULT_TIMESTEPS: usize = 16;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ResetMode {
    /// `V <- V - theta`, keeping the residual charge.
    #[default]
    Subtract,
    /// `V <- V_rest`.
    Zero,
}

/// Membrane state of one neuron. Potentials are fixed-point mantissas at
/// `frac_bits` fractional bits.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct NeuronState {
    pub v: i64,
    pub theta: i64,
    pub v_rest: i64,
    /// Membrane time constant in steps; `None` integrates without leak.
    pub tau_m: Option<u32>,
    pub reset_mode: ResetMode,
    pub frac_bits: u32,
}

impl NeuronState {
    pub fn new(
        theta: i64,
        v_rest: i64,
        tau_m: Option<u32>,
        reset_mode: ResetMode,
        frac_bits: u32,
    ) -> Result<Self> {
        if theta <= v_rest {
            return Err(Error::State(format!(
                "threshold {theta} must exceed rest {v_rest}"
            )));
        }
        if tau_m == Some(0) {
            return Err(Error::State("membrane time constant must be >= 1".into()));
        }
        Ok(Self {
            v: v_rest,
            theta,
            v_rest,
            tau_m,
            reset_mode,
            frac_bits,
        })
    }

    /// Non-leaky integrator with the given threshold, resting at zero.
    pub fn integrator(theta: i64, frac_bits: u32) -> Result<Self> {
        Self::new(theta, 0, None, ResetMode::Subtract, frac_bits)
    }
}

/// One Euler step of `tau dV/dt = I - V + V_rest`, then threshold and reset.
pub fn if_step(state: NeuronState, i_syn: i64) -> (NeuronState, bool) {
    let mut s = state;
    s.v = match s.tau_m {
        None => s.v + i_syn,
        Some(tau) => s.v + (i_syn - s.v + s.v_rest).div_euclid(tau as i64),
    };
    let spike = s.v >= s.theta;
    if spike {
        s.v = match s.reset_mode {
            ResetMode::Subtract => s.v - s.theta,
            ResetMode::Zero => s.v_rest,
        };
    }
    (s, spike)
}

/// How integer levels become spikes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Encoder {
    /// Level `q` fires on the first `q` steps.
    #[default]
    Rate,
    /// Level `q` drives a non-leaky integrate-and-fire neuron with current
    /// `q / T` per step and unit threshold.
    IntegrateFire,
}

/// Binary spikes over `timesteps` steps for a tensor of `shape`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SpikeTrain {
    timesteps: usize,
    shape: Vec<usize>,
    /// `[t][element]`, row-major.
    bits: Vec<bool>,
    spikes: u64,
}

impl SpikeTrain {
    pub fn from_bits(timesteps: usize, shape: Vec<usize>, bits: Vec<bool>) -> Result<Self> {
        let elems: usize = shape.iter().product();
        if bits.len() != timesteps * elems {
            return Err(Error::Shape(format!(
                "{} bits for {timesteps} steps of {shape:?}",
                bits.len()
            )));
        }
        let spikes = bits.iter().filter(|&&b| b).count() as u64;
        Ok(Self {
            timesteps,
            shape,
            bits,
            spikes,
        })
    }

    pub fn timesteps(&self) -> usize {
        self.timesteps
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn elements(&self) -> usize {
        self.shape.iter().product()
    }

    pub fn spike_count(&self) -> u64 {
        self.spikes
    }

    pub fn slots(&self) -> u64 {
        (self.timesteps * self.elements()) as u64
    }

    pub fn bit(&self, t: usize, i: usize) -> bool {
        self.bits[t * self.elements() + i]
    }

    /// Spikes per `(timestep, element)` slot.
    pub fn rate(&self) -> f64 {
        if self.slots() == 0 {
            0.0
        } else {
            self.spikes as f64 / self.slots() as f64
        }
    }

    /// One `t,index` line per spike, with a header.
    pub fn to_raster_csv(&self) -> String {
        let mut out = String::from("t,index\n");
        let n = self.elements();
        for t in 0..self.timesteps {
            for i in 0..n {
                if self.bit(t, i) {
                    out.push_str(&format!("{t},{i}\n"));
                }
            }
        }
        out
    }

    pub fn raster(&self) -> Raster {
        let n = self.elements();
        let spikes = (0..self.timesteps)
            .flat_map(|t| (0..n).filter(move |&i| self.bit(t, i)).map(move |i| [t, i]))
            .collect();
        Raster {
            timesteps: self.timesteps,
            shape: self.shape.clone(),
            rate: self.rate(),
            spikes,
        }
    }
}

/// JSON form of a spike train: `[t, index]` pairs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Raster {
    pub timesteps: usize,
    pub shape: Vec<usize>,
    pub rate: f64,
    pub spikes: Vec<[usize; 2]>,
}

fn check_levels(levels: &[i64], timesteps: usize) -> Result<()> {
    for &q in levels {
        if q < 0 {
            return Err(Error::Domain(format!("negative level {q}")));
        }
        if q as usize > timesteps {
            return Err(Error::Capacity {
                level: q,
                timesteps,
            });
        }
    }
    Ok(())
}

/// Deterministic rate code: level `q` spikes on steps `0..q`.
pub fn encode_rate(levels: &[i64], shape: Vec<usize>, timesteps: usize) -> Result<SpikeTrain> {
    encode(levels, shape, timesteps, Encoder::Rate)
}

pub fn encode(
    levels: &[i64],
    shape: Vec<usize>,
    timesteps: usize,
    encoder: Encoder,
) -> Result<SpikeTrain> {
    if shape.iter().product::<usize>() != levels.len() {
        return Err(Error::Shape(format!(
            "{} levels for shape {shape:?}",
            levels.len()
        )));
    }
    check_levels(levels, timesteps)?;
    let n = levels.len();
    let mut bits = vec![false; timesteps * n];
    match encoder {
        Encoder::Rate => {
            for (i, &q) in levels.iter().enumerate() {
                for t in 0..q as usize {
                    bits[t * n + i] = true;
                }
            }
        }
        Encoder::IntegrateFire => {
            // Current q/T per step against a unit threshold, in units of 1/T.
            for (i, &q) in levels.iter().enumerate() {
                let mut neuron = NeuronState::integrator(timesteps as i64, 0)?;
                for t in 0..timesteps {
                    let (next, spike) = if_step(neuron, q);
                    neuron = next;
                    bits[t * n + i] = spike;
                }
            }
        }
    }
    SpikeTrain::from_bits(timesteps, shape, bits)
}

/// Spike counts per element; inverts [`encode_rate`].
pub fn decode_counts(train: &SpikeTrain) -> Vec<i64> {
    let n = train.elements();
    let mut counts = vec![0i64; n];
    for t in 0..train.timesteps {
        for (i, c) in counts.iter_mut().enumerate() {
            *c += i64::from(train.bit(t, i));
        }
    }
    counts
}

pub fn spike_rate(train: &SpikeTrain) -> f64 {
    train.rate()
}

/// `out[r][j] = sum_t sum_i bits[t][r][i] * right[i][j]`, one addition of a
/// row of `right` per spike. The train's trailing dimension is `inner`.
pub fn spike_accumulate(
    train: &SpikeTrain,
    right: &[i64],
    cols: usize,
    ops: &mut OpCounter,
) -> Result<Vec<i64>> {
    let inner = train.shape.last().copied().unwrap_or(1);
    if right.len() != inner * cols {
        return Err(Error::Shape(format!(
            "spike train over {inner} inputs against a {}-element matrix with {cols} columns",
            right.len()
        )));
    }
    let elems = train.elements();
    let rows = elems.checked_div(inner).unwrap_or(0);
    let mut acc = vec![0i64; rows * cols];
    for t in 0..train.timesteps {
        let step = &train.bits[t * elems..(t + 1) * elems];
        for r in 0..rows {
            let out = &mut acc[r * cols..(r + 1) * cols];
            for (i, &fired) in step[r * inner..(r + 1) * inner].iter().enumerate() {
                if fired {
                    ops.record(Op::Add, cols as u64);
                    for (o, &w) in out.iter_mut().zip(&right[i * cols..(i + 1) * cols]) {
                        *o += w;
                    }
                }
            }
        }
    }
    Ok(acc)
}

/// Spike-driven product with binary weights, scaled by the weight's power of
/// two. Returns `[rows.., cols]` exactly representing `acc * 2^scale_exponent`.
pub fn spiking_matmul_counted(
    train: &SpikeTrain,
    w: &BinaryLinear,
    ops: &mut OpCounter,
) -> Result<FixedTensor> {
    let inner = train.shape.last().copied().unwrap_or(1);
    if inner != w.rows {
        return Err(Error::Shape(format!(
            "spike train over {inner} inputs against {}x{} weights",
            w.rows, w.cols
        )));
    }
    let acc = spike_accumulate(train, &w.signs_i64(), w.cols, ops)?;
    let frac_bits = (-w.scale_exponent).max(0) as u32;
    let left = w.scale_exponent.max(0);
    ops.record(Op::Shift, acc.len() as u64);
    let mantissas = acc
        .into_iter()
        .map(|a| shift_i64(a, left))
        .collect::<Result<Vec<_>>>()?;
    let mut shape = train.shape.clone();
    if let Some(last) = shape.last_mut() {
        *last = w.cols;
    } else {
        shape.push(w.cols);
    }
    FixedTensor::with_width(mantissas, shape, frac_bits, 48)
}

pub fn spiking_matmul(train: &SpikeTrain, w: &BinaryLinear) -> Result<FixedTensor> {
    spiking_matmul_counted(train, w, &mut OpCounter::new())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::quantize::binarize_weights;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn equilibrium_holds() {
        let n = NeuronState::new(256, 0, Some(4), ResetMode::Subtract, 8).unwrap();
        let (next, spike) = if_step(n, 0);
        assert!(!spike);
        assert_eq!(next.v, 0);
        assert!(NeuronState::new(0, 0, None, ResetMode::Zero, 0).is_err());
        assert!(NeuronState::new(1, 0, Some(0), ResetMode::Zero, 0).is_err());
    }

    #[test]
    fn unit_tau_tracks_input_and_fires_every_step() {
        // tau = 1 makes the Euler step V <- I + V_rest.
        let mut n = NeuronState::new(1 << 8, 0, Some(1), ResetMode::Subtract, 8).unwrap();
        let mut spikes = 0;
        for _ in 0..10 {
            let (next, s) = if_step(n, 1 << 8);
            n = next;
            spikes += i32::from(s);
        }
        assert_eq!(spikes, 10);
    }

    #[test]
    fn large_pulse_fires_immediately() {
        // Scripted recurrence: V1 = V0 + floor((I - V0) / tau) with V0 = 0.
        for tau in 1..6u32 {
            let theta = 100;
            let n = NeuronState::new(theta, 0, Some(tau), ResetMode::Zero, 0).unwrap();
            let pulse = theta * tau as i64;
            let (after, spike) = if_step(n, pulse);
            assert!(spike, "tau {tau}");
            assert_eq!(after.v, 0);
            let (_, spike) = if_step(n, pulse - tau as i64);
            assert!(!spike);
        }
    }

    #[test]
    fn leaky_neuron_charges_toward_input() {
        let mut n = NeuronState::new(1000, 0, Some(2), ResetMode::Subtract, 0).unwrap();
        let mut trace = vec![];
        for _ in 0..4 {
            n = if_step(n, 64).0;
            trace.push(n.v);
        }
        assert_eq!(trace, vec![32, 48, 56, 60]);
    }

    #[test]
    fn integrator_emits_level_spikes() {
        for q in 0..=16i64 {
            let mut n = NeuronState::integrator(16, 4).unwrap();
            let mut count = 0;
            for _ in 0..16 {
                let (next, s) = if_step(n, q);
                n = next;
                count += i64::from(s);
            }
            assert_eq!(count, q);
        }
    }

    #[test]
    fn encode_examples() {
        let t = encode_rate(&[0, 0], vec![2], 16).unwrap();
        assert_eq!(t.spike_count(), 0);
        assert_eq!(spike_rate(&t), 0.0);
        let t = encode_rate(&[15], vec![1], 16).unwrap();
        assert_eq!(t.spike_count(), 15);
        assert_eq!(t.rate(), 15.0 / 16.0);
        assert!(t.bit(0, 0) && t.bit(14, 0) && !t.bit(15, 0));
        assert!(matches!(
            encode_rate(&[17], vec![1], 16),
            Err(Error::Capacity { level: 17, .. })
        ));
        assert!(encode_rate(&[-1], vec![1], 16).is_err());
        let full = encode_rate(&[16; 6], vec![2, 3], 16).unwrap();
        assert_eq!(decode_counts(&full), vec![16; 6]);
        assert_eq!(full.rate(), 1.0);
    }

    #[test]
    fn uniform_level_rate_is_q_over_t() {
        for q in 0..=15 {
            let t = encode_rate(&vec![q; 40], vec![40], 16).unwrap();
            assert_eq!(t.rate(), q as f64 / 16.0);
        }
    }

    #[test]
    fn raster_formats() {
        let t = encode_rate(&[2, 0, 1], vec![3], 4).unwrap();
        assert_eq!(t.to_raster_csv(), "t,index\n0,0\n0,2\n1,0\n");
        let r = t.raster();
        assert_eq!(r.spikes, vec![[0, 0], [0, 2], [1, 0]]);
        assert_eq!(r.rate, 3.0 / 12.0);
    }

    fn brute_matmul(levels: &[i64], rows: usize, w: &BinaryLinear) -> Vec<i64> {
        let mut out = vec![0; rows * w.cols];
        for r in 0..rows {
            for j in 0..w.cols {
                for i in 0..w.rows {
                    out[r * w.cols + j] += levels[r * w.rows + i] * w.sign(i, j) as i64;
                }
            }
        }
        out
    }

    #[test]
    fn spiking_matmul_examples() {
        let w = binarize_weights(&[1.0, -1.0, -1.0, 1.0, 1.0, 1.0, -1.0, -1.0], 4, 2).unwrap();
        let zero = encode_rate(&[0; 4], vec![4], 16).unwrap();
        assert_eq!(spiking_matmul(&zero, &w).unwrap().mantissas(), &[0, 0]);

        let mut bits = vec![false; 16 * 4];
        bits[3] = true;
        let one_hot = SpikeTrain::from_bits(16, vec![4], bits).unwrap();
        let y = spiking_matmul(&one_hot, &w).unwrap();
        assert_eq!(y.to_reals(), vec![-1.0, -1.0]);
    }

    #[test]
    fn spiking_matmul_equals_integer_matmul() {
        let mut rng = ChaCha8Rng::seed_from_u64(51);
        for _ in 0..100 {
            let rows = rng.gen_range(1..5);
            let m = rng.gen_range(1..20);
            let p = rng.gen_range(1..10);
            let wv: Vec<f64> = (0..m * p).map(|_| rng.gen_range(-1.0..1.0) * 4.0).collect();
            let w = binarize_weights(&wv, m, p).unwrap();
            let levels: Vec<i64> = (0..rows * m).map(|_| rng.gen_range(0..16)).collect();
            for enc in [Encoder::Rate, Encoder::IntegrateFire] {
                let train = encode(&levels, vec![rows, m], 16, enc).unwrap();
                let mut ops = OpCounter::new();
                let y = spiking_matmul_counted(&train, &w, &mut ops).unwrap();
                let want = brute_matmul(&levels, rows, &w);
                let scale = (w.scale_exponent as f64).exp2();
                for (got, acc) in y.to_reals().iter().zip(&want) {
                    assert_eq!(*got, *acc as f64 * scale);
                }
                assert_eq!(ops.add, train.spike_count() * p as u64);
                assert!(ops.is_multiplier_free());
                assert_eq!(y.shape(), &[rows, p]);
            }
        }
    }

    #[test]
    fn shape_mismatch_is_rejected() {
        let w = binarize_weights(&[1.0; 6], 3, 2).unwrap();
        let t = encode_rate(&[1, 1], vec![2], 16).unwrap();
        assert!(matches!(spiking_matmul(&t, &w), Err(Error::Shape(_))));
    }

    proptest! {
        #[test]
        fn round_trip(levels in proptest::collection::vec(0i64..=16, 1..64), integrate in any::<bool>()) {
            let enc = if integrate { Encoder::IntegrateFire } else { Encoder::Rate };
            let n = levels.len();
            let t = encode(&levels, vec![n], 16, enc).unwrap();
            prop_assert_eq!(decode_counts(&t), levels.clone());
            let total: i64 = levels.iter().sum();
            prop_assert_eq!(t.spike_count() as i64, total);
        }
    }
}
