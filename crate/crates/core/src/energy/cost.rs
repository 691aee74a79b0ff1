use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::OpCounter;
use crate::error::{Error, Result};

/// Energy of one multiplication measured in additions.
pub const DEFAULT_MULT_ADD_RATIO: f64 = 5.1;
pub const DEFAULT_TIMESTEPS: u32 = 16;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Kernel {
    Softmax,
    Ptsoftmax,
    Layernorm,
    Bspn,
}

impl Kernel {
    pub const ALL: [Kernel; 4] = [Self::Softmax, Self::Ptsoftmax, Self::Layernorm, Self::Bspn];
}

impl FromStr for Kernel {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "softmax" => Ok(Self::Softmax),
            "ptsoftmax" => Ok(Self::Ptsoftmax),
            "layernorm" | "ln" => Ok(Self::Layernorm),
            "bspn" => Ok(Self::Bspn),
            other => Err(Error::Domain(format!("unknown kernel `{other}`"))),
        }
    }
}

impl fmt::Display for Kernel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Softmax => "softmax",
            Self::Ptsoftmax => "ptsoftmax",
            Self::Layernorm => "layernorm",
            Self::Bspn => "bspn",
        })
    }
}

/// Closed-form operation counts for a length-`n` input.
///
/// | kernel    | +      | -  | x  | /     | exp | x^2 | sqrt | >> | LUT |
/// |-----------|--------|----|----|-------|-----|-----|------|----|-----|
/// | softmax   | n-1    |    |    | n     | n   |     |      |    |     |
/// | ptsoftmax | n-1    | n  |    |       |     |     |      | n  | 1   |
/// | layernorm | 3n-2   | 2n | 2n | n+2   |     | n   | 1    |    |     |
/// | bspn      | 2n-1   |    |    |       |     |     |      | 2n | 1   |
pub fn table_cost(kernel: Kernel, n: u64) -> Result<OpCounter> {
    if n == 0 {
        return Err(Error::Domain("cost table needs n >= 1".into()));
    }
    let c = match kernel {
        Kernel::Softmax => OpCounter {
            add: n - 1,
            div: n,
            exp: n,
            ..OpCounter::default()
        },
        Kernel::Ptsoftmax => OpCounter {
            add: n - 1,
            sub: n,
            shift: n,
            lut: 1,
            ..OpCounter::default()
        },
        Kernel::Layernorm => OpCounter {
            add: 3 * n - 2,
            sub: 2 * n,
            mul: 2 * n,
            div: n + 2,
            square: n,
            sqrt: 1,
            ..OpCounter::default()
        },
        Kernel::Bspn => OpCounter {
            add: 2 * n - 1,
            shift: 2 * n,
            lut: 1,
            ..OpCounter::default()
        },
    };
    Ok(c)
}

/// Relative energy of each operation class.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OpWeights {
    pub add: f64,
    pub sub: f64,
    pub mul: f64,
    pub div: f64,
    pub exp: f64,
    pub square: f64,
    pub sqrt: f64,
    pub shift: f64,
    pub lut: f64,
}

impl OpWeights {
    pub fn unit() -> Self {
        Self::uniform(1.0, 1.0)
    }

    /// Additive-class ops cost `cheap`, everything else costs `expensive`.
    pub fn uniform(cheap: f64, expensive: f64) -> Self {
        Self {
            add: cheap,
            sub: cheap,
            shift: cheap,
            lut: cheap,
            mul: expensive,
            div: expensive,
            exp: expensive,
            square: expensive,
            sqrt: expensive,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EnergyModel {
    pub mult_add_ratio: f64,
    pub timesteps: u32,
    pub weights: OpWeights,
}

impl Default for EnergyModel {
    fn default() -> Self {
        Self::new(DEFAULT_MULT_ADD_RATIO, DEFAULT_TIMESTEPS).expect("valid defaults")
    }
}

impl EnergyModel {
    /// Additions, subtractions, shifts and lookups cost 1; every other class
    /// costs `mult_add_ratio`.
    pub fn new(mult_add_ratio: f64, timesteps: u32) -> Result<Self> {
        if !(mult_add_ratio > 0.0) || !mult_add_ratio.is_finite() {
            return Err(Error::Domain(format!(
                "mult/add ratio {mult_add_ratio} must be positive"
            )));
        }
        if timesteps == 0 {
            return Err(Error::Domain("timesteps must be >= 1".into()));
        }
        Ok(Self {
            mult_add_ratio,
            timesteps,
            weights: OpWeights::uniform(1.0, mult_add_ratio),
        })
    }

    pub fn with_weights(mut self, weights: OpWeights) -> Self {
        self.weights = weights;
        self
    }

    pub fn energy(&self, c: &OpCounter) -> f64 {
        let w = &self.weights;
        w.add * c.add as f64
            + w.sub * c.sub as f64
            + w.mul * c.mul as f64
            + w.div * c.div as f64
            + w.exp * c.exp as f64
            + w.square * c.square as f64
            + w.sqrt * c.sqrt as f64
            + w.shift * c.shift as f64
            + w.lut * c.lut as f64
    }

    pub fn break_even_rate(&self) -> f64 {
        break_even_rate(self.timesteps, self.mult_add_ratio)
    }
}

/// Additions a spiking network spends in place of `n_bert_mults`
/// multiplications: `T * r * N`.
pub fn spiking_additions(timesteps: u32, rate: f64, n_bert_mults: u64) -> Result<f64> {
    if !(0.0..=1.0).contains(&rate) {
        return Err(Error::Domain(format!("spike rate {rate} outside [0, 1]")));
    }
    if timesteps == 0 {
        return Err(Error::Domain("timesteps must be >= 1".into()));
    }
    Ok(timesteps as f64 * rate * n_bert_mults as f64)
}

/// Spike rate below which spiking additions are cheaper than the dense
/// multiplications they replace: `ratio / T`.
pub fn break_even_rate(timesteps: u32, mult_add_ratio: f64) -> f64 {
    mult_add_ratio / timesteps as f64
}

/// Energies of the functions swapped out per layer, all under one model.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct ComponentEnergies {
    pub softmax: Option<f64>,
    pub ptsoftmax: Option<f64>,
    pub layernorm: Option<f64>,
    pub bspn: Option<f64>,
    pub gelu: Option<f64>,
    pub tanh: Option<f64>,
    pub relu: Option<f64>,
}

impl ComponentEnergies {
    /// Fills the four tabulated kernels for length-`n` inputs.
    pub fn from_table(n: u64, model: &EnergyModel) -> Result<Self> {
        let e = |k| table_cost(k, n).map(|c| Some(model.energy(&c)));
        Ok(Self {
            softmax: e(Kernel::Softmax)?,
            ptsoftmax: e(Kernel::Ptsoftmax)?,
            layernorm: e(Kernel::Layernorm)?,
            bspn: e(Kernel::Bspn)?,
            ..Self::default()
        })
    }

    pub fn with_activations(mut self, gelu: f64, tanh: f64, relu: f64) -> Self {
        self.gelu = Some(gelu);
        self.tanh = Some(tanh);
        self.relu = Some(relu);
        self
    }
}

/// Energy saved over `layers` layers by the function replacements:
/// `L (E_softmax - E_pt) + 2L (E_LN - E_BSPN) + L (E_gelu + E_tanh - 2 E_relu)`.
pub fn delta_e(layers: u32, c: &ComponentEnergies) -> Result<f64> {
    let get = |v: Option<f64>, name| v.ok_or(Error::MissingComponent(name));
    let l = layers as f64;
    Ok(
        l * (get(c.softmax, "softmax")? - get(c.ptsoftmax, "ptsoftmax")?)
            + 2.0 * l * (get(c.layernorm, "layernorm")? - get(c.bspn, "bspn")?)
            + l * (get(c.gelu, "gelu")? + get(c.tanh, "tanh")? - 2.0 * get(c.relu, "relu")?),
    )
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ModelSummary {
    #[serde(rename = "T")]
    pub timesteps: u32,
    pub ratio: f64,
}

/// One row of the JSON cost report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CostReport {
    pub kernel: Kernel,
    pub n: u64,
    pub counts: OpCounter,
    pub energy: f64,
    pub model: ModelSummary,
}

impl CostReport {
    pub fn new(kernel: Kernel, n: u64, counts: OpCounter, model: &EnergyModel) -> Self {
        Self {
            kernel,
            n,
            energy: model.energy(&counts),
            counts,
            model: ModelSummary {
                timesteps: model.timesteps,
                ratio: model.mult_add_ratio,
            },
        }
    }

    pub fn tabulated(kernel: Kernel, n: u64, model: &EnergyModel) -> Result<Self> {
        Ok(Self::new(kernel, n, table_cost(kernel, n)?, model))
    }
}
