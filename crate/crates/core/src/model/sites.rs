use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::quantize::{fit_elastic, ElasticParams};

/// Activation quantization points of an encoder block, plus the classifier
/// input. Each site turns a signed fixed-point tensor into unsigned levels.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Site {
    AttnIn,
    Query,
    Prob,
    AttnOut,
    FfnIn,
    FfnHidden,
    ClsIn,
}

impl Site {
    pub const BLOCK: [Site; 6] = [
        Site::AttnIn,
        Site::Query,
        Site::Prob,
        Site::AttnOut,
        Site::FfnIn,
        Site::FfnHidden,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Site::AttnIn => "attn_in",
            Site::Query => "query",
            Site::Prob => "prob",
            Site::AttnOut => "attn_out",
            Site::FfnIn => "ffn_in",
            Site::FfnHidden => "ffn_hidden",
            Site::ClsIn => "cls_in",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BlockSites {
    pub attn_in: ElasticParams,
    pub query: ElasticParams,
    pub prob: ElasticParams,
    pub attn_out: ElasticParams,
    pub ffn_in: ElasticParams,
    pub ffn_hidden: ElasticParams,
}

impl BlockSites {
    /// Probabilities use `alpha = 2^-(a-1)`, so `P = 1` is level `2^(a-1)`
    /// and every power of two down to `2^-(a-1)` is represented exactly.
    pub fn prob_params(bits: u32) -> Result<ElasticParams> {
        ElasticParams::from_exponent(-(bits as i32 - 1), 0.0, bits)
    }

    /// Same scale at every site.
    pub fn uniform(k_alpha: i32, bits: u32) -> Result<Self> {
        let p = ElasticParams::from_exponent(k_alpha, 0.0, bits)?;
        Ok(Self {
            attn_in: p,
            query: p,
            prob: Self::prob_params(bits)?,
            attn_out: p,
            ffn_in: p,
            ffn_hidden: p,
        })
    }

    /// Fits every site but the probability site to its samples.
    pub fn fit(samples: &dyn Fn(Site) -> Vec<f64>, bits: u32) -> Result<Self> {
        Ok(Self {
            attn_in: fit_elastic(&samples(Site::AttnIn), bits)?,
            query: fit_elastic(&samples(Site::Query), bits)?,
            prob: Self::prob_params(bits)?,
            attn_out: fit_elastic(&samples(Site::AttnOut), bits)?,
            ffn_in: fit_elastic(&samples(Site::FfnIn), bits)?,
            ffn_hidden: fit_elastic(&samples(Site::FfnHidden), bits)?,
        })
    }

    pub fn get(&self, site: Site) -> Option<&ElasticParams> {
        match site {
            Site::AttnIn => Some(&self.attn_in),
            Site::Query => Some(&self.query),
            Site::Prob => Some(&self.prob),
            Site::AttnOut => Some(&self.attn_out),
            Site::FfnIn => Some(&self.ffn_in),
            Site::FfnHidden => Some(&self.ffn_hidden),
            Site::ClsIn => None,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn prob_site_maps_one_to_half_range() {
        let p = BlockSites::prob_params(4).unwrap();
        assert_eq!(p.level_of(1.0), 8);
        assert_eq!(p.level_of(0.125), 1);
        assert_eq!(p.level_of(0.0625), 1);
        assert_eq!(p.level_of(0.03125), 0);
    }
}
