//! Run configuration: defaults, then a flat `key = value` file, then flags.

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use anyhow::{bail, ensure, Context, Result};
use serde::Serialize;
use spikeshift::kernels::{PtSoftmaxConfig, DEFAULT_CLAMP_MAX};
use spikeshift::model::{BlockShape, ModelConfig};
use spikeshift::numerics::RoundMode;
use spikeshift::verify::{SuiteConfig, SuiteKind};

/// Everything a run depends on. Written verbatim into every report.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunConfig {
    pub seed: u64,
    pub timesteps: usize,
    pub blocks: usize,
    pub dim: usize,
    pub heads: usize,
    pub seq: usize,
    /// `None` disables the softmax clamp.
    pub clamp_max: Option<f64>,
    #[serde(serialize_with = "as_flag")]
    pub k_mode: RoundMode,
    pub pow2_norm: bool,
    pub suites: Vec<SuiteKind>,
    pub lemma_samples: usize,
    pub equivalence_instances: usize,
    pub gradient_batches: usize,
    /// Random sequences fed to the spiking model by `demo` and `spike-report`.
    pub inputs: usize,
    pub out: PathBuf,
}

/// `ceil` or `round`, as spelled on the command line.
fn as_flag<S: serde::Serializer>(mode: &RoundMode, s: S) -> std::result::Result<S::Ok, S::Error> {
    s.collect_str(mode)
}

impl Default for RunConfig {
    fn default() -> Self {
        let model = ModelConfig::default();
        let suite = SuiteConfig::default();
        Self {
            seed: 0,
            timesteps: model.timesteps,
            blocks: model.blocks,
            dim: model.dim,
            heads: model.heads,
            seq: 8,
            clamp_max: Some(DEFAULT_CLAMP_MAX),
            k_mode: RoundMode::RoundNearest,
            pow2_norm: model.pow2_norm,
            suites: suite.suites,
            lemma_samples: suite.lemma_samples,
            equivalence_instances: suite.equivalence_instances,
            gradient_batches: suite.gradient_batches,
            inputs: 16,
            out: PathBuf::from("out"),
        }
    }
}

/// Keys accepted by [`RunConfig::set`]; flags use the same names with dashes.
pub const KEYS: [&str; 15] = [
    "seed",
    "timesteps",
    "blocks",
    "dim",
    "heads",
    "seq",
    "clamp_max",
    "k_mode",
    "pow2_norm",
    "suites",
    "lemma_samples",
    "equivalence_instances",
    "gradient_batches",
    "inputs",
    "out",
];

fn parse<T: std::str::FromStr>(key: &str, value: &str) -> Result<T>
where
    T::Err: std::fmt::Display,
{
    value
        .parse()
        .map_err(|e| anyhow::anyhow!("{key}: cannot parse {value:?}: {e}"))
}

fn parse_bool(key: &str, value: &str) -> Result<bool> {
    match value {
        "true" | "1" | "yes" | "on" => Ok(true),
        "false" | "0" | "no" | "off" => Ok(false),
        _ => bail!("{key}: expected a boolean, got {value:?}"),
    }
}

impl RunConfig {
    /// Sets one key. `-` and `_` are interchangeable in `key`.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let key = key.replace('-', "_");
        let value = value.trim();
        match key.as_str() {
            "seed" => self.seed = parse(&key, value)?,
            "timesteps" => self.timesteps = parse(&key, value)?,
            "blocks" => self.blocks = parse(&key, value)?,
            "dim" => self.dim = parse(&key, value)?,
            "heads" => self.heads = parse(&key, value)?,
            "seq" => self.seq = parse(&key, value)?,
            "clamp_max" => {
                self.clamp_max = match value {
                    "none" | "off" => None,
                    v => Some(parse(&key, v)?),
                }
            }
            "k_mode" => {
                self.k_mode = match value {
                    "ceil" => RoundMode::Ceil,
                    "round" => RoundMode::RoundNearest,
                    _ => bail!("k_mode: expected ceil or round, got {value:?}"),
                }
            }
            "pow2_norm" => self.pow2_norm = parse_bool(&key, value)?,
            "suites" => {
                self.suites = value
                    .split(',')
                    .map(|s| parse::<SuiteKind>(&key, s.trim()))
                    .collect::<Result<_>>()?
            }
            "lemma_samples" => self.lemma_samples = parse(&key, value)?,
            "equivalence_instances" => self.equivalence_instances = parse(&key, value)?,
            "gradient_batches" => self.gradient_batches = parse(&key, value)?,
            "inputs" => self.inputs = parse(&key, value)?,
            "out" => self.out = PathBuf::from(value),
            _ => bail!(
                "unknown configuration key {key:?}; expected one of {}",
                KEYS.join(", ")
            ),
        }
        Ok(())
    }

    /// Applies a flat config file: one `key = value` per line, `#` comments.
    pub fn apply_file(&mut self, path: &Path) -> Result<()> {
        let text =
            std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        let mut seen = BTreeSet::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .with_context(|| format!("{}:{}: expected key = value", path.display(), i + 1))?;
            let key = key.trim().replace('-', "_");
            ensure!(
                seen.insert(key.clone()),
                "{}:{}: {key} is set twice",
                path.display(),
                i + 1
            );
            self.set(&key, value)
                .with_context(|| format!("{}:{}", path.display(), i + 1))?;
        }
        Ok(())
    }

    pub fn model_config(&self) -> ModelConfig {
        ModelConfig {
            dim: self.dim,
            heads: self.heads,
            ffn_dim: 4 * self.dim,
            blocks: self.blocks,
            max_seq: self.seq.max(ModelConfig::default().max_seq),
            timesteps: self.timesteps,
            softmax: PtSoftmaxConfig {
                clamp_max: self.clamp_max,
                k_mode: self.k_mode,
            },
            pow2_norm: self.pow2_norm,
            ..ModelConfig::default()
        }
    }

    pub fn suite_config(&self) -> SuiteConfig {
        SuiteConfig {
            seed: self.seed,
            suites: self.suites.clone(),
            lemma_samples: self.lemma_samples,
            equivalence_instances: self.equivalence_instances,
            gradient_batches: self.gradient_batches,
            k_mode: self.k_mode,
            timesteps: self.timesteps,
            block: BlockShape {
                dim: self.dim,
                heads: self.heads,
                ffn_dim: 2 * self.dim,
                timesteps: self.timesteps,
                pow2_norm: self.pow2_norm,
                ..BlockShape::default()
            },
            ..SuiteConfig::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        ensure!(self.seq >= 1, "seq must be at least 1");
        ensure!(self.inputs >= 1, "inputs must be at least 1");
        if let Some(c) = self.clamp_max {
            ensure!(c > 0.0 && c < 1.0, "clamp_max must lie in (0, 1), got {c}");
        }
        ensure!(!self.suites.is_empty(), "at least one suite is required");
        ensure!(
            self.lemma_samples >= 1
                && self.equivalence_instances >= 1
                && self.gradient_batches >= 1,
            "suite sample counts must be at least 1"
        );
        self.model_config()
            .validate()
            .context("invalid model shape")?;
        Ok(())
    }
}
