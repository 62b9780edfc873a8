//! Flat `key = value` configuration with dotted section prefixes.
//!
//! ```text
//! # comments start with '#'
//! adapt.lambda = 0.5
//! adapt.clustering = hdbscan
//! pretrain.hidden = 64, 64
//! ```
//!
//! Later assignments win, so command-line overrides are applied after the file.

use std::fs;
use std::path::Path;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::sweep::SweepParam;
use crate::synth::SynthSpec;
use crate::trainer::{AdaptConfig, PretrainConfig};

#[derive(Debug, Clone, PartialEq)]
pub struct Config {
    pub synth: SynthSpec,
    pub pretrain: PretrainConfig,
    pub adapt: AdaptConfig,
    /// CMC ranks reported by evaluation.
    pub ranks: Vec<usize>,
    pub sweep_param: SweepParam,
    pub sweep_values: Vec<f64>,
}

impl Default for Config {
    fn default() -> Self {
        Self {
            synth: SynthSpec::default(),
            pretrain: PretrainConfig::default(),
            adapt: AdaptConfig::default(),
            ranks: vec![1, 5, 10],
            sweep_param: SweepParam::Lambda,
            sweep_values: vec![0.1, 0.2, 0.5, 1.0, 2.0],
        }
    }
}

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| Error::Config(format!("`{key}`: cannot parse `{value}`")))
}

fn parse_list<T: FromStr>(key: &str, value: &str) -> Result<Vec<T>> {
    value
        .split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| parse(key, s))
        .collect()
}

fn optional<T: FromStr>(key: &str, value: &str) -> Result<Option<T>> {
    match value {
        "" | "auto" | "none" => Ok(None),
        v => parse(key, v).map(Some),
    }
}

impl Config {
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path)?;
        let mut cfg = Self::default();
        cfg.apply_text(&text).map_err(|e| match e {
            Error::Config(msg) => Error::Parse {
                path: path.to_path_buf(),
                msg,
            },
            other => other,
        })?;
        Ok(cfg)
    }

    pub fn apply_text(&mut self, text: &str) -> Result<()> {
        for (n, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected `key = value`", n + 1)))?;
            self.set(key.trim(), value.trim())
                .map_err(|e| Error::Config(format!("line {}: {e}", n + 1)))?;
        }
        Ok(())
    }

    /// Applies a `key=value` override.
    pub fn apply_override(&mut self, assignment: &str) -> Result<()> {
        let (key, value) = assignment
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("override `{assignment}` is not `key=value`")))?;
        self.set(key.trim(), value.trim())
    }

    /// Uses one seed for data generation, pretraining and adaptation.
    pub fn set_seed(&mut self, seed: u64) {
        self.synth.seed = seed;
        self.pretrain.seed = seed;
        self.adapt.seed = seed;
    }

    pub fn set(&mut self, key: &str, v: &str) -> Result<()> {
        let s = &mut self.synth;
        let p = &mut self.pretrain;
        let a = &mut self.adapt;
        let k = key;
        match key {
            "seed" => self.set_seed(parse(k, v)?),
            "synth.source_identities" => s.source_identities = parse(k, v)?,
            "synth.target_identities" => s.target_identities = parse(k, v)?,
            "synth.samples_min" => s.samples_per_identity.0 = parse(k, v)?,
            "synth.samples_max" => s.samples_per_identity.1 = parse(k, v)?,
            "synth.eval_per_identity" => s.eval_per_identity = parse(k, v)?,
            "synth.queries_per_identity" => s.queries_per_identity = parse(k, v)?,
            "synth.input_dim" => s.input_dim = parse(k, v)?,
            "synth.center_scale" => s.center_scale = parse(k, v)?,
            "synth.noise" => s.noise = parse(k, v)?,
            "synth.source_nuisance" => s.source_nuisance = parse(k, v)?,
            "synth.outlier_fraction" => s.outlier_fraction = parse(k, v)?,
            "synth.outlier_scale" => s.outlier_scale = parse(k, v)?,
            "synth.shift_strength" => s.shift.strength = parse(k, v)?,
            "synth.scale_jitter" => s.shift.scale_jitter = parse(k, v)?,
            "synth.bias" => s.shift.bias = parse(k, v)?,
            "synth.cameras" => s.cameras = parse(k, v)?,
            "synth.seed" => s.seed = parse(k, v)?,
            "pretrain.hidden" => p.hidden = parse_list(k, v)?,
            "pretrain.embedding_dim" => p.embedding_dim = parse(k, v)?,
            "pretrain.epochs" => p.epochs = parse(k, v)?,
            "pretrain.lr" => p.lr = parse(k, v)?,
            "pretrain.batch_size" => p.batch_size = parse(k, v)?,
            "pretrain.seed" => p.seed = parse(k, v)?,
            "adapt.margin" => a.margin = parse(k, v)?,
            "adapt.lambda" => a.lambda = parse(k, v)?,
            "adapt.eta" => a.eta = parse(k, v)?,
            "adapt.s_min" => a.s_min = parse(k, v)?,
            "adapt.p" => a.p = parse(k, v)?,
            "adapt.k" => a.k = parse(k, v)?,
            "adapt.max_iterations" => a.max_iterations = parse(k, v)?,
            "adapt.epochs_conservative" => a.epochs_conservative = parse(k, v)?,
            "adapt.epochs_promoting" => a.epochs_promoting = parse(k, v)?,
            "adapt.k1" => a.k1 = parse(k, v)?,
            "adapt.k2" => a.k2 = parse(k, v)?,
            "adapt.jaccard_blend" => a.jaccard_blend = parse(k, v)?,
            "adapt.seed" => a.seed = parse(k, v)?,
            "adapt.clustering" => a.clustering = v.parse()?,
            "adapt.kmeans_k" => a.kmeans_k = optional(k, v)?,
            "adapt.dbscan_eps" => a.dbscan_eps = optional(k, v)?,
            "adapt.dbscan_quantile" => a.dbscan_quantile = parse(k, v)?,
            "adapt.lr_scale" => a.lr_scale = parse(k, v)?,
            "adapt.stages" => a.stages = v.parse()?,
            "adapt.lr.conservative_backbone" => a.lr.conservative_backbone = parse(k, v)?,
            "adapt.lr.conservative_embedding" => a.lr.conservative_embedding = parse(k, v)?,
            "adapt.lr.promoting_classifier" => a.lr.promoting_classifier = parse(k, v)?,
            "adapt.lr.promoting_other" => a.lr.promoting_other = parse(k, v)?,
            "adapt.lr.decay" => a.lr.decay = parse(k, v)?,
            "adapt.lr.decay_after" => a.lr.decay_after = parse(k, v)?,
            "eval.ranks" => self.ranks = parse_list(k, v)?,
            "sweep.param" => self.sweep_param = v.parse()?,
            "sweep.values" => self.sweep_values = parse_list(k, v)?,
            _ => return Err(Error::Config(format!("unknown key `{key}`"))),
        }
        Ok(())
    }
}
