//! One-parameter sweeps of the adaptation loop.

use std::io::Write;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::eval::evaluate;
use crate::model::EmbedderParams;
use crate::store::Dataset;
use crate::trainer::{run_past, AdaptConfig, EvalSplit};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SweepParam {
    Lambda,
    SMin,
    Eta,
}

impl FromStr for SweepParam {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "lambda" => Ok(Self::Lambda),
            "s_min" | "smin" => Ok(Self::SMin),
            "eta" => Ok(Self::Eta),
            other => Err(Error::Config(format!("cannot sweep `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepSpec {
    pub param: SweepParam,
    pub values: Vec<f64>,
    pub base: AdaptConfig,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepRow {
    pub value: f64,
    pub rank1: f64,
    pub map: f64,
    /// Cluster count of the final iteration.
    pub clusters: usize,
}

fn as_count(param: SweepParam, v: f64) -> Result<usize> {
    if v >= 1.0 && v.fract() == 0.0 && v <= usize::MAX as f64 {
        Ok(v as usize)
    } else {
        Err(Error::Config(format!(
            "{param:?} value {v} must be a positive integer"
        )))
    }
}

impl SweepSpec {
    /// The base configuration with the swept parameter set to `v`.
    pub fn config_for(&self, v: f64) -> Result<AdaptConfig> {
        let mut cfg = self.base.clone();
        match self.param {
            SweepParam::Lambda => cfg.lambda = v,
            SweepParam::SMin => cfg.s_min = as_count(self.param, v)?,
            SweepParam::Eta => cfg.eta = as_count(self.param, v)?,
        }
        Ok(cfg)
    }
}

/// Runs the adaptation once per value from the same starting model and seed.
pub fn run_sweep(
    sweep: &SweepSpec,
    source: &Dataset,
    target: &Dataset,
    initial: &EmbedderParams,
    split: EvalSplit<'_>,
) -> Result<Vec<SweepRow>> {
    if sweep.values.is_empty() {
        return Err(Error::Config("sweep needs at least one value".into()));
    }
    let configs = sweep
        .values
        .iter()
        .map(|&v| sweep.config_for(v))
        .collect::<Result<Vec<_>>>()?;
    sweep
        .values
        .iter()
        .zip(configs)
        .map(|(&value, cfg)| {
            let (params, logs) = run_past(source, target, initial, &cfg, None)?;
            let r = evaluate(split.query, split.gallery, &params, &[1])?;
            Ok(SweepRow {
                value,
                rank1: r.rank1(),
                map: r.map_score,
                clusters: logs.last().map_or(0, |l| l.clusters),
            })
        })
        .collect()
}

pub fn write_sweep_csv(rows: &[SweepRow], writer: impl Write) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["value", "rank1", "map", "clusters"])?;
    for r in rows {
        w.write_record([
            r.value.to_string(),
            r.rank1.to_string(),
            r.map.to_string(),
            r.clusters.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}
