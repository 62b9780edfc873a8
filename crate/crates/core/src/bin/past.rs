use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use past_core::cluster::ClusteringMethod;
use past_core::config::Config;
use past_core::eval::evaluate;
use past_core::model::EmbedderParams;
use past_core::rerank::{jaccard_matrix, RerankParams};
use past_core::store::{pairwise_euclidean, Dataset};
use past_core::sweep::{run_sweep, write_sweep_csv, SweepSpec};
use past_core::synth::generate;
use past_core::trainer::{
    cluster_target, extract_features, kmeans_k_for, pretrain_source, run_past,
    write_iterations_csv, EvalSplit,
};
use past_core::{Error, Result};

#[derive(Parser)]
#[command(
    name = "past",
    version,
    about = "Self-training domain adaptation for embedding models"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct Common {
    /// `key = value` config file.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Seed for data generation, pretraining and adaptation.
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, default_value = "out")]
    out_dir: PathBuf,
    /// Extra `key=value` overrides, applied after `--config` and `--seed`.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

#[derive(Args, Clone)]
struct Data {
    /// Directory holding source.csv, target.csv, query.csv and gallery.csv.
    #[arg(long, default_value = "data")]
    data_dir: PathBuf,
}

#[derive(Clone, Copy, ValueEnum)]
enum Split {
    Source,
    Target,
    Query,
    Gallery,
}

impl Split {
    fn file(self) -> &'static str {
        match self {
            Split::Source => "source.csv",
            Split::Target => "target.csv",
            Split::Query => "query.csv",
            Split::Gallery => "gallery.csv",
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Write a synthetic source/target benchmark.
    GenData {
        #[command(flatten)]
        common: Common,
    },
    /// Train an embedder on the labeled source split.
    Pretrain {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        data: Data,
    },
    /// Adapt a pretrained embedder to the unlabeled target split.
    Adapt {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        data: Data,
        #[arg(long)]
        model: PathBuf,
    },
    /// Score a checkpoint on the query/gallery split.
    Eval {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        data: Data,
        #[arg(long)]
        model: PathBuf,
    },
    /// Jaccard distances between embedded samples of one split.
    Rerank {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        data: Data,
        /// Without a model the raw inputs are L2-normalized and used directly.
        #[arg(long)]
        model: Option<PathBuf>,
        #[arg(long, value_enum, default_value = "target")]
        split: Split,
    },
    /// Pseudo labels for one split.
    Cluster {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        data: Data,
        #[arg(long)]
        model: Option<PathBuf>,
        #[arg(long, value_enum, default_value = "target")]
        split: Split,
    },
    /// Adapt once per value of `sweep.param`.
    Sweep {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        data: Data,
        #[arg(long)]
        model: PathBuf,
    },
}

impl Command {
    fn common(&self) -> &Common {
        match self {
            Command::GenData { common }
            | Command::Pretrain { common, .. }
            | Command::Adapt { common, .. }
            | Command::Eval { common, .. }
            | Command::Rerank { common, .. }
            | Command::Cluster { common, .. }
            | Command::Sweep { common, .. } => common,
        }
    }
}

fn load_config(c: &Common) -> Result<Config> {
    let mut cfg = match &c.config {
        Some(path) => Config::load(path).map_err(|e| at(path, e))?,
        None => Config::default(),
    };
    if let Some(seed) = c.seed {
        cfg.set_seed(seed);
    }
    for o in &c.overrides {
        cfg.apply_override(o)?;
    }
    Ok(cfg)
}

fn create(dir: &Path, name: &str) -> Result<BufWriter<File>> {
    let path = dir.join(name);
    let file = File::create(&path).map_err(|e| at(&path, e.into()))?;
    Ok(BufWriter::new(file))
}

/// Attaches the path to bare IO errors so the diagnostic names the file.
fn at(path: &Path, e: Error) -> Error {
    match e {
        Error::Io(source) => Error::File {
            path: path.to_path_buf(),
            source,
        },
        other => other,
    }
}

fn read(data: &Data, split: Split) -> Result<Dataset> {
    let path = data.data_dir.join(split.file());
    Dataset::read_csv(&path).map_err(|e| at(&path, e))
}

fn load_model(path: &Path) -> Result<EmbedderParams> {
    EmbedderParams::load(path).map_err(|e| at(path, e))
}

fn features(model: Option<&Path>, ds: &Dataset) -> Result<past_core::Matrix> {
    match model {
        Some(m) => extract_features(&load_model(m)?, ds),
        None => past_core::store::l2_normalize(ds.features()),
    }
}

fn run(cli: Cli) -> Result<()> {
    let cfg = load_config(cli.command.common())?;
    let out = &cli.command.common().out_dir;
    fs::create_dir_all(out)?;
    match &cli.command {
        Command::GenData { .. } => {
            let d = generate(&cfg.synth)?;
            d.source.write_csv(out.join("source.csv"))?;
            d.target.write_csv(out.join("target.csv"))?;
            d.query.write_csv(out.join("query.csv"))?;
            d.gallery.write_csv(out.join("gallery.csv"))?;
        }
        Command::Pretrain { data, .. } => {
            let params = pretrain_source(&read(data, Split::Source)?, &cfg.pretrain)?;
            params.save(out.join("model.ckpt"))?;
        }
        Command::Adapt { data, model, .. } => {
            let (source, target) = (read(data, Split::Source)?, read(data, Split::Target)?);
            let (query, gallery) = (read(data, Split::Query)?, read(data, Split::Gallery)?);
            let initial = load_model(model)?;
            let split = EvalSplit {
                query: &query,
                gallery: &gallery,
            };
            let (params, logs) = run_past(&source, &target, &initial, &cfg.adapt, Some(split))?;
            params.save(out.join("adapted.ckpt"))?;
            write_iterations_csv(&logs, create(out, "iterations.csv")?)?;
            evaluate(&query, &gallery, &params, &cfg.ranks)?
                .write_csv_to(create(out, "results.csv")?)?;
        }
        Command::Eval { data, model, .. } => {
            let params = load_model(model)?;
            evaluate(
                &read(data, Split::Query)?,
                &read(data, Split::Gallery)?,
                &params,
                &cfg.ranks,
            )?
            .write_csv_to(create(out, "results.csv")?)?;
        }
        Command::Rerank {
            data, model, split, ..
        } => {
            let f = features(model.as_deref(), &read(data, *split)?)?;
            jaccard_matrix(&pairwise_euclidean(&f), &rerank_params(&cfg, f.rows()))?
                .write_csv_to(create(out, "jaccard.csv")?)?;
        }
        Command::Cluster {
            data, model, split, ..
        } => {
            let f = features(model.as_deref(), &read(data, *split)?)?;
            let jaccard = jaccard_matrix(&pairwise_euclidean(&f), &rerank_params(&cfg, f.rows()))?;
            let k = match (cfg.adapt.clustering, cfg.adapt.kmeans_k) {
                (ClusteringMethod::Kmeans, None) => {
                    kmeans_k_for(&cfg.adapt, &read(data, Split::Source)?)
                }
                (_, k) => k.unwrap_or(0),
            };
            cluster_target(&f, jaccard.as_matrix(), &cfg.adapt, k, 1)?
                .write_csv_to(create(out, "labels.csv")?)?;
        }
        Command::Sweep { data, model, .. } => {
            let (source, target) = (read(data, Split::Source)?, read(data, Split::Target)?);
            let (query, gallery) = (read(data, Split::Query)?, read(data, Split::Gallery)?);
            let spec = SweepSpec {
                param: cfg.sweep_param,
                values: cfg.sweep_values.clone(),
                base: cfg.adapt.clone(),
            };
            let split = EvalSplit {
                query: &query,
                gallery: &gallery,
            };
            let rows = run_sweep(&spec, &source, &target, &load_model(model)?, split)?;
            let mut w = create(out, "sweep.csv")?;
            write_sweep_csv(&rows, &mut w)?;
            w.flush()?;
        }
    }
    Ok(())
}

fn rerank_params(cfg: &Config, n: usize) -> RerankParams {
    RerankParams {
        k1: cfg.adapt.k1,
        k2: cfg.adapt.k2,
        jaccard_blend: cfg.adapt.jaccard_blend,
    }
    .clamped(n)
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("past: error: {e}");
            match e {
                Error::Io(_) | Error::File { .. } | Error::Parse { .. } | Error::Config(_) => {
                    ExitCode::from(2)
                }
                _ => ExitCode::FAILURE,
            }
        }
    }
}
