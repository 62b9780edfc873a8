//! Source pretraining and the alternating self-training loop.
//!
//! Each iteration extracts target features, re-ranks them, clusters into
//! pseudo labels, then runs a conservative stage (ranking and clustering
//! triplet losses on PK batches) followed by a promoting stage (softmax
//! classification over the current clusters, classifier seeded from the
//! cluster means).

use std::collections::BTreeSet;
use std::io::Write;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::cluster::{
    cluster_means, dbscan, default_eps, hdbscan, kmeans, ClusteringMethod, PseudoLabeling,
};
use crate::error::{Error, Result};
use crate::eval::{evaluate_datasets, pseudo_label_accuracy, selection_ratio};
use crate::loss::{conservative_loss, ctl_loss, init_classifier, rtl_loss, softmax_ce_loss};
use crate::matrix::Matrix;
use crate::model::{momentum_update, normalize_rows, sgd_step, EmbedderParams, OptimizerState};
use crate::rerank::{jaccard_matrix, ranking_matrix, RankingIndex, RerankParams};
use crate::sampling::{pk_sample_with, select_rtl_triplets_with, RankedTriplet};
use crate::store::{pairwise_euclidean, Dataset, FeatureMatrix};

#[derive(Debug, Clone, PartialEq)]
pub struct StageLearningRates {
    pub conservative_backbone: f64,
    pub conservative_embedding: f64,
    pub promoting_classifier: f64,
    pub promoting_other: f64,
    pub decay: f64,
    /// Rates are multiplied by `decay` in every iteration after this one.
    pub decay_after: usize,
}

impl Default for StageLearningRates {
    fn default() -> Self {
        Self {
            conservative_backbone: 1e-4,
            conservative_embedding: 2e-4,
            promoting_classifier: 1e-3,
            promoting_other: 5e-5,
            decay: 0.1,
            decay_after: 3,
        }
    }
}

impl StageLearningRates {
    /// Multiplier for 1-based `iteration`.
    pub fn factor(&self, iteration: usize) -> f64 {
        if iteration > self.decay_after {
            self.decay
        } else {
            1.0
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Stages {
    #[default]
    Full,
    ConservativeOnly,
}

impl FromStr for Stages {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "full" => Ok(Self::Full),
            "conservative" | "conservative-only" => Ok(Self::ConservativeOnly),
            other => Err(Error::Config(format!("unknown stages `{other}`"))),
        }
    }
}

impl std::fmt::Display for Stages {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::Full => "full",
            Self::ConservativeOnly => "conservative",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AdaptConfig {
    pub margin: f64,
    pub lambda: f64,
    pub eta: usize,
    pub s_min: usize,
    pub p: usize,
    pub k: usize,
    pub max_iterations: usize,
    pub epochs_conservative: usize,
    pub epochs_promoting: usize,
    pub k1: usize,
    pub k2: usize,
    pub jaccard_blend: f64,
    pub seed: u64,
    pub clustering: ClusteringMethod,
    /// k-means centroid count; defaults to the number of source identities.
    pub kmeans_k: Option<usize>,
    /// DBSCAN radius; defaults to a quantile of the `s_min`-th neighbour distance.
    pub dbscan_eps: Option<f64>,
    pub dbscan_quantile: f64,
    pub lr: StageLearningRates,
    /// Global multiplier on every stage learning rate.
    pub lr_scale: f64,
    pub stages: Stages,
}

impl Default for AdaptConfig {
    fn default() -> Self {
        Self {
            margin: 0.3,
            lambda: 0.5,
            eta: 20,
            s_min: 10,
            p: 16,
            k: 4,
            max_iterations: 4,
            epochs_conservative: 2,
            epochs_promoting: 2,
            k1: 20,
            k2: 6,
            jaccard_blend: 0.0,
            seed: 0,
            clustering: ClusteringMethod::Hdbscan,
            kmeans_k: None,
            dbscan_eps: None,
            dbscan_quantile: 0.9,
            lr: StageLearningRates::default(),
            lr_scale: 1.0,
            stages: Stages::Full,
        }
    }
}

impl AdaptConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.into()));
        if !(self.margin >= 0.0) || !(self.lambda >= 0.0) {
            return bad("margin and lambda must be non-negative");
        }
        if self.eta == 0 || self.p == 0 || self.k < 2 || self.k1 == 0 || self.k2 == 0 {
            return bad("eta, P, k1, k2 must be positive and K at least 2");
        }
        if self.s_min < 2 {
            return Err(Error::InvalidMinSamples(self.s_min));
        }
        let lr = &self.lr;
        let rates = [
            lr.conservative_backbone,
            lr.conservative_embedding,
            lr.promoting_classifier,
            lr.promoting_other,
            lr.decay,
            self.lr_scale,
        ];
        if rates.iter().any(|r| !(*r > 0.0) || !r.is_finite()) {
            return bad("learning rates must be positive");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PretrainConfig {
    pub hidden: Vec<usize>,
    pub embedding_dim: usize,
    pub epochs: usize,
    pub lr: f64,
    pub batch_size: usize,
    pub seed: u64,
}

impl Default for PretrainConfig {
    fn default() -> Self {
        Self {
            hidden: vec![64, 64],
            embedding_dim: 32,
            epochs: 30,
            lr: 0.01,
            batch_size: 64,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct IterationLog {
    pub iteration: usize,
    pub clusters: usize,
    pub selected: usize,
    pub selection_ratio: f64,
    pub pseudo_accuracy: Option<f64>,
    pub rank1: Option<f64>,
    pub map: Option<f64>,
    pub conservative_loss: f64,
    pub promoting_loss: f64,
}

pub fn write_iterations_csv(logs: &[IterationLog], writer: impl Write) -> Result<()> {
    let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
    let mut w = csv::Writer::from_writer(writer);
    w.write_record([
        "iteration",
        "clusters",
        "selected",
        "selection_ratio",
        "pseudo_accuracy",
        "rank1",
        "map",
        "conservative_loss",
        "promoting_loss",
    ])?;
    for l in logs {
        w.write_record([
            l.iteration.to_string(),
            l.clusters.to_string(),
            l.selected.to_string(),
            l.selection_ratio.to_string(),
            opt(l.pseudo_accuracy),
            opt(l.rank1),
            opt(l.map),
            l.conservative_loss.to_string(),
            l.promoting_loss.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// L2-normalized embeddings of every sample.
pub fn extract_features(params: &EmbedderParams, dataset: &Dataset) -> Result<FeatureMatrix> {
    let (raw, _) = params.forward(dataset.features())?;
    Ok(normalize_rows(&raw)?.features)
}

/// Query and gallery used for per-iteration logging.
#[derive(Debug, Clone, Copy)]
pub struct EvalSplit<'a> {
    pub query: &'a Dataset,
    pub gallery: &'a Dataset,
}

impl EvalSplit<'_> {
    fn score(&self, params: &EmbedderParams) -> Result<(f64, f64)> {
        let qf = extract_features(params, self.query)?;
        let gf = extract_features(params, self.gallery)?;
        let r = evaluate_datasets(&qf, self.query, &gf, self.gallery, &[1])?;
        Ok((r.rank1(), r.map_score))
    }
}

/// Runs a softmax classification stage over `ids` with labels `labels`.
/// The classifier has its own momentum buffer and learning rate.
struct ClassifierStage<'a> {
    inputs: &'a Matrix,
    ids: &'a [usize],
    labels: &'a [usize],
    batch_size: usize,
    epochs: usize,
    lr_other: f64,
    lr_classifier: f64,
}

impl ClassifierStage<'_> {
    fn run(&self, params: &mut EmbedderParams, w: &mut Matrix, rng: &mut impl Rng) -> Result<f64> {
        let mut opt = OptimizerState::new(params, self.lr_other, self.lr_other);
        let mut w_buf = vec![0.0; w.as_slice().len()];
        let mut order: Vec<usize> = (0..self.ids.len()).collect();
        let (mut total, mut steps) = (0.0, 0usize);
        for _ in 0..self.epochs {
            order.shuffle(rng);
            for chunk in order.chunks(self.batch_size.max(1)) {
                let rows: Vec<usize> = chunk.iter().map(|&i| self.ids[i]).collect();
                let labels: Vec<usize> = chunk.iter().map(|&i| self.labels[i]).collect();
                let (raw, cache) = params.forward(&self.inputs.select_rows(&rows))?;
                let norm = normalize_rows(&raw)?;
                let logits = norm.features.matmul(w)?;
                let loss = softmax_ce_loss(&logits, &labels)?;
                let dw = norm.features.t_matmul(&loss.grad)?;
                let df = loss.grad.matmul_t(w)?;
                let grads = params.backward(&cache, &norm.backward(&df)?)?;
                sgd_step(params, &grads, &mut opt)?;
                momentum_update(
                    w.as_mut_slice(),
                    dw.as_slice(),
                    &mut w_buf,
                    self.lr_classifier,
                    opt.momentum,
                    opt.weight_decay,
                );
                total += loss.value;
                steps += 1;
            }
        }
        Ok(if steps == 0 {
            0.0
        } else {
            total / steps as f64
        })
    }
}

/// Supervised softmax training on the source identities. The classifier is
/// seeded from the initial class means and dropped afterwards.
pub fn pretrain_source(source: &Dataset, config: &PretrainConfig) -> Result<EmbedderParams> {
    let identities = source.identities().ok_or(Error::MissingLabels)?;
    let mut dims = vec![source.dim()];
    dims.extend(&config.hidden);
    dims.push(config.embedding_dim);
    let mut params = EmbedderParams::init(&dims, config.seed)?;
    if config.epochs == 0 {
        return Ok(params);
    }
    let labeling =
        PseudoLabeling::from_raw(&identities.iter().map(|&i| i64::from(i)).collect::<Vec<_>>());
    let labels: Vec<usize> = (0..source.len())
        .map(|i| labeling.label(i).unwrap_or(0))
        .collect();
    let mut w = init_classifier(&cluster_means(
        &extract_features(&params, source)?,
        &labeling,
    )?)
    .w;
    let ids: Vec<usize> = (0..source.len()).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    ClassifierStage {
        inputs: source.features(),
        ids: &ids,
        labels: &labels,
        batch_size: config.batch_size,
        epochs: config.epochs,
        lr_other: config.lr,
        lr_classifier: config.lr,
    }
    .run(&mut params, &mut w, &mut rng)?;
    Ok(params)
}

/// Pseudo labels for target features given their Jaccard distances.
/// k-means clusters the features directly; the density methods use `jaccard`.
pub fn cluster_target(
    features: &FeatureMatrix,
    jaccard: &Matrix,
    config: &AdaptConfig,
    kmeans_k: usize,
    iteration: usize,
) -> Result<PseudoLabeling> {
    match config.clustering {
        ClusteringMethod::Hdbscan => hdbscan(jaccard, config.s_min),
        ClusteringMethod::Dbscan => {
            let eps = config
                .dbscan_eps
                .unwrap_or_else(|| default_eps(jaccard, config.s_min, config.dbscan_quantile));
            dbscan(jaccard, eps, config.s_min)
        }
        ClusteringMethod::Kmeans => kmeans(
            features,
            kmeans_k.min(features.rows()),
            config.seed.wrapping_add(iteration as u64),
        ),
    }
}

/// Rows `entries ++ positives ++ negatives`, with triplets rewritten to index
/// into that stacked batch.
fn stack_triplets(
    entries: &[usize],
    triplets: &[RankedTriplet],
) -> (Vec<usize>, Vec<RankedTriplet>) {
    let b = entries.len();
    let mut rows = entries.to_vec();
    rows.extend(triplets.iter().map(|t| t.positive));
    rows.extend(triplets.iter().map(|t| t.negative));
    let local = triplets
        .iter()
        .enumerate()
        .map(|(i, t)| RankedTriplet {
            anchor: i,
            positive: b + i,
            negative: 2 * b + i,
            ..*t
        })
        .collect();
    (rows, local)
}

fn conservative_stage(
    params: &mut EmbedderParams,
    inputs: &Matrix,
    labeling: &PseudoLabeling,
    ranking: &RankingIndex,
    config: &AdaptConfig,
    factor: f64,
    rng: &mut impl Rng,
) -> Result<f64> {
    let members = labeling.members();
    let p = config.p.min(members.len());
    let selected: usize = members.iter().map(Vec::len).sum();
    let per_epoch = selected.div_ceil(p * config.k);
    let mut opt = OptimizerState::new(
        params,
        config.lr.conservative_backbone * factor,
        config.lr.conservative_embedding * factor,
    );
    let (mut total, mut steps) = (0.0, 0usize);
    for _ in 0..config.epochs_conservative * per_epoch {
        let batch = pk_sample_with(&members, p, config.k, rng)?;
        let triplets = select_rtl_triplets_with(&batch.entries, ranking, config.eta, rng)?;
        let (rows, local) = stack_triplets(&batch.entries, &triplets);
        let (raw, cache) = params.forward(&inputs.select_rows(&rows))?;
        let norm = normalize_rows(&raw)?;
        let b = batch.len();
        let head = norm.features.select_rows(&(0..b).collect::<Vec<_>>());
        let ctl = ctl_loss(&head, &batch.labels(), config.margin)?.padded(rows.len())?;
        let rtl = rtl_loss(&norm.features, &local, config.margin, config.eta)?;
        let loss = conservative_loss(&ctl, &rtl, config.lambda)?;
        let grads = params.backward(&cache, &norm.backward(&loss.grad)?)?;
        sgd_step(params, &grads, &mut opt)?;
        total += loss.value;
        steps += 1;
    }
    Ok(if steps == 0 {
        0.0
    } else {
        total / steps as f64
    })
}

/// `config.kmeans_k`, or else the number of distinct source identities.
pub fn kmeans_k_for(config: &AdaptConfig, source: &Dataset) -> usize {
    config.kmeans_k.unwrap_or_else(|| {
        source
            .identities()
            .map(|ids| ids.into_iter().collect::<BTreeSet<_>>().len())
            .unwrap_or(1)
    })
}

/// Alternating self-training on the unlabeled `target`, starting from
/// `initial` (normally the source-pretrained embedder). Target identities and
/// the optional evaluation split are used for logging only.
pub fn run_past(
    source: &Dataset,
    target: &Dataset,
    initial: &EmbedderParams,
    config: &AdaptConfig,
    eval: Option<EvalSplit<'_>>,
) -> Result<(EmbedderParams, Vec<IterationLog>)> {
    config.validate()?;
    let mut params = initial.clone();
    let mut logs = Vec::with_capacity(config.max_iterations);
    if config.max_iterations == 0 {
        return Ok((params, logs));
    }
    let n = target.len();
    if 2 * config.eta >= n {
        return Err(Error::EtaTooLarge { eta: config.eta, n });
    }
    let kmeans_k = kmeans_k_for(config, source);
    let truth = target.identities();
    let rerank = RerankParams {
        k1: config.k1,
        k2: config.k2,
        jaccard_blend: config.jaccard_blend,
    }
    .clamped(n);
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    for iteration in 1..=config.max_iterations {
        let factor = config.lr_scale * config.lr.factor(iteration);
        let features = extract_features(&params, target)?;
        let jaccard = jaccard_matrix(&pairwise_euclidean(&features), &rerank)?;
        let ranking = ranking_matrix(&jaccard);
        let labeling = cluster_target(&features, jaccard.as_matrix(), config, kmeans_k, iteration)?;
        if labeling.num_clusters() == 0 {
            return Err(Error::EmptySelection { iteration });
        }
        let pseudo_accuracy = match &truth {
            Some(t) => Some(pseudo_label_accuracy(&labeling, t)?),
            None => None,
        };
        let (mut cons, mut prom) = (f64::NAN, f64::NAN);
        // a single cluster gives no negatives and a one-class softmax, so
        // there is nothing to learn from this iteration
        if labeling.num_clusters() >= 2 {
            cons = conservative_stage(
                &mut params,
                target.features(),
                &labeling,
                &ranking,
                config,
                factor,
                &mut rng,
            )?;
            if config.stages == Stages::Full {
                let sel = labeling.selected();
                // means over clustered samples only; noise rows are ignored by cluster_means
                let fu = extract_features(&params, target)?;
                let mut w = init_classifier(&cluster_means(&fu, &labeling)?).w;
                prom = ClassifierStage {
                    inputs: target.features(),
                    ids: &sel.ids,
                    labels: &sel.labels,
                    batch_size: config.p * config.k,
                    epochs: config.epochs_promoting,
                    lr_other: config.lr.promoting_other * factor,
                    lr_classifier: config.lr.promoting_classifier * factor,
                }
                .run(&mut params, &mut w, &mut rng)?;
            }
        }
        let (rank1, map) = match eval {
            Some(split) => {
                let (r, m) = split.score(&params)?;
                (Some(r), Some(m))
            }
            None => (None, None),
        };
        logs.push(IterationLog {
            iteration,
            clusters: labeling.num_clusters(),
            selected: labeling.selected().len(),
            selection_ratio: selection_ratio(&labeling),
            pseudo_accuracy,
            rank1,
            map,
            conservative_loss: cons,
            promoting_loss: prom,
        });
    }
    Ok((params, logs))
}
