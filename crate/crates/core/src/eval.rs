//! Retrieval metrics (CMC, mAP) under cosine distance, and pseudo-label quality.

use std::collections::BTreeMap;
use std::io::Write;

use crate::cluster::PseudoLabeling;
use crate::error::{Error, Result};
use crate::model::EmbedderParams;
use crate::store::{cosine_distance, Dataset, FeatureMatrix};
use crate::trainer::extract_features;

#[derive(Debug, Clone, PartialEq)]
pub struct RetrievalResult {
    /// Probability that a true match appears within the first `r` results.
    pub cmc: BTreeMap<usize, f64>,
    pub map_score: f64,
    /// Queries that had at least one valid match.
    pub evaluated: usize,
    /// Queries skipped for lack of any valid match.
    pub skipped: usize,
}

impl RetrievalResult {
    pub fn rank1(&self) -> f64 {
        self.cmc.get(&1).copied().unwrap_or(f64::NAN)
    }

    pub fn write_csv_to(&self, writer: impl Write) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(["metric", "rank", "value"])?;
        for (r, v) in &self.cmc {
            w.write_record(["cmc".to_string(), r.to_string(), v.to_string()])?;
        }
        w.write_record(["map".to_string(), String::new(), self.map_score.to_string()])?;
        w.write_record([
            "skipped".to_string(),
            String::new(),
            self.skipped.to_string(),
        ])?;
        w.flush()?;
        Ok(())
    }
}

/// Labels describing one side of a retrieval split.
#[derive(Debug, Clone, Copy)]
pub struct Tags<'a> {
    pub identities: &'a [u32],
    pub cameras: Option<&'a [u32]>,
}

/// Mean of precision at each relevant position of a ranked relevance list.
pub fn average_precision(relevant: &[bool]) -> f64 {
    let mut hits = 0usize;
    let mut sum = 0.0;
    for (pos, &rel) in relevant.iter().enumerate() {
        if rel {
            hits += 1;
            sum += hits as f64 / (pos + 1) as f64;
        }
    }
    if hits == 0 {
        0.0
    } else {
        sum / hits as f64
    }
}

pub fn evaluate(
    query: &Dataset,
    gallery: &Dataset,
    params: &EmbedderParams,
    ranks: &[usize],
) -> Result<RetrievalResult> {
    let qf = extract_features(params, query)?;
    let gf = extract_features(params, gallery)?;
    evaluate_datasets(&qf, query, &gf, gallery, ranks)
}

/// Evaluates precomputed features against the labels of two datasets.
pub fn evaluate_datasets(
    qf: &FeatureMatrix,
    query: &Dataset,
    gf: &FeatureMatrix,
    gallery: &Dataset,
    ranks: &[usize],
) -> Result<RetrievalResult> {
    let q_ids = query.identities().ok_or(Error::MissingLabels)?;
    let g_ids = gallery.identities().ok_or(Error::MissingLabels)?;
    let q_cams = query.cameras();
    let g_cams = gallery.cameras();
    let cams_known = q_cams.is_some() && g_cams.is_some();
    evaluate_features(
        qf,
        Tags {
            identities: &q_ids,
            cameras: q_cams.as_deref().filter(|_| cams_known),
        },
        gf,
        Tags {
            identities: &g_ids,
            cameras: g_cams.as_deref().filter(|_| cams_known),
        },
        ranks,
    )
}

/// Gallery entries sharing both identity and camera with a query are ignored.
/// Ties in distance are broken by gallery index.
pub fn evaluate_features(
    qf: &FeatureMatrix,
    q: Tags<'_>,
    gf: &FeatureMatrix,
    g: Tags<'_>,
    ranks: &[usize],
) -> Result<RetrievalResult> {
    if q.identities.len() != qf.rows() || g.identities.len() != gf.rows() {
        return Err(Error::ShapeMismatch(
            "identity count vs feature rows".into(),
        ));
    }
    if let Some(&r) = ranks.iter().find(|&&r| r == 0) {
        return Err(Error::InvalidK(format!("CMC rank {r}; ranks start at 1")));
    }
    let dist = cosine_distance(qf, gf)?;
    let mut hits: BTreeMap<usize, usize> = ranks.iter().map(|&r| (r, 0)).collect();
    let (mut ap_sum, mut evaluated, mut skipped) = (0.0, 0usize, 0usize);
    let mut order: Vec<usize> = Vec::with_capacity(gf.rows());
    for i in 0..qf.rows() {
        let row = dist.row(i);
        order.clear();
        order.extend((0..gf.rows()).filter(|&j| match (q.cameras, g.cameras) {
            (Some(qc), Some(gc)) => !(g.identities[j] == q.identities[i] && gc[j] == qc[i]),
            _ => true,
        }));
        order.sort_by(|&a, &b| row[a].total_cmp(&row[b]).then(a.cmp(&b)));
        let relevant: Vec<bool> = order
            .iter()
            .map(|&j| g.identities[j] == q.identities[i])
            .collect();
        let Some(first) = relevant.iter().position(|&r| r) else {
            skipped += 1;
            continue;
        };
        evaluated += 1;
        ap_sum += average_precision(&relevant);
        for (&r, h) in hits.iter_mut() {
            if first < r {
                *h += 1;
            }
        }
    }
    if evaluated == 0 {
        return Err(Error::NoValidGallery);
    }
    Ok(RetrievalResult {
        cmc: hits
            .into_iter()
            .map(|(r, h)| (r, h as f64 / evaluated as f64))
            .collect(),
        map_score: ap_sum / evaluated as f64,
        evaluated,
        skipped,
    })
}

/// Fraction of clustered samples whose identity equals the majority identity
/// of their cluster. Noise is ignored.
pub fn pseudo_label_accuracy(labeling: &PseudoLabeling, truth: &[u32]) -> Result<f64> {
    if truth.len() != labeling.len() {
        return Err(Error::ShapeMismatch(format!(
            "{} identities for {} labels",
            truth.len(),
            labeling.len()
        )));
    }
    let mut counts: Vec<BTreeMap<u32, usize>> = vec![BTreeMap::new(); labeling.num_clusters()];
    for (i, &id) in truth.iter().enumerate() {
        if let Some(c) = labeling.label(i) {
            *counts[c].entry(id).or_default() += 1;
        }
    }
    let clustered: usize = counts.iter().flat_map(|m| m.values()).sum();
    if clustered == 0 {
        return Err(Error::NoClusteredSamples);
    }
    let majority: usize = counts
        .iter()
        .map(|m| m.values().copied().max().unwrap_or(0))
        .sum();
    Ok(majority as f64 / clustered as f64)
}

/// Fraction of samples assigned to a cluster.
pub fn selection_ratio(labeling: &PseudoLabeling) -> f64 {
    if labeling.is_empty() {
        return 0.0;
    }
    labeling.labels().iter().filter(|&&l| l >= 0).count() as f64 / labeling.len() as f64
}
