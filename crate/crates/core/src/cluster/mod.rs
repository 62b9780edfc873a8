//! Pseudo-labelling by clustering.
//!
//! HDBSCAN and DBSCAN consume a precomputed distance matrix (normally the
//! Jaccard matrix); k-means works on feature vectors directly.

mod dbscan;
mod hdbscan;
mod kmeans;

use std::io::Write;

pub use dbscan::{dbscan, default_eps};
pub use hdbscan::{condensed_tree, hdbscan, CondensedCluster, CondensedTree};
pub use kmeans::{kmeans, kmeans_fit, KMeansFit};

use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::store::FeatureMatrix;

pub const NOISE: i32 = -1;

/// Cluster id per sample (`-1` for noise); ids are dense `0..C`, numbered by
/// first appearance.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PseudoLabeling {
    labels: Vec<i32>,
    num_clusters: usize,
}

impl PseudoLabeling {
    /// Canonicalizes arbitrary labels: negative values become noise, the rest
    /// are renumbered densely in order of first appearance.
    pub fn from_raw(raw: &[i64]) -> Self {
        let mut map: Vec<(i64, i32)> = Vec::new();
        let labels = raw
            .iter()
            .map(|&r| {
                if r < 0 {
                    return NOISE;
                }
                if let Some(&(_, id)) = map.iter().find(|(k, _)| *k == r) {
                    id
                } else {
                    let id = map.len() as i32;
                    map.push((r, id));
                    id
                }
            })
            .collect();
        Self {
            labels,
            num_clusters: map.len(),
        }
    }

    pub fn all_noise(n: usize) -> Self {
        Self {
            labels: vec![NOISE; n],
            num_clusters: 0,
        }
    }

    pub fn labels(&self) -> &[i32] {
        &self.labels
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn num_clusters(&self) -> usize {
        self.num_clusters
    }

    pub fn label(&self, i: usize) -> Option<usize> {
        let l = self.labels[i];
        (l >= 0).then_some(l as usize)
    }

    pub fn cluster_sizes(&self) -> Vec<usize> {
        let mut sizes = vec![0; self.num_clusters];
        for l in self.labels.iter().filter(|&&l| l >= 0) {
            sizes[*l as usize] += 1;
        }
        sizes
    }

    /// Member ids of each cluster, ascending.
    pub fn members(&self) -> Vec<Vec<usize>> {
        let mut m = vec![Vec::new(); self.num_clusters];
        for (i, l) in self.labels.iter().enumerate() {
            if *l >= 0 {
                m[*l as usize].push(i);
            }
        }
        m
    }

    pub fn selected(&self) -> SelectedTrainingSet {
        let (ids, labels) = self
            .labels
            .iter()
            .enumerate()
            .filter(|(_, l)| **l >= 0)
            .map(|(i, l)| (i, *l as usize))
            .unzip();
        SelectedTrainingSet { ids, labels }
    }

    pub fn write_csv_to(&self, writer: impl Write) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(["id", "pseudo_label"])?;
        for (i, l) in self.labels.iter().enumerate() {
            w.write_record([i.to_string(), l.to_string()])?;
        }
        w.flush()?;
        Ok(())
    }
}

/// The non-noise samples and their pseudo labels.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SelectedTrainingSet {
    pub ids: Vec<usize>,
    pub labels: Vec<usize>,
}

impl SelectedTrainingSet {
    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }
}

/// Mean feature vector of every cluster (`C x d`), noise excluded.
pub fn cluster_means(features: &FeatureMatrix, labeling: &PseudoLabeling) -> Result<Matrix> {
    if features.rows() != labeling.len() {
        return Err(Error::ShapeMismatch(format!(
            "{} feature rows for {} labels",
            features.rows(),
            labeling.len()
        )));
    }
    let c = labeling.num_clusters();
    let mut sums = Matrix::zeros(c, features.cols());
    let mut counts = vec![0usize; c];
    for (i, row) in features.iter_rows().enumerate() {
        if let Some(l) = labeling.label(i) {
            counts[l] += 1;
            for (s, v) in sums.row_mut(l).iter_mut().zip(row) {
                *s += v;
            }
        }
    }
    for (l, &count) in counts.iter().enumerate() {
        if count == 0 {
            return Err(Error::EmptyCluster(l));
        }
        sums.row_mut(l).iter_mut().for_each(|s| *s /= count as f64);
    }
    Ok(sums)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ClusteringMethod {
    #[default]
    Hdbscan,
    Dbscan,
    Kmeans,
}

impl std::str::FromStr for ClusteringMethod {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "hdbscan" => Ok(Self::Hdbscan),
            "dbscan" => Ok(Self::Dbscan),
            "kmeans" | "k-means" => Ok(Self::Kmeans),
            other => Err(Error::Config(format!(
                "unknown clustering method `{other}`"
            ))),
        }
    }
}

impl std::fmt::Display for ClusteringMethod {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::Hdbscan => "hdbscan",
            Self::Dbscan => "dbscan",
            Self::Kmeans => "kmeans",
        })
    }
}
