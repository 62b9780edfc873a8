//! Datasets of embedding vectors and the basic distances over them.
//!
//! Features are dense and row-major. Identities and camera tags are optional,
//! so the same [`Dataset`] type carries a labelled source set, an unlabelled
//! target set, and the query/gallery evaluation splits.

use std::fs::File;
use std::io::{Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::matrix::{dot, euclidean, norm, Matrix};

/// N x d embedding matrix; rows are samples.
pub type FeatureMatrix = Matrix;
/// N x M matrix of pairwise distances.
pub type DistanceMatrix = Matrix;

const ZERO_NORM: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Sample {
    pub id: usize,
    pub identity: Option<u32>,
    pub camera: Option<u32>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    samples: Vec<Sample>,
    features: FeatureMatrix,
}

impl Dataset {
    /// Builds a dataset; sample ids must be exactly `0..N` in order.
    pub fn new(samples: Vec<Sample>, features: FeatureMatrix) -> Result<Self> {
        if samples.len() != features.rows() {
            return Err(Error::ShapeMismatch(format!(
                "{} samples but {} feature rows",
                samples.len(),
                features.rows()
            )));
        }
        if let Some((i, s)) = samples.iter().enumerate().find(|(i, s)| s.id != *i) {
            return Err(Error::ShapeMismatch(format!(
                "sample at position {i} has id {}",
                s.id
            )));
        }
        if let Some((row, col)) = features.first_non_finite() {
            return Err(Error::NonFinite { row, col });
        }
        Ok(Self { samples, features })
    }

    /// Convenience constructor from parallel label vectors.
    pub fn from_parts(
        features: FeatureMatrix,
        identities: Option<Vec<u32>>,
        cameras: Option<Vec<u32>>,
    ) -> Result<Self> {
        let n = features.rows();
        for (name, v) in [("identities", &identities), ("cameras", &cameras)] {
            if let Some(v) = v {
                if v.len() != n {
                    return Err(Error::ShapeMismatch(format!(
                        "{} {name} for {n} samples",
                        v.len()
                    )));
                }
            }
        }
        let samples = (0..n)
            .map(|id| Sample {
                id,
                identity: identities.as_ref().map(|v| v[id]),
                camera: cameras.as_ref().map(|v| v[id]),
            })
            .collect();
        Self::new(samples, features)
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.features.cols()
    }

    pub fn samples(&self) -> &[Sample] {
        &self.samples
    }

    pub fn features(&self) -> &FeatureMatrix {
        &self.features
    }

    /// Ground-truth identities, or `None` if any sample lacks one.
    pub fn identities(&self) -> Option<Vec<u32>> {
        self.samples.iter().map(|s| s.identity).collect()
    }

    pub fn cameras(&self) -> Option<Vec<u32>> {
        self.samples.iter().map(|s| s.camera).collect()
    }

    /// Same samples with new feature rows (e.g. embedder outputs).
    pub fn with_features(&self, features: FeatureMatrix) -> Result<Self> {
        Self::new(self.samples.clone(), features)
    }

    /// Sub-dataset of the given rows, re-indexed densely.
    pub fn subset(&self, rows: &[usize]) -> Result<Self> {
        let samples = rows
            .iter()
            .enumerate()
            .map(|(new_id, &r)| Sample {
                id: new_id,
                ..self.samples[r]
            })
            .collect();
        Self::new(samples, self.features.select_rows(rows))
    }

    pub fn read_csv(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        Self::read_csv_from(File::open(path)?).map_err(|e| match e {
            Error::Csv(err) => Error::Parse {
                path: path.to_path_buf(),
                msg: err.to_string(),
            },
            Error::Config(msg) => Error::Parse {
                path: path.to_path_buf(),
                msg,
            },
            other => other,
        })
    }

    /// Reads the `id,identity,camera,f0,...` format.
    pub fn read_csv_from(reader: impl Read) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new()
            .has_headers(true)
            .from_reader(reader);
        let headers = rdr.headers()?.clone();
        if headers.len() < 3
            || &headers[0] != "id"
            || &headers[1] != "identity"
            || &headers[2] != "camera"
        {
            return Err(Error::Config(
                "header must start with id,identity,camera".into(),
            ));
        }
        let dim = headers.len() - 3;
        let mut samples = Vec::new();
        let mut values = Vec::new();
        for (line, rec) in rdr.records().enumerate() {
            let rec = rec?;
            let field = |k: usize| rec.get(k).unwrap_or("");
            let bad = |what: &str| Error::Config(format!("record {line}: bad {what}"));
            let id: usize = field(0).parse().map_err(|_| bad("id"))?;
            let opt = |k: usize, what: &str| -> Result<Option<u32>> {
                let s = field(k);
                if s.is_empty() {
                    Ok(None)
                } else {
                    s.parse().map(Some).map_err(|_| bad(what))
                }
            };
            samples.push(Sample {
                id,
                identity: opt(1, "identity")?,
                camera: opt(2, "camera")?,
            });
            for k in 0..dim {
                values.push(field(3 + k).parse::<f64>().map_err(|_| bad("feature"))?);
            }
        }
        let features = Matrix::from_vec(samples.len(), dim, values)?;
        Self::new(samples, features)
    }

    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut f = File::create(path)?;
        self.write_csv_to(&mut f)?;
        f.flush()?;
        Ok(())
    }

    pub fn write_csv_to(&self, writer: impl Write) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        let mut header = vec!["id".to_string(), "identity".into(), "camera".into()];
        header.extend((0..self.dim()).map(|k| format!("f{k}")));
        w.write_record(&header)?;
        let opt = |v: Option<u32>| v.map_or_else(String::new, |x| x.to_string());
        for (s, row) in self.samples.iter().zip(self.features.iter_rows()) {
            let mut rec = vec![s.id.to_string(), opt(s.identity), opt(s.camera)];
            rec.extend(row.iter().map(|v| v.to_string()));
            w.write_record(&rec)?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Scales every row to unit Euclidean norm.
pub fn l2_normalize(features: &FeatureMatrix) -> Result<FeatureMatrix> {
    if let Some((row, col)) = features.first_non_finite() {
        return Err(Error::NonFinite { row, col });
    }
    let mut out = features.clone();
    for i in 0..out.rows() {
        let row = out.row_mut(i);
        let n = norm(row);
        if n < ZERO_NORM {
            return Err(Error::ZeroVectorRow { row: i });
        }
        row.iter_mut().for_each(|v| *v /= n);
    }
    Ok(out)
}

pub fn pairwise_euclidean(features: &FeatureMatrix) -> DistanceMatrix {
    let n = features.rows();
    let mut d = Matrix::zeros(n, n);
    for i in 0..n {
        for j in (i + 1)..n {
            let v = euclidean(features.row(i), features.row(j));
            d[(i, j)] = v;
            d[(j, i)] = v;
        }
    }
    d
}

/// `1 - cos(q, g)` for every query/gallery pair, clamped to `[0, 2]`.
pub fn cosine_distance(query: &FeatureMatrix, gallery: &FeatureMatrix) -> Result<DistanceMatrix> {
    if query.cols() != gallery.cols() {
        return Err(Error::ShapeMismatch(format!(
            "query dim {} vs gallery dim {}",
            query.cols(),
            gallery.cols()
        )));
    }
    let q = l2_normalize(query)?;
    let g = l2_normalize(gallery)?;
    Ok(Matrix::from_fn(q.rows(), g.rows(), |i, j| {
        (1.0 - dot(q.row(i), g.row(j))).clamp(0.0, 2.0)
    }))
}
