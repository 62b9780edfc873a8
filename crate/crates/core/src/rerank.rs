//! k-reciprocal encoding: Jaccard distances between neighbour sets and the
//! per-sample ranking built from them.
//!
//! Neighbour lists always place the sample itself at rank 0, so `knn(i, k)`
//! holds `k + 1` ids. Remaining ties are broken by ascending sample id.

use std::io::Write;

use crate::error::{Error, Result};
use crate::store::DistanceMatrix;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RerankParams {
    pub k1: usize,
    pub k2: usize,
    /// Weight of the original distance mixed into the Jaccard distance.
    pub jaccard_blend: f64,
}

impl Default for RerankParams {
    fn default() -> Self {
        Self {
            k1: 20,
            k2: 6,
            jaccard_blend: 0.0,
        }
    }
}

impl RerankParams {
    /// Shrinks `k1`/`k2` so that `0 < k2 <= k1 < n` holds.
    pub fn clamped(self, n: usize) -> Self {
        let k1 = self.k1.min(n.saturating_sub(1)).max(1);
        Self {
            k1,
            k2: self.k2.clamp(1, k1),
            ..self
        }
    }
}

/// Symmetric `N x N` matrix of Jaccard distances in `[0, 1]`, zero diagonal.
#[derive(Debug, Clone, PartialEq)]
pub struct JaccardMatrix(DistanceMatrix);

impl JaccardMatrix {
    pub fn len(&self) -> usize {
        self.0.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.0.rows() == 0
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.0[(i, j)]
    }

    pub fn as_matrix(&self) -> &DistanceMatrix {
        &self.0
    }

    pub fn into_matrix(self) -> DistanceMatrix {
        self.0
    }

    /// Writes `i,j,value` for the strict upper triangle.
    pub fn write_csv_to(&self, writer: impl Write) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(["i", "j", "value"])?;
        let n = self.len();
        for i in 0..n {
            for j in (i + 1)..n {
                w.write_record([i.to_string(), j.to_string(), self.get(i, j).to_string()])?;
            }
        }
        w.flush()?;
        Ok(())
    }
}

/// Row-wise ranking of a Jaccard matrix: `order[i]` lists sample ids from
/// nearest to farthest, `scores[i]` the matching distances.
#[derive(Debug, Clone, PartialEq)]
pub struct RankingIndex {
    n: usize,
    order: Vec<usize>,
    scores: Vec<f64>,
}

impl RankingIndex {
    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    pub fn order(&self, i: usize) -> &[usize] {
        &self.order[i * self.n..(i + 1) * self.n]
    }

    pub fn scores(&self, i: usize) -> &[f64] {
        &self.scores[i * self.n..(i + 1) * self.n]
    }

    /// Sample at ranking position `rank` relative to `anchor`.
    pub fn at(&self, anchor: usize, rank: usize) -> usize {
        self.order[anchor * self.n + rank]
    }
}

/// Ids of row `i` sorted by ascending distance, with `i` first.
pub(crate) fn sorted_neighbors(row: &[f64], i: usize) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..row.len()).filter(|&j| j != i).collect();
    idx.sort_by(|&a, &b| row[a].total_cmp(&row[b]).then(a.cmp(&b)));
    idx.insert(0, i);
    idx
}

fn check_square(dist: &DistanceMatrix) -> Result<usize> {
    if dist.rows() != dist.cols() {
        return Err(Error::ShapeMismatch(format!(
            "distance matrix is {}x{}",
            dist.rows(),
            dist.cols()
        )));
    }
    Ok(dist.rows())
}

/// Full neighbour ordering of every row.
struct Neighbors {
    order: Vec<Vec<usize>>,
}

impl Neighbors {
    fn new(dist: &DistanceMatrix) -> Self {
        let order = (0..dist.rows())
            .map(|i| sorted_neighbors(dist.row(i), i))
            .collect();
        Self { order }
    }

    fn knn(&self, i: usize, k: usize) -> &[usize] {
        &self.order[i][..=k]
    }

    /// `R(i, k)`: members of `knn(i, k)` that also have `i` among their own `k` neighbours.
    fn reciprocal(&self, i: usize, k: usize) -> Vec<usize> {
        let mut r: Vec<usize> = self
            .knn(i, k)
            .iter()
            .copied()
            .filter(|&j| self.knn(j, k).contains(&i))
            .collect();
        r.sort_unstable();
        r
    }

    /// `R*(i, k1)`: the reciprocal set expanded by the half-size reciprocal
    /// sets of its members that overlap it by at least two thirds.
    fn expanded_reciprocal(&self, i: usize, k1: usize) -> Vec<usize> {
        let base = self.reciprocal(i, k1);
        let half = k1.div_ceil(2);
        let mut out = base.clone();
        for &q in &base {
            let cand = self.reciprocal(q, half);
            let overlap = cand
                .iter()
                .filter(|c| base.binary_search(c).is_ok())
                .count();
            if 3 * overlap >= 2 * cand.len() {
                out.extend_from_slice(&cand);
            }
        }
        out.sort_unstable();
        out.dedup();
        out
    }
}

fn validate_k1(k1: usize, n: usize) -> Result<()> {
    if k1 == 0 || k1 >= n {
        return Err(Error::InvalidK(format!("k1 = {k1} with {n} samples")));
    }
    Ok(())
}

/// `R*(i, k1)` as a sorted list of sample ids.
pub fn k_reciprocal_set(dist: &DistanceMatrix, i: usize, k1: usize) -> Result<Vec<usize>> {
    let n = check_square(dist)?;
    validate_k1(k1, n)?;
    if i >= n {
        return Err(Error::ShapeMismatch(format!("sample {i} out of {n}")));
    }
    Ok(Neighbors::new(dist).expanded_reciprocal(i, k1))
}

/// Sparse encodings `V_i` after local query expansion, as sorted `(id, weight)` lists.
pub fn reciprocal_encodings(
    dist: &DistanceMatrix,
    params: &RerankParams,
) -> Result<Vec<Vec<(usize, f64)>>> {
    let n = check_square(dist)?;
    validate_k1(params.k1, n)?;
    if params.k2 == 0 || params.k2 > params.k1 {
        return Err(Error::InvalidK(format!(
            "k2 = {} must satisfy 0 < k2 <= k1 = {}",
            params.k2, params.k1
        )));
    }
    let nb = Neighbors::new(dist);
    let raw: Vec<Vec<(usize, f64)>> = (0..n)
        .map(|i| {
            nb.expanded_reciprocal(i, params.k1)
                .into_iter()
                .map(|j| (j, (-dist[(i, j)]).exp()))
                .filter(|&(_, w)| w > 0.0)
                .collect()
        })
        .collect();

    let mut acc = vec![0.0; n];
    let mut touched = Vec::new();
    let encodings = (0..n)
        .map(|i| {
            let expand = nb.knn(i, params.k2);
            for &q in expand {
                for &(m, w) in &raw[q] {
                    if acc[m] == 0.0 {
                        touched.push(m);
                    }
                    acc[m] += w;
                }
            }
            touched.sort_unstable();
            let scale = expand.len() as f64;
            let v = touched
                .drain(..)
                .map(|m| {
                    let w = acc[m] / scale;
                    acc[m] = 0.0;
                    (m, w)
                })
                .collect();
            v
        })
        .collect();
    Ok(encodings)
}

/// Jaccard distance matrix of the k-reciprocal encodings:
/// `d(i, j) = 1 - sum_m min(V_i[m], V_j[m]) / sum_m max(V_i[m], V_j[m])`.
pub fn jaccard_matrix(dist: &DistanceMatrix, params: &RerankParams) -> Result<JaccardMatrix> {
    let enc = reciprocal_encodings(dist, params)?;
    let n = enc.len();
    let totals: Vec<f64> = enc.iter().map(|v| v.iter().map(|(_, w)| w).sum()).collect();

    let mut inverted: Vec<Vec<(usize, f64)>> = vec![Vec::new(); n];
    for (i, v) in enc.iter().enumerate() {
        for &(m, w) in v {
            inverted[m].push((i, w));
        }
    }

    let mut out = DistanceMatrix::zeros(n, n);
    let mut min_sum = vec![0.0; n];
    for i in 0..n {
        min_sum.iter_mut().for_each(|v| *v = 0.0);
        for &(m, wi) in &enc[i] {
            for &(j, wj) in &inverted[m] {
                if j > i {
                    min_sum[j] += wi.min(wj);
                }
            }
        }
        for j in (i + 1)..n {
            let inter = min_sum[j];
            let union = totals[i] + totals[j] - inter;
            let mut d = if union > 0.0 {
                1.0 - inter / union
            } else {
                1.0
            };
            d = d.clamp(0.0, 1.0);
            if params.jaccard_blend > 0.0 {
                d = (1.0 - params.jaccard_blend) * d + params.jaccard_blend * dist[(i, j)];
            }
            out[(i, j)] = d;
            out[(j, i)] = d;
        }
    }
    Ok(JaccardMatrix(out))
}

/// Sorts every row of the Jaccard matrix (self first, then ascending distance, ties by id).
pub fn ranking_matrix(jaccard: &JaccardMatrix) -> RankingIndex {
    let n = jaccard.len();
    let mut order = Vec::with_capacity(n * n);
    let mut scores = Vec::with_capacity(n * n);
    for i in 0..n {
        let row = jaccard.0.row(i);
        let sorted = sorted_neighbors(row, i);
        scores.extend(sorted.iter().map(|&j| row[j]));
        order.extend(sorted);
    }
    RankingIndex { n, order, scores }
}

/// Wraps an arbitrary symmetric matrix, e.g. for clustering tests.
impl TryFrom<DistanceMatrix> for JaccardMatrix {
    type Error = Error;

    fn try_from(m: DistanceMatrix) -> Result<Self> {
        let n = check_square(&m)?;
        for i in 0..n {
            if m[(i, i)] != 0.0 {
                return Err(Error::ShapeMismatch(format!("non-zero diagonal at {i}")));
            }
            for j in 0..i {
                if (m[(i, j)] - m[(j, i)]).abs() > 1e-9 || !m[(i, j)].is_finite() {
                    return Err(Error::ShapeMismatch(format!("asymmetric at ({i}, {j})")));
                }
            }
        }
        Ok(Self(m))
    }
}
