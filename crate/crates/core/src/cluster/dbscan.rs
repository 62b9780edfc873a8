use std::collections::VecDeque;

use super::{PseudoLabeling, NOISE};
use crate::error::{Error, Result};
use crate::store::DistanceMatrix;

/// DBSCAN over a precomputed distance matrix.
///
/// A point is core when at least `min_samples` points (itself included) lie
/// within `eps`. Border points join the first cluster that reaches them.
/// Clusters that end up smaller than `min_samples` because their border
/// points were claimed earlier are returned as noise.
pub fn dbscan(dist: &DistanceMatrix, eps: f64, min_samples: usize) -> Result<PseudoLabeling> {
    if !(eps > 0.0 && eps.is_finite()) {
        return Err(Error::InvalidEps(eps));
    }
    if min_samples == 0 {
        return Err(Error::InvalidMinSamples(min_samples));
    }
    if dist.rows() != dist.cols() {
        return Err(Error::ShapeMismatch(format!(
            "distance matrix is {}x{}",
            dist.rows(),
            dist.cols()
        )));
    }
    let n = dist.rows();
    let neighbors: Vec<Vec<usize>> = (0..n)
        .map(|i| (0..n).filter(|&j| dist[(i, j)] <= eps).collect())
        .collect();
    let is_core: Vec<bool> = neighbors.iter().map(|nb| nb.len() >= min_samples).collect();

    let mut raw = vec![NOISE as i64; n];
    let mut next = 0i64;
    let mut queue = VecDeque::new();
    for start in 0..n {
        if raw[start] != NOISE as i64 || !is_core[start] {
            continue;
        }
        raw[start] = next;
        queue.push_back(start);
        while let Some(p) = queue.pop_front() {
            if !is_core[p] {
                continue;
            }
            for &q in &neighbors[p] {
                if raw[q] == NOISE as i64 {
                    raw[q] = next;
                    queue.push_back(q);
                }
            }
        }
        next += 1;
    }

    let mut sizes = vec![0usize; next as usize];
    for &r in raw.iter().filter(|&&r| r >= 0) {
        sizes[r as usize] += 1;
    }
    for r in raw.iter_mut() {
        if *r >= 0 && sizes[*r as usize] < min_samples {
            *r = NOISE as i64;
        }
    }
    Ok(PseudoLabeling::from_raw(&raw))
}

/// The `quantile` (linear interpolation) of every sample's distance to its
/// `min_samples`-th nearest neighbour, self included.
pub fn default_eps(dist: &DistanceMatrix, min_samples: usize, quantile: f64) -> f64 {
    let n = dist.rows();
    if n == 0 {
        return f64::NAN;
    }
    let mut kth: Vec<f64> = (0..n)
        .map(|i| {
            let mut row = dist.row(i).to_vec();
            row.sort_by(f64::total_cmp);
            row[min_samples.saturating_sub(1).min(n - 1)]
        })
        .collect();
    kth.sort_by(f64::total_cmp);
    let pos = quantile.clamp(0.0, 1.0) * (n - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    kth[lo] + (kth[hi] - kth[lo]) * (pos - lo as f64)
}
