use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::PseudoLabeling;
use crate::error::{Error, Result};
use crate::matrix::{euclidean, Matrix};
use crate::store::FeatureMatrix;

const MAX_ITER: usize = 300;
const TOL: f64 = 1e-6;

#[derive(Debug, Clone)]
pub struct KMeansFit {
    /// Raw assignment; row `assignment[i]` of `centroids` is sample i's centre.
    pub assignment: Vec<usize>,
    pub centroids: Matrix,
    /// Inertia after every assignment step.
    pub inertia_trace: Vec<f64>,
}

impl KMeansFit {
    pub fn inertia(&self) -> f64 {
        self.inertia_trace.last().copied().unwrap_or(0.0)
    }
}

fn sq(a: &[f64], b: &[f64]) -> f64 {
    let d = euclidean(a, b);
    d * d
}

fn plus_plus_init(features: &FeatureMatrix, k: usize, rng: &mut impl Rng) -> Matrix {
    let n = features.rows();
    let mut chosen = vec![rng.random_range(0..n)];
    let mut closest: Vec<f64> = (0..n)
        .map(|i| sq(features.row(i), features.row(chosen[0])))
        .collect();
    while chosen.len() < k {
        let next = match WeightedIndex::new(&closest) {
            Ok(dist) => dist.sample(rng),
            // every remaining point coincides with a centre
            Err(_) => (0..n).find(|i| !chosen.contains(i)).unwrap_or(0),
        };
        chosen.push(next);
        for (i, c) in closest.iter_mut().enumerate() {
            *c = c.min(sq(features.row(i), features.row(next)));
        }
    }
    features.select_rows(&chosen)
}

fn assign(features: &FeatureMatrix, centroids: &Matrix) -> (Vec<usize>, Vec<f64>) {
    features
        .iter_rows()
        .map(|row| {
            let mut best = (0, f64::INFINITY);
            for (c, cen) in centroids.iter_rows().enumerate() {
                let d = sq(row, cen);
                if d < best.1 {
                    best = (c, d);
                }
            }
            best
        })
        .unzip()
}

/// Lloyd's algorithm with k-means++ seeding.
pub fn kmeans_fit(features: &FeatureMatrix, k: usize, seed: u64) -> Result<KMeansFit> {
    let n = features.rows();
    if k == 0 || k > n {
        return Err(Error::InvalidK(format!("k = {k} with {n} samples")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut centroids = plus_plus_init(features, k, &mut rng);
    let mut trace = Vec::new();
    let mut assignment;
    let mut iter = 0;
    loop {
        let (mut a, mut dists) = assign(features, &centroids);
        // an empty cluster takes over the point farthest from its centre
        let mut counts = vec![0usize; k];
        a.iter().for_each(|&c| counts[c] += 1);
        for c in 0..k {
            if counts[c] == 0 {
                let far = (0..n)
                    .filter(|&i| counts[a[i]] > 1)
                    .max_by(|&x, &y| dists[x].total_cmp(&dists[y]).then(y.cmp(&x)))
                    .expect("k <= n leaves a shared cluster");
                counts[a[far]] -= 1;
                counts[c] = 1;
                a[far] = c;
                dists[far] = 0.0;
                centroids.row_mut(c).copy_from_slice(features.row(far));
            }
        }
        trace.push(dists.iter().sum());
        assignment = a;

        let mut next = Matrix::zeros(k, features.cols());
        for (i, &c) in assignment.iter().enumerate() {
            for (s, v) in next.row_mut(c).iter_mut().zip(features.row(i)) {
                *s += v;
            }
        }
        for c in 0..k {
            let cnt = counts[c] as f64;
            next.row_mut(c).iter_mut().for_each(|s| *s /= cnt);
        }
        let shift = (0..k)
            .map(|c| euclidean(next.row(c), centroids.row(c)))
            .fold(0.0, f64::max);
        centroids = next;
        iter += 1;
        if shift < TOL || iter >= MAX_ITER {
            break;
        }
    }
    Ok(KMeansFit {
        assignment,
        centroids,
        inertia_trace: trace,
    })
}

/// k-means pseudo labels; every sample is assigned.
pub fn kmeans(features: &FeatureMatrix, k: usize, seed: u64) -> Result<PseudoLabeling> {
    let fit = kmeans_fit(features, k, seed)?;
    let raw: Vec<i64> = fit.assignment.iter().map(|&c| c as i64).collect();
    Ok(PseudoLabeling::from_raw(&raw))
}
