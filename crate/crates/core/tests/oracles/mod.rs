//! Slow, obviously-correct reference implementations used by the tests.
#![allow(dead_code)]

use past_core::loss::{conservative_loss, ctl_loss, rtl_loss, softmax_ce_loss};
use past_core::matrix::Matrix;
use past_core::model::{normalize_rows, EmbedderParams};
use past_core::sampling::RankedTriplet;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random_matrix(rng: &mut impl Rng, rows: usize, cols: usize) -> Matrix {
    Matrix::from_fn(rows, cols, |_, _| rng.random_range(-1.0..1.0))
}

pub fn naive_euclidean(f: &Matrix) -> Matrix {
    let n = f.rows();
    let mut d = Matrix::zeros(n, n);
    for i in 0..n {
        for j in 0..n {
            let mut s = 0.0;
            for k in 0..f.cols() {
                s += (f[(i, k)] - f[(j, k)]) * (f[(i, k)] - f[(j, k)]);
            }
            d[(i, j)] = s.sqrt();
        }
    }
    d
}

/// Ids ranked for `i`: itself first, then by distance, then by id. Keeps `k + 1`.
pub fn knn(dist: &Matrix, i: usize, k: usize) -> Vec<usize> {
    let mut ids: Vec<usize> = (0..dist.rows()).collect();
    ids.sort_by(|&a, &b| {
        (a != i)
            .cmp(&(b != i))
            .then(dist[(i, a)].partial_cmp(&dist[(i, b)]).unwrap())
            .then(a.cmp(&b))
    });
    ids.truncate(k + 1);
    ids
}

pub fn reciprocal(dist: &Matrix, i: usize, k: usize) -> Vec<usize> {
    let mut out: Vec<usize> = knn(dist, i, k)
        .into_iter()
        .filter(|&j| knn(dist, j, k).contains(&i))
        .collect();
    out.sort_unstable();
    out
}

pub fn expanded_reciprocal(dist: &Matrix, i: usize, k: usize) -> Vec<usize> {
    let base = reciprocal(dist, i, k);
    let half = k.div_ceil(2);
    let mut out = base.clone();
    for &q in &base {
        let rq = reciprocal(dist, q, half);
        let overlap = rq.iter().filter(|x| base.contains(x)).count();
        if 3 * overlap >= 2 * rq.len() {
            out.extend(rq);
        }
    }
    out.sort_unstable();
    out.dedup();
    out
}

/// Dense encodings with local query expansion, then fuzzy Jaccard by explicit
/// min/max sums over every coordinate.
pub fn naive_jaccard(dist: &Matrix, k1: usize, k2: usize) -> Matrix {
    let n = dist.rows();
    let raw: Vec<Vec<f64>> = (0..n)
        .map(|i| {
            let set = expanded_reciprocal(dist, i, k1);
            (0..n)
                .map(|j| {
                    if set.contains(&j) {
                        (-dist[(i, j)]).exp()
                    } else {
                        0.0
                    }
                })
                .collect()
        })
        .collect();
    let v: Vec<Vec<f64>> = (0..n)
        .map(|i| {
            let nb = knn(dist, i, k2);
            (0..n)
                .map(|m| nb.iter().map(|&q| raw[q][m]).sum::<f64>() / nb.len() as f64)
                .collect()
        })
        .collect();
    Matrix::from_fn(n, n, |i, j| {
        let (mut lo, mut hi) = (0.0, 0.0);
        for m in 0..n {
            lo += v[i][m].min(v[j][m]);
            hi += v[i][m].max(v[j][m]);
        }
        1.0 - lo / hi
    })
}

pub fn dist(f: &Matrix, a: usize, b: usize) -> f64 {
    (0..f.cols())
        .map(|k| (f[(a, k)] - f[(b, k)]).powi(2))
        .sum::<f64>()
        .sqrt()
}

/// Every same-label and different-label pair is visited for every anchor.
pub fn exhaustive_ctl(f: &Matrix, labels: &[usize], m: f64) -> f64 {
    let mut total = 0.0;
    for a in 0..f.rows() {
        let mut hardest_pos = f64::NEG_INFINITY;
        let mut hardest_neg = f64::INFINITY;
        for j in 0..f.rows() {
            if j == a {
                continue;
            }
            if labels[j] == labels[a] {
                hardest_pos = hardest_pos.max(dist(f, a, j));
            } else {
                hardest_neg = hardest_neg.min(dist(f, a, j));
            }
        }
        total += (m + hardest_pos - hardest_neg).max(0.0);
    }
    total
}

pub fn direct_rtl(f: &Matrix, triplets: &[RankedTriplet], m: f64, eta: usize) -> f64 {
    triplets
        .iter()
        .map(|t| {
            let gap = (t.pos_rank as f64 - t.neg_rank as f64).abs();
            (gap / eta as f64 * m + dist(f, t.anchor, t.positive) - dist(f, t.anchor, t.negative))
                .max(0.0)
        })
        .sum()
}

/// Central differences of `f` at `x`.
pub fn numeric_gradient(mut f: impl FnMut(&[f64]) -> f64, x: &[f64], h: f64) -> Vec<f64> {
    let mut x = x.to_vec();
    (0..x.len())
        .map(|i| {
            let orig = x[i];
            x[i] = orig + h;
            let up = f(&x);
            x[i] = orig - h;
            let down = f(&x);
            x[i] = orig;
            (up - down) / (2.0 * h)
        })
        .collect()
}

/// `|a - b| / max(|a|, |b|)` over whole vectors; zero when both vanish.
pub fn relative_error(a: &[f64], b: &[f64]) -> f64 {
    let norm = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
    let diff: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    let scale = norm(a).max(norm(b));
    if scale == 0.0 {
        0.0
    } else {
        norm(&diff) / scale
    }
}

/// Average precision by building every prefix of the ranked list.
pub fn brute_force_ap(relevant: &[bool]) -> f64 {
    let total = relevant.iter().filter(|&&r| r).count();
    if total == 0 {
        return 0.0;
    }
    let mut sum = 0.0;
    for k in 1..=relevant.len() {
        let prefix = &relevant[..k];
        if prefix[k - 1] {
            sum += prefix.iter().filter(|&&r| r).count() as f64 / k as f64;
        }
    }
    sum / total as f64
}

/// Majority-identity accuracy by counting with nested loops.
pub fn naive_accuracy(labels: &[i32], truth: &[u32]) -> Option<f64> {
    let clusters: Vec<i32> = {
        let mut c: Vec<i32> = labels.iter().copied().filter(|&l| l >= 0).collect();
        c.sort_unstable();
        c.dedup();
        c
    };
    let mut correct = 0usize;
    let mut total = 0usize;
    for c in clusters {
        let members: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] == c).collect();
        let best = members
            .iter()
            .map(|&i| members.iter().filter(|&&j| truth[j] == truth[i]).count())
            .max()
            .unwrap();
        correct += best;
        total += members.len();
    }
    (total > 0).then(|| correct as f64 / total as f64)
}

/// A condensed-tree cluster found by the brute-force recomputation.
#[derive(Debug, Clone)]
pub struct BruteCluster {
    pub members: Vec<usize>,
    pub birth_lambda: f64,
    pub stability: f64,
}

pub fn mutual_reachability(d: &Matrix, s_min: usize) -> Matrix {
    let n = d.rows();
    let core: Vec<f64> = (0..n)
        .map(|i| {
            let mut row: Vec<f64> = (0..n).map(|j| d[(i, j)]).collect();
            row.sort_by(|a, b| a.partial_cmp(b).unwrap());
            row[s_min - 1]
        })
        .collect();
    Matrix::from_fn(n, n, |a, b| d[(a, b)].max(core[a]).max(core[b]))
}

/// Connected components of `members` using only edges strictly below `t`.
fn components_below(mr: &Matrix, members: &[usize], t: f64) -> Vec<Vec<usize>> {
    let mut seen = vec![false; members.len()];
    let mut out = Vec::new();
    for s in 0..members.len() {
        if seen[s] {
            continue;
        }
        seen[s] = true;
        let mut comp = vec![members[s]];
        let mut frontier = vec![s];
        while let Some(x) = frontier.pop() {
            for y in 0..members.len() {
                if !seen[y] && mr[(members[x], members[y])] < t {
                    seen[y] = true;
                    comp.push(members[y]);
                    frontier.push(y);
                }
            }
        }
        comp.sort_unstable();
        out.push(comp);
    }
    out
}

/// Smallest threshold at which `members` is connected: the largest edge of
/// its minimum bottleneck spanning tree, found by scanning candidate edges.
fn bottleneck(mr: &Matrix, members: &[usize]) -> f64 {
    let mut weights: Vec<f64> = members
        .iter()
        .flat_map(|&a| {
            members
                .iter()
                .filter(move |&&b| b > a)
                .map(move |&b| mr[(a, b)])
        })
        .collect();
    weights.sort_by(|a, b| a.partial_cmp(b).unwrap());
    weights.dedup();
    for w in weights {
        if components_below(mr, members, w + f64::EPSILON * w.abs().max(1.0)).len() == 1 {
            return w;
        }
    }
    f64::INFINITY
}

/// Condensed tree from the thresholded mutual-reachability graph, walking
/// splits from the top. Assumes distinct distances (no tied edges).
pub fn brute_condensed(d: &Matrix, s_min: usize) -> Vec<BruteCluster> {
    let mr = mutual_reachability(d, s_min);
    let n = d.rows();
    let mut out = Vec::new();
    // (points still in the cluster, cluster index)
    let mut work = vec![((0..n).collect::<Vec<_>>(), 0usize)];
    out.push(BruteCluster {
        members: (0..n).collect(),
        birth_lambda: 0.0,
        stability: 0.0,
    });
    while let Some((points, cid)) = work.pop() {
        let t = bottleneck(&mr, &points);
        let lambda = 1.0 / t.max(1e-12);
        let birth = out[cid].birth_lambda;
        let parts = components_below(&mr, &points, t);
        let big: Vec<Vec<usize>> = parts.iter().filter(|p| p.len() >= s_min).cloned().collect();
        let small: usize = parts.iter().filter(|p| p.len() < s_min).map(Vec::len).sum();
        out[cid].stability += small as f64 * (lambda - birth);
        match big.len() {
            0 => {}
            1 => work.push((big[0].clone(), cid)),
            _ => {
                for b in big {
                    out[cid].stability += b.len() as f64 * (lambda - birth);
                    let id = out.len();
                    out.push(BruteCluster {
                        members: b.clone(),
                        birth_lambda: lambda,
                        stability: 0.0,
                    });
                    work.push((b, id));
                }
            }
        }
    }
    out
}

/// Two labelings agree up to a renaming of cluster ids (noise must match exactly).
pub fn same_partition(a: &[i32], b: &[i64]) -> bool {
    if a.len() != b.len() {
        return false;
    }
    let mut fwd = std::collections::BTreeMap::new();
    let mut back = std::collections::BTreeMap::new();
    for (&x, &y) in a.iter().zip(b) {
        if (x < 0) != (y < 0) {
            return false;
        }
        if x < 0 {
            continue;
        }
        if *fwd.entry(x).or_insert(y) != y || *back.entry(y).or_insert(x) != x {
            return false;
        }
    }
    true
}

/// Labels of one side of a retrieval split for the brute-force evaluator.
pub struct Side<'a> {
    pub f: &'a Matrix,
    pub ids: &'a [u32],
    pub cams: &'a [u32],
}

/// mAP and CMC@ranks by sorting every query's gallery with `1 - cos`,
/// skipping same-identity same-camera entries and queries without a match.
pub fn brute_retrieval(q: &Side, g: &Side, ranks: &[usize]) -> (f64, Vec<f64>) {
    let cos = |a: &[f64], b: &[f64]| {
        let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
        let na: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt();
        let nb: f64 = b.iter().map(|x| x * x).sum::<f64>().sqrt();
        1.0 - dot / (na * nb)
    };
    let (mut aps, mut hits) = (Vec::new(), vec![0usize; ranks.len()]);
    for i in 0..q.f.rows() {
        let mut cand: Vec<(f64, usize)> = (0..g.f.rows())
            .filter(|&j| !(g.ids[j] == q.ids[i] && g.cams[j] == q.cams[i]))
            .map(|j| (cos(q.f.row(i), g.f.row(j)), j))
            .collect();
        cand.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let rel: Vec<bool> = cand.iter().map(|&(_, j)| g.ids[j] == q.ids[i]).collect();
        let Some(first) = rel.iter().position(|&r| r) else {
            continue;
        };
        aps.push(brute_force_ap(&rel));
        for (h, &r) in hits.iter_mut().zip(ranks) {
            *h += usize::from(first < r);
        }
    }
    let n = aps.len() as f64;
    (
        aps.iter().sum::<f64>() / n,
        hits.iter().map(|&h| h as f64 / n).collect(),
    )
}

/// A PK-shaped batch: `p` labels with `k` rows each.
pub fn pk_batch(r: &mut impl Rng, p: usize, k: usize, d: usize) -> (Matrix, Vec<usize>) {
    let f = random_matrix(r, p * k, d);
    (f, (0..p * k).map(|i| i / k).collect())
}

pub fn random_triplets(r: &mut impl Rng, b: usize, eta: usize) -> Vec<RankedTriplet> {
    (0..b)
        .map(|a| {
            let mut pick = |not: &[usize]| loop {
                let x = r.random_range(0..b);
                if !not.contains(&x) {
                    return x;
                }
            };
            let positive = pick(&[a]);
            let negative = pick(&[a, positive]);
            RankedTriplet {
                anchor: a,
                positive,
                negative,
                pos_rank: r.random_range(1..=eta),
                neg_rank: r.random_range(eta + 1..=2 * eta),
            }
        })
        .collect()
}

/// Central differences straddle a kink when a hinge argument is this close to zero.
pub fn near_kink(args: &[f64]) -> bool {
    args.iter().any(|a| a.abs() < 1e-4)
}

pub fn ctl_args(f: &Matrix, labels: &[usize], m: f64) -> Vec<f64> {
    (0..f.rows())
        .map(|a| {
            let (mut p, mut n) = (f64::NEG_INFINITY, f64::INFINITY);
            for j in (0..f.rows()).filter(|&j| j != a) {
                if labels[j] == labels[a] {
                    p = p.max(dist(f, a, j));
                } else {
                    n = n.min(dist(f, a, j));
                }
            }
            m + p - n
        })
        .collect()
}

/// Conservative loss of a small net on a fixed batch, as a function of its parameters.
pub fn conservative_objective(
    net: &EmbedderParams,
    x: &Matrix,
    labels: &[usize],
    triplets: &[RankedTriplet],
) -> (f64, Vec<f64>) {
    let (raw, cache) = net.forward(x).unwrap();
    let norm = normalize_rows(&raw).unwrap();
    let ctl = ctl_loss(&norm.features, labels, 0.3).unwrap();
    let rtl = rtl_loss(&norm.features, triplets, 0.3, 3).unwrap();
    let loss = conservative_loss(&ctl, &rtl, 0.5).unwrap();
    let grads = net
        .backward(&cache, &norm.backward(&loss.grad).unwrap())
        .unwrap();
    (loss.value, grads.flat())
}

pub fn promoting_objective(
    net: &EmbedderParams,
    w: &Matrix,
    x: &Matrix,
    labels: &[usize],
) -> (f64, Vec<f64>, Vec<f64>) {
    let (raw, cache) = net.forward(x).unwrap();
    let norm = normalize_rows(&raw).unwrap();
    let logits = norm.features.matmul(w).unwrap();
    let loss = softmax_ce_loss(&logits, labels).unwrap();
    let dw = norm.features.t_matmul(&loss.grad).unwrap();
    let df = loss.grad.matmul_t(w).unwrap();
    let grads = net.backward(&cache, &norm.backward(&df).unwrap()).unwrap();
    (loss.value, grads.flat(), dw.into_vec())
}

/// Random weights and biases, so no input maps to an all-zero output.
pub fn random_net(dims: &[usize], r: &mut impl Rng) -> EmbedderParams {
    let mut net = EmbedderParams::init(dims, 0).unwrap();
    let values: Vec<f64> = (0..net.num_params())
        .map(|_| r.random_range(-1.0..1.0))
        .collect();
    net.set_flat(&values).unwrap();
    net
}

/// Hinge arguments of the ranking triplet loss, one per triplet.
pub fn rtl_args(f: &Matrix, triplets: &[RankedTriplet], m: f64, eta: usize) -> Vec<f64> {
    triplets
        .iter()
        .map(|t| {
            (t.neg_rank - t.pos_rank) as f64 / eta as f64 * m + dist(f, t.anchor, t.positive)
                - dist(f, t.anchor, t.negative)
        })
        .collect()
}
