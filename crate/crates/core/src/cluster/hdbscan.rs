//! HDBSCAN on a precomputed distance matrix.
//!
//! Core distance uses the `s_min`-th nearest neighbour (the point itself
//! counts as the first). The minimum spanning tree of the mutual-reachability
//! graph is built with Prim's algorithm, turned into a single-linkage
//! dendrogram, condensed with minimum cluster size `s_min`, and flat clusters
//! are chosen by excess of mass. The root is never selected.

use super::{PseudoLabeling, NOISE};
use crate::error::{Error, Result};
use crate::store::DistanceMatrix;

/// Distances are floored here before inverting them into densities.
const MIN_DISTANCE: f64 = 1e-12;

fn lambda_of(distance: f64) -> f64 {
    1.0 / distance.max(MIN_DISTANCE)
}

/// A cluster of the condensed tree.
#[derive(Debug, Clone, PartialEq)]
pub struct CondensedCluster {
    pub parent: Option<usize>,
    pub children: Vec<usize>,
    /// Density at which the cluster appears.
    pub birth_lambda: f64,
    /// `sum (lambda_exit - birth_lambda)` over every point that ever belonged to it.
    pub stability: f64,
    /// Number of points at birth.
    pub size: usize,
    /// Points leaving this cluster directly, with their exit density.
    pub fallout: Vec<(usize, f64)>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CondensedTree {
    pub clusters: Vec<CondensedCluster>,
}

impl CondensedTree {
    /// All points of cluster `c` at its birth, ascending.
    pub fn members(&self, c: usize) -> Vec<usize> {
        let mut out = Vec::new();
        let mut stack = vec![c];
        while let Some(x) = stack.pop() {
            out.extend(self.clusters[x].fallout.iter().map(|(p, _)| *p));
            stack.extend(&self.clusters[x].children);
        }
        out.sort_unstable();
        out
    }

    /// Excess-of-mass selection, root excluded. Returns selected cluster ids ascending.
    pub fn select_eom(&self) -> Vec<usize> {
        let k = self.clusters.len();
        let mut best = vec![0.0; k];
        let mut selected = vec![false; k];
        for c in (1..k).rev() {
            let node = &self.clusters[c];
            let subtree: f64 = node.children.iter().map(|&ch| best[ch]).sum();
            if node.children.is_empty() || node.stability >= subtree {
                best[c] = node.stability;
                selected[c] = true;
                let mut stack = node.children.clone();
                while let Some(x) = stack.pop() {
                    selected[x] = false;
                    stack.extend(&self.clusters[x].children);
                }
            } else {
                best[c] = subtree;
            }
        }
        (1..k).filter(|&c| selected[c]).collect()
    }
}

#[derive(Debug, Clone, Copy)]
struct LinkNode {
    left: usize,
    right: usize,
    distance: f64,
    size: usize,
}

fn validate(dist: &DistanceMatrix, s_min: usize) -> Result<usize> {
    if s_min < 2 {
        return Err(Error::InvalidMinSamples(s_min));
    }
    if dist.rows() != dist.cols() {
        return Err(Error::ShapeMismatch(format!(
            "distance matrix is {}x{}",
            dist.rows(),
            dist.cols()
        )));
    }
    Ok(dist.rows())
}

fn core_distances(dist: &DistanceMatrix, s_min: usize) -> Vec<f64> {
    (0..dist.rows())
        .map(|i| {
            let mut row = dist.row(i).to_vec();
            row.sort_by(f64::total_cmp);
            row[(s_min - 1).min(row.len() - 1)]
        })
        .collect()
}

/// Prim's algorithm on the dense mutual-reachability graph; edges sorted by weight.
fn mutual_reachability_mst(dist: &DistanceMatrix, core: &[f64]) -> Vec<(usize, usize, f64)> {
    let n = dist.rows();
    let mr = |a: usize, b: usize| dist[(a, b)].max(core[a]).max(core[b]);
    let mut in_tree = vec![false; n];
    let mut best = vec![f64::INFINITY; n];
    let mut from = vec![0usize; n];
    let mut edges = Vec::with_capacity(n.saturating_sub(1));
    let mut current = 0;
    in_tree[0] = true;
    for _ in 1..n {
        let mut next = usize::MAX;
        let mut next_w = f64::INFINITY;
        for j in 0..n {
            if in_tree[j] {
                continue;
            }
            let w = mr(current, j);
            if w < best[j] {
                best[j] = w;
                from[j] = current;
            }
            if best[j] < next_w || next == usize::MAX {
                next_w = best[j];
                next = j;
            }
        }
        in_tree[next] = true;
        edges.push((from[next], next, next_w));
        current = next;
    }
    edges.sort_by(|a, b| a.2.total_cmp(&b.2));
    edges
}

struct UnionFind {
    parent: Vec<usize>,
}

impl UnionFind {
    fn new(n: usize) -> Self {
        Self {
            parent: (0..n).collect(),
        }
    }

    fn find(&mut self, mut x: usize) -> usize {
        while self.parent[x] != x {
            self.parent[x] = self.parent[self.parent[x]];
            x = self.parent[x];
        }
        x
    }
}

/// Single-linkage dendrogram; leaves are `0..n`, internal node `n + k` is the k-th merge.
fn single_linkage(n: usize, edges: &[(usize, usize, f64)]) -> Vec<LinkNode> {
    let mut uf = UnionFind::new(2 * n - 1);
    let mut sizes = vec![1usize; 2 * n - 1];
    let mut nodes = Vec::with_capacity(n - 1);
    for &(a, b, w) in edges {
        let ra = uf.find(a);
        let rb = uf.find(b);
        let id = n + nodes.len();
        let size = sizes[ra] + sizes[rb];
        sizes[id] = size;
        uf.parent[ra] = id;
        uf.parent[rb] = id;
        nodes.push(LinkNode {
            left: ra,
            right: rb,
            distance: w,
            size,
        });
    }
    nodes
}

fn condense(n: usize, links: &[LinkNode], min_size: usize) -> CondensedTree {
    let size_of = |node: usize| if node < n { 1 } else { links[node - n].size };
    let leaves_of = |node: usize| -> Vec<usize> {
        let mut out = Vec::new();
        let mut stack = vec![node];
        while let Some(x) = stack.pop() {
            if x < n {
                out.push(x);
            } else {
                stack.push(links[x - n].right);
                stack.push(links[x - n].left);
            }
        }
        out
    };

    let mut clusters = vec![CondensedCluster {
        parent: None,
        children: Vec::new(),
        birth_lambda: 0.0,
        stability: 0.0,
        size: n,
        fallout: Vec::new(),
    }];
    let root = 2 * n - 2;
    // (dendrogram node, condensed cluster it belongs to)
    let mut stack = vec![(root, 0usize)];
    while let Some((node, cid)) = stack.pop() {
        if node < n {
            let lambda = f64::INFINITY;
            clusters[cid].fallout.push((node, lambda));
            continue;
        }
        let link = links[node - n];
        let lambda = lambda_of(link.distance);
        let birth = clusters[cid].birth_lambda;
        let (l, r) = (link.left, link.right);
        let (ls, rs) = (size_of(l), size_of(r));
        match (ls >= min_size, rs >= min_size) {
            (true, true) => {
                for (child, size) in [(l, ls), (r, rs)] {
                    let id = clusters.len();
                    clusters.push(CondensedCluster {
                        parent: Some(cid),
                        children: Vec::new(),
                        birth_lambda: lambda,
                        stability: 0.0,
                        size,
                        fallout: Vec::new(),
                    });
                    clusters[cid].children.push(id);
                    clusters[cid].stability += (lambda - birth) * size as f64;
                    stack.push((child, id));
                }
            }
            (big_l, big_r) => {
                for (child, big) in [(l, big_l), (r, big_r)] {
                    if big {
                        stack.push((child, cid));
                    } else {
                        for p in leaves_of(child) {
                            clusters[cid].fallout.push((p, lambda));
                            clusters[cid].stability += lambda - birth;
                        }
                    }
                }
            }
        }
    }
    CondensedTree { clusters }
}

/// Builds the condensed cluster tree for `dist` with minimum cluster size `s_min`.
pub fn condensed_tree(dist: &DistanceMatrix, s_min: usize) -> Result<CondensedTree> {
    let n = validate(dist, s_min)?;
    if n == 0 {
        return Ok(CondensedTree {
            clusters: Vec::new(),
        });
    }
    if n == 1 {
        return Ok(CondensedTree {
            clusters: vec![CondensedCluster {
                parent: None,
                children: Vec::new(),
                birth_lambda: 0.0,
                stability: 0.0,
                size: 1,
                fallout: vec![(0, f64::INFINITY)],
            }],
        });
    }
    let core = core_distances(dist, s_min);
    let edges = mutual_reachability_mst(dist, &core);
    let links = single_linkage(n, &edges);
    Ok(condense(n, &links, s_min))
}

/// Flat HDBSCAN clustering with `min_samples = min_cluster_size = s_min`.
pub fn hdbscan(dist: &DistanceMatrix, s_min: usize) -> Result<PseudoLabeling> {
    let n = validate(dist, s_min)?;
    if n < s_min {
        return Ok(PseudoLabeling::all_noise(n));
    }
    let tree = condensed_tree(dist, s_min)?;
    let mut raw = vec![NOISE as i64; n];
    for (label, c) in tree.select_eom().into_iter().enumerate() {
        for p in tree.members(c) {
            raw[p] = label as i64;
        }
    }
    Ok(PseudoLabeling::from_raw(&raw))
}
