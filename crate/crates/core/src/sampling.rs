//! PK mini-batches over pseudo labels and rank-based triplet selection.

use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::cluster::PseudoLabeling;
use crate::error::{Error, Result};
use crate::rerank::RankingIndex;

/// `P` clusters with `K` sample ids each, stored group by group.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PkBatch {
    pub entries: Vec<usize>,
    /// Pseudo label of each group.
    pub clusters: Vec<usize>,
    pub k: usize,
}

impl PkBatch {
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Pseudo label of every entry.
    pub fn labels(&self) -> Vec<usize> {
        self.clusters
            .iter()
            .flat_map(|&c| std::iter::repeat_n(c, self.k))
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RankedTriplet {
    pub anchor: usize,
    pub positive: usize,
    pub negative: usize,
    /// Ranking position of the positive, in `1..=eta`.
    pub pos_rank: usize,
    /// Ranking position of the negative, in `eta+1..=2*eta`.
    pub neg_rank: usize,
}

pub fn pk_sample(labeling: &PseudoLabeling, p: usize, k: usize, seed: u64) -> Result<PkBatch> {
    let members = labeling.members();
    pk_sample_with(&members, p, k, &mut ChaCha8Rng::seed_from_u64(seed))
}

/// Draws `p` distinct clusters, then `k` members of each; clusters smaller
/// than `k` are sampled with replacement.
pub fn pk_sample_with(
    members: &[Vec<usize>],
    p: usize,
    k: usize,
    rng: &mut impl Rng,
) -> Result<PkBatch> {
    if p == 0 || k < 2 {
        return Err(Error::DegenerateBatch(format!("P = {p}, K = {k}")));
    }
    if members.len() < p {
        return Err(Error::NotEnoughClusters {
            needed: p,
            found: members.len(),
        });
    }
    let clusters = index::sample(rng, members.len(), p).into_vec();
    let mut entries = Vec::with_capacity(p * k);
    for &c in &clusters {
        let m = &members[c];
        if m.len() >= k {
            entries.extend(index::sample(rng, m.len(), k).into_iter().map(|i| m[i]));
        } else {
            entries.extend((0..k).map(|_| m[rng.random_range(0..m.len())]));
        }
    }
    Ok(PkBatch {
        entries,
        clusters,
        k,
    })
}

pub fn select_rtl_triplets(
    anchors: &[usize],
    ranking: &RankingIndex,
    eta: usize,
    seed: u64,
) -> Result<Vec<RankedTriplet>> {
    select_rtl_triplets_with(anchors, ranking, eta, &mut ChaCha8Rng::seed_from_u64(seed))
}

/// One triplet per anchor: positive drawn uniformly from ranks `1..=eta`,
/// negative from `eta+1..=2*eta`.
pub fn select_rtl_triplets_with(
    anchors: &[usize],
    ranking: &RankingIndex,
    eta: usize,
    rng: &mut impl Rng,
) -> Result<Vec<RankedTriplet>> {
    let n = ranking.len();
    if eta == 0 || 2 * eta >= n {
        return Err(Error::EtaTooLarge { eta, n });
    }
    anchors
        .iter()
        .map(|&anchor| {
            if anchor >= n {
                return Err(Error::ShapeMismatch(format!("anchor {anchor} out of {n}")));
            }
            let pos_rank = rng.random_range(1..=eta);
            let neg_rank = rng.random_range(eta + 1..=2 * eta);
            Ok(RankedTriplet {
                anchor,
                positive: ranking.at(anchor, pos_rank),
                negative: ranking.at(anchor, neg_rank),
                pos_rank,
                neg_rank,
            })
        })
        .collect()
}
