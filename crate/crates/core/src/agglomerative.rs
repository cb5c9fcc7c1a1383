//! Bottom-up agglomerative clustering, the full-information baseline: it
//! must touch every pairwise similarity before the first merge, so its
//! metered cost is always N(N-1)/2 distinct pairs.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::oracle::{OracleError, QueryLedger, SimilarityStore};
use crate::tree::{ClusterTree, ItemId, Node, TreeError};

#[derive(Debug, Error)]
pub enum AggloError {
    #[error("need at least 2 items, got {0}")]
    TooFewItems(usize),
    #[error(transparent)]
    Oracle(#[from] OracleError),
    #[error(transparent)]
    Tree(#[from] TreeError),
}

/// Inter-cluster score under the similarity convention: the most similar
/// pair of clusters merges first, so single linkage takes the max cross
/// similarity, complete the min, average the size-weighted mean.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Linkage {
    Single,
    Average,
    Complete,
}

impl Linkage {
    /// Score of `merged = a + b` against `c`, from the scores of the parts.
    fn combine(self, s_ac: f64, s_bc: f64, size_a: usize, size_b: usize) -> f64 {
        match self {
            Linkage::Single => s_ac.max(s_bc),
            Linkage::Complete => s_ac.min(s_bc),
            Linkage::Average => {
                let (wa, wb) = (size_a as f64, size_b as f64);
                (wa * s_ac + wb * s_bc) / (wa + wb)
            }
        }
    }
}

/// Merges the most similar pair of clusters until one remains. All
/// N(N-1)/2 similarities are read (and metered) up front. Score ties break
/// toward the lexicographically smallest (min item, min item) cluster pair,
/// which also fixes child order in the output.
pub fn agglomerate(
    store: &SimilarityStore,
    linkage: Linkage,
    ledger: &mut QueryLedger,
) -> Result<ClusterTree, AggloError> {
    let n = store.len();
    if n < 2 {
        return Err(AggloError::TooFewItems(n));
    }

    // Working inter-cluster score matrix, indexed by cluster slot. Slot i
    // starts as item i and later holds the merge reusing that slot.
    let mut score = vec![0.0f64; n * n];
    for i in 0..n {
        for j in (i + 1)..n {
            let s = store.query(ItemId(i as u32), ItemId(j as u32), ledger)?;
            score[i * n + j] = s;
            score[j * n + i] = s;
        }
    }

    let mut node: Vec<Option<Node>> = (0..n).map(|i| Some(Node::leaf(i as u32))).collect();
    let mut size = vec![1usize; n];
    let mut min_item = (0..n as u32).collect::<Vec<_>>();
    let mut active: Vec<usize> = (0..n).collect();

    while active.len() > 1 {
        // Highest score wins; on exact ties the smallest (min item, min item)
        // pair, ordered so the first component is the smaller.
        let mut best: Option<(f64, (u32, u32), usize, usize)> = None;
        for (ai, &a) in active.iter().enumerate() {
            for &b in &active[ai + 1..] {
                let s = score[a * n + b];
                let key = (min_item[a].min(min_item[b]), min_item[a].max(min_item[b]));
                let better = match best {
                    None => true,
                    Some((bs, bk, _, _)) => s > bs || (s == bs && key < bk),
                };
                if better {
                    best = Some((s, key, a, b));
                }
            }
        }
        let (_, _, a, b) = best.expect("at least one active pair");
        // Keep the side holding the smaller min item on the left.
        let (a, b) = if min_item[a] <= min_item[b] { (a, b) } else { (b, a) };

        for &c in &active {
            if c != a && c != b {
                let s = linkage.combine(score[a * n + c], score[b * n + c], size[a], size[b]);
                score[a * n + c] = s;
                score[c * n + a] = s;
            }
        }
        let left = node[a].take().expect("active slot holds a node");
        let right = node[b].take().expect("active slot holds a node");
        node[a] = Some(Node::internal(left, right));
        size[a] += size[b];
        min_item[a] = min_item[a].min(min_item[b]);
        active.retain(|&c| c != b);
    }

    let root = node[active[0]].take().expect("one cluster remains");
    Ok(ClusterTree::new(root)?)
}
