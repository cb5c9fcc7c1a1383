//! Incremental exact hierarchy construction driven by three-way similarity
//! tests. Each new item is located by a balanced search over a scratch view
//! of the current tree, so the whole build needs only O(N log N) metered
//! similarity lookups instead of all N(N-1)/2.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::oracle::{OracleError, OutlierOracle, OutlierResult, QueryLedger};
use crate::tree::{ClusterTree, ItemId, Node, TreeError};

#[derive(Debug, Error)]
pub enum OutlierError {
    #[error("need at least 2 items, got {0}")]
    TooFewItems(usize),
    #[error(
        "three-way test tied on ({x:?}, {y:?}, {z:?}); similarities do not \
         describe a strict hierarchy"
    )]
    TieEncountered { x: ItemId, y: ItemId, z: ItemId },
    #[error(transparent)]
    Oracle(#[from] OracleError),
    #[error(transparent)]
    Tree(#[from] TreeError),
}

/// Order in which items are fed to the incremental construction. The result
/// on consistent similarities is order-independent; the query count is not.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum InsertionOrder {
    Ascending,
    Shuffled(u64),
}

/// How to proceed when a three-way test has no strict winner.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum TiePolicy {
    /// Abort: a tie contradicts the strict-maximum assumption.
    #[default]
    Strict,
    /// Lowest-id tied candidate wins; the output is best-effort.
    Tolerant,
}

#[derive(Clone, Debug)]
pub struct OutlierOutcome {
    pub tree: ClusterTree,
    pub ledger: QueryLedger,
    /// Ties resolved under [`TiePolicy::Tolerant`]; always 0 under strict.
    pub tie_breaks: u64,
}

/// Upper bound on metered similarity lookups for one full build:
/// `ceil(3 n log_{3/2} n)`.
pub fn query_bound(n_items: usize) -> Result<u64, OutlierError> {
    if n_items < 2 {
        return Err(OutlierError::TooFewItems(n_items));
    }
    let n = n_items as f64;
    Ok((3.0 * n * n.ln() / 1.5f64.ln()).ceil() as u64)
}

/// Builds the hierarchy over items `0..n_items` by incremental insertion.
///
/// The first two items form the initial tree. Every further item is placed
/// by a search that repeatedly selects a weight-balanced subtree of a scratch
/// view, asks the oracle which of (new item, pair separated only by that
/// subtree) is the odd one out, and either collapses the subtree to a single
/// representative (new item lies outside it) or descends into it. When two
/// reference items remain, one final test picks among: sibling of their
/// smallest common subtree, inside its left half, inside its right half.
///
/// If every oracle answer is consistent with a single strict hierarchy, the
/// output equals that hierarchy and distinct metered pairs stay within
/// [`query_bound`].
pub fn outlier_cluster<O: OutlierOracle + ?Sized>(
    n_items: usize,
    oracle: &mut O,
    order: InsertionOrder,
    ties: TiePolicy,
) -> Result<OutlierOutcome, OutlierError> {
    if n_items < 2 {
        return Err(OutlierError::TooFewItems(n_items));
    }
    let mut items: Vec<ItemId> = (0..n_items as u32).map(ItemId).collect();
    if let InsertionOrder::Shuffled(seed) = order {
        items.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    }

    let mut ledger = QueryLedger::new(n_items);
    let mut tie_breaks = 0u64;
    let mut root = Node::internal(Node::leaf(items[0]), Node::leaf(items[1]));

    for &xi in &items[2..] {
        // Narrow down where xi belongs on a scratch view. Collapsed regions
        // are stood in for by one of their own items, so every test is on
        // real items and the final references resolve in the real tree.
        let mut view = root.clone();
        while view.size() > 2 {
            let path = view.select_subtree_path()?;
            let (xj, xk) = view.node_at(&path).separated_pair()?;
            let winner = resolve(
                oracle.outlier(xi, xj, xk, &mut ledger)?,
                ties,
                &mut tie_breaks,
                (xi, xj, xk),
            )?;
            if winner == xi {
                // xi is outside the selected subtree: collapse it.
                view.collapse_at(&path, xj);
            } else {
                // xi is inside: continue the search there.
                view = view.take_subtree(&path);
            }
        }
        let (xj, xk) = view.separated_pair()?;

        // The smallest real subtree containing both references, and the
        // half each one lives in.
        let pj = path_to_item(&root, xj);
        let pk = path_to_item(&root, xk);
        let fork = common_prefix_len(&pj, &pk);
        let winner = resolve(
            oracle.outlier(xi, xj, xk, &mut ledger)?,
            ties,
            &mut tie_breaks,
            (xi, xj, xk),
        )?;
        if winner == xi {
            // Outside both halves: sibling of the whole subtree.
            root.wrap_at(&pj[..fork], xi);
        } else if winner == xj {
            // Tight with xk: join xk's half.
            root.wrap_at(&pk[..fork + 1], xi);
        } else {
            // Tight with xj: join xj's half.
            root.wrap_at(&pj[..fork + 1], xi);
        }
    }

    Ok(OutlierOutcome {
        tree: ClusterTree::new(root)?,
        ledger,
        tie_breaks,
    })
}

fn resolve(
    result: OutlierResult,
    ties: TiePolicy,
    tie_breaks: &mut u64,
    triple: (ItemId, ItemId, ItemId),
) -> Result<ItemId, OutlierError> {
    match result {
        OutlierResult::Outlier(w) => Ok(w),
        OutlierResult::Tie { candidates } => match ties {
            TiePolicy::Strict => Err(OutlierError::TieEncountered {
                x: triple.0,
                y: triple.1,
                z: triple.2,
            }),
            TiePolicy::Tolerant => {
                *tie_breaks += 1;
                Ok(candidates.into_iter().min().expect("tie has candidates"))
            }
        },
    }
}

/// Root-to-leaf child moves (false = left) reaching `item`.
fn path_to_item(root: &Node, item: ItemId) -> Vec<bool> {
    fn rec(node: &Node, item: ItemId, path: &mut Vec<bool>) -> bool {
        match node.children() {
            None => node.leftmost_item() == item,
            Some((l, r)) => {
                path.push(false);
                if rec(l, item, path) {
                    return true;
                }
                *path.last_mut().expect("just pushed") = true;
                if rec(r, item, path) {
                    return true;
                }
                path.pop();
                false
            }
        }
    }
    let mut path = Vec::new();
    let found = rec(root, item, &mut path);
    debug_assert!(found, "reference {:?} must be in the tree", item);
    path
}

fn common_prefix_len(a: &[bool], b: &[bool]) -> usize {
    a.iter().zip(b).take_while(|(x, y)| x == y).count()
}
