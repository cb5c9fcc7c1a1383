//! Synthetic instances: ground-truth hierarchies and similarity stores that
//! respect them, plus controlled corruption for robustness experiments.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::oracle::{pair_index, SimilarityStore};
use crate::tree::{ClusterTree, ItemId, Node};

#[derive(Debug, Error, PartialEq)]
pub enum SynthesisError {
    #[error("balanced hierarchy needs a power-of-two item count, got {0}")]
    NotPowerOfTwo(usize),
    #[error("need at least 2 items, got {0}")]
    TooFewItems(usize),
    #[error("balance floor must lie in (0, 1/2], got {0}")]
    BadBalanceFloor(f64),
    #[error("corruption rate must lie in [0, 1/2), got {0}")]
    BadCorruptionRate(f64),
    #[error("similarity synthesis requires a fully resolved binary hierarchy")]
    FlatNodesUnsupported,
}

/// Which ground-truth topology to generate.
#[derive(Clone, Copy, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TreeShape {
    Balanced,
    /// Random splits whose lighter side keeps at least this fraction.
    Random { balance_floor: f64 },
}

/// One synthetic instance: topology, corruption rate, seed.
#[derive(Clone, Debug, serde::Serialize, serde::Deserialize)]
pub struct GenConfig {
    pub n_items: usize,
    pub shape: TreeShape,
    pub corruption_rate: f64,
    pub seed: u64,
}

impl GenConfig {
    /// Ground truth plus observed (possibly corrupted) similarities.
    pub fn build(&self) -> Result<(ClusterTree, SimilarityStore), SynthesisError> {
        let tree = match self.shape {
            TreeShape::Balanced => gen_balanced_tree(self.n_items)?,
            TreeShape::Random { balance_floor } => {
                gen_random_tree(self.n_items, balance_floor, self.seed)?
            }
        };
        let clean = gen_tc_similarities(&tree, self.seed.wrapping_add(1))?;
        let store = inject_inconsistencies(&clean, self.corruption_rate, self.seed.wrapping_add(2))?;
        Ok((tree, store))
    }
}

/// Fully balanced hierarchy over `0..n_items` (power of two required).
pub fn gen_balanced_tree(n_items: usize) -> Result<ClusterTree, SynthesisError> {
    if n_items < 2 {
        return Err(SynthesisError::TooFewItems(n_items));
    }
    if !n_items.is_power_of_two() {
        return Err(SynthesisError::NotPowerOfTwo(n_items));
    }
    fn build(lo: u32, hi: u32) -> Node {
        if hi - lo == 1 {
            Node::Leaf(ItemId(lo))
        } else {
            let mid = lo + (hi - lo) / 2;
            Node::internal(build(lo, mid), build(mid, hi))
        }
    }
    Ok(ClusterTree::new(build(0, n_items as u32)).expect("generated ids are dense"))
}

/// Random hierarchy over `0..n_items`: a cluster of size `n` splits into
/// contiguous ranges of sizes `(k, n-k)` with `k` uniform over
/// `[ceil(balance_floor * n), floor(n/2)]`. `min(k, n-k) >= 1` is enforced,
/// so tiny clusters may round below the floor.
pub fn gen_random_tree(
    n_items: usize,
    balance_floor: f64,
    seed: u64,
) -> Result<ClusterTree, SynthesisError> {
    if n_items < 2 {
        return Err(SynthesisError::TooFewItems(n_items));
    }
    if !(balance_floor > 0.0 && balance_floor <= 0.5) {
        return Err(SynthesisError::BadBalanceFloor(balance_floor));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    fn build(lo: u32, hi: u32, floor: f64, rng: &mut ChaCha8Rng) -> Node {
        let n = (hi - lo) as usize;
        if n == 1 {
            return Node::Leaf(ItemId(lo));
        }
        let k_hi = n / 2;
        let k_lo = ((floor * n as f64).ceil() as usize).clamp(1, k_hi);
        let k = rng.gen_range(k_lo..=k_hi) as u32;
        let mid = lo + k;
        Node::internal(build(lo, mid, floor, rng), build(mid, hi, floor, rng))
    }
    let root = build(0, n_items as u32, balance_floor, &mut rng);
    Ok(ClusterTree::new(root).expect("generated ids are dense"))
}

/// Similarities that respect `tree` exactly: a pair meeting at depth `d`
/// (root = 0) gets `d` plus jitter drawn uniformly from `[0, 0.5)`. Any pair
/// inside a cluster is then strictly more similar than any pair crossing its
/// boundary, so every three-way test resolves without ties. The returned
/// store carries an all-true consistency mask.
pub fn gen_tc_similarities(
    tree: &ClusterTree,
    seed: u64,
) -> Result<SimilarityStore, SynthesisError> {
    let n = tree.len();
    if n < 2 {
        return Err(SynthesisError::TooFewItems(n));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let pairs = n * (n - 1) / 2;
    let mut values = vec![f64::NAN; pairs];

    fn fill(
        node: &Node,
        depth: usize,
        n: usize,
        values: &mut [f64],
        rng: &mut ChaCha8Rng,
    ) -> Result<Vec<u32>, SynthesisError> {
        match node {
            Node::Leaf(item) => Ok(vec![item.0]),
            Node::Flat(_) => Err(SynthesisError::FlatNodesUnsupported),
            Node::Internal { left, right, .. } => {
                let mut l = fill(left, depth + 1, n, values, rng)?;
                let r = fill(right, depth + 1, n, values, rng)?;
                for &a in &l {
                    for &b in &r {
                        let (lo, hi) = if a < b { (a, b) } else { (b, a) };
                        values[pair_index(n, lo as usize, hi as usize)] =
                            depth as f64 + rng.gen_range(0.0..0.5);
                    }
                }
                l.extend(r);
                Ok(l)
            }
        }
    }
    fill(tree.root(), 0, n, &mut values, &mut rng)?;
    debug_assert!(values.iter().all(|v| v.is_finite()));
    let mask = vec![true; pairs];
    Ok(SimilarityStore::from_condensed(n, values, Some(mask)).expect("lengths match"))
}

/// Corrupts each pair independently with probability `rate`: the value is
/// resampled uniformly over `[min, max]` of the input store and the pair's
/// consistency mask bit is cleared. `rate = 0` returns the store unchanged
/// (mask all-true).
pub fn inject_inconsistencies(
    store: &SimilarityStore,
    rate: f64,
    seed: u64,
) -> Result<SimilarityStore, SynthesisError> {
    if !(0.0..0.5).contains(&rate) {
        return Err(SynthesisError::BadCorruptionRate(rate));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut values = store.values.clone();
    let mut mask = store
        .mask
        .clone()
        .unwrap_or_else(|| vec![true; values.len()]);
    let lo = values.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    for p in 0..values.len() {
        if rng.gen::<f64>() < rate {
            values[p] = rng.gen_range(lo..=hi);
            mask[p] = false;
        }
    }
    Ok(SimilarityStore::from_condensed(store.len(), values, Some(mask)).expect("lengths match"))
}
