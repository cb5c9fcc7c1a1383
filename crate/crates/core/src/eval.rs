//! Scoring: smallest correctly resolved cluster size, off-diagonal
//! similarity decay of an ordering, its entropy against a random-ordering
//! baseline, and the planted-cluster analysis of unstructured pair
//! sampling. Evaluation reads similarities without metering — query budgets
//! are a property of clustering, not of scoring.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use thiserror::Error;

use crate::oracle::{pair_index, LedgerSnapshot, SimilarityStore};
use crate::tree::{clusters_of, ClusterSet, ClusterTree, ItemId};

#[derive(Debug, Error, PartialEq)]
pub enum EvalError {
    #[error("trees cover different universes: {truth} vs {est} items")]
    UniverseMismatch { truth: usize, est: usize },
    #[error("not a permutation of the {n} items: {reason}")]
    InvalidPermutation { n: usize, reason: String },
    #[error(
        "decay profile entry {d} is {value}; entropy needs positive \
         similarities (shift the store to a positive range first)"
    )]
    NonpositiveDecay { d: usize, value: f64 },
    #[error("cannot sample {requested} distinct pairs, only {available} exist")]
    TooManySamples { requested: usize, available: usize },
    #[error("planted cluster size {m} must lie in [2, {n}]")]
    BadPlantedSize { m: usize, n: usize },
    #[error("need at least 2 items, got {0}")]
    TooFewItems(usize),
}

/// Random orderings averaged into the entropy baseline.
pub const BASELINE_PERMUTATIONS: usize = 20;

/// Smallest `s` such that every true cluster of size at least `s` appears
/// in the estimate. 1 means exact recovery of every cluster; the worst case
/// is one past the largest missed cluster.
pub fn r_min(truth: &ClusterTree, est: &ClusterTree) -> Result<usize, EvalError> {
    if truth.len() != est.len() {
        return Err(EvalError::UniverseMismatch {
            truth: truth.len(),
            est: est.len(),
        });
    }
    Ok(r_min_of_sets(&clusters_of(truth), &clusters_of(est)))
}

/// Set-level form of [`r_min`]: one past the size of the largest true
/// cluster absent from `est`, or 1 when nothing is missing.
pub fn r_min_of_sets(truth: &ClusterSet, est: &ClusterSet) -> usize {
    truth
        .iter()
        .filter(|c| !est.contains(c))
        .map(|c| c.len())
        .max()
        .map_or(1, |largest_missing| largest_missing + 1)
}

fn validate_perm(n: usize, perm: &[ItemId]) -> Result<(), EvalError> {
    if perm.len() != n {
        return Err(EvalError::InvalidPermutation {
            n,
            reason: format!("length {}", perm.len()),
        });
    }
    let mut seen = vec![false; n];
    for &p in perm {
        match seen.get_mut(p.0 as usize) {
            Some(slot) if !*slot => *slot = true,
            Some(_) => {
                return Err(EvalError::InvalidPermutation {
                    n,
                    reason: format!("item {} repeats", p.0),
                })
            }
            None => {
                return Err(EvalError::InvalidPermutation {
                    n,
                    reason: format!("item {} out of range", p.0),
                })
            }
        }
    }
    Ok(())
}

/// Mean similarity at each displacement along the ordering:
/// `s_hat[d-1]` averages `s(perm[i], perm[i+d])` over all `i`, for
/// `d = 1..n`. A good ordering concentrates similarity at small `d`.
pub fn off_diag_decay(
    store: &SimilarityStore,
    perm: &[ItemId],
) -> Result<Vec<f64>, EvalError> {
    let n = store.len();
    if n < 2 {
        return Err(EvalError::TooFewItems(n));
    }
    validate_perm(n, perm)?;
    Ok((1..n)
        .map(|d| {
            let sum: f64 = (0..n - d)
                .map(|i| store.value(perm[i], perm[i + d]))
                .sum();
            sum / (n - d) as f64
        })
        .collect())
}

fn entropy_of_decay(s_hat: &[f64]) -> Result<f64, EvalError> {
    for (i, &v) in s_hat.iter().enumerate() {
        if v <= 0.0 {
            return Err(EvalError::NonpositiveDecay { d: i + 1, value: v });
        }
    }
    let total: f64 = s_hat.iter().sum();
    Ok(-s_hat
        .iter()
        .map(|&v| {
            let p = v / total;
            p * p.ln()
        })
        .sum::<f64>())
}

/// Entropy (nats) of the normalized decay profile of `perm`, and how far a
/// random ordering exceeds it. The baseline is the mean entropy of
/// [`BASELINE_PERMUTATIONS`] orderings drawn from `baseline_seed`; the
/// second component is `baseline - entropy(perm)`, so larger means the
/// ordering explains more structure than chance.
pub fn ordering_entropy(
    store: &SimilarityStore,
    perm: &[ItemId],
    baseline_seed: u64,
) -> Result<(f64, f64), EvalError> {
    let entropy = entropy_of_decay(&off_diag_decay(store, perm)?)?;
    let mut rng = ChaCha8Rng::seed_from_u64(baseline_seed);
    let mut shuffled: Vec<ItemId> = (0..store.len() as u32).map(ItemId).collect();
    let mut total = 0.0;
    for _ in 0..BASELINE_PERMUTATIONS {
        shuffled.shuffle(&mut rng);
        total += entropy_of_decay(&off_diag_decay(store, &shuffled)?)?;
    }
    let baseline = total / BASELINE_PERMUTATIONS as f64;
    Ok((entropy, baseline - entropy))
}

/// Full scoring of an estimated tree against the truth and the observed
/// similarities. `queries` carries the clustering run's metering when the
/// caller has it; evaluation itself meters nothing.
#[derive(Clone, Debug, Serialize)]
pub struct EvalReport {
    pub n_items: usize,
    pub r_min: usize,
    /// Fraction of true clusters present in the estimate.
    pub recovered_cluster_fraction: f64,
    /// Decay profile of the estimate's leaf ordering, displacements 1..n.
    pub s_hat: Vec<f64>,
    /// Entropy (nats) of the normalized decay profile.
    pub entropy: f64,
    /// Random-ordering baseline entropy minus `entropy`.
    pub delta_entropy: f64,
    pub queries: Option<LedgerSnapshot>,
}

pub fn evaluate(
    truth: &ClusterTree,
    est: &ClusterTree,
    store: &SimilarityStore,
    baseline_seed: u64,
    queries: Option<LedgerSnapshot>,
) -> Result<EvalReport, EvalError> {
    let r_min = r_min(truth, est)?;
    let truth_sets = clusters_of(truth);
    let est_sets = clusters_of(est);
    let recovered = truth_sets.iter().filter(|c| est_sets.contains(c)).count();
    let order = est.leaf_order();
    let s_hat = off_diag_decay(store, &order)?;
    let (entropy, delta_entropy) = ordering_entropy(store, &order, baseline_seed)?;
    Ok(EvalReport {
        n_items: truth.len(),
        r_min,
        recovered_cluster_fraction: recovered as f64 / truth_sets.len() as f64,
        s_hat,
        entropy,
        delta_entropy,
        queries,
    })
}

/// Pairs an unstructured uniform sampler must draw before a hidden m-item
/// cluster is even connected in expectation: `ceil((n/m) * (n-1))`.
pub fn random_sampling_threshold(n_items: usize, m: usize) -> Result<usize, EvalError> {
    if m < 2 || m > n_items {
        return Err(EvalError::BadPlantedSize { m, n: n_items });
    }
    // ceil((n/m) * (n-1)) with exact integer arithmetic.
    Ok((n_items * (n_items - 1)).div_ceil(m))
}

/// Monte Carlo check of that threshold: plant an m-item cluster, sample
/// `n_samples` distinct pairs uniformly, and call the trial a failure when
/// the sampled within-cluster pairs do not connect the cluster (fewer than
/// the m-1 informative similarities the cluster needs). Returns the failed
/// fraction over `trials`.
pub fn random_sampling_trial(
    n_items: usize,
    m: usize,
    n_samples: usize,
    trials: usize,
    seed: u64,
) -> Result<f64, EvalError> {
    if m < 2 || m > n_items {
        return Err(EvalError::BadPlantedSize { m, n: n_items });
    }
    let total_pairs = n_items * (n_items - 1) / 2;
    if n_samples > total_pairs {
        return Err(EvalError::TooManySamples {
            requested: n_samples,
            available: total_pairs,
        });
    }
    // The planted cluster is items 0..m; by symmetry of uniform sampling
    // the choice does not matter. Map each of its pairs' flat indices back
    // to the pair.
    let mut intra = std::collections::HashMap::new();
    for a in 0..m {
        for b in (a + 1)..m {
            intra.insert(pair_index(n_items, a, b), (a, b));
        }
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut failures = 0usize;
    for _ in 0..trials {
        let mut dsu = DisjointSet::new(m);
        for idx in rand::seq::index::sample(&mut rng, total_pairs, n_samples) {
            if let Some(&(a, b)) = intra.get(&idx) {
                dsu.union(a, b);
            }
        }
        if !dsu.all_connected() {
            failures += 1;
        }
    }
    Ok(failures as f64 / trials as f64)
}

struct DisjointSet {
    parent: Vec<usize>,
    components: usize,
}

impl DisjointSet {
    fn new(n: usize) -> DisjointSet {
        DisjointSet {
            parent: (0..n).collect(),
            components: n,
        }
    }

    fn find(&mut self, mut x: usize) -> usize {
        while self.parent[x] != x {
            self.parent[x] = self.parent[self.parent[x]];
            x = self.parent[x];
        }
        x
    }

    fn union(&mut self, a: usize, b: usize) {
        let (ra, rb) = (self.find(a), self.find(b));
        if ra != rb {
            self.parent[ra] = rb;
            self.components -= 1;
        }
    }

    fn all_connected(&self) -> bool {
        self.components == 1
    }
}
