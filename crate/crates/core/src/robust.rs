//! Noise-tolerant top-down clustering. A cluster is split by polling small
//! random voter sets: for a pair of items, the fraction of voters named the
//! odd one out estimates whether the pair shares a subcluster, and items are
//! grouped with a random seed item when their poll results agree with the
//! seed's often enough. Recursion stops at clusters small enough that the
//! guarantee lapses, which are emitted unresolved.

use std::collections::HashMap;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use thiserror::Error;

use crate::oracle::{OracleError, OutlierOracle, OutlierResult, QueryLedger};
use crate::tree::{ClusterTree, ItemId, Node, TreeError};

#[derive(Debug, Error)]
pub enum RobustError {
    #[error("cluster of {n} items cannot be split with voter sets of {m}; need n > 2m")]
    ClusterTooSmall { n: usize, m: usize },
    #[error("voter sets must be nonempty")]
    EmptyVotingSet,
    #[error("cannot vote on a pair made of item {0:?} twice")]
    IdenticalPair(ItemId),
    #[error("no voters remain after removing the tested pair")]
    NoVotersLeft,
    #[error("no probes remain after removing the tested item and the seed")]
    NoProbesLeft,
    #[error(
        "split degenerated on {attempts} seeds in a row (every assignment was one-sided)"
    )]
    DegenerateSplit { attempts: u32 },
    #[error("parameter {name} = {value} outside its domain {domain}")]
    ParamOutOfRange {
        name: &'static str,
        value: f64,
        domain: &'static str,
    },
    #[error(
        "assumed inconsistency rate q = {q} is too high for per-split failure \
         probability {delta_prime}; need q <= {max_q}"
    )]
    InconsistencyTooHigh {
        q: f64,
        delta_prime: f64,
        max_q: f64,
    },
    #[error(
        "threshold gamma = {gamma} lies outside the admissible interval \
         ({lo}, {hi}) for q = {q}, eta = {eta}"
    )]
    GammaInfeasible {
        gamma: f64,
        q: f64,
        eta: f64,
        lo: f64,
        hi: f64,
    },
    #[error(transparent)]
    Oracle(#[from] OracleError),
    #[error(transparent)]
    Tree(#[from] TreeError),
}

/// Knobs of one voting split.
#[derive(Clone, Copy, Debug, Serialize)]
pub struct SplitConfig {
    /// Size of each sampled voter set.
    pub m: usize,
    /// Poll-fraction threshold separating "same subcluster" from "different".
    pub gamma: f64,
}

/// Everything one split sampled and computed, for audit and replay.
#[derive(Clone, Debug, Serialize)]
pub struct SplitTrace {
    /// Voter set (sampled with replacement; duplicates weigh votes).
    pub voting_set: Vec<ItemId>,
    /// Probe set used for agreement scoring (also with replacement).
    pub agreement_set: Vec<ItemId>,
    pub seed_item: ItemId,
    /// Poll results `(item, probe, fraction)` in computation order, each
    /// distinct unordered pair recorded once.
    pub outlier_fractions: Vec<(ItemId, ItemId, f64)>,
    /// Agreement with the seed, `(item, fraction)`, for the winning seed.
    pub agreement_fractions: Vec<(ItemId, f64)>,
    /// Seeds discarded for producing a one-sided assignment.
    pub seed_retries: u32,
}

impl SplitTrace {
    pub fn outlier_fraction_of(&self, a: ItemId, b: ItemId) -> Option<f64> {
        self.outlier_fractions
            .iter()
            .find(|&&(i, k, _)| (i, k) == (a, b) || (i, k) == (b, a))
            .map(|&(_, _, c)| c)
    }

    pub fn agreement_of(&self, i: ItemId) -> Option<f64> {
        self.agreement_fractions
            .iter()
            .find(|&&(j, _)| j == i)
            .map(|&(_, a)| a)
    }
}

/// Fraction of voters that are the odd one out against the pair `(i, k)`:
/// high when `i` and `k` share a subcluster most voters sit outside, zero
/// when only the whole cluster contains both. Voters equal to `i` or `k`
/// abstain; duplicate voters are counted once per occurrence.
pub fn outlier_fraction<O: OutlierOracle + ?Sized>(
    i: ItemId,
    k: ItemId,
    voters: &[ItemId],
    oracle: &mut O,
    ledger: &mut QueryLedger,
) -> Result<f64, RobustError> {
    if i == k {
        return Err(RobustError::IdenticalPair(i));
    }
    let mut fired = 0usize;
    let mut total = 0usize;
    for &v in voters {
        if v == i || v == k {
            continue;
        }
        total += 1;
        if oracle.outlier(i, k, v, ledger)? == OutlierResult::Outlier(v) {
            fired += 1;
        }
    }
    if total == 0 {
        return Err(RobustError::NoVotersLeft);
    }
    Ok(fired as f64 / total as f64)
}

/// Fraction of probes on which `i` and the seed received the same
/// classification: both poll fractions strictly above `gamma`, or both
/// strictly below. A fraction exactly equal to `gamma` matches neither side.
/// `c_i[t]` and `c_seed[t]` are the poll results against probe
/// `agreement_set[t]`; probes equal to `i` or the seed abstain.
pub fn agreement_fraction(
    i: ItemId,
    seed: ItemId,
    agreement_set: &[ItemId],
    c_i: &[f64],
    c_seed: &[f64],
    gamma: f64,
) -> Result<f64, RobustError> {
    assert_eq!(agreement_set.len(), c_i.len());
    assert_eq!(agreement_set.len(), c_seed.len());
    if i == seed {
        return Err(RobustError::IdenticalPair(i));
    }
    let mut agree = 0usize;
    let mut total = 0usize;
    for (t, &k) in agreement_set.iter().enumerate() {
        if k == i || k == seed {
            continue;
        }
        total += 1;
        let same_high = c_i[t] > gamma && c_seed[t] > gamma;
        let same_low = c_i[t] < gamma && c_seed[t] < gamma;
        if same_high || same_low {
            agree += 1;
        }
    }
    if total == 0 {
        return Err(RobustError::NoProbesLeft);
    }
    Ok(agree as f64 / total as f64)
}

fn check_gamma(gamma: f64) -> Result<(), RobustError> {
    if gamma > 0.0 && gamma < 0.5 {
        Ok(())
    } else {
        Err(RobustError::ParamOutOfRange {
            name: "gamma",
            value: gamma,
            domain: "(0, 1/2)",
        })
    }
}

/// Splits `cluster` into (seed side, other side) by agreement voting.
///
/// Samples voter and probe sets of size `m` with replacement, picks a seed
/// uniformly, and assigns every other item to the seed's side iff its
/// agreement fraction is at least 1/2. A seed whose assignment degenerates
/// (everything on one side, or all agreement fractions identical) is redrawn
/// up to 3 times before the split reports failure. Both returned sides are
/// sorted ascending and never empty. Distinct metered pairs stay within
/// `3 * m * cluster.len()`.
pub fn split<O: OutlierOracle + ?Sized>(
    cluster: &[ItemId],
    config: &SplitConfig,
    oracle: &mut O,
    rng: &mut ChaCha8Rng,
    ledger: &mut QueryLedger,
) -> Result<(Vec<ItemId>, Vec<ItemId>, SplitTrace), RobustError> {
    let n = cluster.len();
    let m = config.m;
    check_gamma(config.gamma)?;
    if m == 0 {
        return Err(RobustError::EmptyVotingSet);
    }
    if n <= 2 * m {
        return Err(RobustError::ClusterTooSmall { n, m });
    }

    let draw = |rng: &mut ChaCha8Rng| cluster[rng.gen_range(0..n)];
    let voting_set: Vec<ItemId> = (0..m).map(|_| draw(rng)).collect();
    let agreement_set: Vec<ItemId> = (0..m).map(|_| draw(rng)).collect();

    // Poll results are symmetric in the pair, so one cache serves both the
    // per-item rows and the seed row shared by every agreement score.
    let mut cache: HashMap<(u32, u32), f64> = HashMap::new();
    let mut records: Vec<(ItemId, ItemId, f64)> = Vec::new();
    let mut poll = |a: ItemId,
                    b: ItemId,
                    oracle: &mut O,
                    ledger: &mut QueryLedger,
                    records: &mut Vec<(ItemId, ItemId, f64)>|
     -> Result<f64, RobustError> {
        let key = (a.0.min(b.0), a.0.max(b.0));
        if let Some(&c) = cache.get(&key) {
            return Ok(c);
        }
        let c = outlier_fraction(a, b, &voting_set, oracle, ledger)?;
        cache.insert(key, c);
        records.push((a, b, c));
        Ok(c)
    };

    const SEED_RETRIES: u32 = 3;
    for attempt in 0..=SEED_RETRIES {
        let seed = draw(rng);
        let mut c_seed = vec![f64::NAN; m];
        for (t, &k) in agreement_set.iter().enumerate() {
            if k != seed {
                c_seed[t] = poll(seed, k, oracle, ledger, &mut records)?;
            }
        }

        let mut seed_side = vec![seed];
        let mut other_side = Vec::new();
        let mut agreements: Vec<(ItemId, f64)> = Vec::new();
        for &i in cluster {
            if i == seed {
                continue;
            }
            let mut c_i = vec![f64::NAN; m];
            for (t, &k) in agreement_set.iter().enumerate() {
                if k != i && k != seed {
                    c_i[t] = poll(i, k, oracle, ledger, &mut records)?;
                }
            }
            let a = agreement_fraction(i, seed, &agreement_set, &c_i, &c_seed, config.gamma)?;
            agreements.push((i, a));
            if a >= 0.5 {
                seed_side.push(i);
            } else {
                other_side.push(i);
            }
        }

        let one_sided = other_side.is_empty();
        let flat = agreements.windows(2).all(|w| w[0].1 == w[1].1);
        if one_sided || flat {
            continue;
        }
        seed_side.sort_unstable();
        other_side.sort_unstable();
        debug_assert_eq!(seed_side.len() + other_side.len(), n);
        return Ok((
            seed_side,
            other_side,
            SplitTrace {
                voting_set,
                agreement_set,
                seed_item: seed,
                outlier_fractions: records,
                agreement_fractions: agreements,
                seed_retries: attempt,
            },
        ));
    }
    Err(RobustError::DegenerateSplit {
        attempts: SEED_RETRIES + 1,
    })
}

/// Result of a full top-down run.
#[derive(Clone, Debug)]
pub struct RaOutcome {
    pub tree: ClusterTree,
    pub ledger: QueryLedger,
    /// Per-split audit records, root-first, only when requested.
    pub traces: Vec<SplitTrace>,
    /// Clusters left unresolved because every seed degenerated.
    pub failed_splits: u32,
}

/// Top-down clustering of items `0..n_items` by recursive voting splits.
///
/// Clusters of size at most `2m` are emitted as unresolved flat leaves (the
/// voting guarantee needs more than `2m` items); so is any cluster whose
/// split fails outright, counted in `failed_splits`. Everything is driven by
/// one seeded RNG, so runs are deterministic per seed.
pub fn ra_cluster<O: OutlierOracle + ?Sized>(
    n_items: usize,
    config: &SplitConfig,
    oracle: &mut O,
    seed: u64,
    collect_traces: bool,
) -> Result<RaOutcome, RobustError> {
    check_gamma(config.gamma)?;
    if config.m == 0 {
        return Err(RobustError::EmptyVotingSet);
    }
    if n_items <= 2 * config.m {
        return Err(RobustError::ClusterTooSmall {
            n: n_items,
            m: config.m,
        });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut ledger = QueryLedger::new(n_items);
    let mut traces = Vec::new();
    let mut failed = 0u32;
    let items: Vec<ItemId> = (0..n_items as u32).map(ItemId).collect();
    let root = recurse(
        &items,
        config,
        oracle,
        &mut rng,
        &mut ledger,
        collect_traces.then_some(&mut traces),
        &mut failed,
    )?;
    Ok(RaOutcome {
        tree: ClusterTree::new(root)?,
        ledger,
        traces,
        failed_splits: failed,
    })
}

fn recurse<O: OutlierOracle + ?Sized>(
    cluster: &[ItemId],
    config: &SplitConfig,
    oracle: &mut O,
    rng: &mut ChaCha8Rng,
    ledger: &mut QueryLedger,
    mut traces: Option<&mut Vec<SplitTrace>>,
    failed: &mut u32,
) -> Result<Node, RobustError> {
    if cluster.len() == 1 {
        return Ok(Node::leaf(cluster[0]));
    }
    if cluster.len() <= 2 * config.m {
        return Ok(Node::flat(cluster.to_vec()));
    }
    match split(cluster, config, oracle, rng, ledger) {
        Ok((seed_side, other_side, trace)) => {
            if let Some(ts) = traces.as_deref_mut() {
                ts.push(trace);
            }
            let left = recurse(
                &seed_side,
                config,
                oracle,
                rng,
                ledger,
                traces.as_deref_mut(),
                failed,
            )?;
            let right = recurse(&other_side, config, oracle, rng, ledger, traces, failed)?;
            Ok(Node::internal(left, right))
        }
        Err(RobustError::DegenerateSplit { .. }) | Err(RobustError::NoProbesLeft) => {
            *failed += 1;
            Ok(Node::flat(cluster.to_vec()))
        }
        Err(e) => Err(e),
    }
}

/// Fully derived parameter bundle for one planned run.
#[derive(Clone, Copy, Debug, Serialize)]
pub struct RobustParams {
    pub m: usize,
    pub gamma: f64,
    pub q: f64,
    pub eta: f64,
    /// Whole-run failure probability.
    pub delta: f64,
    /// Per-split failure probability after the union bound over splits.
    pub delta_prime: f64,
    /// Per-item failure probability within one split.
    pub delta_c: f64,
}

/// How to turn a whole-run failure budget into a voter-set size.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize)]
pub enum BoundMode {
    /// Per-split requirement instantiated at the largest cluster with the
    /// union-bounded per-split budget. Larger m, airtight derivation.
    #[default]
    Conservative,
    /// The closed-form constant as printed in the source analysis; smaller m,
    /// but its derivation looks inconsistent with its own appendix. Offered
    /// for comparison, not as ground truth.
    Literal,
}

fn check_unit(name: &'static str, value: f64) -> Result<(), RobustError> {
    if value > 0.0 && value < 1.0 {
        Ok(())
    } else {
        Err(RobustError::ParamOutOfRange {
            name,
            value,
            domain: "(0, 1)",
        })
    }
}

fn check_rate_q(q: f64) -> Result<(), RobustError> {
    if (0.0..0.5).contains(&q) {
        Ok(())
    } else {
        Err(RobustError::ParamOutOfRange {
            name: "q",
            value: q,
            domain: "[0, 1/2)",
        })
    }
}

fn check_eta(eta: f64) -> Result<(), RobustError> {
    if eta > 0.0 && eta <= 0.5 {
        Ok(())
    } else {
        Err(RobustError::ParamOutOfRange {
            name: "eta",
            value: eta,
            domain: "(0, 1/2]",
        })
    }
}

/// Largest inconsistency rate the concentration argument tolerates at
/// per-split failure probability `delta_prime`.
pub fn a1_max_q(delta_prime: f64) -> f64 {
    1.0 - 1.0 / (2.0 * (1.0 - delta_prime)).sqrt()
}

/// Admissible threshold interval: `gamma` must exceed the worst poll
/// fraction a same-subcluster pair can be dragged down to, and stay below
/// the best a cross-pair can be lifted to. Returns whether `gamma` is
/// inside, plus the interval itself (empty when `lo >= hi`).
pub fn a2_feasible(q: f64, gamma: f64, eta: f64) -> (bool, (f64, f64)) {
    let keep = (1.0 - q) * (1.0 - q);
    let lo = 1.0 - keep;
    let hi = keep * eta;
    (gamma > lo && gamma < hi, (lo, hi))
}

/// Leading constant of the voter-set size bound. Errors name the violated
/// assumption: the inconsistency-rate cap, or the threshold interval.
pub fn c0_constant(
    delta_prime: f64,
    q: f64,
    gamma: f64,
    eta: f64,
) -> Result<f64, RobustError> {
    check_unit("delta_prime", delta_prime)?;
    check_rate_q(q)?;
    check_gamma(gamma)?;
    check_eta(eta)?;
    let max_q = a1_max_q(delta_prime);
    if q > max_q {
        return Err(RobustError::InconsistencyTooHigh {
            q,
            delta_prime,
            max_q,
        });
    }
    let (ok, (lo, hi)) = a2_feasible(q, gamma, eta);
    if !ok {
        return Err(RobustError::GammaInfeasible {
            gamma,
            q,
            eta,
            lo,
            hi,
        });
    }
    let keep = (1.0 - q) * (1.0 - q);
    let seed_term = {
        let gap = (1.0 - delta_prime) * keep - 0.5;
        1.0 / (2.0 * gap * gap)
    };
    let threshold_term = {
        let below = gamma - (1.0 - keep);
        let above = keep * eta - gamma;
        1.0 / (2.0 * (below * below).min(above * above))
    };
    let c0 = seed_term.max(threshold_term);
    if !c0.is_finite() {
        return Err(RobustError::InconsistencyTooHigh {
            q,
            delta_prime,
            max_q,
        });
    }
    Ok(c0)
}

/// Voter-set size guaranteeing one split of an `n`-item cluster succeeds
/// with probability at least `1 - delta_prime`.
pub fn required_m_split(
    n: usize,
    delta_prime: f64,
    q: f64,
    gamma: f64,
    eta: f64,
) -> Result<usize, RobustError> {
    let c0 = c0_constant(delta_prime, q, gamma, eta)?;
    Ok((c0 * (4.0 * n as f64 / delta_prime).ln()).ceil() as usize)
}

/// Per-split failure budget that makes the whole recursion fail with
/// probability at most `delta`: the union bound spreads `delta` over the
/// at most `2 * N^(1/ln(1/(1-eta)))` splits a depth-bounded recursion makes.
pub fn derived_delta_prime(n_items: usize, delta: f64, eta: f64) -> f64 {
    let exponent = 1.0 / (1.0 / (1.0 - eta)).ln();
    delta / (2.0 * (n_items as f64).powf(exponent))
}

/// Voter-set size for a whole run over `n_items` with failure budget
/// `delta`. See [`BoundMode`] for the two published forms.
pub fn required_m_global(
    n_items: usize,
    delta: f64,
    q: f64,
    gamma: f64,
    eta: f64,
    mode: BoundMode,
) -> Result<usize, RobustError> {
    check_unit("delta", delta)?;
    check_eta(eta)?;
    let delta_prime = derived_delta_prime(n_items, delta, eta);
    match mode {
        BoundMode::Conservative => required_m_split(n_items, delta_prime, q, gamma, eta),
        BoundMode::Literal => {
            let c0 = c0_constant(delta_prime, q, gamma, eta)?;
            let k0 = c0 / (1.0 + 1.0 / (1.0 / (1.0 - eta)).ln());
            Ok((k0 * (8.0 * n_items as f64 / delta).ln()).ceil() as usize)
        }
    }
}

/// Derives the full parameter bundle for a run, including the failure
/// budgets the voter-set size was computed from.
pub fn plan_global(
    n_items: usize,
    delta: f64,
    q: f64,
    gamma: f64,
    eta: f64,
    mode: BoundMode,
) -> Result<RobustParams, RobustError> {
    let m = required_m_global(n_items, delta, q, gamma, eta, mode)?;
    let delta_prime = derived_delta_prime(n_items, delta, eta);
    Ok(RobustParams {
        m,
        gamma,
        q,
        eta,
        delta,
        delta_prime,
        delta_c: delta_prime / n_items as f64,
    })
}
