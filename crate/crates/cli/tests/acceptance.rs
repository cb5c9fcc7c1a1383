//! Acceptance suite: one test per shipping criterion, each ending in a
//! single `[criterion NN] PASS/FAIL` line (run with `--nocapture` to see
//! the lines for passing tests; failures carry theirs in the panic text).
//!
//! Criterion 06 is split in two: its ordinal claims hold and stay green,
//! while its two absolute resolution targets sit below what this design
//! can produce — the second test states the measured values and why, and
//! is expected to stay red rather than be tuned around.

use std::sync::OnceLock;
use std::time::{Duration, Instant};

use actclust::oracle::ExactOracle;
use actclust::robust::c0_constant;
use actclust::{
    a2_feasible, clusters_of, gen_balanced_tree, gen_random_tree, gen_tc_similarities,
    outlier_cluster, query_bound, r_min, ra_cluster, random_sampling_threshold,
    random_sampling_trial, split, tree_equal, ClusterSet, InsertionOrder, ItemId, Node,
    QueryLedger, RobustError, SimilarityStore, SplitConfig, TiePolicy,
};
use actclust_cli::experiments::{run_fig2, run_table1, run_table2};
use actclust_cli::reports::Table2Report;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn pass(criterion: u32, what: &str) {
    println!("[criterion {criterion:02}] PASS — {what}");
}

fn fail(criterion: u32, what: &str) -> String {
    format!("[criterion {criterion:02}] FAIL — {what}")
}

fn check_runtime(criterion: u32, started: Instant, cap: Duration) {
    let elapsed = started.elapsed();
    assert!(
        elapsed <= cap,
        "{}",
        fail(criterion, &format!("runtime {elapsed:?} exceeds {cap:?}"))
    );
}

/// The noise sweep feeds two tests; run it once.
fn table2() -> &'static Table2Report {
    static REPORT: OnceLock<Table2Report> = OnceLock::new();
    REPORT.get_or_init(|| run_table2(10, 0).expect("noise sweep must run"))
}

fn table2_cell(rate: f64, m: Option<usize>) -> &'static actclust_cli::reports::Table2Cell {
    table2()
        .cells
        .iter()
        .find(|c| c.rate == rate && c.m == m)
        .expect("cell present")
}

#[test]
fn criterion_01_exact_recovery_within_budget() {
    let started = Instant::now();
    for i in 0..100usize {
        let (truth, n) = if i % 2 == 0 {
            let n = [16, 32, 64, 128, 256, 512][(i / 2) % 6];
            (gen_balanced_tree(n).unwrap(), n)
        } else {
            let n = 16 + (i * 37) % 497;
            let floor = 0.1 + 0.1 * ((i % 4) as f64);
            (gen_random_tree(n, floor, 900 + i as u64).unwrap(), n)
        };
        let store = gen_tc_similarities(&truth, 7_000 + i as u64).unwrap();
        let mut oracle = ExactOracle::new(&store);
        let out = outlier_cluster(
            n,
            &mut oracle,
            InsertionOrder::Shuffled(3_000 + i as u64),
            TiePolicy::Strict,
        )
        .unwrap();
        assert!(
            tree_equal(&out.tree, &truth).unwrap(),
            "{}",
            fail(1, &format!("instance {i} (n={n}) not recovered exactly"))
        );
        let bound = query_bound(n).unwrap();
        assert!(
            out.ledger.distinct_pairs() <= bound,
            "{}",
            fail(
                1,
                &format!(
                    "instance {i} (n={n}) used {} distinct pairs, bound {bound}",
                    out.ledger.distinct_pairs()
                )
            )
        );
    }
    check_runtime(1, started, Duration::from_secs(30));
    pass(1, "100/100 instances recovered exactly within the query bound");
}

#[test]
fn criterion_02_query_cost_table() {
    let started = Instant::now();
    let report = run_table1(20, 0).unwrap();
    // Ratio caps per balanced size: 1.5x the reference percentages.
    let targets: [(usize, u64, f64); 3] = [
        (128, 8_128, 1.5 * 0.1078),
        (256, 32_640, 1.5 * 0.0621),
        (512, 130_816, 1.5 * 0.0349),
    ];
    for (n, pairs, ratio_cap) in targets {
        let row = report
            .rows
            .iter()
            .find(|r| r.n_items == n)
            .unwrap_or_else(|| panic!("{}", fail(2, &format!("missing row n={n}"))));
        assert_eq!(
            row.agglomerative_pairs,
            pairs,
            "{}",
            fail(2, &format!("baseline pair count at n={n} must be exact"))
        );
        assert!(
            row.tests_to_pairs_ratio <= ratio_cap,
            "{}",
            fail(
                2,
                &format!(
                    "n={n}: mean test ratio {:.4} over cap {:.4}",
                    row.tests_to_pairs_ratio, ratio_cap
                )
            )
        );
        assert!(
            row.outlier_recovered_all && row.agglomerative_recovered,
            "{}",
            fail(2, &format!("n={n}: a run failed to recover the truth"))
        );
    }
    check_runtime(2, started, Duration::from_secs(60));
    pass(2, "baseline counts exact, mean test ratios within 1.5x reference");
}

#[test]
fn criterion_03_sampling_threshold_failure() {
    let started = Instant::now();
    assert_eq!(random_sampling_threshold(256, 16).unwrap(), 4_080);
    let failure = random_sampling_trial(256, 16, 2_040, 200, 0).unwrap();
    assert!(
        failure >= 0.95,
        "{}",
        fail(
            3,
            &format!("failure fraction {failure} below 0.95 at half the threshold")
        )
    );
    check_runtime(3, started, Duration::from_secs(30));
    pass(3, "half-threshold sampling fails ≥ 95% of trials");
}

#[test]
fn criterion_04_fragility_curve() {
    let started = Instant::now();
    let report = run_fig2(150, 0).unwrap();
    let points = &report.points;
    assert_eq!(points[0].k_errors, 0);
    assert_eq!(
        points[0].mean_r_min,
        1.0,
        "{}",
        fail(4, "clean runs must recover exactly (mean r_min 1)")
    );
    let k2 = points.iter().find(|p| p.k_errors == 2).unwrap();
    assert!(
        k2.mean_r_min >= 8.0,
        "{}",
        fail(
            4,
            &format!("two wrong answers only cost mean r_min {}", k2.mean_r_min)
        )
    );
    for w in points.windows(2) {
        let slack = (w[0].std_error * w[0].std_error + w[1].std_error * w[1].std_error).sqrt();
        assert!(
            w[1].mean_r_min >= w[0].mean_r_min - slack,
            "{}",
            fail(
                4,
                &format!(
                    "mean r_min dropped from {} (k={}) to {} (k={}) beyond noise {slack}",
                    w[0].mean_r_min, w[0].k_errors, w[1].mean_r_min, w[1].k_errors
                )
            )
        );
    }
    check_runtime(4, started, Duration::from_secs(120));
    pass(4, "resolution loss grows monotonically with planted errors");
}

/// Sum of cluster sizes over every split the builder performed — each
/// internal node of the output is exactly one successful split.
fn split_sizes_total(node: &Node) -> u64 {
    match node.children() {
        Some((l, r)) => node.size() as u64 + split_sizes_total(l) + split_sizes_total(r),
        None => 0,
    }
}

#[test]
fn criterion_05_clean_voting_recovery() {
    let started = Instant::now();
    let truth = gen_balanced_tree(256).unwrap();
    let truth_clusters = clusters_of(&truth);
    let big_clusters: Vec<&Vec<ItemId>> =
        truth_clusters.iter().filter(|c| c.len() > 80).collect();
    assert_eq!(big_clusters.len(), 3); // 256 and the two 128s
    let config = SplitConfig { m: 40, gamma: 0.30 };
    for run in 0..20u64 {
        let store = gen_tc_similarities(&truth, 500 + run).unwrap();
        let mut oracle = ExactOracle::new(&store);
        let out = ra_cluster(256, &config, &mut oracle, 800 + run, false).unwrap();
        assert_eq!(
            out.failed_splits,
            0,
            "{}",
            fail(5, &format!("run {run}: a split degenerated on clean data"))
        );
        let est = clusters_of(&out.tree);
        for cluster in &big_clusters {
            assert!(
                est.contains(cluster),
                "{}",
                fail(
                    5,
                    &format!("run {run}: cluster of {} items not recovered", cluster.len())
                )
            );
        }
        let budget = 3 * config.m as u64 * split_sizes_total(out.tree.root());
        assert!(
            out.ledger.distinct_pairs() <= budget,
            "{}",
            fail(
                5,
                &format!(
                    "run {run}: {} distinct pairs over the 3·m·n split budget {budget}",
                    out.ledger.distinct_pairs()
                )
            )
        );
    }
    check_runtime(5, started, Duration::from_secs(60));
    pass(5, "20/20 clean runs recover every cluster above the floor, in budget");
}

#[test]
fn criterion_06_noise_sweep_ordinal() {
    let started = Instant::now();
    let agg = table2_cell(0.05, None);
    let rob40 = table2_cell(0.05, Some(40));
    assert!(
        rob40.mean_delta_entropy > agg.mean_delta_entropy,
        "{}",
        fail(6, "voting builder did not beat the baseline on mean Δ-entropy at q=0.05")
    );
    let wins = rob40.entropy_wins_vs_baseline.unwrap();
    assert!(
        wins >= 9,
        "{}",
        fail(6, &format!("only {wins}/10 paired Δ-entropy wins at q=0.05"))
    );
    assert!(
        agg.mean_r_min >= 256.0,
        "{}",
        fail(
            6,
            &format!(
                "baseline was expected to lose a top-level cluster (mean r_min {})",
                agg.mean_r_min
            )
        )
    );
    let rob25_40 = table2_cell(0.25, Some(40));
    let rob25_80 = table2_cell(0.25, Some(80));
    assert!(
        rob25_80.mean_r_min <= rob25_40.mean_r_min,
        "{}",
        fail(
            6,
            &format!(
                "larger committee lost resolution at q=0.25: m=80 {} vs m=40 {}",
                rob25_80.mean_r_min, rob25_40.mean_r_min
            )
        )
    );
    check_runtime(6, started, Duration::from_secs(600));
    pass(6, "noise sweep ordinal claims (paired wins, baseline collapse, committee ordering)");
}

#[test]
fn criterion_06_absolute_resolution_targets() {
    let rob05_40 = table2_cell(0.05, Some(40));
    let rob25_80 = table2_cell(0.25, Some(80));
    let mut misses = Vec::new();
    if rob05_40.mean_r_min > 32.0 {
        misses.push(format!(
            "q=0.05 m=40: mean r_min {} (target ≤ 32). The builder leaves every \
             cluster of ≤ 2m = 80 items unresolved as a flat leaf, so size-32 true \
             clusters are never produced and the best value this design can reach \
             is 33 — the target sits one below the structural floor.",
            rob05_40.mean_r_min
        ));
    }
    if rob25_80.mean_r_min > 128.0 {
        misses.push(format!(
            "q=0.25 m=80: mean r_min {} (target ≤ 128). At this inconsistency rate \
             the admissible threshold interval is empty — 1-(1-q)^2 = {:.4} already \
             exceeds (1-q)^2·η = {:.4} — so γ=0.30 cannot separate within-cluster \
             from cross-cluster poll fractions and occasional top-level leaks are \
             expected. The target assumes milder corruption than the range-uniform \
             resampling this generator is specified to use.",
            rob25_80.mean_r_min,
            1.0 - 0.75f64 * 0.75,
            0.75f64 * 0.75 * 0.5,
        ));
    }
    if misses.is_empty() {
        pass(6, "absolute resolution targets");
    } else {
        println!("[criterion 06] FAIL — absolute resolution targets (see panic text)");
        panic!(
            "{}\n{}",
            fail(6, "absolute resolution targets out of reach as designed:"),
            misses.join("\n")
        );
    }
}

#[test]
fn criterion_07_monotone_invariance() {
    let transforms: [(&str, fn(f64) -> f64); 3] = [
        ("2s+1", |s| 2.0 * s + 1.0),
        ("exp", f64::exp),
        ("cube", |s| s * s * s),
    ];
    for i in 0..10u64 {
        let n = 48 + 8 * (i as usize % 4);
        let truth = if i % 2 == 0 {
            gen_balanced_tree(64).unwrap()
        } else {
            gen_random_tree(n, 0.2, 40 + i).unwrap()
        };
        let n = truth.len();
        let store = gen_tc_similarities(&truth, 60 + i).unwrap();

        let run_outlier = |s: &SimilarityStore| {
            let mut oracle = ExactOracle::new(s);
            outlier_cluster(n, &mut oracle, InsertionOrder::Shuffled(i), TiePolicy::Strict)
                .unwrap()
        };
        let run_voting = |s: &SimilarityStore| {
            let mut oracle = ExactOracle::new(s);
            ra_cluster(n, &SplitConfig { m: 10, gamma: 0.15 }, &mut oracle, 70 + i, false)
                .unwrap()
        };
        let base_outlier = run_outlier(&store);
        let base_voting = run_voting(&store);

        for (name, f) in transforms {
            let mapped = store.transform_values(f);
            let t_outlier = run_outlier(&mapped);
            assert!(
                tree_equal(&t_outlier.tree, &base_outlier.tree).unwrap()
                    && t_outlier.ledger == base_outlier.ledger,
                "{}",
                fail(7, &format!("incremental builder not invariant under {name} (instance {i})"))
            );
            let t_voting = run_voting(&mapped);
            assert!(
                tree_equal(&t_voting.tree, &base_voting.tree).unwrap()
                    && t_voting.ledger == base_voting.ledger,
                "{}",
                fail(7, &format!("voting builder not invariant under {name} (instance {i})"))
            );
        }
    }
    pass(7, "both builders invariant under order-preserving value maps");
}

#[test]
fn criterion_08_parameter_calculus() {
    let c0 = c0_constant(0.05, 0.05, 0.30, 0.5).unwrap();
    assert!(
        (c0 - 21.856).abs() <= 0.001,
        "{}",
        fail(8, &format!("leading constant {c0} not 21.856 ± 0.001"))
    );

    // Sign scan of both admissibility bounds over a 100^3 grid.
    for qi in 0..100 {
        let q = 0.0045 * qi as f64; // 0 .. 0.4455
        for gi in 0..100 {
            let gamma = 0.005 + 0.0099 * gi as f64; // inside (0, 1)
            for ei in 0..100 {
                let eta = 0.005 + 0.005 * ei as f64; // up to 0.5
                let keep = (1.0 - q) * (1.0 - q);
                // Strict sign check on both bound differences; equality on
                // either boundary is infeasible.
                let expect = gamma - (1.0 - keep) > 0.0 && keep * eta - gamma > 0.0;
                let (got, (lo, hi)) = a2_feasible(q, gamma, eta);
                assert_eq!(
                    got, expect,
                    "{}",
                    fail(8, &format!("feasibility mismatch at q={q} γ={gamma} η={eta}"))
                );
                assert_eq!((lo, hi), (1.0 - keep, keep * eta));
            }
        }
    }

    match c0_constant(0.05, 0.4, 0.30, 0.5) {
        Err(RobustError::InconsistencyTooHigh { .. }) => {}
        other => panic!(
            "{}",
            fail(8, &format!("q=0.4 must trip the rate cap, got {other:?}"))
        ),
    }
    pass(8, "constant, feasibility grid, and rate-cap rejection all line up");
}

/// Naive cluster collection: every node contributes its item set.
fn naive_clusters(node: &Node, out: &mut Vec<Vec<ItemId>>) {
    let mut items = node.leaf_order();
    items.sort_unstable();
    out.push(items);
    if let Some((l, r)) = node.children() {
        naive_clusters(l, out);
        naive_clusters(r, out);
    }
}

fn naive_r_min(truth: &ClusterSet, est: &ClusterSet, n: usize) -> usize {
    (1..=n)
        .find(|&r| {
            truth
                .iter()
                .filter(|c| c.len() >= r)
                .all(|c| est.contains(c))
        })
        .expect("the full item set is always shared")
}

#[test]
fn criterion_09_reference_recomputation() {
    // Poll and agreement fractions recomputed from recorded traces.
    for n in 7..=16usize {
        let truth = gen_random_tree(n, 0.2, n as u64).unwrap();
        let store = gen_tc_similarities(&truth, 17 + n as u64).unwrap();
        let cluster: Vec<ItemId> = (0..n as u32).map(ItemId).collect();
        let config = SplitConfig { m: 3, gamma: 0.30 };
        let mut trace = None;
        for attempt in 0..10u64 {
            let mut oracle = ExactOracle::new(&store);
            let mut rng = ChaCha8Rng::seed_from_u64(1_000 * n as u64 + attempt);
            let mut ledger = QueryLedger::new(n);
            match split(&cluster, &config, &mut oracle, &mut rng, &mut ledger) {
                Ok((_, _, t)) => {
                    trace = Some(t);
                    break;
                }
                // Tiny committees can sample themselves into a corner;
                // that is a property of the draw, not of the recording.
                Err(RobustError::DegenerateSplit { .. })
                | Err(RobustError::NoProbesLeft)
                | Err(RobustError::NoVotersLeft) => continue,
                Err(e) => panic!("{}", fail(9, &format!("split failed at n={n}: {e}"))),
            }
        }
        let trace = trace.unwrap_or_else(|| {
            panic!("{}", fail(9, &format!("no non-degenerate split found at n={n}")))
        });

        // c_{i,k}: fraction of voters (with multiplicity, minus the pair
        // itself) the store names as the outlier.
        for &(i, k, recorded) in &trace.outlier_fractions {
            let mut scratch = QueryLedger::new(n);
            let mut hits = 0usize;
            let mut total = 0usize;
            for &v in &trace.voting_set {
                if v == i || v == k {
                    continue;
                }
                total += 1;
                let res = store.outlier(i, k, v, &mut scratch).unwrap();
                if res == actclust::OutlierResult::Outlier(v) {
                    hits += 1;
                }
            }
            let brute = hits as f64 / total as f64;
            assert_eq!(
                brute, recorded,
                "{}",
                fail(9, &format!("poll fraction mismatch at n={n} pair ({i:?},{k:?})"))
            );
        }

        // a_{i,seed}: probes on the same side of γ as the seed, with
        // multiplicity, skipping the item and seed themselves.
        let seed = trace.seed_item;
        for &(item, recorded) in &trace.agreement_fractions {
            let mut agrees = 0usize;
            let mut total = 0usize;
            for &p in &trace.agreement_set {
                if p == item || p == seed {
                    continue;
                }
                total += 1;
                let ci = trace.outlier_fraction_of(item, p).unwrap();
                let cs = trace.outlier_fraction_of(seed, p).unwrap();
                if (ci > config.gamma && cs > config.gamma)
                    || (ci < config.gamma && cs < config.gamma)
                {
                    agrees += 1;
                }
            }
            let brute = agrees as f64 / total as f64;
            assert_eq!(
                brute, recorded,
                "{}",
                fail(9, &format!("agreement mismatch at n={n} item {item:?}"))
            );
        }
    }

    // Cluster collection, resolution, and decay profile against naive
    // references on a 64-item instance (flat leaves included).
    let truth = gen_random_tree(64, 0.2, 3).unwrap();
    let store = gen_tc_similarities(&truth, 4).unwrap();
    let mut oracle = ExactOracle::new(&store);
    let est = ra_cluster(64, &SplitConfig { m: 10, gamma: 0.15 }, &mut oracle, 5, false)
        .unwrap()
        .tree;
    for tree in [&truth, &est] {
        let mut naive = Vec::new();
        naive_clusters(tree.root(), &mut naive);
        let expected = ClusterSet::from_sets(naive);
        let got = clusters_of(tree);
        assert_eq!(
            got.len(),
            expected.len(),
            "{}",
            fail(9, "cluster collection disagrees with the naive walk")
        );
        assert!(got.iter().all(|c| expected.contains(c)));
    }
    for est_tree in [&truth, &est] {
        let naive = naive_r_min(&clusters_of(&truth), &clusters_of(est_tree), 64);
        assert_eq!(
            r_min(&truth, est_tree).unwrap(),
            naive,
            "{}",
            fail(9, "resolution index disagrees with the naive scan")
        );
    }
    let perm = truth.leaf_order();
    let decay = actclust::off_diag_decay(&store, &perm).unwrap();
    for (d, &got) in decay.iter().enumerate() {
        let d = d + 1;
        let mut sum = 0.0;
        let mut count = 0usize;
        for i in 0..64 - d {
            sum += store.value(perm[i], perm[i + d]);
            count += 1;
        }
        assert_eq!(
            got,
            sum / count as f64,
            "{}",
            fail(9, &format!("decay profile disagrees with the naive loop at d={d}"))
        );
    }
    pass(9, "traces, clusters, resolution, and decay all match naive recomputation");
}

#[test]
fn criterion_10_query_scaling() {
    let mut ratios = Vec::new();
    for n in [128usize, 256, 512] {
        let m = (4.0 * (n as f64).ln()).ceil() as usize;
        let truth = gen_balanced_tree(n).unwrap();
        let mut per_seed = Vec::new();
        for s in 0..3u64 {
            let store = gen_tc_similarities(&truth, 90 + s).unwrap();
            let mut oracle = ExactOracle::new(&store);
            let out = ra_cluster(n, &SplitConfig { m, gamma: 0.30 }, &mut oracle, 95 + s, false)
                .unwrap();
            per_seed.push(out.ledger.distinct_pairs() as f64);
        }
        let mean = per_seed.iter().sum::<f64>() / per_seed.len() as f64;
        let log_n = (n as f64).ln();
        ratios.push(mean / (n as f64 * log_n * log_n));
    }
    let (lo, hi) = (
        ratios.iter().cloned().fold(f64::INFINITY, f64::min),
        ratios.iter().cloned().fold(0.0, f64::max),
    );
    assert!(
        hi / lo < 2.0,
        "{}",
        fail(
            10,
            &format!("normalized query cost varies {:.2}x across sizes ({ratios:?})", hi / lo)
        )
    );
    pass(10, "distinct-pair cost tracks n·ln²n across a 4x size range");
}
