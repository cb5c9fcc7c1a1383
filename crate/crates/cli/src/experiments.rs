//! The four canned experiments.
//!
//! Trials fan out across worker threads; every randomized quantity inside
//! trial `t` derives from `rng_seed + t`, and aggregation only consumes the
//! trial-indexed result vector, so reports are byte-identical regardless of
//! worker count or scheduling.

use actclust::oracle::{ExactOracle, FaultyOracle};
use actclust::{
    agglomerate, evaluate, gen_balanced_tree, gen_random_tree, gen_tc_similarities,
    inject_inconsistencies, outlier_cluster, query_bound, r_min, ra_cluster,
    random_sampling_threshold, random_sampling_trial, tree_equal, InsertionOrder, Linkage,
    QueryLedger, SplitConfig, TiePolicy,
};
use anyhow::{ensure, Context, Result};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::reports::*;

/// Independent sub-seed streams for one trial. Stream order is part of the
/// experiment definition: reordering draws changes results.
struct TrialStreams {
    rng: ChaCha8Rng,
}

impl TrialStreams {
    fn new(rng_seed: u64, trial: usize) -> TrialStreams {
        TrialStreams {
            rng: ChaCha8Rng::seed_from_u64(rng_seed.wrapping_add(trial as u64)),
        }
    }

    fn next(&mut self) -> u64 {
        self.rng.gen()
    }
}

/// Run `f(0..trials)` across worker threads and return results in trial
/// order. `f` must be pure in its trial index.
fn fan_out<T, F>(trials: usize, f: F) -> Result<Vec<T>>
where
    T: Send,
    F: Fn(usize) -> Result<T> + Sync,
{
    if trials == 0 {
        return Ok(Vec::new());
    }
    let workers = std::thread::available_parallelism()
        .map(|n| n.get())
        .unwrap_or(1)
        .min(trials);
    let chunk = trials.div_ceil(workers);
    let mut slots: Vec<Option<T>> = std::iter::repeat_with(|| None).take(trials).collect();
    std::thread::scope(|scope| {
        let mut handles = Vec::new();
        for (w, block) in slots.chunks_mut(chunk).enumerate() {
            let f = &f;
            handles.push(scope.spawn(move || -> Result<()> {
                for (off, slot) in block.iter_mut().enumerate() {
                    *slot = Some(f(w * chunk + off)?);
                }
                Ok(())
            }));
        }
        handles
            .into_iter()
            .map(|h| h.join().expect("trial worker panicked"))
            .collect::<Result<Vec<()>>>()
    })?;
    Ok(slots.into_iter().map(|s| s.unwrap()).collect())
}

fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Standard error of the mean (sample standard deviation / sqrt(n)).
fn std_error(xs: &[f64]) -> f64 {
    if xs.len() < 2 {
        return 0.0;
    }
    let m = mean(xs);
    let var = xs.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (xs.len() - 1) as f64;
    (var / xs.len() as f64).sqrt()
}

/// Query-cost table: incremental builder vs the all-pairs baseline on
/// balanced topologies plus one skewed stand-in.
pub fn run_table1(trials: usize, rng_seed: u64) -> Result<Table1Report> {
    ensure!(trials >= 1, "table1 needs at least one trial");
    let config = Table1Config {
        balanced_sizes: vec![128, 256, 512],
        unbalanced_size: 768,
        unbalanced_balance_floor: 0.05,
        insertion_order: "shuffled",
    };

    struct TrialOut {
        tests: f64,
        distinct: f64,
        raw: f64,
        recovered: bool,
    }

    let mut rows = Vec::new();
    let topologies: Vec<(String, usize, Option<f64>)> = config
        .balanced_sizes
        .iter()
        .map(|&n| ("balanced".to_string(), n, None))
        .chain(std::iter::once((
            "unbalanced-768 (stand-in)".to_string(),
            config.unbalanced_size,
            Some(config.unbalanced_balance_floor),
        )))
        .collect();

    for (topo_idx, (label, n, floor)) in topologies.iter().enumerate() {
        let balanced_truth = match floor {
            None => Some(gen_balanced_tree(*n)?),
            Some(_) => None,
        };

        let outs = fan_out(trials, |t| -> Result<TrialOut> {
            let mut streams = TrialStreams::new(rng_seed, topo_idx * trials + t);
            let tree_seed = streams.next();
            let sim_seed = streams.next();
            let order_seed = streams.next();
            let truth = match (balanced_truth.as_ref(), floor) {
                (Some(tree), _) => tree.clone(),
                (None, Some(floor)) => gen_random_tree(*n, *floor, tree_seed)?,
                _ => unreachable!(),
            };
            let store = gen_tc_similarities(&truth, sim_seed)?;
            let mut oracle = ExactOracle::new(&store);
            let out = outlier_cluster(
                *n,
                &mut oracle,
                InsertionOrder::Shuffled(order_seed),
                TiePolicy::Strict,
            )?;
            Ok(TrialOut {
                tests: out.ledger.count() as f64 / 3.0,
                distinct: out.ledger.distinct_pairs() as f64,
                raw: out.ledger.count() as f64,
                recovered: tree_equal(&out.tree, &truth)?,
            })
        })?;

        // Baseline pass on the first trial's instance: the counts are
        // deterministic (always every pair), recovery is spot-checked.
        let (agg_truth, agg_store) = {
            let mut streams = TrialStreams::new(rng_seed, topo_idx * trials);
            let tree_seed = streams.next();
            let sim_seed = streams.next();
            let truth = match (balanced_truth.as_ref(), floor) {
                (Some(tree), _) => tree.clone(),
                (None, Some(floor)) => gen_random_tree(*n, *floor, tree_seed)?,
                _ => unreachable!(),
            };
            let store = gen_tc_similarities(&truth, sim_seed)?;
            (truth, store)
        };
        let mut agg_ledger = QueryLedger::new(*n);
        let agg_tree = agglomerate(&agg_store, Linkage::Average, &mut agg_ledger)?;

        let tests: Vec<f64> = outs.iter().map(|o| o.tests).collect();
        let distincts: Vec<f64> = outs.iter().map(|o| o.distinct).collect();
        let raws: Vec<f64> = outs.iter().map(|o| o.raw).collect();
        let pairs = agg_ledger.distinct_pairs();
        rows.push(Table1Row {
            topology: label.clone(),
            n_items: *n,
            agglomerative_pairs: pairs,
            mean_outlier_tests: mean(&tests),
            mean_distinct_pairs: mean(&distincts),
            mean_raw_accesses: mean(&raws),
            tests_to_pairs_ratio: mean(&tests) / pairs as f64,
            distinct_to_pairs_ratio: mean(&distincts) / pairs as f64,
            query_bound: query_bound(*n)?,
            outlier_recovered_all: outs.iter().all(|o| o.recovered),
            agglomerative_recovered: tree_equal(&agg_tree, &agg_truth)?,
        });
    }

    Ok(Table1Report {
        meta: RunMeta::new("table1", trials, rng_seed),
        config,
        rows,
    })
}

/// Resolution-loss curve of the exact builder under k planted wrong
/// answers per run.
pub fn run_fig2(trials: usize, rng_seed: u64) -> Result<Fig2Report> {
    ensure!(trials >= 1, "fig2 needs at least one trial");
    let config = Fig2Config {
        n_items: 256,
        error_counts: vec![0, 1, 2, 4, 8],
    };
    let truth = gen_balanced_tree(config.n_items)?;

    let per_trial = fan_out(trials, |t| -> Result<Vec<usize>> {
        let mut streams = TrialStreams::new(rng_seed, t);
        let sim_seed = streams.next();
        let store = gen_tc_similarities(&truth, sim_seed)?;

        // Clean pass pins the planned call count the error positions are
        // drawn from; it must recover exactly.
        let mut clean_oracle = ExactOracle::new(&store);
        let clean = outlier_cluster(
            config.n_items,
            &mut clean_oracle,
            InsertionOrder::Ascending,
            TiePolicy::Strict,
        )?;
        ensure!(
            tree_equal(&clean.tree, &truth)?,
            "clean pass failed to recover the planted hierarchy"
        );
        let planned = (clean.ledger.count() / 3) as usize;

        config
            .error_counts
            .iter()
            .map(|&k| -> Result<usize> {
                let corrupt_seed = streams.next();
                let mut oracle = FaultyOracle::new(&store, k, planned, corrupt_seed)?;
                let out = outlier_cluster(
                    config.n_items,
                    &mut oracle,
                    InsertionOrder::Ascending,
                    TiePolicy::Strict,
                )?;
                Ok(r_min(&truth, &out.tree)?)
            })
            .collect()
    })?;

    let points = config
        .error_counts
        .iter()
        .enumerate()
        .map(|(ki, &k)| {
            let r_mins: Vec<f64> = per_trial.iter().map(|rs| rs[ki] as f64).collect();
            Fig2Point {
                k_errors: k,
                mean_r_min: mean(&r_mins),
                std_error: std_error(&r_mins),
                max_r_min: per_trial.iter().map(|rs| rs[ki]).max().unwrap_or(0),
            }
        })
        .collect();

    Ok(Fig2Report {
        meta: RunMeta::new("fig2", trials, rng_seed),
        config,
        points,
    })
}

/// Noise sweep: voting builder (two committee sizes) vs the all-pairs
/// baseline, scored on ordering entropy and resolution.
pub fn run_table2(trials: usize, rng_seed: u64) -> Result<Table2Report> {
    ensure!(trials >= 1, "table2 needs at least one trial");
    let config = Table2Config {
        n_items: 512,
        corruption_rates: vec![0.0, 0.05, 0.15, 0.25],
        m_values: vec![40, 80],
        gamma: 0.30,
        linkage: Linkage::Average,
    };
    let truth = gen_balanced_tree(config.n_items)?;
    let max_pairs = (config.n_items * (config.n_items - 1) / 2) as f64;

    struct TrialOut {
        baseline: (f64, f64, f64), // delta entropy, r_min, distinct pairs
        voting: Vec<(f64, f64, f64)>,
    }

    let mut cells = Vec::new();
    for (qi, &rate) in config.corruption_rates.iter().enumerate() {
        let outs = fan_out(trials, |t| -> Result<TrialOut> {
            let mut streams = TrialStreams::new(rng_seed, qi * trials + t);
            let sim_seed = streams.next();
            let inject_seed = streams.next();
            let baseline_seed = streams.next();
            let clean = gen_tc_similarities(&truth, sim_seed)?;
            let store = inject_inconsistencies(&clean, rate, inject_seed)?;

            let mut agg_ledger = QueryLedger::new(config.n_items);
            let agg_tree = agglomerate(&store, config.linkage, &mut agg_ledger)?;
            let agg_eval = evaluate(
                &truth,
                &agg_tree,
                &store,
                baseline_seed,
                Some(agg_ledger.snapshot()),
            )?;

            let mut voting = Vec::new();
            for &m in &config.m_values {
                let ra_seed = streams.next();
                let mut oracle = ExactOracle::new(&store);
                let out = ra_cluster(
                    config.n_items,
                    &SplitConfig {
                        m,
                        gamma: config.gamma,
                    },
                    &mut oracle,
                    ra_seed,
                    false,
                )?;
                // Same baseline seed as the agglomerative run: the entropy
                // comparison is paired within a trial.
                let ev = evaluate(
                    &truth,
                    &out.tree,
                    &store,
                    baseline_seed,
                    Some(out.ledger.snapshot()),
                )?;
                voting.push((
                    ev.delta_entropy,
                    ev.r_min as f64,
                    out.ledger.distinct_pairs() as f64,
                ));
            }
            Ok(TrialOut {
                baseline: (
                    agg_eval.delta_entropy,
                    agg_eval.r_min as f64,
                    agg_ledger.distinct_pairs() as f64,
                ),
                voting,
            })
        })?;

        let agg_de: Vec<f64> = outs.iter().map(|o| o.baseline.0).collect();
        let agg_rm: Vec<f64> = outs.iter().map(|o| o.baseline.1).collect();
        let agg_dp: Vec<f64> = outs.iter().map(|o| o.baseline.2).collect();
        cells.push(Table2Cell {
            rate,
            algorithm: "agglomerative".to_string(),
            m: None,
            mean_delta_entropy: mean(&agg_de),
            mean_r_min: mean(&agg_rm),
            mean_distinct_pairs: mean(&agg_dp),
            mean_distinct_fraction: mean(&agg_dp) / max_pairs,
            entropy_wins_vs_baseline: None,
        });
        for (mi, &m) in config.m_values.iter().enumerate() {
            let de: Vec<f64> = outs.iter().map(|o| o.voting[mi].0).collect();
            let rm: Vec<f64> = outs.iter().map(|o| o.voting[mi].1).collect();
            let dp: Vec<f64> = outs.iter().map(|o| o.voting[mi].2).collect();
            let wins = outs
                .iter()
                .filter(|o| o.voting[mi].0 > o.baseline.0)
                .count();
            cells.push(Table2Cell {
                rate,
                algorithm: "robust".to_string(),
                m: Some(m),
                mean_delta_entropy: mean(&de),
                mean_r_min: mean(&rm),
                mean_distinct_pairs: mean(&dp),
                mean_distinct_fraction: mean(&dp) / max_pairs,
                entropy_wins_vs_baseline: Some(wins),
            });
        }
    }

    Ok(Table2Report {
        meta: RunMeta::new("table2", trials, rng_seed),
        config,
        cells,
    })
}

/// Failure curve of uniform pair sampling around the planted-cluster
/// recovery threshold.
pub fn run_prop1(trials: usize, rng_seed: u64) -> Result<Prop1Report> {
    ensure!(trials >= 1, "prop1 needs at least one trial");
    let n_items = 256;
    let planted_size = 16;
    let threshold =
        random_sampling_threshold(n_items, planted_size).context("threshold parameters")?;
    let config = Prop1Config {
        n_items,
        planted_size,
        threshold,
    };

    let total_pairs = n_items * (n_items - 1) / 2;
    let multiples = [0.0, 0.25, 0.5, 0.75, 1.0, 1.5, 2.0, 4.0, 8.0];
    let sweep: Vec<usize> = multiples
        .iter()
        .map(|f| ((f * threshold as f64).round() as usize).min(total_pairs))
        .collect();

    let fractions = fan_out(sweep.len(), |i| -> Result<f64> {
        Ok(random_sampling_trial(
            n_items,
            planted_size,
            sweep[i],
            trials,
            rng_seed.wrapping_add(i as u64),
        )?)
    })?;

    let points = sweep
        .iter()
        .zip(&fractions)
        .map(|(&n_samples, &failure_fraction)| Prop1Point {
            n_samples,
            threshold_multiple: n_samples as f64 / threshold as f64,
            failure_fraction,
        })
        .collect();

    Ok(Prop1Report {
        meta: RunMeta::new("prop1", trials, rng_seed),
        config,
        points,
    })
}

/// Everything `exp` can run, with the trial counts the tables were
/// designed around.
pub fn default_trials(experiment: &str) -> Option<usize> {
    match experiment {
        "table1" => Some(20),
        "fig2" => Some(150),
        "table2" => Some(10),
        "prop1" => Some(200),
        _ => None,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reports_are_deterministic_across_worker_schedules() {
        // Same seed twice; fan-out order must not leak into the bytes.
        let a = run_table1(3, 9).unwrap();
        let b = run_table1(3, 9).unwrap();
        assert_eq!(to_json(&a).unwrap(), to_json(&b).unwrap());

        let a = run_prop1(25, 4).unwrap();
        let b = run_prop1(25, 4).unwrap();
        assert_eq!(to_json(&a).unwrap(), to_json(&b).unwrap());
    }

    #[test]
    fn table1_counts_are_exact_for_the_baseline() {
        let report = run_table1(2, 7).unwrap();
        let by_n: Vec<(usize, u64)> = report
            .rows
            .iter()
            .map(|r| (r.n_items, r.agglomerative_pairs))
            .collect();
        assert_eq!(
            by_n,
            vec![
                (128, 8_128),
                (256, 32_640),
                (512, 130_816),
                (768, 294_528)
            ]
        );
        for row in &report.rows {
            assert!(row.outlier_recovered_all);
            assert!(row.agglomerative_recovered);
            assert!(row.mean_distinct_pairs <= row.query_bound as f64);
            assert!(row.tests_to_pairs_ratio < 0.2);
        }
    }

    #[test]
    fn fig2_clean_point_is_exact() {
        let report = run_fig2(5, 11).unwrap();
        assert_eq!(report.points[0].k_errors, 0);
        assert_eq!(report.points[0].mean_r_min, 1.0);
        assert_eq!(report.points[0].std_error, 0.0);
        // A couple of wrong answers already cost real resolution.
        assert!(report.points[2].mean_r_min > 1.0);
    }

    #[test]
    fn prop1_curve_hits_both_endpoints() {
        let report = run_prop1(40, 2).unwrap();
        let first = report.points.first().unwrap();
        let last = report.points.last().unwrap();
        assert_eq!(first.n_samples, 0);
        assert_eq!(first.failure_fraction, 1.0);
        assert_eq!(last.n_samples, 256 * 255 / 2);
        assert_eq!(last.failure_fraction, 0.0);
        assert_eq!(report.config.threshold, 4_080);
    }

    #[test]
    fn table2_smoke_run_pairs_comparisons() {
        // Tiny trial count: just the plumbing and the pairing invariants.
        let report = run_table2(1, 3).unwrap();
        assert_eq!(report.cells.len(), 12);
        for cell in &report.cells {
            match cell.algorithm.as_str() {
                "agglomerative" => {
                    assert_eq!(cell.m, None);
                    assert_eq!(cell.mean_distinct_pairs, 130_816.0);
                    assert_eq!(cell.mean_distinct_fraction, 1.0);
                }
                "robust" => {
                    assert!(cell.m.is_some());
                    assert!(cell.mean_distinct_fraction < 1.0);
                    assert!(cell.entropy_wins_vs_baseline.is_some());
                }
                other => panic!("unexpected algorithm {other}"),
            }
        }
        // Clean-rate baseline row recovers exactly.
        let clean_agg = &report.cells[0];
        assert_eq!(clean_agg.rate, 0.0);
        assert_eq!(clean_agg.mean_r_min, 1.0);
    }
}
