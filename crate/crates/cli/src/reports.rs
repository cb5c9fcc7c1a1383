//! Report types emitted by the canned experiments.
//!
//! Every report embeds the configuration that produced it (including the
//! root seed) and the tool/library versions, so a report file is enough to
//! rerun the experiment. JSON carries the full nested report; CSV flattens
//! just the table body for plotting.

use serde::Serialize;

/// Provenance block shared by all reports.
#[derive(Clone, Debug, Serialize)]
pub struct RunMeta {
    pub experiment: &'static str,
    pub tool_version: &'static str,
    pub library_version: &'static str,
    pub trials: usize,
    pub rng_seed: u64,
}

impl RunMeta {
    pub fn new(experiment: &'static str, trials: usize, rng_seed: u64) -> RunMeta {
        RunMeta {
            experiment,
            tool_version: env!("CARGO_PKG_VERSION"),
            library_version: actclust::VERSION,
            trials,
            rng_seed,
        }
    }
}

/// Query-cost comparison of the incremental builder against the
/// all-pairs agglomerative baseline, per topology.
#[derive(Clone, Debug, Serialize)]
pub struct Table1Report {
    pub meta: RunMeta,
    pub config: Table1Config,
    pub rows: Vec<Table1Row>,
}

#[derive(Clone, Debug, Serialize)]
pub struct Table1Config {
    pub balanced_sizes: Vec<usize>,
    pub unbalanced_size: usize,
    pub unbalanced_balance_floor: f64,
    pub insertion_order: &'static str,
}

#[derive(Clone, Debug, Serialize)]
pub struct Table1Row {
    pub topology: String,
    pub n_items: usize,
    /// Distinct pairs the baseline consumed — always the full set.
    pub agglomerative_pairs: u64,
    /// Three-way tests per run, averaged over trials.
    pub mean_outlier_tests: f64,
    pub mean_distinct_pairs: f64,
    pub mean_raw_accesses: f64,
    pub tests_to_pairs_ratio: f64,
    pub distinct_to_pairs_ratio: f64,
    pub query_bound: u64,
    pub outlier_recovered_all: bool,
    pub agglomerative_recovered: bool,
}

/// Sensitivity of the exact builder to a handful of adversarially placed
/// wrong answers: mean resolution loss per error count.
#[derive(Clone, Debug, Serialize)]
pub struct Fig2Report {
    pub meta: RunMeta,
    pub config: Fig2Config,
    pub points: Vec<Fig2Point>,
}

#[derive(Clone, Debug, Serialize)]
pub struct Fig2Config {
    pub n_items: usize,
    pub error_counts: Vec<usize>,
}

#[derive(Clone, Debug, Serialize)]
pub struct Fig2Point {
    pub k_errors: usize,
    pub mean_r_min: f64,
    pub std_error: f64,
    pub max_r_min: usize,
}

/// Noise sweep comparing the voting builder against the agglomerative
/// baseline on ordering entropy and resolution.
#[derive(Clone, Debug, Serialize)]
pub struct Table2Report {
    pub meta: RunMeta,
    pub config: Table2Config,
    pub cells: Vec<Table2Cell>,
}

#[derive(Clone, Debug, Serialize)]
pub struct Table2Config {
    pub n_items: usize,
    pub corruption_rates: Vec<f64>,
    pub m_values: Vec<usize>,
    pub gamma: f64,
    pub linkage: actclust::Linkage,
}

#[derive(Clone, Debug, Serialize)]
pub struct Table2Cell {
    pub rate: f64,
    pub algorithm: String,
    /// Voting rows carry their m; the baseline row leaves it null/empty.
    pub m: Option<usize>,
    pub mean_delta_entropy: f64,
    pub mean_r_min: f64,
    pub mean_distinct_pairs: f64,
    /// Share of the full pair set actually touched, averaged over trials.
    pub mean_distinct_fraction: f64,
    /// For voting rows: paired trials whose Δ-entropy beat the baseline's.
    pub entropy_wins_vs_baseline: Option<usize>,
}

/// Failure curve of uniform pair sampling against the planted-cluster
/// recovery threshold.
#[derive(Clone, Debug, Serialize)]
pub struct Prop1Report {
    pub meta: RunMeta,
    pub config: Prop1Config,
    pub points: Vec<Prop1Point>,
}

#[derive(Clone, Debug, Serialize)]
pub struct Prop1Config {
    pub n_items: usize,
    pub planted_size: usize,
    /// Analytic sample-count threshold the sweep is centered on.
    pub threshold: usize,
}

#[derive(Clone, Debug, Serialize)]
pub struct Prop1Point {
    pub n_samples: usize,
    pub threshold_multiple: f64,
    pub failure_fraction: f64,
}

/// Deterministic pretty JSON for any report.
pub fn to_json<T: Serialize>(report: &T) -> anyhow::Result<String> {
    Ok(serde_json::to_string_pretty(report)?)
}

/// Flatten the table body to CSV (headers from the row struct).
pub fn rows_to_csv<T: Serialize>(rows: &[T]) -> anyhow::Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for row in rows {
        w.serialize(row)?;
    }
    Ok(String::from_utf8(w.into_inner()?)?)
}
