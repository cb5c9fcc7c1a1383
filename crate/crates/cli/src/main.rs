use std::fs;
use std::io::{self, Read, Write};
use std::path::{Path, PathBuf};

use actclust::oracle::ExactOracle;
use actclust::{
    agglomerate, evaluate, gen_balanced_tree, gen_random_tree, gen_tc_similarities,
    inject_inconsistencies, outlier_cluster, plan_global, ra_cluster, BoundMode, ClusterTree,
    InsertionOrder, LedgerSnapshot, Linkage, QueryLedger, SimilarityStore, SplitConfig, TiePolicy,
};
use actclust_cli::experiments::{default_trials, run_fig2, run_prop1, run_table1, run_table2};
use actclust_cli::reports::{rows_to_csv, to_json};
use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Parser)]
#[command(
    name = "actclust",
    version,
    about = "Hierarchical clustering from metered pairwise similarity queries"
)]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Generate a ground-truth hierarchy as tree JSON.
    GenTree(GenTreeArgs),
    /// Generate (optionally corrupted) similarities for a tree, as CSV.
    GenSim(GenSimArgs),
    /// Build a hierarchy from a similarity CSV.
    Cluster(ClusterArgs),
    /// Score an estimated tree against the truth.
    Eval(EvalArgs),
    /// Run a canned experiment and write JSON + CSV reports.
    Exp(ExpArgs),
}

#[derive(Args)]
struct GenTreeArgs {
    /// Item count (power of two for --shape balanced).
    #[arg(long)]
    n: usize,
    #[arg(long, value_enum, default_value_t = Shape::Balanced)]
    shape: Shape,
    /// Lighter-side fraction floor for --shape random.
    #[arg(long, default_value_t = 0.2)]
    balance_floor: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Output path (stdout if omitted).
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
enum Shape {
    Balanced,
    Random,
}

#[derive(Args)]
struct GenSimArgs {
    /// Ground-truth tree JSON produced by gen-tree.
    #[arg(long)]
    tree: PathBuf,
    /// Fraction of pairs to corrupt, in [0, 0.5).
    #[arg(long, default_value_t = 0.0)]
    q: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Output path (stdout if omitted).
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct ClusterArgs {
    /// Similarity CSV produced by gen-sim (or compatible).
    #[arg(long)]
    sim: PathBuf,
    #[arg(long, value_enum)]
    algo: Algo,
    /// Insertion order for --algo outlier.
    #[arg(long, value_enum, default_value_t = Order::Ascending)]
    order: Order,
    /// Break three-way ties instead of aborting (--algo outlier).
    #[arg(long)]
    tolerate_ties: bool,
    /// Committee size for --algo robust.
    #[arg(long)]
    m: Option<usize>,
    /// Derive the committee size from (--delta, --q, --eta) instead.
    #[arg(long)]
    auto_m: bool,
    #[arg(long, default_value_t = 0.3)]
    gamma: f64,
    /// Run failure budget for --auto-m.
    #[arg(long, default_value_t = 0.1)]
    delta: f64,
    /// Assumed inconsistency rate for --auto-m.
    #[arg(long, default_value_t = 0.05)]
    q: f64,
    /// Assumed worst split balance for --auto-m.
    #[arg(long, default_value_t = 0.5)]
    eta: f64,
    #[arg(long, value_enum, default_value_t = Mode::Conservative)]
    bound_mode: Mode,
    /// Linkage for --algo agglo.
    #[arg(long, value_enum, default_value_t = LinkageArg::Average)]
    linkage: LinkageArg,
    /// Seed for sampled committees / shuffled insertion.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Also record per-split polling traces (--algo robust).
    #[arg(long)]
    trace: bool,
    /// Tree JSON output path (stdout if omitted).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Where to write the query-ledger snapshot JSON.
    #[arg(long)]
    ledger_out: Option<PathBuf>,
    /// Where to write split traces JSON (implies --trace).
    #[arg(long)]
    trace_out: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
enum Algo {
    Outlier,
    Robust,
    Agglo,
}

#[derive(Clone, Copy, ValueEnum)]
enum Order {
    Ascending,
    Shuffled,
}

#[derive(Clone, Copy, ValueEnum)]
enum Mode {
    Conservative,
    Literal,
}

#[derive(Clone, Copy, ValueEnum)]
enum LinkageArg {
    Single,
    Average,
    Complete,
}

#[derive(Args)]
struct EvalArgs {
    /// Ground-truth tree JSON.
    #[arg(long)]
    truth: PathBuf,
    /// Estimated tree JSON.
    #[arg(long)]
    est: PathBuf,
    /// Similarity CSV the estimate was built from.
    #[arg(long)]
    sim: PathBuf,
    #[arg(long, default_value_t = 0)]
    baseline_seed: u64,
    /// Optional ledger snapshot JSON to embed in the report.
    #[arg(long)]
    ledger: Option<PathBuf>,
    /// Output path (stdout if omitted).
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct ExpArgs {
    #[arg(value_enum)]
    experiment: Experiment,
    /// Trials per configuration (defaults per experiment).
    #[arg(long)]
    trials: Option<usize>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Output directory for <experiment>.json and <experiment>.csv.
    #[arg(long, env = "ACTCLUST_OUT_DIR", default_value = ".")]
    out: PathBuf,
}

#[derive(Clone, Copy, ValueEnum)]
enum Experiment {
    Table1,
    Fig2,
    Table2,
    Prop1,
}

impl Experiment {
    fn name(self) -> &'static str {
        match self {
            Experiment::Table1 => "table1",
            Experiment::Fig2 => "fig2",
            Experiment::Table2 => "table2",
            Experiment::Prop1 => "prop1",
        }
    }
}

fn main() -> Result<()> {
    match Cli::parse().cmd {
        Cmd::GenTree(args) => gen_tree(args),
        Cmd::GenSim(args) => gen_sim(args),
        Cmd::Cluster(args) => cluster(args),
        Cmd::Eval(args) => eval(args),
        Cmd::Exp(args) => exp(args),
    }
}

fn emit(out: Option<&Path>, content: &str) -> Result<()> {
    match out {
        Some(path) => {
            fs::write(path, content).with_context(|| format!("writing {}", path.display()))?
        }
        None => io::stdout().write_all(content.as_bytes())?,
    }
    Ok(())
}

fn read_tree(path: &Path) -> Result<ClusterTree> {
    let text =
        fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    serde_json::from_str(&text).with_context(|| format!("parsing tree JSON {}", path.display()))
}

fn read_store(path: &Path) -> Result<SimilarityStore> {
    let file = fs::File::open(path).with_context(|| format!("opening {}", path.display()))?;
    SimilarityStore::load_csv(io::BufReader::new(file))
        .with_context(|| format!("parsing similarity CSV {}", path.display()))
}

fn tree_json(tree: &ClusterTree) -> Result<String> {
    let mut s = serde_json::to_string_pretty(tree)?;
    s.push('\n');
    Ok(s)
}

fn gen_tree(args: GenTreeArgs) -> Result<()> {
    let tree = match args.shape {
        Shape::Balanced => gen_balanced_tree(args.n)?,
        Shape::Random => gen_random_tree(args.n, args.balance_floor, args.seed)?,
    };
    emit(args.out.as_deref(), &tree_json(&tree)?)
}

fn gen_sim(args: GenSimArgs) -> Result<()> {
    let tree = read_tree(&args.tree)?;
    let clean = gen_tc_similarities(&tree, args.seed)?;
    let store = inject_inconsistencies(&clean, args.q, args.seed.wrapping_add(1))?;
    let mut buf = Vec::new();
    store.save_csv(&mut buf)?;
    emit(args.out.as_deref(), std::str::from_utf8(&buf)?)
}

fn cluster(args: ClusterArgs) -> Result<()> {
    let store = read_store(&args.sim)?;
    let n = store.len();
    let mut traces_json: Option<String> = None;

    let (tree, snapshot): (ClusterTree, LedgerSnapshot) = match args.algo {
        Algo::Outlier => {
            let order = match args.order {
                Order::Ascending => InsertionOrder::Ascending,
                Order::Shuffled => InsertionOrder::Shuffled(args.seed),
            };
            let ties = if args.tolerate_ties {
                TiePolicy::Tolerant
            } else {
                TiePolicy::Strict
            };
            let mut oracle = ExactOracle::new(&store);
            let out = outlier_cluster(n, &mut oracle, order, ties)?;
            if out.tie_breaks > 0 {
                eprintln!("note: {} three-way ties broken", out.tie_breaks);
            }
            (out.tree, out.ledger.snapshot())
        }
        Algo::Robust => {
            let m = match (args.m, args.auto_m) {
                (Some(m), false) => m,
                (None, true) => {
                    let mode = match args.bound_mode {
                        Mode::Conservative => BoundMode::Conservative,
                        Mode::Literal => BoundMode::Literal,
                    };
                    let params =
                        plan_global(n, args.delta, args.q, args.gamma, args.eta, mode)?;
                    eprintln!("planned committee size m = {}", params.m);
                    params.m
                }
                (Some(_), true) => bail!("--m and --auto-m are mutually exclusive"),
                (None, false) => bail!("--algo robust needs --m or --auto-m"),
            };
            let config = SplitConfig {
                m,
                gamma: args.gamma,
            };
            let mut oracle = ExactOracle::new(&store);
            let collect = args.trace || args.trace_out.is_some();
            let out = ra_cluster(n, &config, &mut oracle, args.seed, collect)?;
            if out.failed_splits > 0 {
                eprintln!(
                    "note: {} splits degenerated and were left unresolved",
                    out.failed_splits
                );
            }
            if collect {
                traces_json = Some(serde_json::to_string_pretty(&out.traces)?);
            }
            (out.tree, out.ledger.snapshot())
        }
        Algo::Agglo => {
            let linkage = match args.linkage {
                LinkageArg::Single => Linkage::Single,
                LinkageArg::Average => Linkage::Average,
                LinkageArg::Complete => Linkage::Complete,
            };
            let mut ledger = QueryLedger::new(n);
            let tree = agglomerate(&store, linkage, &mut ledger)?;
            (tree, ledger.snapshot())
        }
    };

    if let Some(path) = &args.ledger_out {
        let mut s = serde_json::to_string_pretty(&snapshot)?;
        s.push('\n');
        fs::write(path, s).with_context(|| format!("writing {}", path.display()))?;
    }
    if let Some(path) = &args.trace_out {
        let mut s = traces_json.expect("traces collected when --trace-out is set");
        s.push('\n');
        fs::write(path, s).with_context(|| format!("writing {}", path.display()))?;
    }
    eprintln!(
        "distinct pairs queried: {} of {} ({:.1}%)",
        snapshot.distinct_pairs,
        snapshot.max_pairs,
        100.0 * snapshot.distinct_pairs as f64 / snapshot.max_pairs as f64
    );
    emit(args.out.as_deref(), &tree_json(&tree)?)
}

fn eval(args: EvalArgs) -> Result<()> {
    let truth = read_tree(&args.truth)?;
    let est = read_tree(&args.est)?;
    let store = read_store(&args.sim)?;
    let snapshot: Option<LedgerSnapshot> = match &args.ledger {
        Some(path) => {
            let mut text = String::new();
            fs::File::open(path)
                .with_context(|| format!("opening {}", path.display()))?
                .read_to_string(&mut text)?;
            Some(serde_json::from_str(&text)?)
        }
        None => None,
    };
    let report = evaluate(&truth, &est, &store, args.baseline_seed, snapshot)?;
    let mut s = serde_json::to_string_pretty(&report)?;
    s.push('\n');
    emit(args.out.as_deref(), &s)
}

fn exp(args: ExpArgs) -> Result<()> {
    let name = args.experiment.name();
    let trials = args
        .trials
        .or_else(|| default_trials(name))
        .expect("every experiment has a default trial count");
    fs::create_dir_all(&args.out)
        .with_context(|| format!("creating {}", args.out.display()))?;
    eprintln!("running {name} ({trials} trials, seed {})...", args.seed);

    let (json, csv, summary) = match args.experiment {
        Experiment::Table1 => {
            let r = run_table1(trials, args.seed)?;
            (to_json(&r)?, rows_to_csv(&r.rows)?, summarize_table1(&r))
        }
        Experiment::Fig2 => {
            let r = run_fig2(trials, args.seed)?;
            (to_json(&r)?, rows_to_csv(&r.points)?, summarize_fig2(&r))
        }
        Experiment::Table2 => {
            let r = run_table2(trials, args.seed)?;
            (to_json(&r)?, rows_to_csv(&r.cells)?, summarize_table2(&r))
        }
        Experiment::Prop1 => {
            let r = run_prop1(trials, args.seed)?;
            (to_json(&r)?, rows_to_csv(&r.points)?, summarize_prop1(&r))
        }
    };

    let json_path = args.out.join(format!("{name}.json"));
    let csv_path = args.out.join(format!("{name}.csv"));
    fs::write(&json_path, json + "\n")?;
    fs::write(&csv_path, csv)?;
    print!("{summary}");
    eprintln!("wrote {} and {}", json_path.display(), csv_path.display());
    Ok(())
}

fn summarize_table1(r: &actclust_cli::Table1Report) -> String {
    let mut s = String::from(
        "topology                    n     all-pairs   mean tests   ratio    bound\n",
    );
    for row in &r.rows {
        s += &format!(
            "{:<26} {:>4} {:>11} {:>12.1} {:>7.2}% {:>8}\n",
            row.topology,
            row.n_items,
            row.agglomerative_pairs,
            row.mean_outlier_tests,
            100.0 * row.tests_to_pairs_ratio,
            row.query_bound,
        );
    }
    s
}

fn summarize_fig2(r: &actclust_cli::Fig2Report) -> String {
    let mut s = String::from("k errors   mean r_min   std err   max\n");
    for p in &r.points {
        s += &format!(
            "{:>8} {:>12.2} {:>9.2} {:>5}\n",
            p.k_errors, p.mean_r_min, p.std_error, p.max_r_min
        );
    }
    s
}

fn summarize_table2(r: &actclust_cli::Table2Report) -> String {
    let mut s = String::from("rate   algorithm        m    Δ-entropy   r_min    pairs%\n");
    for c in &r.cells {
        s += &format!(
            "{:<6} {:<14} {:>4} {:>10.4} {:>7.1} {:>8.1}%\n",
            c.rate,
            c.algorithm,
            c.m.map_or("-".to_string(), |m| m.to_string()),
            c.mean_delta_entropy,
            c.mean_r_min,
            100.0 * c.mean_distinct_fraction,
        );
    }
    s
}

fn summarize_prop1(r: &actclust_cli::Prop1Report) -> String {
    let mut s = format!(
        "threshold: {} samples (n={}, planted {})\n",
        r.config.threshold, r.config.n_items, r.config.planted_size
    );
    s += "samples   ×threshold   failure\n";
    for p in &r.points {
        s += &format!(
            "{:>7} {:>12.2} {:>9.3}\n",
            p.n_samples, p.threshold_multiple, p.failure_fraction
        );
    }
    s
}
