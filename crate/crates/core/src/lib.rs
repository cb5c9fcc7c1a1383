//! Hierarchical clustering from metered pairwise similarity queries.
//!
//! The crate separates *what is known* from *what it costs to know it*:
//! similarities live in a [`oracle::SimilarityStore`] and every access is
//! metered in a [`oracle::QueryLedger`]. On top of that sit three builders —
//! an incremental exact one driven by three-way tests ([`outlier`]), a
//! noise-tolerant top-down voting one ([`robust`]), and the full-information
//! agglomerative baseline ([`agglomerative`]) — plus instance synthesis
//! ([`synthesis`]) and scoring ([`eval`]).

pub mod agglomerative;
pub mod eval;
pub mod oracle;
pub mod outlier;
pub mod robust;
pub mod synthesis;
pub mod tree;

/// Library version, embedded in experiment reports for provenance.
pub const VERSION: &str = env!("CARGO_PKG_VERSION");

pub use agglomerative::{agglomerate, AggloError, Linkage};
pub use eval::{
    evaluate, off_diag_decay, ordering_entropy, r_min, random_sampling_threshold,
    random_sampling_trial, EvalError, EvalReport,
};
pub use oracle::{
    ExactOracle, FaultyOracle, LedgerSnapshot, OracleError, OutlierOracle, OutlierResult,
    QueryLedger, SimilarityStore,
};
pub use outlier::{outlier_cluster, query_bound, InsertionOrder, OutlierError, OutlierOutcome, TiePolicy};
pub use robust::{
    a2_feasible, plan_global, ra_cluster, required_m_global, required_m_split, split, BoundMode,
    RaOutcome, RobustError, RobustParams, SplitConfig, SplitTrace,
};
pub use synthesis::{
    gen_balanced_tree, gen_random_tree, gen_tc_similarities, inject_inconsistencies, GenConfig,
    SynthesisError, TreeShape,
};
pub use tree::{clusters_of, tree_equal, ClusterSet, ClusterTree, ItemId, Node, TreeError};
