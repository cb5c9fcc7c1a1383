//! Experiment driver for the clustering toolkit: canned, seeded
//! generate → cluster → evaluate pipelines with JSON/CSV report emission.

pub mod experiments;
pub mod reports;

pub use experiments::{default_trials, run_fig2, run_prop1, run_table1, run_table2};
pub use reports::{
    to_json, Fig2Report, Prop1Report, RunMeta, Table1Report, Table2Report,
};
