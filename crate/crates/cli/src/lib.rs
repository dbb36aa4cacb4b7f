//! Config-driven experiment runner: validation, replicate-parallel execution,
//! aggregation, and CSV/JSON reports.

// `!(a < b)` is used on purpose: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod config;
pub mod output;
pub mod run;
pub mod summary;

pub use config::{validate, ConfigIssue, ExperimentConfig, ExperimentKind, Overrides, ValidatedConfig};
pub use run::{run, RunOutput};
pub use summary::{EnsembleSummary, Table};

/// Process exit codes.
pub mod exit {
    pub const PASS: i32 = 0;
    pub const ACCEPTANCE_FAIL: i32 = 1;
    pub const CONFIG_ERROR: i32 = 2;
    pub const RUNTIME_ERROR: i32 = 3;
}
