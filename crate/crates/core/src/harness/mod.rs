//! Experiment orchestration: configs, replica farms, statistical tests and
//! machine-readable reports.

pub mod config;
pub mod report;
pub mod runs;
pub mod stats;

pub use config::{ExperimentConfig, Overrides, OutputFormat, TestKind};
pub use report::{emit, write_records, write_summary, Check, Record, TestReport};
pub use runs::{
    run_clt, run_lln, run_martingale, run_oracle_crosscheck, run_selected, run_simulate, run_test,
    run_variance, run_w_law,
};
