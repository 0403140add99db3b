//! Experiment harness: replicated simulation cells, the usual accuracy
//! metrics, result files, and error-bound diagnostics.

pub mod metrics;
pub mod report;
pub mod runner;
pub mod theory;

pub use metrics::{
    discovery_rates, estimation_error, matches_oracle, oracle_indicator, prediction_error, MeanSd, MetricsSummary,
    TrialResult, ORACLE_TOL,
};
pub use report::{
    read_summary, read_trials_csv, summary_file, write_bench_outputs, write_table_csv, write_trials_csv, BenchMeta,
    CellSummary, SummaryFile, SCHEMA,
};
pub use runner::{
    fit_with, replicate_data, run_cell, Algorithm, CellConfig, CellResult, FitSummary, TheoryOptions, TrialFailure,
};
pub use theory::{
    bound_check, design_diagnostics, mutual_coherence, src_constants, theory_bounds, BoundReport, DesignDiagnostics,
    SrcConstants, TheoryBounds,
};
