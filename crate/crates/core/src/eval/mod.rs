//! Error curves, AUC, the benchmark runner and report comparison.

pub mod benchmark;
pub mod compare;
pub mod curve;

pub use benchmark::{
    run_benchmark, run_benchmark_pairs, run_trial, BenchmarkConfig, BenchmarkReport, ClassSummary, InitMode, TrialRecord, CURVES_CSV,
    REPORT_JSON, REPORT_SCHEMA_VERSION, TRIALS_CSV,
};
pub use compare::{compare_reports, Comparison, DeltaRow};
pub use curve::{auc, cumulative_curve, CumulativeCurve, CURVE_BINS};
