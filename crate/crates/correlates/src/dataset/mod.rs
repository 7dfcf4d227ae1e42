//! Ingestion, validation, and weighting of two-phase trial data.

mod design;
mod diagnostics;
mod load;
mod tertile;

pub use design::{
    estimate_sampling_probs, summarize_cohort, CohortSummary, StratumRate, TwoPhaseDesign,
};
pub use diagnostics::{
    confounder_association_table, positivity_report, ConfounderRow, ConfounderTable,
    PositivityReport, PositivityRow, DEFAULT_COVERAGE_THRESHOLD,
};
pub use load::{load_trial_csv, parse_trial, CovariateColumn, CovariateKind, CsvSchema, LoadedTrial, OutcomeColumns, RowError};
pub use tertile::{apply_tertiles, tertile_code, TertileCoding};
