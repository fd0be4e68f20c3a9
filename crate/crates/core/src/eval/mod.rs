//! Scoring and the leave-one-session-out experiment runner.

mod experiment;
mod metrics;

pub use experiment::{
    condition_name, evaluate, prepare_session, prepare_suite, run_leave_one_out, run_variant, train_fold, FoldModels,
    Frontend, SessionData, SuiteData, SystemConfig, Variant, REFERENCE_INSERTION_PENALTY,
};
pub use metrics::{
    classification_accuracy, match_events, render_table, render_tsv, Detection, Localization, MatchRule, Matching,
    MetricReport, Rate, TimedEvent,
};
