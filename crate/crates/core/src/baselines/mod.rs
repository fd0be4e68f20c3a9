//! Reference systems: SRP-PHAT localization and an all-combinations
//! single-channel recognizer.

mod combinations;
mod srp;

pub use combinations::{
    combination_count, train_all_combinations, Combination, CombinationData, CombinationModels,
};
pub use srp::{
    analyze, gcc_phat, peak_lag, srp_event_localize, srp_map, value_at_lag, SearchMode, SrcParams, SrpAnalysis,
    SrpConfig,
};
