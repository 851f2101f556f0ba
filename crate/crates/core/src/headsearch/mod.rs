//! Budgeted random search for a classifier head over extracted CNN features,
//! and the composite model that pairs the winner with its extractor.

mod auto;
mod search;
mod space;

pub use auto::{
    assemble_auto_classifier, check_disjoint_ids, evaluate_auto_classifier, AutoClassifierModel, AutoEvaluation,
    InferenceTiming,
};
pub use search::{
    fit_candidate, run_search, score_rows, select_best, CandidateFailure, LeaderBoard, LeaderEntry, LeaderRow,
    SearchBudget, STACK_TOP,
};
pub use space::{
    candidate_space, CandidateSpec, Family, HeadParams, Origin, DEPTH_RANGE, FOREST_SIZE_RANGE, HIDDEN_WIDTH_RANGE,
    MIN_LEAF_RANGE, MLP_EPOCH_RANGE, MLP_LR_RANGE, PRESET_COUNT, ROUNDS_RANGE, SHRINKAGE_RANGE,
};
