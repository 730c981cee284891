//! Offline experiments: synthetic corpora, the 20/80/100 split, a scripted
//! user, and condition-versus-condition reports.

pub mod corpus;
pub mod experiment;
pub mod split;
pub mod user;

pub use corpus::{make_synthetic_corpus, Corpus, CorpusSpec};
pub use experiment::{
    load_corpus, run_experiment, Condition, ConditionReport, CorpusSource, ExperimentConfig, ExperimentError, ExperimentReport,
    Phase, RoundBudget, Stage, REPORT_SCHEMA,
};
pub use split::{split_dataset, split_from_predictions, split_sizes, DatasetSplit};
pub use user::{IterationPolicy, SimulatedUser};
