//! Rubric-structured comment filters.
//!
//! A filter is a natural-language prompt made of a description, positive and
//! negative rubrics, and a few labeled examples. This crate classifies
//! comments with such prompts through an LLM gateway, picks comments worth
//! labeling, and proposes single-rubric edits that fix observed mistakes.

pub mod baseline;
pub mod cache;
pub mod classifier;
pub mod diff;
pub mod gateway;
pub mod harness;
pub mod hash;
pub mod jsonl;
pub mod model;
pub mod optimizer;
pub mod render;
pub mod rng;
pub mod sampler;
pub mod store;
pub mod text;

pub use classifier::{Classifier, Evaluation, Metrics, Prediction};
pub use gateway::Gateway;
pub use model::*;
