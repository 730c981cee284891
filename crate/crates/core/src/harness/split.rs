//! Train / audit / test split with uncertain comments pushed into train.

use std::collections::HashSet;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::classifier::{ClassifyError, Classifier, Prediction};
use crate::model::{CommentId, FilterPrompt};
use crate::rng::seeded;

use super::corpus::Corpus;

const SPLIT_TAG: u64 = 0x7370_6c69;
pub const FULL_SIZES: (usize, usize, usize) = (20, 80, 100);
/// Uncertain comments the train split should contain when available.
pub const MIN_UNCERTAIN: usize = 10;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetSplit {
    pub train: Vec<CommentId>,
    pub audit: Vec<CommentId>,
    pub test: Vec<CommentId>,
    /// Comments the probe prompt was unsure about, over the whole corpus.
    pub uncertain_total: usize,
    pub uncertain_in_train: usize,
}

/// (train, audit, test) sizes: the full protocol for 200+ comments, else 1:4:5.
pub fn split_sizes(n: usize) -> (usize, usize, usize) {
    if n >= 200 {
        return FULL_SIZES;
    }
    let train = n / 10;
    let audit = n * 4 / 10;
    (train, audit, n - train - audit)
}

/// Splits given probe predictions (one per corpus comment, same order).
///
/// Train takes up to `max(10, train/2)` uncertain comments first, most
/// conflicted first with a seeded tie-break, then seeded-random others.
/// Audit and test are seeded-random from the rest.
pub fn split_from_predictions(ids: &[CommentId], predictions: &[Prediction], seed: u64) -> Result<DatasetSplit, String> {
    if ids.len() < 10 {
        return Err(format!("corpus of {} is too small to split", ids.len()));
    }
    if predictions.len() != ids.len() {
        return Err("one probe prediction per comment is required".into());
    }
    let (n_train, n_audit, n_test) = split_sizes(ids.len());
    let mut rng = seeded(&[seed, SPLIT_TAG]);

    let mut uncertain: Vec<(&CommentId, f64)> = ids
        .iter()
        .zip(predictions)
        .filter(|(_, p)| p.is_uncertain())
        .map(|(id, p)| (id, p.confidence))
        .collect();
    let uncertain_total = uncertain.len();
    uncertain.shuffle(&mut rng);
    uncertain.sort_by(|a, b| a.1.total_cmp(&b.1));

    let quota = MIN_UNCERTAIN.max(n_train / 2).min(n_train);
    let mut train: Vec<CommentId> = uncertain.iter().take(quota).map(|(id, _)| (*id).clone()).collect();
    let taken: HashSet<CommentId> = train.iter().cloned().collect();
    let mut rest: Vec<CommentId> = ids.iter().filter(|id| !taken.contains(*id)).cloned().collect();
    rest.shuffle(&mut rng);

    let fill = n_train - train.len();
    train.extend(rest.drain(..fill));
    let audit: Vec<CommentId> = rest.drain(..n_audit).collect();
    let test: Vec<CommentId> = rest.drain(..n_test).collect();

    let uncertain_ids: HashSet<&CommentId> = uncertain.iter().map(|(id, _)| *id).collect();
    let uncertain_in_train = train.iter().filter(|id| uncertain_ids.contains(id)).count();
    Ok(DatasetSplit {
        train,
        audit,
        test,
        uncertain_total,
        uncertain_in_train,
    })
}

/// Probe-classifies the corpus and splits it.
pub async fn split_dataset(
    corpus: &Corpus,
    classifier: &Classifier,
    probe: &FilterPrompt,
    eval_seed: u64,
    seed: u64,
) -> Result<(DatasetSplit, Vec<Prediction>), SplitError> {
    if corpus.len() < 10 {
        return Err(SplitError::TooSmall(corpus.len()));
    }
    let predictions = classifier.classify(probe, &corpus.comments, eval_seed).await?;
    let ids: Vec<CommentId> = corpus.comments.iter().map(|c| c.id.clone()).collect();
    let split = split_from_predictions(&ids, &predictions, seed).map_err(SplitError::Invalid)?;
    Ok((split, predictions))
}

#[derive(Debug, thiserror::Error)]
pub enum SplitError {
    #[error("corpus of {0} comments is too small to split")]
    TooSmall(usize),
    #[error("{0}")]
    Invalid(String),
    #[error(transparent)]
    Classify(#[from] ClassifyError),
}
