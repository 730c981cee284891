//! Batched, repeated classification with majority voting.
//!
//! Comments are split into consecutive batches of at most five. Each batch is
//! sent five times, every run with its own seeded shuffle of the batch order,
//! and the per-comment votes are aggregated by majority. Agreement across runs
//! is the prediction's confidence.

use std::sync::Arc;

use futures::future::try_join_all;
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::cache::{CacheError, PredictionCache};
use crate::gateway::{Gateway, GatewayError};
use crate::model::{Comment, CommentId, FilterPrompt, LabeledComment, Mistake, Verdict};
use crate::render::{ReflectMode, Task, TaskItem, MAX_BATCH};
use crate::rng::{mix, seeded};
use crate::text::first_sentences;

pub const DEFAULT_RUNS: usize = 5;
pub const DEFAULT_BATCH_SIZE: usize = 5;
pub const DEFAULT_MAX_REPARSE: usize = 2;

const RUN_TAG: u64 = 0x0072_756e;
const SHUFFLE_TAG: u64 = 0x7368_7566;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RunVotes {
    pub comment_id: CommentId,
    pub votes: Vec<Verdict>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub comment_id: CommentId,
    pub verdict: Verdict,
    pub confidence: f64,
    pub votes: RunVotes,
    pub prompt_hash: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub explanation: Option<String>,
}

impl Prediction {
    /// Non-unanimous runs.
    pub fn is_uncertain(&self) -> bool {
        self.confidence < 1.0
    }
}

/// Confusion-matrix metrics with Catch as the positive class.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub accuracy: f64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub tp: u64,
    pub fp: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
    pub tn: u64,
}

impl Metrics {
    pub fn from_counts(tp: u64, fp: u64, fn_: u64, tn: u64) -> Self {
        let total = tp + fp + fn_ + tn;
        let accuracy = if total == 0 { 0.0 } else { (tp + tn) as f64 / total as f64 };
        let precision = if tp + fp == 0 { 1.0 } else { tp as f64 / (tp + fp) as f64 };
        let recall = if tp + fn_ == 0 { 1.0 } else { tp as f64 / (tp + fn_) as f64 };
        let f1 = if precision + recall == 0.0 {
            0.0
        } else {
            2.0 * precision * recall / (precision + recall)
        };
        Self {
            accuracy,
            precision,
            recall,
            f1,
            tp,
            fp,
            fn_,
            tn,
        }
    }

    pub fn from_pairs(pairs: impl IntoIterator<Item = (Verdict, Verdict)>) -> Self {
        let (mut tp, mut fp, mut fn_, mut tn) = (0, 0, 0, 0);
        for (predicted, gold) in pairs {
            match (predicted, gold) {
                (Verdict::Catch, Verdict::Catch) => tp += 1,
                (Verdict::Catch, Verdict::NotCatch) => fp += 1,
                (Verdict::NotCatch, Verdict::Catch) => fn_ += 1,
                (Verdict::NotCatch, Verdict::NotCatch) => tn += 1,
            }
        }
        Self::from_counts(tp, fp, fn_, tn)
    }

    pub fn correct(&self) -> u64 {
        self.tp + self.tn
    }
}

#[derive(Debug, Error)]
pub enum ClassifyError {
    #[error("nothing to classify")]
    Empty,
    #[error("expected {expected} votes, got {got}")]
    VoteCount { expected: usize, got: usize },
    #[error("batch {batch} failed: {source}")]
    Batch {
        batch: usize,
        #[source]
        source: GatewayError,
    },
    #[error("batch {batch} run {run}: unparseable classification output after {attempts} attempts")]
    Unparseable { batch: usize, run: usize, attempts: usize },
    #[error(transparent)]
    Gateway(#[from] GatewayError),
    #[error(transparent)]
    Cache(#[from] CacheError),
}

/// Majority over exactly [`DEFAULT_RUNS`] votes.
pub fn majority_vote(votes: &[Verdict]) -> Result<(Verdict, f64), ClassifyError> {
    if votes.len() != DEFAULT_RUNS {
        return Err(ClassifyError::VoteCount {
            expected: DEFAULT_RUNS,
            got: votes.len(),
        });
    }
    Ok(tally(votes))
}

/// Majority over any non-empty vote list; ties go to NotCatch.
pub fn tally(votes: &[Verdict]) -> (Verdict, f64) {
    let catches = votes.iter().filter(|v| v.is_catch()).count();
    let misses = votes.len() - catches;
    let (verdict, count) = if catches > misses {
        (Verdict::Catch, catches)
    } else {
        (Verdict::NotCatch, misses)
    };
    (verdict, count as f64 / votes.len() as f64)
}

/// Parses `<index>: <verdict>` lines into a verdict per 1-based index.
pub fn parse_classification(output: &str, expected: usize) -> Option<Vec<Verdict>> {
    let mut slots: Vec<Option<Verdict>> = vec![None; expected];
    for line in output.lines() {
        let line = line.trim().trim_start_matches(['*', '-', ' ', '#']);
        let digits: String = line.chars().take_while(|c| c.is_ascii_digit()).collect();
        if digits.is_empty() {
            continue;
        }
        let rest = line[digits.len()..]
            .trim_start_matches([':', '.', ')', '-', ' ', '\t', '='])
            .trim_end_matches(|c: char| !c.is_alphanumeric());
        let Ok(verdict) = rest.parse::<Verdict>() else {
            continue;
        };
        let index: usize = digits.parse().ok()?;
        let slot = slots.get_mut(index.checked_sub(1)?)?;
        match slot {
            Some(prev) if *prev != verdict => return None,
            _ => *slot = Some(verdict),
        }
    }
    slots.into_iter().collect()
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ClassifierConfig {
    pub runs: usize,
    pub batch_size: usize,
    pub max_reparse: usize,
}

impl Default for ClassifierConfig {
    fn default() -> Self {
        Self {
            runs: DEFAULT_RUNS,
            batch_size: DEFAULT_BATCH_SIZE,
            max_reparse: DEFAULT_MAX_REPARSE,
        }
    }
}

/// Outcome of classifying a labeled set.
#[derive(Debug, Clone)]
pub struct Evaluation {
    pub metrics: Metrics,
    /// Predictions in labeled-set order.
    pub predictions: Vec<Prediction>,
    /// False positives first, then false negatives, each in input order.
    pub mistakes: Vec<Mistake>,
    /// Per labeled comment: prediction equals gold.
    pub correct: Vec<bool>,
}

#[derive(Clone)]
pub struct Classifier {
    gateway: Arc<Gateway>,
    cache: Arc<dyn PredictionCache>,
    config: ClassifierConfig,
}

impl Classifier {
    pub fn new(gateway: Arc<Gateway>, cache: Arc<dyn PredictionCache>) -> Self {
        Self::with_config(gateway, cache, ClassifierConfig::default())
    }

    pub fn with_config(gateway: Arc<Gateway>, cache: Arc<dyn PredictionCache>, config: ClassifierConfig) -> Self {
        assert!(config.runs >= 1, "at least one run");
        assert!(
            (1..=MAX_BATCH).contains(&config.batch_size),
            "batch size must be within 1..={MAX_BATCH}"
        );
        Self { gateway, cache, config }
    }

    pub fn gateway(&self) -> &Arc<Gateway> {
        &self.gateway
    }

    pub fn cache(&self) -> &Arc<dyn PredictionCache> {
        &self.cache
    }

    pub fn config(&self) -> &ClassifierConfig {
        &self.config
    }

    /// Classifies `comments`, reusing cached predictions for this prompt's hash.
    pub async fn classify(&self, prompt: &FilterPrompt, comments: &[Comment], seed: u64) -> Result<Vec<Prediction>, ClassifyError> {
        if comments.is_empty() {
            return Err(ClassifyError::Empty);
        }
        let hash = &prompt.content_hash;
        let mut out: Vec<Option<Prediction>> = Vec::with_capacity(comments.len());
        let mut pending: Vec<usize> = Vec::new();
        for (i, c) in comments.iter().enumerate() {
            let hit = self.cache.cached_prediction(hash, &c.id)?;
            if hit.is_none() {
                pending.push(i);
            }
            out.push(hit);
        }

        let batches: Vec<&[usize]> = pending.chunks(self.config.batch_size).collect();
        let mut jobs = Vec::with_capacity(batches.len() * self.config.runs);
        for (b, batch) in batches.iter().enumerate() {
            for run in 0..self.config.runs {
                jobs.push(self.run_batch(prompt, comments, batch, b, run, seed));
            }
        }
        let results = try_join_all(jobs).await?;

        let mut votes: Vec<Vec<Verdict>> = vec![Vec::with_capacity(self.config.runs); comments.len()];
        for (batch_index, verdicts) in results {
            for (slot, verdict) in batches[batch_index].iter().zip(verdicts) {
                votes[*slot].push(verdict);
            }
        }
        for &i in &pending {
            let v = std::mem::take(&mut votes[i]);
            let (verdict, confidence) = tally(&v);
            let prediction = Prediction {
                comment_id: comments[i].id.clone(),
                verdict,
                confidence,
                votes: RunVotes {
                    comment_id: comments[i].id.clone(),
                    votes: v,
                },
                prompt_hash: hash.clone(),
                explanation: None,
            };
            self.cache.put_cached(&prediction)?;
            out[i] = Some(prediction);
        }
        Ok(out.into_iter().map(|p| p.expect("every slot filled")).collect())
    }

    /// One run of one batch: shuffle, request, parse (with re-requests), un-shuffle.
    async fn run_batch(
        &self,
        prompt: &FilterPrompt,
        comments: &[Comment],
        batch: &[usize],
        batch_index: usize,
        run: usize,
        seed: u64,
    ) -> Result<(usize, Vec<Verdict>), ClassifyError> {
        let mut order: Vec<usize> = (0..batch.len()).collect();
        order.shuffle(&mut seeded(&[seed, batch_index as u64, run as u64, SHUFFLE_TAG]));
        let texts: Vec<String> = order.iter().map(|&k| comments[batch[k]].text.clone()).collect();
        let task = Task::Classify(texts);

        let attempts = self.config.max_reparse + 1;
        for attempt in 0..attempts {
            let run_seed = if attempt == 0 {
                mix(&[seed, run as u64, RUN_TAG])
            } else {
                mix(&[seed, run as u64, attempt as u64, RUN_TAG])
            };
            let output = self
                .gateway
                .run(Some(prompt), &task, run_seed)
                .await
                .map_err(|source| ClassifyError::Batch {
                    batch: batch_index,
                    source,
                })?;
            if let Some(shuffled) = parse_classification(&output, batch.len()) {
                let mut verdicts = vec![Verdict::NotCatch; batch.len()];
                for (pos, &k) in order.iter().enumerate() {
                    verdicts[k] = shuffled[pos];
                }
                return Ok((batch_index, verdicts));
            }
            tracing::debug!(batch = batch_index, run, attempt, "unparseable classification output");
        }
        Err(ClassifyError::Unparseable {
            batch: batch_index,
            run,
            attempts,
        })
    }

    /// Classifies a labeled set and scores it.
    pub async fn evaluate(&self, prompt: &FilterPrompt, labeled: &[LabeledComment], seed: u64) -> Result<Evaluation, ClassifyError> {
        if labeled.is_empty() {
            return Err(ClassifyError::Empty);
        }
        let comments: Vec<Comment> = labeled.iter().map(|l| l.comment.clone()).collect();
        let predictions = self.classify(prompt, &comments, seed).await?;
        Ok(score(labeled, predictions))
    }

    /// A short explanation of `verdict`, cached per prompt hash and comment.
    pub async fn explain(&self, prompt: &FilterPrompt, comment: &Comment, verdict: Verdict) -> Result<String, ClassifyError> {
        if let Some(hit) = self.cache.cached_explanation(&prompt.content_hash, &comment.id)? {
            return Ok(hit);
        }
        let task = Task::Reflect {
            mode: ReflectMode::Explain,
            items: vec![TaskItem {
                text: comment.text.clone(),
                predicted: Some(verdict),
                gold: None,
            }],
            variant: 0,
        };
        let raw = self.gateway.run(Some(prompt), &task, 0).await?;
        let text = first_sentences(&raw, 2);
        self.cache.put_explanation(&prompt.content_hash, &comment.id, &text)?;
        Ok(text)
    }
}

/// Pairs predictions with gold labels.
pub fn score(labeled: &[LabeledComment], predictions: Vec<Prediction>) -> Evaluation {
    let metrics = Metrics::from_pairs(labeled.iter().zip(&predictions).map(|(l, p)| (p.verdict, l.verdict)));
    let correct: Vec<bool> = labeled
        .iter()
        .zip(&predictions)
        .map(|(l, p)| l.verdict == p.verdict)
        .collect();
    let mut fps = Vec::new();
    let mut fns = Vec::new();
    for (l, p) in labeled.iter().zip(&predictions) {
        if l.verdict == p.verdict {
            continue;
        }
        let m = Mistake {
            comment: l.comment.clone(),
            predicted: p.verdict,
            gold: l.verdict,
        };
        if m.is_false_positive() {
            fps.push(m);
        } else {
            fns.push(m);
        }
    }
    fps.extend(fns);
    Evaluation {
        metrics,
        predictions,
        mistakes: fps,
        correct,
    }
}
