//! Freestyle prompt optimization with textual gradients and beam search.
//!
//! The comparison condition: the prompt is one unstructured string, a critique
//! of a minibatch of mistakes stands in for a gradient, and each expansion
//! rewrites the whole prompt. Scoring reuses the main classifier by treating
//! the text as a description with no rubrics.

use std::collections::HashSet;
use std::sync::atomic::{AtomicU64, Ordering};

use futures::future::try_join_all;
use rand::seq::index::sample;
use serde::{Deserialize, Serialize};

use crate::classifier::{Classifier, Metrics};
use crate::model::{FilterPrompt, LabeledComment, Mistake, MistakeRef};
use crate::optimizer::{compare_scores, OptimizationBudget, OptimizeError};
use crate::render::{ProposeDirection, ReflectMode, Task, TaskItem};
use crate::rng::{mix, seeded};

pub const DEFAULT_MINIBATCH: usize = 4;

const GRADIENT_TAG: u64 = 0x6772_6164;
const EXPAND_TAG: u64 = 0x6578_7061;
const MINIBATCH_TAG: u64 = 0x6d69_6e69;
const FREESTYLE_FILTER_ID: &str = "freestyle";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FreestylePrompt {
    pub text: String,
    pub version: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub parent_version: Option<u32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub train_score: Option<f64>,
}

impl FreestylePrompt {
    pub fn new(text: impl Into<String>) -> Self {
        Self {
            text: text.into(),
            version: 1,
            parent_version: None,
            train_score: None,
        }
    }

    /// The text as a rubric-free structured prompt, for rendering and scoring.
    pub fn as_filter(&self) -> FilterPrompt {
        FilterPrompt::draft(FREESTYLE_FILTER_ID, FREESTYLE_FILTER_ID, self.text.clone())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TextualGradient {
    pub minibatch: Vec<MistakeRef>,
    pub text: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrailEntry {
    pub round: usize,
    pub version: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub parent_version: Option<u32>,
    pub text: String,
    pub train_score: f64,
    pub f1: f64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BaselineRound {
    pub round: usize,
    pub gradient_calls: u64,
    pub candidate_generations: u64,
    pub candidate_evaluations: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BaselineResult {
    pub best: FreestylePrompt,
    pub best_metrics: Metrics,
    /// Train score of the best beam member after each round.
    pub best_scores: Vec<f64>,
    pub trail: Vec<TrailEntry>,
    pub rounds: Vec<BaselineRound>,
    /// Set when a stage failed; the trail holds everything up to the failure.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BaselineConfig {
    pub minibatch_size: usize,
    pub eval_seed: u64,
}

impl Default for BaselineConfig {
    fn default() -> Self {
        Self {
            minibatch_size: DEFAULT_MINIBATCH,
            eval_seed: 0,
        }
    }
}

#[derive(Default)]
struct Counters {
    gradients: AtomicU64,
    generations: AtomicU64,
    evaluations: AtomicU64,
}

struct Member {
    prompt: FreestylePrompt,
    metrics: Metrics,
}

fn key(m: &Metrics) -> (f64, f64, i64) {
    (m.accuracy, m.f1, 0)
}

pub struct Baseline {
    classifier: Classifier,
    config: BaselineConfig,
    counters: Counters,
}

impl Baseline {
    pub fn new(classifier: Classifier, config: BaselineConfig) -> Self {
        Self {
            classifier,
            config,
            counters: Counters::default(),
        }
    }

    pub fn classifier(&self) -> &Classifier {
        &self.classifier
    }

    pub fn candidate_evaluations(&self) -> u64 {
        self.counters.evaluations.load(Ordering::Relaxed)
    }

    pub fn candidate_generations(&self) -> u64 {
        self.counters.generations.load(Ordering::Relaxed)
    }

    async fn score(&self, prompt: &FreestylePrompt, labels: &[LabeledComment]) -> Result<(Metrics, Vec<Mistake>), OptimizeError> {
        let ev = self
            .classifier
            .evaluate(&prompt.as_filter(), labels, self.config.eval_seed)
            .await?;
        Ok((ev.metrics, ev.mistakes))
    }

    /// Critique of `prompt` over a seeded minibatch of its mistakes.
    pub async fn textual_gradient(
        &self,
        prompt: &FreestylePrompt,
        mistakes: &[Mistake],
        batch_size: usize,
        seed: u64,
    ) -> Result<(TextualGradient, Vec<Mistake>), OptimizeError> {
        if mistakes.is_empty() {
            return Err(OptimizeError::Invalid("no mistakes to critique".into()));
        }
        let k = batch_size.max(1).min(mistakes.len());
        let mut picked = sample(&mut seeded(&[seed, MINIBATCH_TAG]), mistakes.len(), k).into_vec();
        picked.sort_unstable();
        let batch: Vec<Mistake> = picked.into_iter().map(|i| mistakes[i].clone()).collect();
        let task = Task::Reflect {
            mode: ReflectMode::Gradient,
            items: batch
                .iter()
                .map(|m| TaskItem::mistake(&m.comment.text, m.predicted, m.gold))
                .collect(),
            variant: 0,
        };
        self.counters.gradients.fetch_add(1, Ordering::Relaxed);
        let text = self
            .classifier
            .gateway()
            .run(Some(&prompt.as_filter()), &task, mix(&[seed, GRADIENT_TAG]))
            .await?
            .trim()
            .to_string();
        if text.is_empty() {
            return Err(crate::gateway::GatewayError::Protocol("empty gradient".into()).into());
        }
        let gradient = TextualGradient {
            minibatch: batch.iter().map(Mistake::reference).collect(),
            text,
        };
        Ok((gradient, batch))
    }

    async fn expand_one(
        &self,
        prompt: &FreestylePrompt,
        gradient: &TextualGradient,
        minibatch: &[Mistake],
        variant: u32,
        seed: u64,
    ) -> Result<Option<FreestylePrompt>, OptimizeError> {
        let task = Task::Propose {
            direction: ProposeDirection::Rewrite,
            target_text: None,
            items: minibatch
                .iter()
                .map(|m| TaskItem::mistake(&m.comment.text, m.predicted, m.gold))
                .collect(),
            guidance: vec![gradient.text.clone()],
            variant,
        };
        self.counters.generations.fetch_add(1, Ordering::Relaxed);
        let raw = self
            .classifier
            .gateway()
            .run(Some(&prompt.as_filter()), &task, mix(&[seed, variant as u64, EXPAND_TAG]))
            .await?;
        Ok(parse_rewrite(&raw)
            .filter(|t| t != &prompt.text)
            .map(|text| FreestylePrompt {
                text,
                version: prompt.version + 1,
                parent_version: Some(prompt.version),
                train_score: None,
            }))
    }

    /// `n` rewrites of `prompt` that move away from the gradient's criticism.
    pub async fn expand(
        &self,
        prompt: &FreestylePrompt,
        gradient: &TextualGradient,
        minibatch: &[Mistake],
        n: usize,
        seed: u64,
    ) -> Result<Vec<FreestylePrompt>, OptimizeError> {
        if n == 0 {
            return Err(OptimizeError::Invalid("n must be at least 1".into()));
        }
        let out = try_join_all((0..n).map(|v| self.expand_one(prompt, gradient, minibatch, v as u32, seed))).await?;
        Ok(out.into_iter().flatten().collect())
    }

    /// Beam search over freestyle prompts.
    ///
    /// Each round spends at most `expansions_per_round` candidate evaluations,
    /// shared across the beam members, and at most `beam_width *
    /// expansions_per_round` rewrite calls. `round_evaluations`, when given,
    /// fixes the evaluation count of each round instead (never above the
    /// per-round cap), which is how the experiment matches budgets across
    /// conditions.
    pub async fn optimize(
        &self,
        initial: &FreestylePrompt,
        labels: &[LabeledComment],
        budget: &OptimizationBudget,
        round_evaluations: Option<&[usize]>,
        seed: u64,
    ) -> Result<BaselineResult, OptimizeError> {
        if labels.is_empty() {
            return Err(OptimizeError::Invalid("labeled set is empty".into()));
        }
        if budget.expansions_per_round == 0 || budget.beam_width == 0 {
            return Err(OptimizeError::Invalid("budget values must be at least 1".into()));
        }
        let (metrics, _) = self.score(initial, labels).await?;
        let mut start = initial.clone();
        start.train_score = Some(metrics.accuracy);
        let mut trail = vec![TrailEntry {
            round: 0,
            version: start.version,
            parent_version: start.parent_version,
            text: start.text.clone(),
            train_score: metrics.accuracy,
            f1: metrics.f1,
        }];
        let mut beam = vec![Member { prompt: start, metrics }];
        let mut seen: HashSet<String> = HashSet::from([initial.text.clone()]);
        let mut rounds = Vec::new();
        let mut best_scores = Vec::new();
        let mut error = None;

        for round in 0..budget.rounds {
            let target = round_evaluations
                .map(|r| r.get(round).copied().unwrap_or(0))
                .unwrap_or(budget.expansions_per_round)
                .min(budget.expansions_per_round);
            let before = (
                self.counters.gradients.load(Ordering::Relaxed),
                self.counters.generations.load(Ordering::Relaxed),
                self.counters.evaluations.load(Ordering::Relaxed),
            );
            match self
                .run_round(&mut beam, &mut seen, &mut trail, labels, budget, target, round, seed)
                .await
            {
                Ok(()) => {}
                Err(e) => error = Some(e.to_string()),
            }
            rounds.push(BaselineRound {
                round: round + 1,
                gradient_calls: self.counters.gradients.load(Ordering::Relaxed) - before.0,
                candidate_generations: self.counters.generations.load(Ordering::Relaxed) - before.1,
                candidate_evaluations: self.counters.evaluations.load(Ordering::Relaxed) - before.2,
            });
            best_scores.push(beam[0].metrics.accuracy);
            if error.is_some() {
                break;
            }
        }
        let best = beam.swap_remove(0);
        Ok(BaselineResult {
            best: best.prompt,
            best_metrics: best.metrics,
            best_scores,
            trail,
            rounds,
            error,
        })
    }

    #[allow(clippy::too_many_arguments)]
    async fn run_round(
        &self,
        beam: &mut Vec<Member>,
        seen: &mut HashSet<String>,
        trail: &mut Vec<TrailEntry>,
        labels: &[LabeledComment],
        budget: &OptimizationBudget,
        target: usize,
        round: usize,
        seed: u64,
    ) -> Result<(), OptimizeError> {
        let mut children: Vec<FreestylePrompt> = Vec::new();
        let members = beam.len();
        for (i, member) in beam.iter().enumerate() {
            if children.len() >= target {
                break;
            }
            // Even share of what is left, so shortfalls roll over to later members.
            let remaining_members = members - i;
            let want = (target - children.len()).div_ceil(remaining_members);
            let (_, mistakes) = self.score(&member.prompt, labels).await?;
            if mistakes.is_empty() {
                continue;
            }
            let member_seed = mix(&[seed, round as u64, i as u64]);
            let (gradient, batch) = self
                .textual_gradient(&member.prompt, &mistakes, self.config.minibatch_size, member_seed)
                .await?;
            let mut got = 0;
            let mut variant = 0u32;
            while got < want && (variant as usize) < budget.expansions_per_round {
                let calls = (want - got).min(budget.expansions_per_round - variant as usize);
                let batch_children = try_join_all(
                    (0..calls).map(|k| self.expand_one(&member.prompt, &gradient, &batch, variant + k as u32, member_seed)),
                )
                .await?;
                variant += calls as u32;
                for c in batch_children.into_iter().flatten() {
                    if got < want && seen.insert(c.text.clone()) {
                        children.push(c);
                        got += 1;
                    }
                }
            }
        }

        let scored = try_join_all(children.iter().map(|c| {
            self.counters.evaluations.fetch_add(1, Ordering::Relaxed);
            self.score(c, labels)
        }))
        .await?;
        for (mut c, (metrics, _)) in children.into_iter().zip(scored) {
            c.train_score = Some(metrics.accuracy);
            trail.push(TrailEntry {
                round: round + 1,
                version: c.version,
                parent_version: c.parent_version,
                text: c.text.clone(),
                train_score: metrics.accuracy,
                f1: metrics.f1,
            });
            beam.push(Member { prompt: c, metrics });
        }
        // Stable sort keeps incumbents ahead of equally scored children.
        beam.sort_by(|a, b| compare_scores(key(&a.metrics), key(&b.metrics)));
        beam.truncate(budget.beam_width);
        Ok(())
    }
}

/// Extracts the prompt from a `PROMPT:` answer: text after the marker on the
/// same line and all following lines.
pub fn parse_rewrite(raw: &str) -> Option<String> {
    let start = raw.find("PROMPT:")?;
    let text = raw[start + "PROMPT:".len()..].trim();
    (!text.is_empty()).then(|| text.to_string())
}
