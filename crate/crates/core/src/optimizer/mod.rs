//! Interpretable prompt optimization.
//!
//! One round evaluates the incumbent on the labeled set, reflects on each
//! mistake, clusters the reflections into failure patterns, then asks for
//! single-rubric edits aimed at one pattern (or at one mistake the user has
//! clarified). Every candidate differs from its parent by exactly one rubric,
//! and is scored on the labeled set before anyone sees it.

pub mod cluster;
pub mod init;

use std::collections::{HashMap, HashSet};
use std::sync::atomic::{AtomicU64, Ordering};

use futures::future::try_join_all;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::classifier::{ClassifyError, Classifier, Evaluation, Metrics};
use crate::gateway::{EmbeddingVector, GatewayError};
use crate::model::{
    CommentId, EditDiff, EditDirection, FilterPrompt, LabeledComment, Mistake, MistakeRef, Polarity, Rubric, RubricOrigin,
    Verdict,
};
use crate::render::{DraftSeed, ProposeDirection, ReflectMode, Task, TaskItem};
use crate::rng::mix;
use crate::text::first_sentences;

pub use init::{initialize_filter, AutoRound, AutoResult, InitOutcome, InitPlan};

const REFLECT_TAG: u64 = 0x7265_666c;
const PROPOSE_TAG: u64 = 0x7072_6f70;
const SUMMARY_TAG: u64 = 0x7375_6d6d;

/// Most mistakes shown to the model in one proposal request.
const MAX_PROPOSE_ITEMS: usize = 8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct OptimizationBudget {
    pub expansions_per_round: usize,
    pub beam_width: usize,
    pub rounds: usize,
}

impl Default for OptimizationBudget {
    fn default() -> Self {
        Self {
            expansions_per_round: 4,
            beam_width: 2,
            rounds: 1,
        }
    }
}

impl OptimizationBudget {
    pub fn automatic() -> Self {
        Self {
            rounds: 2,
            ..Self::default()
        }
    }

    pub fn check(&self) -> Result<(), OptimizeError> {
        if self.expansions_per_round == 0 || self.beam_width == 0 || self.rounds == 0 {
            return Err(OptimizeError::Invalid("budget values must all be at least 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClusterParams {
    pub eps: f64,
    pub min_points: usize,
}

impl Default for ClusterParams {
    fn default() -> Self {
        Self { eps: 0.25, min_points: 2 }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct OptimizerConfig {
    pub cluster: ClusterParams,
    /// Above this many rubrics of one polarity, Add directions are suppressed.
    pub rubric_soft_cap: usize,
    pub surfaced: usize,
    /// Seed for every labeled-set evaluation, so parent and children see the same noise.
    pub eval_seed: u64,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        Self {
            cluster: ClusterParams::default(),
            rubric_soft_cap: 8,
            surfaced: 3,
            eval_seed: 0,
        }
    }
}

#[derive(Debug, Error)]
pub enum OptimizeError {
    #[error("invalid input: {0}")]
    Invalid(String),
    #[error("cancelled: {0}")]
    Cancelled(String),
    #[error(transparent)]
    Classify(#[from] ClassifyError),
    #[error(transparent)]
    Gateway(#[from] GatewayError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Reflection {
    pub mistake: MistakeRef,
    pub text: String,
    pub embedding: EmbeddingVector,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FailurePattern {
    pub pattern_id: String,
    pub member_mistakes: Vec<MistakeRef>,
    pub summary: String,
    pub size: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClarifiedMistake {
    pub mistake: MistakeRef,
    pub rationale_text: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CandidateEdit {
    pub diff: EditDiff,
    pub child_prompt: FilterPrompt,
    pub train_score: f64,
    pub metrics: Option<Metrics>,
    pub resolved: usize,
    pub introduced: usize,
}

impl CandidateEdit {
    fn rank_key(&self) -> (f64, f64, i64) {
        let f1 = self.metrics.map_or(0.0, |m| m.f1);
        (self.train_score, f1, -(self.introduced as i64))
    }
}

/// Orders by accuracy, then F1, then fewer introduced mistakes; best first.
pub fn compare_scores(a: (f64, f64, i64), b: (f64, f64, i64)) -> std::cmp::Ordering {
    b.0.total_cmp(&a.0)
        .then_with(|| b.1.total_cmp(&a.1))
        .then_with(|| b.2.cmp(&a.2))
}

/// Where a round's candidates should aim.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Guidance {
    /// Analyze all mistakes and target the largest failure pattern.
    Automatic,
    Pattern { pattern: FailurePattern },
    Clarified { clarified: ClarifiedMistake },
}

/// The mistakes and guidance text a proposal is aimed at.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Target {
    pub mistakes: Vec<Mistake>,
    pub guidance: Vec<String>,
}

impl Target {
    /// Missed catches call for positive rubrics, false alarms for negative ones.
    pub fn polarity(&self) -> Polarity {
        let fns = self.mistakes.iter().filter(|m| m.is_false_negative()).count();
        if fns * 2 >= self.mistakes.len() {
            Polarity::Positive
        } else {
            Polarity::Negative
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankedCandidates {
    pub incumbent: Metrics,
    pub target: Target,
    /// All scored candidates, best first.
    pub candidates: Vec<CandidateEdit>,
}

impl RankedCandidates {
    pub fn incumbent_score(&self) -> f64 {
        self.incumbent.accuracy
    }

    /// The candidates shown to a user.
    pub fn surfaced(&self, cap: usize) -> &[CandidateEdit] {
        &self.candidates[..self.candidates.len().min(cap)]
    }

    pub fn best(&self) -> Option<&CandidateEdit> {
        self.candidates.first()
    }

    /// True when the best candidate beats the incumbent on the score key.
    pub fn improves(&self) -> bool {
        self.best().is_some_and(|c| {
            compare_scores(c.rank_key(), (self.incumbent.accuracy, self.incumbent.f1, 0)) == std::cmp::Ordering::Less
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "outcome", rename_all = "snake_case")]
pub enum RoundOutcome {
    NothingToFix { incumbent: Metrics },
    Ranked(RankedCandidates),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FailureAnalysis {
    pub metrics: Metrics,
    pub mistakes: Vec<Mistake>,
    pub reflections: Vec<Reflection>,
    pub patterns: Vec<FailurePattern>,
}

/// Instrumented counters.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct OptimizerStats {
    pub candidate_generations: u64,
    pub candidate_evaluations: u64,
}

#[derive(Default)]
struct Counters {
    generations: AtomicU64,
    evaluations: AtomicU64,
}

pub struct Optimizer {
    classifier: Classifier,
    config: OptimizerConfig,
    counters: Counters,
}

impl Optimizer {
    pub fn new(classifier: Classifier, config: OptimizerConfig) -> Self {
        Self {
            classifier,
            config,
            counters: Counters::default(),
        }
    }

    pub fn classifier(&self) -> &Classifier {
        &self.classifier
    }

    pub fn config(&self) -> &OptimizerConfig {
        &self.config
    }

    pub fn stats(&self) -> OptimizerStats {
        OptimizerStats {
            candidate_generations: self.counters.generations.load(Ordering::Relaxed),
            candidate_evaluations: self.counters.evaluations.load(Ordering::Relaxed),
        }
    }

    pub async fn evaluate(&self, prompt: &FilterPrompt, labeled: &[LabeledComment]) -> Result<Evaluation, OptimizeError> {
        Ok(self.classifier.evaluate(prompt, labeled, self.config.eval_seed).await?)
    }

    /// A one-to-three sentence description from a short seed.
    pub async fn draft_description(&self, seed: &DraftSeed) -> Result<String, OptimizeError> {
        let empty = match seed {
            DraftSeed::Description(d) => d.trim().is_empty(),
            DraftSeed::Examples(e) => e.iter().all(|x| x.trim().is_empty()),
        };
        if empty {
            return Err(OptimizeError::Invalid("draft seed is empty".into()));
        }
        let raw = self.classifier.gateway().run(None, &Task::Draft(seed.clone()), 0).await?;
        let text = first_sentences(&raw, 3);
        if text.is_empty() {
            return Err(GatewayError::Protocol("empty draft".into()).into());
        }
        Ok(text)
    }

    /// Why the prompt got `mistake` wrong: one generation call and one embedding call.
    pub async fn reflect(&self, prompt: &FilterPrompt, mistake: &Mistake, seed: u64) -> Result<Reflection, OptimizeError> {
        let text = self.reflection_text(prompt, mistake, seed).await?;
        let embedding = self
            .classifier
            .gateway()
            .embed(std::slice::from_ref(&text))
            .await?
            .pop()
            .ok_or_else(|| GatewayError::Protocol("no embedding returned".into()))?;
        Ok(Reflection {
            mistake: mistake.reference(),
            text,
            embedding,
        })
    }

    async fn reflection_text(&self, prompt: &FilterPrompt, mistake: &Mistake, seed: u64) -> Result<String, OptimizeError> {
        if mistake.predicted == mistake.gold {
            return Err(OptimizeError::Invalid(format!("comment {} was classified correctly", mistake.comment.id)));
        }
        let task = Task::Reflect {
            mode: ReflectMode::Mistake,
            items: vec![TaskItem::mistake(&mistake.comment.text, mistake.predicted, mistake.gold)],
            variant: 0,
        };
        let seed = mix(&[seed, crate::rng::text_key(&mistake.comment.id), REFLECT_TAG]);
        let raw = self.classifier.gateway().run(Some(prompt), &task, seed).await?;
        let text = first_sentences(&raw, 2);
        if text.is_empty() {
            return Err(GatewayError::Protocol("empty reflection".into()).into());
        }
        Ok(text)
    }

    /// Reflects on every mistake; the embeddings go out as one batched call.
    pub async fn reflect_all(&self, prompt: &FilterPrompt, mistakes: &[Mistake], seed: u64) -> Result<Vec<Reflection>, OptimizeError> {
        if mistakes.is_empty() {
            return Ok(Vec::new());
        }
        let texts = try_join_all(mistakes.iter().map(|m| self.reflection_text(prompt, m, seed))).await?;
        let embeddings = self.classifier.gateway().embed(&texts).await?;
        Ok(mistakes
            .iter()
            .zip(texts)
            .zip(embeddings)
            .map(|((m, text), embedding)| Reflection {
                mistake: m.reference(),
                text,
                embedding,
            })
            .collect())
    }

    pub fn cluster_reflections(&self, reflections: &[Reflection]) -> Vec<FailurePattern> {
        cluster_reflections(reflections, self.config.cluster)
    }

    /// A short description of what a pattern's mistakes share.
    pub async fn summarize_pattern(&self, prompt: &FilterPrompt, pattern: &FailurePattern, members: &[Reflection]) -> Result<String, OptimizeError> {
        if pattern.member_mistakes.is_empty() {
            return Err(OptimizeError::Invalid("pattern has no members".into()));
        }
        let ids: HashSet<&str> = pattern.member_mistakes.iter().map(|m| m.comment_id.as_str()).collect();
        let texts: Vec<String> = members
            .iter()
            .filter(|r| ids.contains(r.mistake.comment_id.as_str()))
            .map(|r| r.text.clone())
            .collect();
        if texts.is_empty() {
            return Err(OptimizeError::Invalid("no reflections for pattern members".into()));
        }
        let seed = mix(&[crate::rng::text_key(&pattern.pattern_id), SUMMARY_TAG]);
        let raw = self.classifier.gateway().run(Some(prompt), &Task::Summarize(texts), seed).await?;
        Ok(first_sentences(&raw, 2))
    }

    /// Evaluates, reflects on all mistakes, clusters, and summarizes every pattern.
    pub async fn analyze_failures(&self, prompt: &FilterPrompt, labeled: &[LabeledComment], seed: u64) -> Result<FailureAnalysis, OptimizeError> {
        let evaluation = self.evaluate(prompt, labeled).await?;
        let reflections = self.reflect_all(prompt, &evaluation.mistakes, seed).await?;
        let mut patterns = self.cluster_reflections(&reflections);
        let summaries = try_join_all(patterns.iter().map(|p| self.summarize_pattern(prompt, p, &reflections))).await?;
        for (p, s) in patterns.iter_mut().zip(summaries) {
            p.summary = s;
        }
        Ok(FailureAnalysis {
            metrics: evaluation.metrics,
            mistakes: evaluation.mistakes,
            reflections,
            patterns,
        })
    }

    /// Candidate rationales the user can pick and edit into a clarification.
    pub async fn rationale_candidates(&self, prompt: &FilterPrompt, mistake: &Mistake, n: usize) -> Result<Vec<String>, OptimizeError> {
        if mistake.predicted == mistake.gold {
            return Err(OptimizeError::Invalid(format!("comment {} was classified correctly", mistake.comment.id)));
        }
        if n == 0 {
            return Err(OptimizeError::Invalid("n must be at least 1".into()));
        }
        let calls = (0..n).map(|variant| {
            let task = Task::Reflect {
                mode: ReflectMode::Rationale,
                items: vec![TaskItem::mistake(&mistake.comment.text, mistake.predicted, mistake.gold)],
                variant: variant as u32,
            };
            let seed = mix(&[crate::rng::text_key(&mistake.comment.id), variant as u64, REFLECT_TAG]);
            async move { self.classifier.gateway().run(Some(prompt), &task, seed).await }
        });
        let raw = try_join_all(calls).await?;
        let mut seen = HashSet::new();
        Ok(raw
            .into_iter()
            .map(|r| first_sentences(&r, 1))
            .filter(|r| !r.is_empty() && seen.insert(r.clone()))
            .collect())
    }

    fn directions(&self, prompt: &FilterPrompt, polarity: Polarity) -> Vec<EditDirection> {
        let mut out = Vec::new();
        if prompt.rubrics(polarity).len() < self.config.rubric_soft_cap {
            out.push(EditDirection::add(polarity));
        }
        out.extend(
            prompt
                .rubrics(polarity)
                .iter()
                .map(|r| EditDirection::edit(polarity, r.rubric_id.clone())),
        );
        out
    }

    async fn propose(
        &self,
        prompt: &FilterPrompt,
        target: &Target,
        direction: &EditDirection,
        variant: u32,
        seed: u64,
    ) -> Result<Option<CandidateEdit>, OptimizeError> {
        let target_text = match direction {
            EditDirection::EditPositive(id) | EditDirection::EditNegative(id) => {
                prompt.all_rubrics().find(|r| &r.rubric_id == id).map(|r| r.text.clone())
            }
            _ => None,
        };
        let task = Task::Propose {
            direction: ProposeDirection::Rubric(direction.clone()),
            target_text,
            items: target
                .mistakes
                .iter()
                .take(MAX_PROPOSE_ITEMS)
                .map(|m| TaskItem::mistake(&m.comment.text, m.predicted, m.gold))
                .collect(),
            guidance: target.guidance.clone(),
            variant,
        };
        self.counters.generations.fetch_add(1, Ordering::Relaxed);
        let raw = self.classifier.gateway().run(Some(prompt), &task, seed).await?;
        Ok(parse_rubric_output(&raw).and_then(|text| apply_edit(prompt, direction, &text)))
    }

    async fn propose_many(
        &self,
        prompt: &FilterPrompt,
        target: &Target,
        planned: Vec<(EditDirection, u32)>,
        calls: &mut usize,
        seed: u64,
    ) -> Result<Vec<(EditDirection, Option<CandidateEdit>)>, OptimizeError> {
        let start = *calls;
        *calls += planned.len();
        let futs = planned.into_iter().enumerate().map(|(i, (dir, variant))| {
            let call_seed = mix(&[seed, (start + i) as u64, PROPOSE_TAG]);
            async move {
                let c = self.propose(prompt, target, &dir, variant, call_seed).await?;
                Ok::<_, OptimizeError>((dir, c))
            }
        });
        try_join_all(futs).await
    }

    /// Up to `budget.expansions_per_round` single-rubric candidates aimed at `target`.
    pub async fn generate_candidates(
        &self,
        prompt: &FilterPrompt,
        target: &Target,
        budget: &OptimizationBudget,
        seed: u64,
    ) -> Result<Vec<CandidateEdit>, OptimizeError> {
        budget.check()?;
        if target.mistakes.is_empty() {
            return Err(OptimizeError::Invalid("target has no mistakes".into()));
        }
        let limit = budget.expansions_per_round;
        let mut calls = 0usize;
        let mut out: Vec<CandidateEdit> = Vec::new();
        let mut hashes: HashSet<String> = HashSet::new();
        let mut productive: Vec<EditDirection> = Vec::new();

        let primary = target.polarity();
        let first: Vec<_> = self.directions(prompt, primary).into_iter().take(limit).map(|d| (d, 0)).collect();
        let results = self.propose_many(prompt, target, first, &mut calls, seed).await?;
        absorb(results, &mut out, &mut productive, &mut hashes);

        if out.len() < 2 && calls < limit {
            let second: Vec<_> = self
                .directions(prompt, primary.opposite())
                .into_iter()
                .take(limit - calls)
                .map(|d| (d, 0))
                .collect();
            let results = self.propose_many(prompt, target, second, &mut calls, seed).await?;
            absorb(results, &mut out, &mut productive, &mut hashes);
        }

        let mut variant = 1u32;
        while calls < limit && !productive.is_empty() {
            let more: Vec<_> = productive
                .iter()
                .cycle()
                .take((limit - calls).min(productive.len()))
                .map(|d| (d.clone(), variant))
                .collect();
            let results = self.propose_many(prompt, target, more, &mut calls, seed).await?;
            absorb(results, &mut out, &mut productive, &mut hashes);
            variant += 1;
        }
        out.truncate(limit);
        Ok(out)
    }

    /// Scores candidates on `labeled` and sorts them best first.
    pub async fn score_candidates(
        &self,
        parent: &FilterPrompt,
        candidates: Vec<CandidateEdit>,
        labeled: &[LabeledComment],
    ) -> Result<Vec<CandidateEdit>, OptimizeError> {
        if labeled.is_empty() {
            return Err(OptimizeError::Invalid("labeled set is empty".into()));
        }
        let base = self.evaluate(parent, labeled).await?;
        let evals = try_join_all(candidates.iter().map(|c| {
            self.counters.evaluations.fetch_add(1, Ordering::Relaxed);
            self.evaluate(&c.child_prompt, labeled)
        }))
        .await?;
        let mut scored: Vec<CandidateEdit> = candidates
            .into_iter()
            .zip(evals)
            .map(|(mut c, ev)| {
                let (resolved, introduced) = resolution(&base.correct, &ev.correct);
                c.train_score = ev.metrics.accuracy;
                c.metrics = Some(ev.metrics);
                c.resolved = resolved;
                c.introduced = introduced;
                c
            })
            .collect();
        scored.sort_by(|a, b| compare_scores(a.rank_key(), b.rank_key()));
        Ok(scored)
    }

    /// Builds the target a round aims at.
    pub async fn resolve_target(
        &self,
        prompt: &FilterPrompt,
        labeled: &[LabeledComment],
        evaluation: &Evaluation,
        guidance: &Guidance,
        seed: u64,
    ) -> Result<Target, OptimizeError> {
        match guidance {
            Guidance::Automatic => {
                let reflections = self.reflect_all(prompt, &evaluation.mistakes, seed).await?;
                let patterns = self.cluster_reflections(&reflections);
                let mut largest = patterns.into_iter().next().expect("at least one mistake");
                largest.summary = self.summarize_pattern(prompt, &largest, &reflections).await?;
                let mut target = pattern_target(&largest, labeled, evaluation)?;
                // Reflections on the members carry the per-mistake diagnosis.
                let ids: HashSet<&str> = largest.member_mistakes.iter().map(|m| m.comment_id.as_str()).collect();
                for r in &reflections {
                    if ids.contains(r.mistake.comment_id.as_str()) && !target.guidance.contains(&r.text) {
                        target.guidance.push(r.text.clone());
                    }
                }
                Ok(target)
            }
            Guidance::Pattern { pattern } => pattern_target(pattern, labeled, evaluation),
            Guidance::Clarified { clarified } => {
                if clarified.rationale_text.trim().is_empty() {
                    return Err(OptimizeError::Invalid("a clarification is required before fixing one mistake".into()));
                }
                let m = &clarified.mistake;
                if m.predicted == m.gold {
                    return Err(OptimizeError::Invalid("clarified comment is not a mistake".into()));
                }
                let comment = labeled
                    .iter()
                    .find(|l| l.comment.id == m.comment_id)
                    .ok_or_else(|| OptimizeError::Invalid(format!("comment {} is not labeled", m.comment_id)))?
                    .comment
                    .clone();
                Ok(Target {
                    mistakes: vec![Mistake {
                        comment,
                        predicted: m.predicted,
                        gold: m.gold,
                    }],
                    guidance: vec![clarified.rationale_text.trim().to_string()],
                })
            }
        }
    }

    /// One optimization round. Does not mutate anything; the caller picks.
    pub async fn optimize_round(
        &self,
        prompt: &FilterPrompt,
        labeled: &[LabeledComment],
        guidance: &Guidance,
        budget: &OptimizationBudget,
        seed: u64,
    ) -> Result<RoundOutcome, OptimizeError> {
        budget.check()?;
        if labeled.is_empty() {
            return Err(OptimizeError::Invalid("labeled set is empty".into()));
        }
        let evaluation = self.evaluate(prompt, labeled).await?;
        if evaluation.mistakes.is_empty() {
            return Ok(RoundOutcome::NothingToFix {
                incumbent: evaluation.metrics,
            });
        }
        let target = self.resolve_target(prompt, labeled, &evaluation, guidance, seed).await?;
        let candidates = self.generate_candidates(prompt, &target, budget, seed).await?;
        let candidates = self.score_candidates(prompt, candidates, labeled).await?;
        Ok(RoundOutcome::Ranked(RankedCandidates {
            incumbent: evaluation.metrics,
            target,
            candidates,
        }))
    }
}

fn absorb(
    results: Vec<(EditDirection, Option<CandidateEdit>)>,
    out: &mut Vec<CandidateEdit>,
    productive: &mut Vec<EditDirection>,
    hashes: &mut HashSet<String>,
) {
    for (dir, c) in results {
        let Some(c) = c else { continue };
        if !productive.contains(&dir) {
            productive.push(dir);
        }
        if hashes.insert(c.child_prompt.content_hash.clone()) {
            out.push(c);
        }
    }
}

/// (parent-wrong and child-right, parent-right and child-wrong) counts.
pub fn resolution(parent_correct: &[bool], child_correct: &[bool]) -> (usize, usize) {
    let mut resolved = 0;
    let mut introduced = 0;
    for (p, c) in parent_correct.iter().zip(child_correct) {
        match (p, c) {
            (false, true) => resolved += 1,
            (true, false) => introduced += 1,
            _ => {}
        }
    }
    (resolved, introduced)
}

fn pattern_target(pattern: &FailurePattern, labeled: &[LabeledComment], evaluation: &Evaluation) -> Result<Target, OptimizeError> {
    if pattern.member_mistakes.is_empty() {
        return Err(OptimizeError::Invalid("pattern has no members".into()));
    }
    let by_id: HashMap<&CommentId, &LabeledComment> = labeled.iter().map(|l| (&l.comment.id, l)).collect();
    let current: HashMap<&CommentId, Verdict> = evaluation
        .mistakes
        .iter()
        .map(|m| (&m.comment.id, m.predicted))
        .collect();
    let mut mistakes = Vec::new();
    for r in &pattern.member_mistakes {
        let l = by_id
            .get(&r.comment_id)
            .ok_or_else(|| OptimizeError::Invalid(format!("comment {} is not labeled", r.comment_id)))?;
        // Keep members the incumbent still gets wrong; fall back to the recorded mistake.
        let predicted = current.get(&r.comment_id).copied().unwrap_or(r.predicted);
        mistakes.push(Mistake {
            comment: l.comment.clone(),
            predicted,
            gold: l.verdict,
        });
    }
    mistakes.retain(|m| m.predicted != m.gold);
    if mistakes.is_empty() {
        return Err(OptimizeError::Invalid("pattern has no remaining mistakes".into()));
    }
    let guidance = if pattern.summary.trim().is_empty() {
        Vec::new()
    } else {
        vec![pattern.summary.clone()]
    };
    Ok(Target { mistakes, guidance })
}

/// Clusters reflections into patterns, largest first, ties by smallest member id.
pub fn cluster_reflections(reflections: &[Reflection], params: ClusterParams) -> Vec<FailurePattern> {
    if reflections.is_empty() {
        return Vec::new();
    }
    let points: Vec<EmbeddingVector> = reflections.iter().map(|r| r.embedding.clone()).collect();
    let labels = cluster::dbscan(&points, params.eps, params.min_points);
    let count = labels.iter().max().map_or(0, |m| m + 1);
    let mut groups: Vec<Vec<MistakeRef>> = vec![Vec::new(); count];
    for (r, l) in reflections.iter().zip(labels) {
        groups[l].push(r.mistake.clone());
    }
    for g in &mut groups {
        g.sort_by(|a, b| a.comment_id.cmp(&b.comment_id));
    }
    groups.sort_by(|a, b| b.len().cmp(&a.len()).then_with(|| a[0].comment_id.cmp(&b[0].comment_id)));
    groups
        .into_iter()
        .enumerate()
        .map(|(i, members)| FailurePattern {
            pattern_id: format!("pattern-{}", i + 1),
            size: members.len(),
            member_mistakes: members,
            summary: String::new(),
        })
        .collect()
}

/// Extracts the rubric text from a `RUBRIC: <text>` answer.
pub fn parse_rubric_output(raw: &str) -> Option<String> {
    raw.lines().find_map(|line| {
        let rest = line.trim().strip_prefix("RUBRIC:")?;
        let text = rest.trim().trim_matches('"').trim();
        (!text.is_empty() && !text.eq_ignore_ascii_case("none")).then(|| text.to_string())
    })
}

/// The child prompt that applies one rubric edit, or None if it changes nothing.
pub fn apply_edit(prompt: &FilterPrompt, direction: &EditDirection, text: &str) -> Option<CandidateEdit> {
    let polarity = direction.polarity()?;
    let mut child = prompt.next_version();
    let version = child.version;
    let before_text = match direction {
        EditDirection::AddPositive | EditDirection::AddNegative => {
            if prompt.rubrics(polarity).iter().any(|r| r.text == text) {
                return None;
            }
            let rubric_id = child.fresh_rubric_id(polarity);
            child.rubrics_mut(polarity).push(Rubric {
                rubric_id,
                polarity,
                text: text.to_string(),
                origin: RubricOrigin::Iteration(version),
            });
            None
        }
        EditDirection::EditPositive(id) | EditDirection::EditNegative(id) => {
            let rubric = child.rubrics_mut(polarity).iter_mut().find(|r| &r.rubric_id == id)?;
            if rubric.text == text {
                return None;
            }
            let before = std::mem::replace(&mut rubric.text, text.to_string());
            rubric.origin = RubricOrigin::Iteration(version);
            Some(before)
        }
        _ => return None,
    };
    child.rehash();
    Some(CandidateEdit {
        diff: EditDiff {
            direction: direction.clone(),
            before_text,
            after_text: text.to_string(),
        },
        child_prompt: child,
        train_score: 0.0,
        metrics: None,
        resolved: 0,
        introduced: 0,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cache::MemoryCache;
    use crate::diff::diff_prompts;
    use crate::gateway::sim::{SimBackend, SimulationRule};
    use crate::gateway::Gateway;
    use crate::model::Comment;
    use chrono::{TimeZone, Utc};
    use std::sync::Arc;

    fn rule() -> SimulationRule {
        SimulationRule::new(["giveaway", "politics"], ["official"], 0.0, 5).unwrap()
    }

    fn optimizer() -> Optimizer {
        let classifier = Classifier::new(Arc::new(Gateway::simulated(rule())), Arc::new(MemoryCache::new()));
        Optimizer::new(classifier, OptimizerConfig::default())
    }

    fn labeled(texts: &[&str]) -> Vec<LabeledComment> {
        let r = rule();
        let t = Utc.with_ymd_and_hms(2024, 1, 1, 0, 0, 0).unwrap();
        texts
            .iter()
            .enumerate()
            .map(|(i, text)| LabeledComment {
                comment: Comment::new(format!("c{i:02}"), *text, t),
                verdict: r.judge(text),
            })
            .collect()
    }

    fn prompt_with(pos: &[&str]) -> FilterPrompt {
        let mut p = FilterPrompt::draft("f", "spam", "Catch unwanted comments");
        for (i, t) in pos.iter().enumerate() {
            p.positive_rubrics.push(Rubric {
                rubric_id: format!("p{}", i + 1),
                polarity: Polarity::Positive,
                text: t.to_string(),
                origin: RubricOrigin::Initial,
            });
        }
        p.rehash();
        p
    }

    fn mistake(text: &str, predicted: Verdict, gold: Verdict, id: &str) -> Mistake {
        let t = Utc.with_ymd_and_hms(2024, 1, 1, 0, 0, 0).unwrap();
        Mistake {
            comment: Comment::new(id, text, t),
            predicted,
            gold,
        }
    }

    #[tokio::test]
    async fn draft_from_description() {
        let o = optimizer();
        let d = o.draft_description(&DraftSeed::Description("spam".into())).await.unwrap();
        assert!(d.starts_with("Catch comments that "), "{d}");
        let d = o
            .draft_description(&DraftSeed::Examples(vec!["win a free giveaway".into()]))
            .await
            .unwrap();
        assert!(!d.is_empty());
        assert!(o.draft_description(&DraftSeed::Description("  ".into())).await.is_err());
    }

    #[tokio::test]
    async fn reflection_names_uncovered_keyword() {
        let o = optimizer();
        let p = prompt_with(&["Catch comments that mention politics"]);
        let m = mistake("join my giveaway now", Verdict::NotCatch, Verdict::Catch, "c1");
        let r = o.reflect(&p, &m, 1).await.unwrap();
        assert!(r.text.contains("giveaway"));
        assert_eq!(r, o.reflect(&p, &m, 1).await.unwrap());
        let ok = mistake("hello", Verdict::Catch, Verdict::Catch, "c2");
        assert!(o.reflect(&p, &ok, 1).await.is_err());
    }

    #[tokio::test]
    async fn clustering_separates_failure_modes() {
        let o = optimizer();
        let p = prompt_with(&["Catch comments that mention official"]);
        let ms = vec![
            mistake("giveaway here", Verdict::NotCatch, Verdict::Catch, "a"),
            mistake("big giveaway today", Verdict::NotCatch, Verdict::Catch, "b"),
            mistake("politics talk", Verdict::NotCatch, Verdict::Catch, "c"),
            mistake("giveaway again", Verdict::NotCatch, Verdict::Catch, "d"),
            mistake("more politics", Verdict::NotCatch, Verdict::Catch, "e"),
        ];
        let refl = o.reflect_all(&p, &ms, 0).await.unwrap();
        // Independent check of the geometry the clustering relies on.
        for x in &refl {
            for y in &refl {
                let same = x.text == y.text;
                let d = cluster::cosine_distance(&x.embedding, &y.embedding);
                assert_eq!(same, d <= 0.25, "{} vs {}: {d}", x.text, y.text);
            }
        }
        let patterns = o.cluster_reflections(&refl);
        let sizes: Vec<_> = patterns.iter().map(|p| p.size).collect();
        assert_eq!(sizes, vec![3, 2]);
        let ids: Vec<_> = patterns[0].member_mistakes.iter().map(|m| m.comment_id.as_str()).collect();
        assert_eq!(ids, vec!["a", "b", "d"]);
        let summary = o.summarize_pattern(&p, &patterns[0], &refl).await.unwrap();
        assert!(summary.contains("giveaway"), "{summary}");
    }

    #[tokio::test]
    async fn degenerate_clusters() {
        let o = optimizer();
        let p = prompt_with(&[]);
        let same: Vec<_> = (0..4)
            .map(|i| mistake("giveaway", Verdict::NotCatch, Verdict::Catch, &format!("m{i}")))
            .collect();
        let refl = o.reflect_all(&p, &same, 0).await.unwrap();
        assert_eq!(o.cluster_reflections(&refl).len(), 1);
        assert_eq!(o.cluster_reflections(&refl[..1])[0].size, 1);
        let empty = FailurePattern {
            pattern_id: "x".into(),
            member_mistakes: vec![],
            summary: String::new(),
            size: 0,
        };
        assert!(o.summarize_pattern(&p, &empty, &refl).await.is_err());
    }

    #[tokio::test]
    async fn candidates_are_single_rubric_edits_within_budget() {
        let o = optimizer();
        let p = prompt_with(&["Catch comments that mention politics"]);
        let target = Target {
            mistakes: vec![mistake("free giveaway", Verdict::NotCatch, Verdict::Catch, "x")],
            guidance: vec![],
        };
        let budget = OptimizationBudget::default();
        let cands = o.generate_candidates(&p, &target, &budget, 3).await.unwrap();
        assert!(!cands.is_empty() && cands.len() <= 4);
        assert_eq!(o.stats().candidate_generations, 4);
        assert!(cands
            .iter()
            .any(|c| c.diff.direction == EditDirection::AddPositive && c.diff.after_text.contains("giveaway")));
        for c in &cands {
            let d = diff_prompts(&p, &c.child_prompt).unwrap();
            assert_eq!(d, vec![c.diff.clone()]);
            assert_eq!(c.child_prompt.description, p.description);
            assert_eq!(c.child_prompt.examples, p.examples);
        }
    }

    #[tokio::test]
    async fn rubric_cap_suppresses_add() {
        let o = optimizer();
        let texts: Vec<String> = (0..8).map(|i| format!("Catch comments about topic{i}")).collect();
        let refs: Vec<&str> = texts.iter().map(String::as_str).collect();
        let p = prompt_with(&refs);
        let dirs = o.directions(&p, Polarity::Positive);
        assert!(!dirs.contains(&EditDirection::AddPositive));
        assert_eq!(dirs.len(), 8);
    }

    #[tokio::test]
    async fn resolved_and_introduced_counts() {
        // Parent catches politics; child (edit) catches giveaway instead.
        let o = optimizer();
        let data = labeled(&[
            "giveaway one", "giveaway two", "giveaway three", "politics a", "politics b", "plain 1", "plain 2",
            "plain 3", "plain 4", "plain 5", "plain 6", "plain 7", "plain 8", "plain 9", "plain 10", "plain 11",
            "plain 12", "plain 13", "plain 14", "plain 15",
        ]);
        let parent = prompt_with(&["Catch comments that mention politics"]);
        let cand = apply_edit(
            &parent,
            &EditDirection::EditPositive("p1".into()),
            "Catch comments that mention giveaway",
        )
        .unwrap();
        let scored = o.score_candidates(&parent, vec![cand], &data).await.unwrap();
        let c = &scored[0];
        assert_eq!((c.resolved, c.introduced), (3, 2));
        let pe = o.evaluate(&parent, &data).await.unwrap();
        let ce = o.evaluate(&c.child_prompt, &data).await.unwrap();
        assert_eq!(
            c.resolved as i64 - c.introduced as i64,
            ce.metrics.correct() as i64 - pe.metrics.correct() as i64
        );
    }

    #[tokio::test]
    async fn behavior_preserving_candidate_matches_parent() {
        let o = optimizer();
        let data = labeled(&["giveaway", "politics", "plain"]);
        let parent = prompt_with(&["Catch comments that mention giveaway"]);
        // Adds a rubric on a word no comment contains.
        let cand = apply_edit(&parent, &EditDirection::AddNegative, "Do not catch comments that mention official").unwrap();
        let pe = o.evaluate(&parent, &data).await.unwrap();
        let scored = o.score_candidates(&parent, vec![cand], &data).await.unwrap();
        assert_eq!(scored[0].train_score, pe.metrics.accuracy);
        assert_eq!((scored[0].resolved, scored[0].introduced), (0, 0));
    }

    #[tokio::test]
    async fn round_adds_missing_rubric() {
        let o = optimizer();
        let data = labeled(&[
            "giveaway now", "a giveaway", "politics here", "politics there", "official giveaway", "just a video",
            "nice song", "cool", "politics official", "giveaway time",
        ]);
        let p = prompt_with(&["Catch comments that mention politics"]);
        let budget = OptimizationBudget::default();
        let out = o.optimize_round(&p, &data, &Guidance::Automatic, &budget, 1).await.unwrap();
        let RoundOutcome::Ranked(r) = out else { panic!("expected candidates") };
        let best = r.best().unwrap();
        assert!(best.diff.after_text.contains("giveaway"), "{:?}", best.diff);
        assert!(best.train_score > r.incumbent_score());
        assert!(r.surfaced(3).len() <= 3);
        let again = optimizer().optimize_round(&p, &data, &Guidance::Automatic, &budget, 1).await.unwrap();
        assert_eq!(RoundOutcome::Ranked(r), again);
    }

    #[tokio::test]
    async fn round_with_no_mistakes() {
        let o = optimizer();
        let data = labeled(&["giveaway", "plain"]);
        let p = prompt_with(&["Catch comments that mention giveaway"]);
        let out = o
            .optimize_round(&p, &data, &Guidance::Automatic, &OptimizationBudget::default(), 0)
            .await
            .unwrap();
        assert!(matches!(out, RoundOutcome::NothingToFix { .. }));
    }

    #[tokio::test]
    async fn round_budget_is_respected() {
        let o = optimizer();
        let data = labeled(&["giveaway now", "politics here", "official giveaway", "plain"]);
        let p = prompt_with(&[]);
        let before = o.stats();
        o.optimize_round(&p, &data, &Guidance::Automatic, &OptimizationBudget::default(), 0)
            .await
            .unwrap();
        let after = o.stats();
        assert!(after.candidate_generations - before.candidate_generations <= 4);
        assert!(after.candidate_evaluations - before.candidate_evaluations <= 4);
    }

    #[tokio::test]
    async fn clarified_mistake_requires_text() {
        let o = optimizer();
        let data = labeled(&["giveaway now", "plain"]);
        let p = prompt_with(&["Catch comments that mention politics"]);
        let m = MistakeRef {
            comment_id: "c00".into(),
            predicted: Verdict::NotCatch,
            gold: Verdict::Catch,
        };
        let blank = Guidance::Clarified {
            clarified: ClarifiedMistake {
                mistake: m.clone(),
                rationale_text: " ".into(),
            },
        };
        let budget = OptimizationBudget::default();
        assert!(o.optimize_round(&p, &data, &blank, &budget, 0).await.is_err());
        let given = Guidance::Clarified {
            clarified: ClarifiedMistake {
                mistake: m,
                rationale_text: "giveaway posts are spam".into(),
            },
        };
        let RoundOutcome::Ranked(r) = o.optimize_round(&p, &data, &given, &budget, 0).await.unwrap() else {
            panic!()
        };
        assert!(r.candidates.iter().any(|c| c.diff.after_text.contains("giveaway")));
    }

    #[tokio::test]
    async fn rationale_candidates_dedupe() {
        let o = optimizer();
        let p = prompt_with(&[]);
        let m = mistake("giveaway here", Verdict::NotCatch, Verdict::Catch, "m");
        let three = o.rationale_candidates(&p, &m, 3).await.unwrap();
        assert!(three.iter().any(|r| r.contains("giveaway")));
        let set: HashSet<_> = three.iter().collect();
        assert_eq!(set.len(), three.len());
        assert_eq!(o.rationale_candidates(&p, &m, 1).await.unwrap().len(), 1);
    }

    #[test]
    fn sorting_and_parsing() {
        assert_eq!(parse_rubric_output("x\nRUBRIC: Catch a"), Some("Catch a".into()));
        assert_eq!(parse_rubric_output("RUBRIC: NONE"), None);
        assert_eq!(parse_rubric_output("NONE"), None);
        let key = |acc: f64| (acc, 0.5, 0i64);
        let mut v = [key(0.7), key(0.9)];
        v.sort_by(|a, b| compare_scores(*a, *b));
        assert_eq!(v[0].0, 0.9);
        assert_eq!(resolution(&[false, true, false], &[true, false, false]), (1, 1));
        let _ = SimBackend::new(rule());
    }
}
