//! Filter initialization: draft, label informative comments, optimize automatically.

use std::collections::HashSet;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::{compare_scores, Guidance, OptimizationBudget, OptimizeError, Optimizer, RoundOutcome};
use crate::classifier::{Metrics, Prediction};
use crate::model::{Comment, FewShotExample, FilterPrompt, LabeledComment, Rubric, RubricOrigin, Verdict, MAX_EXAMPLES};
use crate::render::DraftSeed;
use crate::rng::{mix, seeded};
use crate::sampler::{select_for_labeling, SamplingPlan, DEFAULT_LABELING_K};

const ROUND_TAG: u64 = 0x726f_756e;
const EXAMPLE_TAG: u64 = 0x6578_616d;

/// Everything the user needs to label before optimization can start.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InitPlan {
    pub v1: FilterPrompt,
    pub predictions: Vec<Prediction>,
    pub plan: SamplingPlan,
}

/// One round of the automatic beam search.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AutoRound {
    pub round: usize,
    pub expanded_hash: String,
    pub candidates_scored: usize,
    pub candidate_generations: u64,
    /// Score of the best beam member after the round.
    pub best_score: f64,
    pub nothing_to_fix: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AutoResult {
    pub best: FilterPrompt,
    pub best_metrics: Metrics,
    pub start_metrics: Metrics,
    pub rounds: Vec<AutoRound>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InitOutcome {
    pub v1: FilterPrompt,
    pub v2: FilterPrompt,
    pub labels: Vec<LabeledComment>,
    pub search: AutoResult,
}

struct BeamEntry {
    prompt: FilterPrompt,
    key: (f64, f64, i64),
    metrics: Metrics,
    expanded: bool,
}

impl Optimizer {
    /// Drafts v1, classifies the pool with it, and picks comments to label.
    pub async fn prepare_initialization(
        &self,
        filter_id: &str,
        name: &str,
        seed_input: &DraftSeed,
        pool: &[Comment],
        k: usize,
        seed: u64,
    ) -> Result<InitPlan, OptimizeError> {
        if pool.is_empty() {
            return Err(OptimizeError::Invalid("comment pool is empty".into()));
        }
        let description = self.draft_description(seed_input).await?;
        let v1 = FilterPrompt::draft(filter_id, name, description);
        let predictions = self.classifier().classify(&v1, pool, self.config().eval_seed).await?;
        let plan = select_for_labeling(&predictions, &HashSet::new(), k.max(1), seed);
        Ok(InitPlan { v1, predictions, plan })
    }

    /// Beam search over automatic rounds: each round expands the best beam
    /// member not yet expanded, and the beam keeps the best `beam_width`
    /// prompts seen so far (the starting prompt included).
    pub async fn automatic_optimize(
        &self,
        start: &FilterPrompt,
        labels: &[LabeledComment],
        budget: &OptimizationBudget,
        seed: u64,
    ) -> Result<AutoResult, OptimizeError> {
        budget.check()?;
        let start_eval = self.evaluate(start, labels).await?;
        let mut beam = vec![BeamEntry {
            prompt: start.clone(),
            key: (start_eval.metrics.accuracy, start_eval.metrics.f1, 0),
            metrics: start_eval.metrics,
            expanded: false,
        }];
        let mut rounds = Vec::new();
        for round in 0..budget.rounds {
            let Some(entry) = beam.iter_mut().find(|e| !e.expanded) else {
                break;
            };
            entry.expanded = true;
            let parent = entry.prompt.clone();
            let generated_before = self.stats().candidate_generations;
            let outcome = self
                .optimize_round(&parent, labels, &Guidance::Automatic, budget, mix(&[seed, round as u64, ROUND_TAG]))
                .await?;
            let (scored, nothing_to_fix) = match outcome {
                RoundOutcome::NothingToFix { .. } => (0, true),
                RoundOutcome::Ranked(ranked) => {
                    let n = ranked.candidates.len();
                    for c in ranked.candidates {
                        if beam.iter().any(|e| e.prompt.content_hash == c.child_prompt.content_hash) {
                            continue;
                        }
                        let metrics = c.metrics.expect("scored candidate");
                        beam.push(BeamEntry {
                            key: c.rank_key(),
                            prompt: c.child_prompt,
                            metrics,
                            expanded: false,
                        });
                    }
                    (n, false)
                }
            };
            beam.sort_by(|a, b| compare_scores(a.key, b.key));
            beam.truncate(budget.beam_width);
            rounds.push(AutoRound {
                round,
                expanded_hash: parent.content_hash,
                candidates_scored: scored,
                candidate_generations: self.stats().candidate_generations - generated_before,
                best_score: beam[0].key.0,
                nothing_to_fix,
            });
            if nothing_to_fix && beam[0].prompt.content_hash == rounds[round].expanded_hash {
                break;
            }
        }
        let best = beam.swap_remove(0);
        Ok(AutoResult {
            best: best.prompt,
            best_metrics: best.metrics,
            start_metrics: start_eval.metrics,
            rounds,
        })
    }

    /// Runs the automatic search from v1 and assembles v2: v1's description,
    /// the best rubrics found, and up to four few-shot examples.
    pub async fn complete_initialization(
        &self,
        v1: &FilterPrompt,
        labels: Vec<LabeledComment>,
        budget: &OptimizationBudget,
        seed: u64,
    ) -> Result<InitOutcome, OptimizeError> {
        if labels.is_empty() {
            return Err(OptimizeError::Invalid("no labels supplied".into()));
        }
        let search = self.automatic_optimize(v1, &labels, budget, seed).await?;
        let evaluation = self.evaluate(&search.best, &labels).await?;
        let examples = pick_examples(&labels, &evaluation.predictions, seed);

        let mut v2 = v1.next_version();
        // Rubrics found during initialization are part of the starting filter.
        for (slot, found) in [
            (&mut v2.positive_rubrics, &search.best.positive_rubrics),
            (&mut v2.negative_rubrics, &search.best.negative_rubrics),
        ] {
            *slot = found
                .iter()
                .map(|r| Rubric {
                    origin: RubricOrigin::Initial,
                    ..r.clone()
                })
                .collect();
        }
        v2.examples = examples;
        v2.rehash();
        Ok(InitOutcome {
            v1: v1.clone(),
            v2,
            labels,
            search,
        })
    }
}

/// Two correctly predicted comments per verdict, highest confidence first,
/// with a seeded tie-break.
pub fn pick_examples(labels: &[LabeledComment], predictions: &[Prediction], seed: u64) -> Vec<FewShotExample> {
    let mut out = Vec::new();
    for (i, verdict) in [Verdict::Catch, Verdict::NotCatch].into_iter().enumerate() {
        let mut pool: Vec<(&LabeledComment, f64)> = labels
            .iter()
            .zip(predictions)
            .filter(|(l, p)| l.verdict == verdict && p.verdict == verdict)
            .map(|(l, p)| (l, p.confidence))
            .collect();
        pool.sort_by(|a, b| a.0.comment.id.cmp(&b.0.comment.id));
        pool.shuffle(&mut seeded(&[seed, i as u64, EXAMPLE_TAG]));
        pool.sort_by(|a, b| b.1.total_cmp(&a.1));
        out.extend(pool.into_iter().take(MAX_EXAMPLES / 2).map(|(l, _)| FewShotExample {
            comment_text: l.comment.text.clone(),
            verdict,
            rationale: None,
        }));
    }
    out
}

/// Full initialization with labels supplied by `labeler`; returning None aborts.
/// Returns the labeling plan alongside the outcome.
pub async fn initialize_filter<F>(
    optimizer: &Optimizer,
    filter_id: &str,
    name: &str,
    seed_input: &DraftSeed,
    pool: &[Comment],
    mut labeler: F,
    seed: u64,
) -> Result<(SamplingPlan, InitOutcome), OptimizeError>
where
    F: FnMut(&Comment) -> Option<Verdict>,
{
    let plan = optimizer
        .prepare_initialization(filter_id, name, seed_input, pool, DEFAULT_LABELING_K, seed)
        .await?;
    let mut labels = Vec::with_capacity(plan.plan.len());
    for id in &plan.plan.selected {
        let comment = pool.iter().find(|c| &c.id == id).expect("plan ids come from the pool");
        let verdict = labeler(comment).ok_or_else(|| OptimizeError::Cancelled("labeling aborted".into()))?;
        labels.push(LabeledComment {
            comment: comment.clone(),
            verdict,
        });
    }
    let outcome = optimizer
        .complete_initialization(&plan.v1, labels, &OptimizationBudget::automatic(), seed)
        .await?;
    Ok((plan.plan, outcome))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cache::MemoryCache;
    use crate::classifier::Classifier;
    use crate::gateway::sim::SimulationRule;
    use crate::gateway::Gateway;
    use crate::model::validate_prompt;
    use crate::optimizer::OptimizerConfig;
    use crate::sampler::Tier;
    use chrono::{TimeZone, Utc};
    use std::sync::Arc;

    fn setup(noise: f64) -> (Optimizer, SimulationRule) {
        let rule = SimulationRule::new(["giveaway", "crypto"], ["official"], noise, 7).unwrap();
        let classifier = Classifier::new(Arc::new(Gateway::simulated(rule.clone())), Arc::new(MemoryCache::new()));
        (Optimizer::new(classifier, OptimizerConfig::default()), rule)
    }

    fn pool(n: usize) -> Vec<Comment> {
        let t = Utc.with_ymd_and_hms(2024, 2, 1, 0, 0, 0).unwrap();
        let bodies = [
            "join the giveaway", "crypto gains", "official giveaway from the channel", "great video", "crypto scam",
            "love this", "giveaway link", "nice edit", "official crypto news", "cool",
        ];
        (0..n)
            .map(|i| Comment::new(format!("c{i:03}"), format!("{} {i}", bodies[i % bodies.len()]), t))
            .collect()
    }

    #[tokio::test]
    async fn small_pool_still_completes() {
        let (o, rule) = setup(0.0);
        let p = pool(8);
        let (plan, out) =
            initialize_filter(&o, "f", "spam", &DraftSeed::Description("spam".into()), &p, |c| Some(rule.judge(&c.text)), 1)
                .await
                .unwrap();
        assert_eq!(plan.len(), 8);
        assert_eq!(out.v2.version, 2);
        assert_eq!(out.v2.parent_version, Some(1));
        assert!(validate_prompt(&out.v2).is_empty(), "{:?}", validate_prompt(&out.v2));
        assert!(out.v2.examples.len() <= MAX_EXAMPLES);
        assert!(out.search.rounds.len() <= 2);
        assert!(out.search.best_metrics.accuracy >= out.search.start_metrics.accuracy);
    }

    #[tokio::test]
    async fn abort_cancels() {
        let (o, _) = setup(0.0);
        let p = pool(8);
        let err = initialize_filter(&o, "f", "spam", &DraftSeed::Description("spam".into()), &p, |_| None, 1)
            .await
            .unwrap_err();
        assert!(matches!(err, OptimizeError::Cancelled(_)));
    }

    #[tokio::test]
    async fn uncertain_comments_enter_the_plan() {
        let (o, _) = setup(0.0);
        let p = pool(60);
        let plan = o
            .prepare_initialization("f", "spam", &DraftSeed::Description("spam".into()), &p, 20, 3)
            .await
            .unwrap();
        let uncertain = plan.predictions.iter().filter(|x| x.is_uncertain()).count();
        assert!(uncertain >= 10, "only {uncertain} uncertain");
        assert_eq!(plan.plan.count(Tier::Uncertain), uncertain.min(20));
    }

    #[test]
    fn examples_are_balanced_and_correct() {
        use crate::classifier::RunVotes;
        let t = Utc.with_ymd_and_hms(2024, 2, 1, 0, 0, 0).unwrap();
        let mk = |i: usize, gold: Verdict, pred: Verdict, conf: f64| {
            let id = format!("e{i}");
            (
                LabeledComment {
                    comment: Comment::new(id.clone(), format!("text {i}"), t),
                    verdict: gold,
                },
                Prediction {
                    comment_id: id.clone(),
                    verdict: pred,
                    confidence: conf,
                    votes: RunVotes { comment_id: id, votes: vec![] },
                    prompt_hash: "h".into(),
                    explanation: None,
                },
            )
        };
        use Verdict::{Catch as C, NotCatch as N};
        let rows = vec![
            mk(0, C, C, 0.6),
            mk(1, C, C, 1.0),
            mk(2, C, N, 1.0),
            mk(3, C, C, 0.8),
            mk(4, N, N, 1.0),
            mk(5, N, C, 1.0),
        ];
        let (labels, preds): (Vec<_>, Vec<_>) = rows.into_iter().unzip();
        let ex = pick_examples(&labels, &preds, 0);
        let texts: Vec<_> = ex.iter().map(|e| e.comment_text.as_str()).collect();
        assert_eq!(texts, vec!["text 1", "text 3", "text 4"]);
    }
}
