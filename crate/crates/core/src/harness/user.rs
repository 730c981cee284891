//! A scripted user that labels from ground truth and steers iterations.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::classifier::Evaluation;
use crate::gateway::sim::SimulationRule;
use crate::model::{Comment, CommentId, FilterPrompt, LabeledComment, Mistake, Polarity, Verdict};
use crate::optimizer::{ClarifiedMistake, Guidance, OptimizeError, Optimizer};
use crate::rng::mix;
use crate::text::tokens;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(tag = "policy", rename_all = "snake_case")]
pub enum IterationPolicy {
    FirstMistake,
    #[default]
    LargestPattern,
    RandomMistake { seed: u64 },
}

pub struct SimulatedUser {
    ground_truth: BTreeMap<CommentId, Verdict>,
    policy: IterationPolicy,
    rule: SimulationRule,
}

impl SimulatedUser {
    pub fn new(ground_truth: BTreeMap<CommentId, Verdict>, policy: IterationPolicy, rule: SimulationRule) -> Self {
        Self {
            ground_truth,
            policy,
            rule,
        }
    }

    pub fn policy(&self) -> IterationPolicy {
        self.policy
    }

    /// The user's label; always the ground truth.
    pub fn label(&self, comment: &Comment) -> Option<Verdict> {
        self.ground_truth.get(&comment.id).copied()
    }

    /// What the user would write when asked why a mistake is wrong: names the
    /// keyword the hidden rule hinges on.
    pub fn clarify(&self, mistake: &Mistake) -> ClarifiedMistake {
        let polarity = if mistake.gold.is_catch() {
            Polarity::Positive
        } else {
            Polarity::Negative
        };
        let should = if mistake.gold.is_catch() {
            "should be caught"
        } else {
            "should not be caught"
        };
        let kw = tokens(&mistake.comment.text)
            .into_iter()
            .find(|t| self.rule.lexicon(polarity).contains(t));
        let rationale_text = match kw {
            Some(kw) => format!("comments mentioning {kw} {should}"),
            None => format!("this comment {should}"),
        };
        ClarifiedMistake {
            mistake: mistake.reference(),
            rationale_text,
        }
    }

    /// Guidance for the next round, chosen from mistakes on the user's audit
    /// labels. None when the audit shows no mistakes.
    pub async fn guidance(
        &self,
        optimizer: &Optimizer,
        prompt: &FilterPrompt,
        audit: &[LabeledComment],
        evaluation: &Evaluation,
        seed: u64,
    ) -> Result<Option<Guidance>, OptimizeError> {
        if evaluation.mistakes.is_empty() {
            return Ok(None);
        }
        Ok(Some(match self.policy {
            IterationPolicy::FirstMistake => {
                let first = audit
                    .iter()
                    .find_map(|l| evaluation.mistakes.iter().find(|m| m.comment.id == l.comment.id))
                    .expect("mistakes come from the audit set");
                Guidance::Clarified {
                    clarified: self.clarify(first),
                }
            }
            IterationPolicy::RandomMistake { seed: user_seed } => {
                let i = (mix(&[user_seed, seed]) % evaluation.mistakes.len() as u64) as usize;
                Guidance::Clarified {
                    clarified: self.clarify(&evaluation.mistakes[i]),
                }
            }
            IterationPolicy::LargestPattern => {
                let analysis = optimizer.analyze_failures(prompt, audit, seed).await?;
                match analysis.patterns.into_iter().next() {
                    Some(pattern) => Guidance::Pattern { pattern },
                    None => return Ok(None),
                }
            }
        }))
    }
}
