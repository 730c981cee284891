//! Shared domain types for filters, comments, labels and prompt versions.

use std::fmt;

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};

/// Maximum number of few-shot examples a prompt may carry.
pub const MAX_EXAMPLES: usize = 4;

pub type FilterId = String;
pub type CommentId = String;

/// A single piece of user-generated text to be classified.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Comment {
    pub id: CommentId,
    pub text: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub author: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub thread_id: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub video_id: Option<String>,
    pub published_at: DateTime<Utc>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub like_count: Option<u64>,
}

impl Comment {
    pub fn new(id: impl Into<String>, text: impl Into<String>, published_at: DateTime<Utc>) -> Self {
        Self {
            id: id.into(),
            text: text.into(),
            author: None,
            thread_id: None,
            video_id: None,
            published_at,
            like_count: None,
        }
    }

    /// Returns a description of the first broken invariant, if any.
    pub fn check(&self) -> Result<(), String> {
        if self.id.is_empty() {
            return Err("comment id empty".into());
        }
        if self.text.trim().is_empty() {
            return Err(format!("comment {} has empty text", self.id));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Verdict {
    Catch,
    NotCatch,
}

impl Verdict {
    pub fn as_str(self) -> &'static str {
        match self {
            Verdict::Catch => "catch",
            Verdict::NotCatch => "not_catch",
        }
    }

    pub fn is_catch(self) -> bool {
        self == Verdict::Catch
    }

    pub fn flipped(self) -> Self {
        match self {
            Verdict::Catch => Verdict::NotCatch,
            Verdict::NotCatch => Verdict::Catch,
        }
    }
}

impl fmt::Display for Verdict {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for Verdict {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().replace(' ', "_").as_str() {
            "catch" => Ok(Verdict::Catch),
            "not_catch" | "notcatch" => Ok(Verdict::NotCatch),
            other => Err(format!("unknown verdict {other:?}")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LabelSource {
    Initialization,
    Audit,
    IterationReview,
}

impl LabelSource {
    pub fn as_str(self) -> &'static str {
        match self {
            LabelSource::Initialization => "initialization",
            LabelSource::Audit => "audit",
            LabelSource::IterationReview => "iteration_review",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Label {
    pub comment_id: CommentId,
    pub verdict: Verdict,
    pub source: LabelSource,
    pub labeled_at: DateTime<Utc>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Polarity {
    Positive,
    Negative,
}

impl Polarity {
    pub fn opposite(self) -> Self {
        match self {
            Polarity::Positive => Polarity::Negative,
            Polarity::Negative => Polarity::Positive,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Polarity::Positive => "positive",
            Polarity::Negative => "negative",
        }
    }
}

/// What happens to a caught comment.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(tag = "action", rename_all = "snake_case")]
pub enum ModerationAction {
    DoNothing,
    HoldForReview,
    Delete,
    Publish,
    ReplyWithTemplate { template_id: String },
}

impl ModerationAction {
    /// Higher is more restrictive; used when several filters catch one comment.
    pub fn severity(&self) -> u8 {
        match self {
            ModerationAction::DoNothing => 0,
            ModerationAction::Publish => 1,
            ModerationAction::ReplyWithTemplate { .. } => 2,
            ModerationAction::HoldForReview => 3,
            ModerationAction::Delete => 4,
        }
    }
}

/// Where a rubric came from: the initial prompt or a numbered iteration.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RubricOrigin {
    Initial,
    Iteration(u32),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Rubric {
    pub rubric_id: String,
    pub polarity: Polarity,
    pub text: String,
    pub origin: RubricOrigin,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FewShotExample {
    pub comment_text: String,
    pub verdict: Verdict,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rationale: Option<String>,
}

/// A versioned, structured filter prompt.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FilterPrompt {
    pub filter_id: FilterId,
    pub name: String,
    pub description: String,
    #[serde(default)]
    pub positive_rubrics: Vec<Rubric>,
    #[serde(default)]
    pub negative_rubrics: Vec<Rubric>,
    #[serde(default)]
    pub examples: Vec<FewShotExample>,
    pub version: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub parent_version: Option<u32>,
    pub content_hash: String,
}

impl FilterPrompt {
    /// A version-1 prompt holding only a description.
    pub fn draft(filter_id: impl Into<String>, name: impl Into<String>, description: impl Into<String>) -> Self {
        let mut prompt = Self {
            filter_id: filter_id.into(),
            name: name.into(),
            description: description.into(),
            positive_rubrics: Vec::new(),
            negative_rubrics: Vec::new(),
            examples: Vec::new(),
            version: 1,
            parent_version: None,
            content_hash: String::new(),
        };
        prompt.rehash();
        prompt
    }

    pub fn rubrics(&self, polarity: Polarity) -> &[Rubric] {
        match polarity {
            Polarity::Positive => &self.positive_rubrics,
            Polarity::Negative => &self.negative_rubrics,
        }
    }

    pub fn rubrics_mut(&mut self, polarity: Polarity) -> &mut Vec<Rubric> {
        match polarity {
            Polarity::Positive => &mut self.positive_rubrics,
            Polarity::Negative => &mut self.negative_rubrics,
        }
    }

    pub fn all_rubrics(&self) -> impl Iterator<Item = &Rubric> {
        self.positive_rubrics.iter().chain(self.negative_rubrics.iter())
    }

    pub fn rubric_count(&self) -> usize {
        self.positive_rubrics.len() + self.negative_rubrics.len()
    }

    /// Recomputes `content_hash` from the current content.
    pub fn rehash(&mut self) {
        self.content_hash = crate::hash::hash_prompt(self);
    }

    /// Copy of this prompt positioned as the next version in its lineage.
    pub fn next_version(&self) -> Self {
        let mut child = self.clone();
        child.parent_version = Some(self.version);
        child.version = self.version + 1;
        child
    }

    /// A rubric id not yet used in this prompt.
    pub fn fresh_rubric_id(&self, polarity: Polarity) -> String {
        let prefix = match polarity {
            Polarity::Positive => "p",
            Polarity::Negative => "n",
        };
        let mut n = self.rubrics(polarity).len() + 1;
        loop {
            let id = format!("{prefix}{n}");
            if !self.all_rubrics().any(|r| r.rubric_id == id) {
                return id;
            }
            n += 1;
        }
    }
}

/// The kind of change between two consecutive prompt versions.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(tag = "kind", content = "rubric_id", rename_all = "snake_case")]
pub enum EditDirection {
    AddPositive,
    AddNegative,
    EditPositive(String),
    EditNegative(String),
    DescriptionEdit,
    ExampleChange,
}

impl EditDirection {
    pub fn add(polarity: Polarity) -> Self {
        match polarity {
            Polarity::Positive => EditDirection::AddPositive,
            Polarity::Negative => EditDirection::AddNegative,
        }
    }

    pub fn edit(polarity: Polarity, rubric_id: impl Into<String>) -> Self {
        match polarity {
            Polarity::Positive => EditDirection::EditPositive(rubric_id.into()),
            Polarity::Negative => EditDirection::EditNegative(rubric_id.into()),
        }
    }

    /// True for the four rubric-level directions the optimizer may produce.
    pub fn is_rubric_direction(&self) -> bool {
        !matches!(self, EditDirection::DescriptionEdit | EditDirection::ExampleChange)
    }

    pub fn polarity(&self) -> Option<Polarity> {
        match self {
            EditDirection::AddPositive | EditDirection::EditPositive(_) => Some(Polarity::Positive),
            EditDirection::AddNegative | EditDirection::EditNegative(_) => Some(Polarity::Negative),
            _ => None,
        }
    }

    pub fn label(&self) -> String {
        match self {
            EditDirection::AddPositive => "add_positive".into(),
            EditDirection::AddNegative => "add_negative".into(),
            EditDirection::EditPositive(id) => format!("edit_positive {id}"),
            EditDirection::EditNegative(id) => format!("edit_negative {id}"),
            EditDirection::DescriptionEdit => "description_edit".into(),
            EditDirection::ExampleChange => "example_change".into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EditDiff {
    pub direction: EditDirection,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub before_text: Option<String>,
    pub after_text: String,
}

/// A comment paired with its gold verdict.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabeledComment {
    pub comment: Comment,
    pub verdict: Verdict,
}

/// A misclassified labeled comment.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Mistake {
    pub comment: Comment,
    pub predicted: Verdict,
    pub gold: Verdict,
}

impl Mistake {
    pub fn is_false_negative(&self) -> bool {
        self.gold == Verdict::Catch && self.predicted == Verdict::NotCatch
    }

    pub fn is_false_positive(&self) -> bool {
        self.gold == Verdict::NotCatch && self.predicted == Verdict::Catch
    }

    pub fn reference(&self) -> MistakeRef {
        MistakeRef {
            comment_id: self.comment.id.clone(),
            predicted: self.predicted,
            gold: self.gold,
        }
    }
}

/// Compact reference to a mistake, used inside failure patterns.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MistakeRef {
    pub comment_id: CommentId,
    pub predicted: Verdict,
    pub gold: Verdict,
}

/// Returns one description per broken prompt invariant.
pub fn validate_prompt(prompt: &FilterPrompt) -> Vec<String> {
    let mut violations = Vec::new();
    if prompt.description.trim().is_empty() {
        violations.push("description empty".to_string());
    }
    if prompt.examples.len() > MAX_EXAMPLES {
        violations.push(format!("examples exceed maximum of {MAX_EXAMPLES}"));
    }
    let mut seen = std::collections::HashSet::new();
    for (polarity, list) in [
        (Polarity::Positive, &prompt.positive_rubrics),
        (Polarity::Negative, &prompt.negative_rubrics),
    ] {
        for rubric in list {
            if rubric.text.trim().is_empty() {
                violations.push(format!("rubric {} text empty", rubric.rubric_id));
            }
            if rubric.polarity != polarity {
                violations.push(format!(
                    "rubric {} listed as {} but marked {}",
                    rubric.rubric_id,
                    polarity.as_str(),
                    rubric.polarity.as_str()
                ));
            }
            if !seen.insert(rubric.rubric_id.as_str()) {
                violations.push(format!("duplicate rubric id {}", rubric.rubric_id));
            }
        }
    }
    for (i, example) in prompt.examples.iter().enumerate() {
        if example.comment_text.trim().is_empty() {
            violations.push(format!("example {} text empty", i + 1));
        }
    }
    if let Some(parent) = prompt.parent_version {
        if prompt.version <= parent {
            violations.push(format!(
                "version {} not greater than parent version {parent}",
                prompt.version
            ));
        }
    }
    if prompt.content_hash != crate::hash::hash_prompt(prompt) {
        violations.push("content hash stale".to_string());
    }
    violations
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rubric(id: &str, polarity: Polarity, text: &str) -> Rubric {
        Rubric {
            rubric_id: id.into(),
            polarity,
            text: text.into(),
            origin: RubricOrigin::Initial,
        }
    }

    #[test]
    fn minimal_prompt_is_valid() {
        let p = FilterPrompt::draft("f", "spam", "Catch comments that advertise scams");
        assert!(validate_prompt(&p).is_empty());
    }

    #[test]
    fn too_many_examples() {
        let mut p = FilterPrompt::draft("f", "spam", "Catch scams");
        p.examples = (0..5)
            .map(|i| FewShotExample {
                comment_text: format!("example {i}"),
                verdict: Verdict::Catch,
                rationale: None,
            })
            .collect();
        p.rehash();
        assert_eq!(validate_prompt(&p), vec!["examples exceed maximum of 4".to_string()]);
    }

    #[test]
    fn empty_description() {
        let p = FilterPrompt::draft("f", "spam", "   ");
        assert_eq!(validate_prompt(&p), vec!["description empty".to_string()]);
    }

    #[test]
    fn rubric_violations_reported_individually() {
        let mut p = FilterPrompt::draft("f", "spam", "d");
        p.positive_rubrics.push(rubric("p1", Polarity::Positive, ""));
        p.negative_rubrics.push(rubric("p1", Polarity::Positive, "x"));
        p.rehash();
        let v = validate_prompt(&p);
        assert_eq!(v.len(), 3, "{v:?}");
    }

    #[test]
    fn version_must_exceed_parent() {
        let mut p = FilterPrompt::draft("f", "spam", "d");
        p.parent_version = Some(1);
        assert_eq!(validate_prompt(&p).len(), 1);
    }

    #[test]
    fn verdict_serializes_as_literal_strings() {
        assert_eq!(serde_json::to_string(&Verdict::Catch).unwrap(), "\"catch\"");
        assert_eq!(serde_json::to_string(&Verdict::NotCatch).unwrap(), "\"not_catch\"");
        assert_eq!("Not Catch".parse::<Verdict>().unwrap(), Verdict::NotCatch);
    }

    #[test]
    fn fresh_rubric_ids_do_not_collide() {
        let mut p = FilterPrompt::draft("f", "spam", "d");
        p.positive_rubrics.push(rubric("p2", Polarity::Positive, "x"));
        assert_eq!(p.fresh_rubric_id(Polarity::Positive), "p3");
        assert_eq!(p.fresh_rubric_id(Polarity::Negative), "n1");
    }
}
