//! Where moderation actions go once decided.

use async_trait::async_trait;
use parking_lot::Mutex;

use sieve_core::{Comment, CommentId, FilterId, ModerationAction};

/// Carries out an action on the hosting platform.
#[async_trait]
pub trait ActionSink: Send + Sync {
    fn name(&self) -> &str;

    /// `template` is the reply text for `ReplyWithTemplate`.
    async fn execute(&self, comment: &Comment, action: &ModerationAction, template: Option<&str>) -> Result<(), String>;
}

/// The default sink: records what it was asked to do and does nothing else.
#[derive(Default)]
pub struct LoggingSink {
    log: Mutex<Vec<(CommentId, ModerationAction)>>,
}

impl LoggingSink {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn executed(&self) -> Vec<(CommentId, ModerationAction)> {
        self.log.lock().clone()
    }
}

#[async_trait]
impl ActionSink for LoggingSink {
    fn name(&self) -> &str {
        "logging"
    }

    async fn execute(&self, comment: &Comment, action: &ModerationAction, template: Option<&str>) -> Result<(), String> {
        tracing::info!(comment = %comment.id, ?action, template, "moderation action");
        self.log.lock().push((comment.id.clone(), action.clone()));
        Ok(())
    }
}

/// Picks the action for a comment caught by several filters: the most
/// severe one, ties going to the smallest filter id. The second value is
/// true when the filters disagreed.
pub fn most_restrictive(candidates: &[(FilterId, ModerationAction)]) -> Option<((FilterId, ModerationAction), bool)> {
    let winner = candidates
        .iter()
        .max_by(|a, b| a.1.severity().cmp(&b.1.severity()).then_with(|| b.0.cmp(&a.0)))?;
    let conflict = candidates.iter().any(|(_, a)| a != &winner.1);
    Some((winner.clone(), conflict))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn severest_action_wins() {
        let cands = vec![
            ("b".to_string(), ModerationAction::HoldForReview),
            ("a".to_string(), ModerationAction::Delete),
            ("c".to_string(), ModerationAction::Publish),
        ];
        let ((f, a), conflict) = most_restrictive(&cands).unwrap();
        assert_eq!((f.as_str(), a), ("a", ModerationAction::Delete));
        assert!(conflict);

        let same = vec![
            ("z".to_string(), ModerationAction::Delete),
            ("y".to_string(), ModerationAction::Delete),
        ];
        let ((f, _), conflict) = most_restrictive(&same).unwrap();
        assert_eq!(f, "y");
        assert!(!conflict);
        assert!(most_restrictive(&[]).is_none());
    }
}
