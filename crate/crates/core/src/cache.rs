//! Prediction and explanation caches keyed by prompt content.

use std::collections::HashMap;

use parking_lot::RwLock;
use thiserror::Error;

use crate::classifier::Prediction;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
#[error("cache storage error: {0}")]
pub struct CacheError(pub String);

/// Storage for predictions keyed by `(content_hash, comment_id)`.
///
/// Entries are immutable once written; repeated writes of the same key are
/// idempotent.
pub trait PredictionCache: Send + Sync {
    fn cached_prediction(&self, prompt_hash: &str, comment_id: &str) -> Result<Option<Prediction>, CacheError>;

    fn put_cached(&self, prediction: &Prediction) -> Result<(), CacheError>;

    fn cached_explanation(&self, prompt_hash: &str, comment_id: &str) -> Result<Option<String>, CacheError>;

    fn put_explanation(&self, prompt_hash: &str, comment_id: &str, text: &str) -> Result<(), CacheError>;
}

type Key = (String, String);

/// In-process cache.
#[derive(Default)]
pub struct MemoryCache {
    predictions: RwLock<HashMap<Key, Prediction>>,
    explanations: RwLock<HashMap<Key, String>>,
}

impl MemoryCache {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.predictions.read().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// All cached predictions, in no particular order.
    pub fn entries(&self) -> Vec<Prediction> {
        self.predictions.read().values().cloned().collect()
    }
}

impl PredictionCache for MemoryCache {
    fn cached_prediction(&self, prompt_hash: &str, comment_id: &str) -> Result<Option<Prediction>, CacheError> {
        Ok(self
            .predictions
            .read()
            .get(&(prompt_hash.to_string(), comment_id.to_string()))
            .cloned())
    }

    fn put_cached(&self, prediction: &Prediction) -> Result<(), CacheError> {
        self.predictions
            .write()
            .entry((prediction.prompt_hash.clone(), prediction.comment_id.clone()))
            .or_insert_with(|| prediction.clone());
        Ok(())
    }

    fn cached_explanation(&self, prompt_hash: &str, comment_id: &str) -> Result<Option<String>, CacheError> {
        Ok(self
            .explanations
            .read()
            .get(&(prompt_hash.to_string(), comment_id.to_string()))
            .cloned())
    }

    fn put_explanation(&self, prompt_hash: &str, comment_id: &str, text: &str) -> Result<(), CacheError> {
        self.explanations
            .write()
            .entry((prompt_hash.to_string(), comment_id.to_string()))
            .or_insert_with(|| text.to_string());
        Ok(())
    }
}

/// A cache that never stores anything.
pub struct NoCache;

impl PredictionCache for NoCache {
    fn cached_prediction(&self, _: &str, _: &str) -> Result<Option<Prediction>, CacheError> {
        Ok(None)
    }

    fn put_cached(&self, _: &Prediction) -> Result<(), CacheError> {
        Ok(())
    }

    fn cached_explanation(&self, _: &str, _: &str) -> Result<Option<String>, CacheError> {
        Ok(None)
    }

    fn put_explanation(&self, _: &str, _: &str, _: &str) -> Result<(), CacheError> {
        Ok(())
    }
}
