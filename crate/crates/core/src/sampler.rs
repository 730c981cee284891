//! Picks unlabeled comments worth showing to the user.
//!
//! Comments whose runs disagreed come first, most conflicted first. Remaining
//! slots are padded with unanimous Catch predictions, then unanimous NotCatch.

use std::collections::{BTreeMap, HashSet};

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::classifier::Prediction;
use crate::model::{CommentId, Verdict};
use crate::rng::seeded;

pub const DEFAULT_LABELING_K: usize = 20;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Tier {
    Uncertain,
    PositivePad,
    NegativePad,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SamplingPlan {
    pub requested_k: usize,
    pub selected: Vec<CommentId>,
    pub tiers: Vec<Tier>,
}

impl SamplingPlan {
    pub fn len(&self) -> usize {
        self.selected.len()
    }

    pub fn is_empty(&self) -> bool {
        self.selected.is_empty()
    }

    pub fn count(&self, tier: Tier) -> usize {
        self.tiers.iter().filter(|t| **t == tier).count()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&CommentId, Tier)> {
        self.selected.iter().zip(self.tiers.iter().copied())
    }
}

fn tier_of(p: &Prediction) -> Tier {
    if p.is_uncertain() {
        Tier::Uncertain
    } else if p.verdict == Verdict::Catch {
        Tier::PositivePad
    } else {
        Tier::NegativePad
    }
}

/// Selects up to `k` comments from `predictions` that are not yet labeled.
///
/// Within each group of equal (tier, confidence) the order is a seeded shuffle
/// of the ids sorted, so the result does not depend on input order.
pub fn select_for_labeling(predictions: &[Prediction], already_labeled: &HashSet<CommentId>, k: usize, seed: u64) -> SamplingPlan {
    assert!(k >= 1, "k must be at least 1");
    // Key: tier, then confidence in thousandths so 0.6 sorts before 0.8.
    let mut groups: BTreeMap<(Tier, u32), Vec<&CommentId>> = BTreeMap::new();
    let mut seen: HashSet<&CommentId> = HashSet::new();
    for p in predictions {
        if already_labeled.contains(&p.comment_id) || !seen.insert(&p.comment_id) {
            continue;
        }
        let tier = tier_of(p);
        let conf = if tier == Tier::Uncertain {
            (p.confidence * 1000.0).round() as u32
        } else {
            0
        };
        groups.entry((tier, conf)).or_default().push(&p.comment_id);
    }

    let mut selected = Vec::with_capacity(k);
    let mut tiers = Vec::with_capacity(k);
    for ((tier, conf), mut ids) in groups {
        ids.sort();
        ids.shuffle(&mut seeded(&[seed, tier as u64, conf as u64]));
        for id in ids {
            if selected.len() == k {
                break;
            }
            selected.push(id.clone());
            tiers.push(tier);
        }
    }
    SamplingPlan {
        requested_k: k,
        selected,
        tiers,
    }
}
