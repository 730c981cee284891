//! Template-generated comment corpora with ground truth from a hidden rule.

use std::collections::BTreeMap;

use chrono::{DateTime, Duration, TimeZone, Utc};
use rand::seq::{IndexedRandom, SliceRandom};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::gateway::sim::SimulationRule;
use crate::model::{Comment, CommentId, LabeledComment, Verdict};
use crate::rng::seeded;
use crate::text::tokens;

const CORPUS_TAG: u64 = 0x636f_7270;

const OPENERS: &[&str] = &[
    "honestly", "wow", "ok so", "just saying", "real talk", "hey everyone", "quick note", "lol", "not gonna lie",
    "fun fact", "heads up", "btw",
];
const TOPICS: &[&str] = &[
    "great video", "loved the editing", "the music at the end", "your dog is adorable", "that recipe looks tasty",
    "nice camera work", "the lighting here", "this tutorial helped", "the ending surprised me", "my kids enjoyed it",
    "watching from home", "the intro was long", "good explanation", "first time here", "the sound is quiet",
    "beautiful scenery",
];
const CLOSERS: &[&str] = &[
    "keep going", "see you next week", "cheers", "thanks", "subscribed", "more please", "again tomorrow", "agreed",
    "no doubt", "for real",
];
const POSITIVE_FRAMES: &[&str] = &[
    "check my page for {kw}",
    "{kw} link in my profile",
    "dm me about {kw} now",
    "best {kw} deal today",
    "huge {kw} for everyone",
    "click for free {kw}",
];
const HARD_NEGATIVE_FRAMES: &[&str] = &[
    "the {neg} talk about {kw} was useful",
    "{neg} folks warned about {kw} here",
    "saw a {neg} piece on {kw}",
    "{kw} came up at the {neg} meetup",
];

/// Shape of a synthetic corpus.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorpusSpec {
    pub n: usize,
    /// Share of comments whose ground truth is Catch.
    pub positive_fraction: f64,
    /// Share of the negatives that mention a positive keyword and an exempting
    /// negative keyword. The rest mention no keyword at all.
    pub hard_negative_fraction: f64,
    /// Ratio between consecutive positive-keyword weights (lexicon in sorted
    /// order). Small values make the first keyword dominant.
    pub keyword_skew: f64,
}

impl Default for CorpusSpec {
    fn default() -> Self {
        Self {
            n: 200,
            positive_fraction: 0.5,
            hard_negative_fraction: 0.6,
            keyword_skew: 0.2,
        }
    }
}

/// Comments with a total ground-truth labeling.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Corpus {
    pub comments: Vec<Comment>,
    pub truth: BTreeMap<CommentId, Verdict>,
}

impl Corpus {
    pub fn len(&self) -> usize {
        self.comments.len()
    }

    pub fn is_empty(&self) -> bool {
        self.comments.is_empty()
    }

    pub fn positives(&self) -> usize {
        self.truth.values().filter(|v| v.is_catch()).count()
    }

    pub fn get(&self, id: &str) -> Option<&Comment> {
        self.comments.iter().find(|c| c.id == id)
    }

    /// The given comments paired with their ground truth, in the given order.
    pub fn labeled(&self, ids: &[CommentId]) -> Vec<LabeledComment> {
        let by_id: BTreeMap<&str, &Comment> = self.comments.iter().map(|c| (c.id.as_str(), c)).collect();
        ids.iter()
            .map(|id| LabeledComment {
                comment: by_id[id.as_str()].clone(),
                verdict: self.truth[id],
            })
            .collect()
    }

    /// Builds a corpus whose ground truth is the rule's judgment.
    pub fn judged(comments: Vec<Comment>, rule: &SimulationRule) -> Self {
        let truth = comments.iter().map(|c| (c.id.clone(), rule.judge(&c.text))).collect();
        Self { comments, truth }
    }
}

fn keyword_weights(count: usize, skew: f64) -> Vec<f64> {
    (0..count).map(|i| skew.powi(i as i32)).collect()
}

fn weighted<'a, R: Rng>(rng: &mut R, items: &'a [String], weights: &[f64]) -> &'a str {
    let total: f64 = weights.iter().sum();
    let mut x = rng.random::<f64>() * total;
    for (item, w) in items.iter().zip(weights) {
        if x < *w {
            return item;
        }
        x -= w;
    }
    items.last().expect("non-empty lexicon")
}

fn filler<R: Rng>(rng: &mut R) -> (String, String) {
    let opener = OPENERS.choose(rng).expect("openers");
    let topic = TOPICS.choose(rng).expect("topics");
    let closer = CLOSERS.choose(rng).expect("closers");
    (format!("{opener}, {topic}"), closer.to_string())
}

/// Deterministic corpus of `spec.n` comments; ground truth comes from `rule`.
///
/// Exactly `round(n * positive_fraction)` comments are positive. Filler text
/// never contains lexicon keywords, so the rule's judgment matches the
/// intended class of every template.
pub fn make_synthetic_corpus(rule: &SimulationRule, spec: &CorpusSpec, seed: u64) -> Result<Corpus, String> {
    if spec.n < 10 {
        return Err(format!("corpus needs at least 10 comments, got {}", spec.n));
    }
    if !(0.0..=1.0).contains(&spec.positive_fraction) || !(0.0..=1.0).contains(&spec.hard_negative_fraction) {
        return Err("fractions must lie in [0, 1]".into());
    }
    if !(spec.keyword_skew > 0.0 && spec.keyword_skew <= 1.0) {
        return Err("keyword_skew must lie in (0, 1]".into());
    }
    for word in OPENERS.iter().chain(TOPICS).chain(CLOSERS).chain(POSITIVE_FRAMES).chain(HARD_NEGATIVE_FRAMES) {
        if let Some(t) = tokens(word).into_iter().find(|t| rule.in_lexicon(t)) {
            return Err(format!("lexicon keyword {t:?} collides with corpus filler"));
        }
    }

    let positive_kw: Vec<String> = rule.positive_lexicon.iter().cloned().collect();
    let negative_kw: Vec<String> = rule.negative_lexicon.iter().cloned().collect();
    let weights = keyword_weights(positive_kw.len(), spec.keyword_skew);
    let mut rng = seeded(&[seed, CORPUS_TAG]);

    let positives = (spec.n as f64 * spec.positive_fraction).round() as usize;
    let negatives = spec.n - positives;
    let hard = if negative_kw.is_empty() {
        0
    } else {
        (negatives as f64 * spec.hard_negative_fraction).round() as usize
    };

    let mut kinds: Vec<u8> = Vec::with_capacity(spec.n);
    kinds.extend(std::iter::repeat_n(0u8, positives));
    kinds.extend(std::iter::repeat_n(1u8, hard));
    kinds.extend(std::iter::repeat_n(2u8, negatives - hard));
    kinds.shuffle(&mut rng);

    let start: DateTime<Utc> = Utc.with_ymd_and_hms(2024, 3, 1, 0, 0, 0).single().expect("valid date");
    let mut comments = Vec::with_capacity(spec.n);
    for (i, kind) in kinds.into_iter().enumerate() {
        let (head, tail) = filler(&mut rng);
        let text = match kind {
            0 => {
                let kw = weighted(&mut rng, &positive_kw, &weights);
                let frame = POSITIVE_FRAMES.choose(&mut rng).expect("frames").replace("{kw}", kw);
                format!("{head}, {frame}, {tail}")
            }
            1 => {
                let kw = weighted(&mut rng, &positive_kw, &weights);
                let neg = negative_kw.choose(&mut rng).expect("negative lexicon");
                let frame = HARD_NEGATIVE_FRAMES
                    .choose(&mut rng)
                    .expect("frames")
                    .replace("{kw}", kw)
                    .replace("{neg}", neg);
                format!("{head}, {frame}, {tail}")
            }
            _ => format!("{head}, {tail}"),
        };
        let mut c = Comment::new(
            format!("c{i:04}"),
            text,
            start + Duration::hours(rng.random_range(0..24 * 30)),
        );
        c.author = Some(format!("user{}", rng.random_range(0..50)));
        c.like_count = Some(rng.random_range(0..200));
        comments.push(c);
    }
    Ok(Corpus::judged(comments, rule))
}
