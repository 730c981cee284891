//! Deterministic rule-driven backend.
//!
//! The backend holds a hidden [`SimulationRule`]: a positive and a negative
//! keyword lexicon. Rubrics in a prompt are read as keyword predicates (the
//! rubric's tokens intersected with the lexicons), which gives the optimizer a
//! closed loop with a known optimum. All randomness is counter-based and keyed
//! by the rule seed, the request seed and the content being judged.

use std::collections::{BTreeMap, BTreeSet};

use async_trait::async_trait;
use serde::{Deserialize, Serialize};

use super::{Backend, CompletionRequest, EmbeddingVector, GatewayError};
use crate::model::{Polarity, Verdict};
use crate::render::{parse_request, Block, ParsedRequest, ReflectMode, TaskKind};
use crate::rng::{text_key, unit};
use crate::text::tokens;

/// Extra per-run flip probability when no positive rubric exists and the
/// vague description alone decides.
pub const VAGUE_FLIP_RATE: f64 = 0.25;

pub const DEFAULT_EMBEDDING_DIM: usize = 64;

/// Weight of lexicon tokens relative to ordinary tokens in simulated embeddings.
pub const LEXICON_TOKEN_WEIGHT: f64 = 4.0;

const NOISE_TAG: u64 = 0x006e_6f69_7365;
const VAGUE_TAG: u64 = 0x0076_6167_7565;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimulationRule {
    pub positive_lexicon: BTreeSet<String>,
    pub negative_lexicon: BTreeSet<String>,
    pub noise_rate: f64,
    pub seed: u64,
}

impl SimulationRule {
    pub fn new<P, N>(positive: P, negative: N, noise_rate: f64, seed: u64) -> Result<Self, String>
    where
        P: IntoIterator,
        P::Item: AsRef<str>,
        N: IntoIterator,
        N::Item: AsRef<str>,
    {
        let rule = Self {
            positive_lexicon: positive.into_iter().map(|s| s.as_ref().to_string()).collect(),
            negative_lexicon: negative.into_iter().map(|s| s.as_ref().to_string()).collect(),
            noise_rate,
            seed,
        };
        rule.validate()?;
        Ok(rule)
    }

    pub fn validate(&self) -> Result<(), String> {
        if !(0.0..0.5).contains(&self.noise_rate) {
            return Err(format!("noise_rate {} outside [0, 0.5)", self.noise_rate));
        }
        if self.positive_lexicon.is_empty() {
            return Err("positive lexicon empty".into());
        }
        for kw in self.positive_lexicon.iter().chain(&self.negative_lexicon) {
            if kw.is_empty() || kw != &kw.to_lowercase() || tokens(kw).len() != 1 {
                return Err(format!("lexicon entry {kw:?} must be a single lowercase token"));
            }
        }
        if let Some(kw) = self
            .positive_lexicon
            .iter()
            .chain(&self.negative_lexicon)
            .find(|k| TEMPLATE_WORDS.contains(&k.as_str()))
        {
            return Err(format!("lexicon entry {kw:?} collides with response wording"));
        }
        if let Some(kw) = self.positive_lexicon.intersection(&self.negative_lexicon).next() {
            return Err(format!("keyword {kw:?} in both lexicons"));
        }
        Ok(())
    }

    pub fn in_lexicon(&self, token: &str) -> bool {
        self.positive_lexicon.contains(token) || self.negative_lexicon.contains(token)
    }

    pub fn lexicon(&self, polarity: Polarity) -> &BTreeSet<String> {
        match polarity {
            Polarity::Positive => &self.positive_lexicon,
            Polarity::Negative => &self.negative_lexicon,
        }
    }

    /// Ground truth: any positive keyword and no negative keyword.
    pub fn judge(&self, text: &str) -> Verdict {
        let toks: BTreeSet<String> = tokens(text).into_iter().collect();
        let pos = toks.iter().any(|t| self.positive_lexicon.contains(t));
        let neg = toks.iter().any(|t| self.negative_lexicon.contains(t));
        if pos && !neg {
            Verdict::Catch
        } else {
            Verdict::NotCatch
        }
    }
}

pub struct SimBackend {
    rule: SimulationRule,
    dim: usize,
}

impl SimBackend {
    pub fn new(rule: SimulationRule) -> Self {
        Self::with_dimension(rule, DEFAULT_EMBEDDING_DIM)
    }

    pub fn with_dimension(rule: SimulationRule, dim: usize) -> Self {
        assert!(dim > 0, "embedding dimension must be positive");
        Self { rule, dim }
    }

    pub fn rule(&self) -> &SimulationRule {
        &self.rule
    }

    /// Signed feature hashing of the token multiset, L2-normalized.
    pub fn embed_text(&self, text: &str) -> EmbeddingVector {
        let mut values = vec![0.0; self.dim];
        for tok in tokens(text) {
            let h = text_key(&tok);
            let bucket = (h % self.dim as u64) as usize;
            let sign = if (h >> 40) & 1 == 1 { -1.0 } else { 1.0 };
            let weight = if self.rule.in_lexicon(&tok) { LEXICON_TOKEN_WEIGHT } else { 1.0 };
            values[bucket] += sign * weight;
        }
        let norm = values.iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm > 0.0 {
            for v in &mut values {
                *v /= norm;
            }
        }
        EmbeddingVector::new(values)
    }
}

#[async_trait]
impl Backend for SimBackend {
    async fn complete(&self, request: &CompletionRequest) -> Result<String, GatewayError> {
        sim_respond(request, &self.rule)
    }

    async fn embed(&self, texts: &[String]) -> Result<Vec<EmbeddingVector>, GatewayError> {
        Ok(texts.iter().map(|t| self.embed_text(t)).collect())
    }

    fn name(&self) -> &str {
        "simulation"
    }
}

struct RubricView {
    text: String,
    keywords: BTreeSet<String>,
}

/// The filter as the simulation reads it out of a rendered request.
struct PromptView {
    description: String,
    positive: Vec<RubricView>,
    negative: Vec<RubricView>,
}

impl PromptView {
    fn read(parsed: &ParsedRequest, rule: &SimulationRule) -> Self {
        let view = |name: &str| {
            parsed
                .blocks_named(name)
                .map(|b| RubricView {
                    text: b.body.clone(),
                    keywords: tokens(&b.body).into_iter().filter(|t| rule.in_lexicon(t)).collect(),
                })
                .collect::<Vec<_>>()
        };
        Self {
            description: parsed.first("DESCRIPTION").map(|b| b.body.clone()).unwrap_or_default(),
            positive: view("POSITIVE"),
            negative: view("NEGATIVE"),
        }
    }

    fn covered(&self) -> BTreeSet<String> {
        self.positive
            .iter()
            .chain(&self.negative)
            .flat_map(|r| r.keywords.iter().cloned())
            .collect()
    }

    fn matching<'a>(rubrics: &'a [RubricView], toks: &BTreeSet<String>) -> Option<&'a RubricView> {
        rubrics.iter().find(|r| r.keywords.iter().any(|k| toks.contains(k)))
    }
}

fn protocol(msg: impl Into<String>) -> GatewayError {
    GatewayError::Protocol(msg.into())
}

fn verdict_arg(block: &Block, key: &str) -> Option<Verdict> {
    block.arg(key).and_then(|v| v.parse().ok())
}

fn variant_of(block: Option<&Block>) -> usize {
    block
        .and_then(|b| b.arg("variant"))
        .and_then(|v| v.parse().ok())
        .unwrap_or(0)
}

fn token_set(text: &str) -> BTreeSet<String> {
    tokens(text).into_iter().collect()
}

/// Keywords ranked by how many texts mention them, then alphabetically.
fn ranked_keywords<'a>(
    texts: impl IntoIterator<Item = &'a str>,
    allowed: &BTreeSet<String>,
    exclude: &BTreeSet<String>,
) -> Vec<String> {
    let mut counts: BTreeMap<String, usize> = BTreeMap::new();
    for text in texts {
        for tok in token_set(text) {
            if allowed.contains(&tok) && !exclude.contains(&tok) {
                *counts.entry(tok).or_default() += 1;
            }
        }
    }
    let mut ranked: Vec<_> = counts.into_iter().collect();
    ranked.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
    ranked.into_iter().map(|(k, _)| k).collect()
}

/// Lexicon side a set of mistakes points to: missed catches need positive coverage.
fn polarity_for(items: &[&Block]) -> Polarity {
    let fns = items
        .iter()
        .filter(|b| verdict_arg(b, "gold") == Some(Verdict::Catch))
        .count();
    if fns * 2 >= items.len() {
        Polarity::Positive
    } else {
        Polarity::Negative
    }
}

/// Answers a rendered request from the hidden rule.
pub fn sim_respond(request: &CompletionRequest, rule: &SimulationRule) -> Result<String, GatewayError> {
    let parsed = parse_request(&request.rendered_text).map_err(|e| protocol(e.to_string()))?;
    match parsed.kind {
        TaskKind::Classify => Ok(classify(&parsed, rule, request.seed)),
        TaskKind::Reflect => reflect(&parsed, rule),
        TaskKind::Propose => propose(&parsed, rule),
        TaskKind::Summarize => Ok(summarize(&parsed, rule)),
        TaskKind::Draft => draft(&parsed),
    }
}

/// Verdict of one run for one comment.
fn classify_one(view: &PromptView, rule: &SimulationRule, text: &str, request_seed: u64) -> Verdict {
    let toks = token_set(text);
    let exempt = PromptView::matching(&view.negative, &toks).is_some();
    let key = text_key(text);
    let (base, vague) = if view.positive.is_empty() {
        // Without rubrics the filter leans on its description, which can still name exemptions.
        let described = token_set(&view.description);
        let exempt = exempt || toks.iter().any(|t| rule.negative_lexicon.contains(t) && described.contains(t));
        let hit = toks.iter().any(|t| rule.positive_lexicon.contains(t));
        (hit && !exempt, true)
    } else {
        let hit = PromptView::matching(&view.positive, &toks).is_some();
        (hit && !exempt, false)
    };
    let mut catch = base;
    if unit(&[rule.seed, request_seed, key, NOISE_TAG]) < rule.noise_rate {
        catch = !catch;
    }
    if vague && unit(&[rule.seed, request_seed, key, VAGUE_TAG]) < VAGUE_FLIP_RATE {
        catch = !catch;
    }
    if catch {
        Verdict::Catch
    } else {
        Verdict::NotCatch
    }
}

fn classify(parsed: &ParsedRequest, rule: &SimulationRule, seed: u64) -> String {
    let view = PromptView::read(parsed, rule);
    parsed
        .blocks_named("COMMENT")
        .map(|b| {
            let index = b.args.first().map(String::as_str).unwrap_or("0");
            format!("{index}: {}", classify_one(&view, rule, &b.body, seed))
        })
        .collect::<Vec<_>>()
        .join("\n")
}

/// The keyword a mistake hinges on: uncovered, preferring the lexicon side of the gold verdict.
fn mistake_keyword(rule: &SimulationRule, covered: &BTreeSet<String>, text: &str, gold: Option<Verdict>) -> Option<String> {
    let preferred = match gold {
        Some(Verdict::NotCatch) => Polarity::Negative,
        _ => Polarity::Positive,
    };
    let in_order = tokens(text);
    let pick = |polarity: Polarity| {
        in_order
            .iter()
            .find(|t| rule.lexicon(polarity).contains(*t) && !covered.contains(*t))
            .cloned()
    };
    pick(preferred).or_else(|| pick(preferred.opposite()))
}

fn reflect(parsed: &ParsedRequest, rule: &SimulationRule) -> Result<String, GatewayError> {
    let mode_block = parsed.first("MODE").ok_or_else(|| protocol("reflect request without MODE"))?;
    let mode = mode_block
        .args
        .first()
        .and_then(|m| ReflectMode::parse(m))
        .ok_or_else(|| protocol("unknown reflect mode"))?;
    let variant = variant_of(Some(mode_block));
    let view = PromptView::read(parsed, rule);
    let covered = view.covered();
    let items: Vec<&Block> = parsed.blocks_named("COMMENT").collect();
    let first = *items.first().ok_or_else(|| protocol("reflect request without comments"))?;
    let gold = verdict_arg(first, "gold");

    Ok(match mode {
        ReflectMode::Mistake => match mistake_keyword(rule, &covered, &first.body, gold) {
            Some(kw) => format!("the filter lacks a rubric covering {kw}"),
            None => "the filter was inconsistent on a comment its rubrics already address".to_string(),
        },
        ReflectMode::Rationale => {
            let should = if gold == Some(Verdict::NotCatch) {
                "should not be caught"
            } else {
                "should be caught"
            };
            match mistake_keyword(rule, &covered, &first.body, gold) {
                Some(kw) if variant & 1 == 0 => format!("comments mentioning {kw} {should}"),
                Some(kw) => format!("this comment mentions {kw}, so it {should}"),
                None => format!("this comment {should}"),
            }
        }
        ReflectMode::Explain => {
            let toks = token_set(&first.body);
            let verdict = verdict_arg(first, "predicted");
            if let Some(r) = PromptView::matching(&view.negative, &toks) {
                format!("Not caught because it matches the exemption \"{}\".", r.text)
            } else if let Some(r) = PromptView::matching(&view.positive, &toks) {
                format!("Caught because it matches the rubric \"{}\".", r.text)
            } else if verdict == Some(Verdict::Catch) {
                "Caught because it fits the filter's overall description.".to_string()
            } else {
                "No rubric matched this comment.".to_string()
            }
        }
        ReflectMode::Gradient => {
            let polarity = polarity_for(&items);
            let texts = items.iter().map(|b| b.body.as_str());
            let desc_kw: BTreeSet<String> = token_set(&view.description)
                .into_iter()
                .chain(covered.iter().cloned())
                .collect();
            let ranked = ranked_keywords(texts, rule.lexicon(polarity), &desc_kw);
            match ranked.first() {
                Some(kw) if polarity == Polarity::Positive => {
                    format!("The prompt never says that comments mentioning {kw} should be caught, so they were missed.")
                }
                Some(kw) => {
                    format!("The prompt never exempts comments mentioning {kw}, so they were caught by mistake.")
                }
                None => "The prompt is too vague to separate these comments.".to_string(),
            }
        }
    })
}

fn propose(parsed: &ParsedRequest, rule: &SimulationRule) -> Result<String, GatewayError> {
    let dir_block = parsed
        .first("DIRECTION")
        .ok_or_else(|| protocol("propose request without DIRECTION"))?;
    let label = dir_block.args.first().map(String::as_str).unwrap_or("");
    let variant = variant_of(Some(dir_block));
    let view = PromptView::read(parsed, rule);
    let items: Vec<&Block> = parsed.blocks_named("COMMENT").collect();

    let (polarity, rewrite) = match label {
        "add_positive" | "edit_positive" => (Polarity::Positive, false),
        "add_negative" | "edit_negative" => (Polarity::Negative, false),
        "rewrite" => (polarity_for(&items), true),
        other => return Err(protocol(format!("unknown direction {other:?}"))),
    };

    let mut covered = view.covered();
    if rewrite {
        covered.extend(token_set(&view.description));
    }
    let guidance: Vec<&str> = parsed.blocks_named("GUIDANCE").map(|b| b.body.as_str()).collect();
    let lexicon = rule.lexicon(polarity);
    let mut ranked = ranked_keywords(
        items.iter().map(|b| b.body.as_str()).chain(guidance.iter().copied()),
        lexicon,
        &covered,
    );
    if ranked.is_empty() {
        ranked = lexicon.iter().filter(|k| !covered.contains(*k)).cloned().collect();
    }
    if ranked.is_empty() {
        if rewrite {
            // A rewrite always answers; with nothing left to name it only rephrases.
            let note = NEUTRAL_NOTES[variant % NEUTRAL_NOTES.len()];
            return Ok(format!("PROMPT:\n{}\n{note}", view.description));
        }
        return Ok("NONE".to_string());
    }
    // Variants walk the keywords first, then the phrasings.
    let kw = &ranked[variant % ranked.len()];
    let phrasing = (variant / ranked.len()) % PHRASINGS;

    if rewrite {
        return Ok(format!("PROMPT:\n{}\n{}.", view.description, phrase(polarity, phrasing, kw)));
    }
    let text = match (label, parsed.first("TARGET")) {
        ("edit_positive" | "edit_negative", Some(target)) => {
            let joiner = [" or ", ", or ", " as well as ", ", also "][phrasing];
            format!("{}{joiner}{kw}", target.body.trim_end_matches('.'))
        }
        ("edit_positive" | "edit_negative", None) => return Err(protocol("edit direction without TARGET")),
        _ => phrase(polarity, phrasing, kw),
    };
    Ok(format!("RUBRIC: {text}"))
}

const PHRASINGS: usize = 4;

const NEUTRAL_NOTES: [&str; 4] = [
    "Judge each comment by its overall intent.",
    "When unsure, consider the main purpose of the comment.",
    "Look at what the comment is trying to achieve.",
    "Weigh the whole comment, not single words.",
];

/// Rubric wordings; none of the filler words may be lexicon keywords.
fn phrase(polarity: Polarity, phrasing: usize, kw: &str) -> String {
    match (polarity, phrasing) {
        (Polarity::Positive, 0) => format!("Catch comments that mention {kw}"),
        (Polarity::Positive, 1) => format!("Comments mentioning {kw} should be caught"),
        (Polarity::Positive, 2) => format!("Treat any mention of {kw} as unwanted"),
        (Polarity::Positive, _) => format!("Flag comments that bring up {kw}"),
        (Polarity::Negative, 0) => format!("Do not catch comments that mention {kw}"),
        (Polarity::Negative, 1) => format!("Comments mentioning {kw} should not be caught"),
        (Polarity::Negative, 2) => format!("Leave comments about {kw} alone"),
        (Polarity::Negative, _) => format!("Never flag comments that bring up {kw}"),
    }
}

/// Filler words used by the simulated wordings; synthetic lexicons avoid them.
pub const TEMPLATE_WORDS: &[&str] = &[
    "catch", "comments", "that", "mention", "mentioning", "should", "be", "caught", "treat", "any", "of", "as",
    "unwanted", "flag", "bring", "up", "do", "not", "leave", "about", "alone", "never", "or", "well", "also",
    "the", "filter", "lacks", "a", "rubric", "covering", "are", "misclassified", "this", "comment", "mentions",
    "so", "it", "prompt", "says", "they", "were", "missed", "exempts", "by", "mistake",
];

fn summarize(parsed: &ParsedRequest, rule: &SimulationRule) -> String {
    let all: BTreeSet<String> = rule
        .positive_lexicon
        .iter()
        .chain(&rule.negative_lexicon)
        .cloned()
        .collect();
    let ranked = ranked_keywords(
        parsed.blocks_named("REFLECTION").map(|b| b.body.as_str()),
        &all,
        &BTreeSet::new(),
    );
    match ranked.first() {
        Some(kw) => format!("comments mentioning {kw} are misclassified"),
        None => "these comments are misclassified for reasons the filter does not capture".to_string(),
    }
}

fn draft(parsed: &ParsedRequest) -> Result<String, GatewayError> {
    let seeds: Vec<&Block> = parsed.blocks_named("SEED").collect();
    let first = seeds.first().ok_or_else(|| protocol("draft request without SEED"))?;
    let body = if first.args.first().map(String::as_str) == Some("description") {
        first.body.trim().to_string()
    } else {
        let examples: Vec<&str> = seeds.iter().map(|b| b.body.trim()).collect();
        format!("resemble: {}", examples.join("; "))
    };
    Ok(format!("Catch comments that {body}"))
}
