//! Acceptance criteria 1-11, one line each. Simulation backend only.
//!
//! Run with `cargo test -p sieve-core --test acceptance`.

use std::collections::{BTreeMap, HashSet};
use std::future::Future;
use std::sync::Arc;
use std::time::{Duration, Instant};

use chrono::{TimeZone, Utc};
use parking_lot::Mutex;
use proptest::prelude::*;
use proptest::test_runner::{Config, RngAlgorithm, TestRng, TestRunner};

use sieve_core::baseline::{Baseline, BaselineConfig, FreestylePrompt};
use sieve_core::cache::{CacheError, MemoryCache, PredictionCache};
use sieve_core::classifier::{majority_vote, RunVotes};
use sieve_core::diff::diff_prompts;
use sieve_core::gateway::sim::SimulationRule;
use sieve_core::harness::corpus::{make_synthetic_corpus, CorpusSpec};
use sieve_core::harness::experiment::{run_experiment, Condition, ExperimentConfig, Stage};
use sieve_core::harness::split::{split_dataset, FULL_SIZES, MIN_UNCERTAIN};
use sieve_core::optimizer::{apply_edit, Guidance, OptimizationBudget, Optimizer, OptimizerConfig, RoundOutcome};
use sieve_core::sampler::{select_for_labeling, Tier};
use sieve_core::{
    Classifier, Comment, CommentId, EditDirection, FilterPrompt, Gateway, Metrics, Polarity, Prediction, Rubric,
    RubricOrigin, Verdict,
};

type Outcome = Result<String, String>;

fn check(cond: bool, msg: impl Into<String>) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg.into())
    }
}

fn classifier(rule: SimulationRule) -> Classifier {
    Classifier::new(Arc::new(Gateway::simulated(rule)), Arc::new(MemoryCache::new()))
}

fn rubric(id: &str, polarity: Polarity, text: &str) -> Rubric {
    Rubric {
        rubric_id: id.into(),
        polarity,
        text: text.into(),
        origin: RubricOrigin::Initial,
    }
}

// 1. Majority vote against a brute-force counter over all 32 vote vectors.
fn majority_oracle() -> Outcome {
    let mut confidences = std::collections::BTreeSet::new();
    for mask in 0u32..32 {
        let votes: Vec<Verdict> = (0..5)
            .map(|i| if mask >> i & 1 == 1 { Verdict::Catch } else { Verdict::NotCatch })
            .collect();
        let catches = mask.count_ones() as usize;
        let expected = if catches >= 3 { Verdict::Catch } else { Verdict::NotCatch };
        let agree = catches.max(5 - catches);
        let (v, c) = majority_vote(&votes).map_err(|e| e.to_string())?;
        check(v == expected, format!("{votes:?}: got {v:?}"))?;
        check(c == agree as f64 / 5.0, format!("{votes:?}: confidence {c}"))?;
        confidences.insert((c * 10.0).round() as u32);
    }
    check(
        confidences == [6, 8, 10].into_iter().collect(),
        format!("confidence set {confidences:?}"),
    )?;
    Ok("32/32 vectors, confidences {0.6, 0.8, 1.0}".into())
}

// 2. Twelve uncached comments: 3 batches x 5 runs.
async fn batching() -> Outcome {
    let c = classifier(SimulationRule::new(["giveaway"], ["charity"], 0.1, 1).map_err(|e| e.to_string())?);
    let t = Utc.with_ymd_and_hms(2024, 1, 1, 0, 0, 0).unwrap();
    let comments: Vec<Comment> = (0..12)
        .map(|i| Comment::new(format!("c{i}"), format!("free giveaway {i}"), t))
        .collect();
    let prompt = FilterPrompt::draft("f", "spam", "Catch giveaway spam");
    let before = c.gateway().counts();
    c.classify(&prompt, &comments, 0).await.map_err(|e| e.to_string())?;
    let used = c.gateway().counts().since(&before);
    check(used.completions() == 15, format!("{} completion calls", used.completions()))?;
    check(used.classify == 15, format!("{} classify calls", used.classify))?;
    Ok("15 completion calls".into())
}

// 3. Every candidate is exactly one rubric edit in one of the four directions.
async fn candidate_structure() -> Outcome {
    const WORDS: [&str; 6] = ["casino", "crypto", "giveaway", "lottery", "forex", "betting"];
    let mut candidates = 0usize;
    let mut by_direction: BTreeMap<&str, usize> = BTreeMap::new();
    for i in 0..100u64 {
        let k = 1 + (i % 3) as usize;
        let positive: Vec<&str> = (0..k).map(|j| WORDS[(i as usize + j) % WORDS.len()]).collect();
        let noise = [0.0, 0.05, 0.1][(i % 3) as usize];
        let rule = SimulationRule::new(positive.clone(), ["charity"], noise, i).map_err(|e| e.to_string())?;
        let spec = CorpusSpec {
            n: 40 + (i % 5) as usize * 10,
            ..CorpusSpec::default()
        };
        let corpus = make_synthetic_corpus(&rule, &spec, i)?;
        let mut prompt = FilterPrompt::draft("f", "spam", format!("Catch comments that mention {}", positive[0]));
        if i % 3 >= 1 {
            prompt.positive_rubrics.push(rubric("p1", Polarity::Positive, &format!("Comments about {}", positive[0])));
        }
        if i % 3 == 2 {
            prompt.negative_rubrics.push(rubric("n1", Polarity::Negative, "Comments that thank the creator"));
        }
        prompt.rehash();
        let ids: Vec<CommentId> = corpus.comments.iter().take(30).map(|c| c.id.clone()).collect();
        let labeled = corpus.labeled(&ids);
        let optimizer = Optimizer::new(classifier(rule), OptimizerConfig::default());
        let outcome = optimizer
            .optimize_round(&prompt, &labeled, &Guidance::Automatic, &OptimizationBudget::default(), i)
            .await
            .map_err(|e| format!("seed {i}: {e}"))?;
        let RoundOutcome::Ranked(ranked) = outcome else { continue };
        for c in &ranked.candidates {
            let diff = diff_prompts(&prompt, &c.child_prompt).map_err(|e| e.to_string())?;
            check(diff.len() == 1, format!("seed {i}: {} edits", diff.len()))?;
            check(diff[0] == c.diff, format!("seed {i}: reported diff differs from actual"))?;
            check(c.diff.direction.is_rubric_direction(), format!("seed {i}: {:?}", c.diff.direction))?;
            check(
                c.child_prompt.description == prompt.description && c.child_prompt.examples == prompt.examples,
                format!("seed {i}: non-rubric content changed"),
            )?;
            let name = match c.diff.direction {
                EditDirection::AddPositive => "add+",
                EditDirection::AddNegative => "add-",
                EditDirection::EditPositive(_) => "edit+",
                EditDirection::EditNegative(_) => "edit-",
                _ => unreachable!(),
            };
            *by_direction.entry(name).or_default() += 1;
            candidates += 1;
        }
    }
    check(candidates > 0, "no candidates produced")?;
    Ok(format!("{candidates} candidates over 100 rounds, {by_direction:?}"))
}

fn pred(id: String, verdict: Verdict, confidence: f64) -> Prediction {
    Prediction {
        comment_id: id.clone(),
        verdict,
        confidence,
        votes: RunVotes {
            comment_id: id,
            votes: vec![],
        },
        prompt_hash: "h".into(),
        explanation: None,
    }
}

// 4. Uncertain before unanimous; unanimous Catch before unanimous NotCatch.
fn sampler_ordering() -> Outcome {
    let config = Config {
        cases: 200,
        failure_persistence: None,
        ..Config::default()
    };
    let mut runner = TestRunner::new_with_rng(config, TestRng::deterministic_rng(RngAlgorithm::ChaCha));
    let strategy = (
        prop::collection::vec((0usize..3, any::<bool>(), any::<bool>()), 0..60),
        1usize..40,
        any::<u64>(),
    );
    runner
        .run(&strategy, |(specs, k, seed)| {
            let mut labeled = HashSet::new();
            let preds: Vec<Prediction> = specs
                .iter()
                .enumerate()
                .map(|(i, (c, catch, is_labeled))| {
                    let id = format!("c{i:03}");
                    if *is_labeled && i % 4 == 0 {
                        labeled.insert(id.clone());
                    }
                    let v = if *catch { Verdict::Catch } else { Verdict::NotCatch };
                    pred(id, v, [0.6, 0.8, 1.0][*c])
                })
                .collect();
            let plan = select_for_labeling(&preds, &labeled, k, seed);
            let by_id: BTreeMap<&str, &Prediction> = preds.iter().map(|p| (p.comment_id.as_str(), p)).collect();
            let rank = |p: &Prediction| match (p.is_uncertain(), p.verdict) {
                (true, _) => 0,
                (false, Verdict::Catch) => 1,
                (false, Verdict::NotCatch) => 2,
            };
            let ranks: Vec<u8> = plan.selected.iter().map(|id| rank(by_id[id.as_str()])).collect();
            prop_assert!(ranks.windows(2).all(|w| w[0] <= w[1]), "order {:?}", ranks);
            prop_assert!(plan.selected.iter().all(|id| !labeled.contains(id)));
            let eligible = preds.iter().filter(|p| !labeled.contains(&p.comment_id)).count();
            prop_assert_eq!(plan.len(), k.min(eligible));
            // Nothing of a better rank was left out for a worse one.
            if let Some(&worst) = ranks.last() {
                let skipped_better = preds
                    .iter()
                    .filter(|p| !labeled.contains(&p.comment_id) && !plan.selected.contains(&p.comment_id))
                    .any(|p| rank(p) < worst);
                prop_assert!(!skipped_better);
            }
            for (id, tier) in plan.iter() {
                let expected = match rank(by_id[id.as_str()]) {
                    0 => Tier::Uncertain,
                    1 => Tier::PositivePad,
                    _ => Tier::NegativePad,
                };
                prop_assert_eq!(tier, expected);
            }
            Ok(())
        })
        .map_err(|e| e.to_string())?;
    Ok("200 generated pools".into())
}

fn headline() -> ExperimentConfig {
    ExperimentConfig::default()
}

// 5. Direction of improvement on the headline corpus.
async fn convergence() -> Outcome {
    let cfg = headline();
    let report = run_experiment(&cfg).await.map_err(|e| e.to_string())?;
    let split = &report.corpus.as_ref().ok_or("no corpus summary")?.split;
    check(
        (split.train.len(), split.audit.len(), split.test.len()) == FULL_SIZES,
        format!("split sizes {:?}", (split.train.len(), split.audit.len(), split.test.len())),
    )?;
    let s = report.condition(Condition::Structured).ok_or("no structured condition")?;
    if let Some(e) = &s.error {
        return Err(e.clone());
    }
    let f1 = |stage| s.stage(stage).map(|m: &Metrics| m.f1).ok_or(format!("missing stage {stage:?}"));
    let (draft, init, iter) = (f1(Stage::Draft)?, f1(Stage::PostInit)?, f1(Stage::PostIterations)?);
    let detail = format!("test F1 draft {draft:.3} -> post-init {init:.3} -> post-iterations {iter:.3}");
    check(init - draft >= 0.10, format!("{detail}: initialization gain below 0.10"))?;
    check(iter - init >= 0.05, format!("{detail}: iteration gain below 0.05"))?;
    Ok(detail)
}

// 6. Equal per-round candidate evaluations across conditions.
async fn budget_parity() -> Outcome {
    let mut checked = Vec::new();
    for seed in [7u64, 11, 23] {
        let cfg = ExperimentConfig {
            seed,
            ..headline()
        };
        let report = run_experiment(&cfg).await.map_err(|e| e.to_string())?;
        let s = report.condition(Condition::Structured).ok_or("no structured condition")?;
        let p = report.condition(Condition::Protegi).ok_or("no baseline condition")?;
        let (a, b) = (s.evaluations_per_round(), p.evaluations_per_round());
        check(!a.is_empty(), "no rounds recorded")?;
        check(a == b, format!("seed {seed}: {a:?} vs {b:?}"))?;
        checked.push(format!("{a:?}"));
    }
    Ok(format!("seeds 7/11/23, per-round evaluations {}", checked.join(" ")))
}

// 7. The baseline's best train score never drops between rounds.
async fn baseline_monotonic() -> Outcome {
    let mut rounds = 0;
    for seed in 0..5u64 {
        let rule = SimulationRule::new(["casino", "crypto", "giveaway"], ["charity"], 0.0, seed).map_err(|e| e.to_string())?;
        let corpus = make_synthetic_corpus(
            &rule,
            &CorpusSpec {
                n: 60,
                ..CorpusSpec::default()
            },
            seed,
        )?;
        let ids: Vec<CommentId> = corpus.comments.iter().take(30).map(|c| c.id.clone()).collect();
        let labeled = corpus.labeled(&ids);
        let baseline = Baseline::new(classifier(rule), BaselineConfig::default());
        let budget = OptimizationBudget {
            rounds: 4,
            ..OptimizationBudget::default()
        };
        let r = baseline
            .optimize(&FreestylePrompt::new("Catch spam comments"), &labeled, &budget, None, seed)
            .await
            .map_err(|e| e.to_string())?;
        if let Some(e) = r.error {
            return Err(format!("seed {seed}: {e}"));
        }
        check(
            r.best_scores.windows(2).all(|w| w[1] >= w[0]),
            format!("seed {seed}: {:?}", r.best_scores),
        )?;
        rounds += r.best_scores.len();
    }
    Ok(format!("5 corpora, {rounds} rounds non-decreasing"))
}

// 8. Identical seeds give identical reports, wall times aside.
async fn replay() -> Outcome {
    let a = run_experiment(&headline()).await.map_err(|e| e.to_string())?;
    let b = run_experiment(&headline()).await.map_err(|e| e.to_string())?;
    let (x, y) = (a.without_timing().to_json(), b.without_timing().to_json());
    check(x == y, "reports differ")?;
    Ok(format!("{} bytes identical", x.len()))
}

/// Records which comments were written to the cache.
struct Recording {
    inner: MemoryCache,
    puts: Mutex<Vec<(String, CommentId)>>,
}

impl PredictionCache for Recording {
    fn cached_prediction(&self, prompt_hash: &str, comment_id: &str) -> Result<Option<Prediction>, CacheError> {
        self.inner.cached_prediction(prompt_hash, comment_id)
    }

    fn put_cached(&self, prediction: &Prediction) -> Result<(), CacheError> {
        self.puts
            .lock()
            .push((prediction.prompt_hash.clone(), prediction.comment_id.clone()));
        self.inner.put_cached(prediction)
    }

    fn cached_explanation(&self, prompt_hash: &str, comment_id: &str) -> Result<Option<String>, CacheError> {
        self.inner.cached_explanation(prompt_hash, comment_id)
    }

    fn put_explanation(&self, prompt_hash: &str, comment_id: &str, text: &str) -> Result<(), CacheError> {
        self.inner.put_explanation(prompt_hash, comment_id, text)
    }
}

// 9. Cached predictions are reused; an edit re-requests only missing entries.
async fn cache_soundness() -> Outcome {
    let rule = SimulationRule::new(["casino", "crypto"], ["charity"], 0.05, 3).map_err(|e| e.to_string())?;
    let corpus = make_synthetic_corpus(
        &rule,
        &CorpusSpec {
            n: 40,
            ..CorpusSpec::default()
        },
        3,
    )?;
    let cache = Arc::new(Recording {
        inner: MemoryCache::new(),
        puts: Mutex::new(Vec::new()),
    });
    let c = Classifier::new(Arc::new(Gateway::simulated(rule)), cache.clone());
    let mut prompt = FilterPrompt::draft("f", "spam", "Catch spam");
    prompt.positive_rubrics.push(rubric("p1", Polarity::Positive, "Comments about a casino"));
    prompt.rehash();
    let all = &corpus.comments;

    c.classify(&prompt, all, 0).await.map_err(|e| e.to_string())?;
    let before = c.gateway().counts();
    let again = c.classify(&prompt, all, 0).await.map_err(|e| e.to_string())?;
    let unchanged = c.gateway().counts().since(&before).completions();
    check(unchanged == 0, format!("unchanged filter issued {unchanged} calls"))?;
    check(again.len() == all.len(), "missing predictions")?;

    let edited = apply_edit(&prompt, &EditDirection::AddPositive, "Comments about crypto")
        .ok_or("edit failed")?
        .child_prompt;
    check(edited.content_hash != prompt.content_hash, "edit kept the hash")?;
    // Some comments already have entries under the new hash.
    let warm = &all[..13];
    c.classify(&edited, warm, 0).await.map_err(|e| e.to_string())?;
    cache.puts.lock().clear();
    let before = c.gateway().counts();
    c.classify(&edited, all, 0).await.map_err(|e| e.to_string())?;
    let calls = c.gateway().counts().since(&before).completions();
    let missing = all.len() - warm.len();
    let expected = missing.div_ceil(5) as u64 * 5;
    check(calls == expected, format!("{calls} calls for {missing} missing comments, expected {expected}"))?;
    let warm_ids: HashSet<&str> = warm.iter().map(|c| c.id.as_str()).collect();
    let puts = cache.puts.lock().clone();
    check(puts.len() == missing, format!("{} new entries, expected {missing}", puts.len()))?;
    check(
        puts.iter().all(|(h, id)| h == &edited.content_hash && !warm_ids.contains(id.as_str())),
        "a cached comment was re-requested",
    )?;
    Ok(format!("0 calls unchanged; {missing} of {} re-requested after edit", all.len()))
}

// 10. Split sizes, disjointness and the uncertain quota.
async fn split_protocol() -> Outcome {
    let mut with_quota = 0;
    for seed in 0..50u64 {
        let noise = [0.05, 0.1, 0.2][(seed % 3) as usize];
        let rule = SimulationRule::new(["casino", "crypto", "giveaway"], ["charity"], noise, seed).map_err(|e| e.to_string())?;
        let corpus = make_synthetic_corpus(&rule, &CorpusSpec::default(), seed)?;
        check(corpus.len() == 200, "corpus size")?;
        let c = classifier(rule);
        let probe = FilterPrompt::draft("f", "spam", "Catch spam about casino");
        let (split, preds) = split_dataset(&corpus, &c, &probe, 0, seed).await.map_err(|e| e.to_string())?;
        let sizes = (split.train.len(), split.audit.len(), split.test.len());
        check(sizes == FULL_SIZES, format!("seed {seed}: sizes {sizes:?}"))?;
        let mut seen = HashSet::new();
        for id in split.train.iter().chain(&split.audit).chain(&split.test) {
            check(seen.insert(id), format!("seed {seed}: {id} in two splits"))?;
        }
        let uncertain: HashSet<&str> = preds.iter().filter(|p| p.is_uncertain()).map(|p| p.comment_id.as_str()).collect();
        let in_train = split.train.iter().filter(|id| uncertain.contains(id.as_str())).count();
        check(in_train == split.uncertain_in_train, format!("seed {seed}: uncertain count mismatch"))?;
        if uncertain.len() >= MIN_UNCERTAIN {
            with_quota += 1;
            check(in_train >= MIN_UNCERTAIN, format!("seed {seed}: {in_train} uncertain in train"))?;
        }
    }
    Ok(format!("50 splits, {with_quota} with >= 10 uncertain available"))
}

// 11. Metric identities on random confusion matrices.
fn metric_identities() -> Outcome {
    let config = Config {
        cases: 1000,
        failure_persistence: None,
        ..Config::default()
    };
    let mut runner = TestRunner::new_with_rng(config, TestRng::deterministic_rng(RngAlgorithm::ChaCha));
    runner
        .run(&(0u64..500, 0u64..500, 0u64..500, 0u64..500), |(tp, fp, fn_, tn)| {
            let m = Metrics::from_counts(tp, fp, fn_, tn);
            let total = (tp + fp + fn_ + tn) as f64;
            let accuracy = if total == 0.0 { 0.0 } else { (tp + tn) as f64 / total };
            // Empty denominators count as perfect: nothing was wrongly caught or missed.
            let precision = if tp + fp == 0 { 1.0 } else { tp as f64 / (tp + fp) as f64 };
            let recall = if tp + fn_ == 0 { 1.0 } else { tp as f64 / (tp + fn_) as f64 };
            let f1 = if tp + fp + fn_ == 0 {
                1.0
            } else {
                2.0 * tp as f64 / (2 * tp + fp + fn_) as f64
            };
            let f1 = if precision + recall == 0.0 { 0.0 } else { f1 };
            for (got, want, name) in [
                (m.accuracy, accuracy, "accuracy"),
                (m.precision, precision, "precision"),
                (m.recall, recall, "recall"),
                (m.f1, f1, "f1"),
            ] {
                prop_assert!((got - want).abs() <= 1e-9, "{} {} vs {}", name, got, want);
            }
            prop_assert_eq!((m.tp, m.fp, m.fn_, m.tn), (tp, fp, fn_, tn));
            Ok(())
        })
        .map_err(|e| e.to_string())?;
    Ok("1000 matrices within 1e-9".into())
}

struct Runner {
    rt: tokio::runtime::Runtime,
    failed: usize,
}

impl Runner {
    fn report(&mut self, n: usize, limit: Duration, started: Instant, outcome: Outcome) {
        let took = started.elapsed();
        let outcome = outcome.and_then(|d| {
            if took > limit {
                Err(format!("{d}; took {took:.2?}, limit {limit:?}"))
            } else {
                Ok(d)
            }
        });
        match outcome {
            Ok(d) => println!("criterion {n:>2}: PASS ({took:.2?}) {d}"),
            Err(e) => {
                self.failed += 1;
                println!("criterion {n:>2}: FAIL ({took:.2?}) {e}");
            }
        }
    }

    fn sync(&mut self, n: usize, limit: Duration, f: impl FnOnce() -> Outcome) {
        let t = Instant::now();
        let o = f();
        self.report(n, limit, t, o);
    }

    fn run<F: Future<Output = Outcome>>(&mut self, n: usize, limit: Duration, f: F) {
        let t = Instant::now();
        let o = self.rt.block_on(f);
        self.report(n, limit, t, o);
    }
}

fn main() {
    let secs = Duration::from_secs;
    let mut r = Runner {
        rt: tokio::runtime::Builder::new_multi_thread().enable_all().build().unwrap(),
        failed: 0,
    };
    r.sync(1, secs(1), majority_oracle);
    r.run(2, secs(5), batching());
    r.run(3, secs(120), candidate_structure());
    r.sync(4, secs(10), sampler_ordering);
    r.run(5, secs(60), convergence());
    r.run(6, secs(120), budget_parity());
    r.run(7, secs(60), baseline_monotonic());
    r.run(8, secs(120), replay());
    r.run(9, secs(10), cache_soundness());
    r.run(10, secs(60), split_protocol());
    r.sync(11, secs(5), metric_identities);
    if r.failed > 0 {
        println!("{} criteria failed", r.failed);
        std::process::exit(1);
    }
    println!("all criteria passed");
}
