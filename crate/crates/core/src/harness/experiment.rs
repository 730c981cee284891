//! Head-to-head experiment: rubric-structured optimization with a simulated
//! user versus freestyle textual-gradient search, on one split.

use std::path::PathBuf;
use std::sync::Arc;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::baseline::{Baseline, BaselineConfig, FreestylePrompt, TrailEntry};
use crate::cache::MemoryCache;
use crate::classifier::{Classifier, Metrics};
use crate::gateway::sim::SimulationRule;
use crate::gateway::{CallCounts, Gateway};
use crate::model::{CommentId, EditDiff, FilterPrompt, LabeledComment};
use crate::optimizer::{Guidance, OptimizationBudget, OptimizeError, Optimizer, OptimizerConfig, RoundOutcome};
use crate::render::DraftSeed;
use crate::rng::mix;

use super::corpus::{make_synthetic_corpus, Corpus, CorpusSpec};
use super::split::{split_dataset, DatasetSplit};
use super::user::{IterationPolicy, SimulatedUser};

pub const REPORT_SCHEMA: &str = "sieve-experiment-report/v1";

const INIT_TAG: u64 = 0x696e_6974;
const ITER_TAG: u64 = 0x6974_6572;
const FILTER_ID: &str = "experiment";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Condition {
    /// Rubric-structured optimization steered by the simulated user.
    #[serde(rename = "promptimizer")]
    Structured,
    /// Freestyle textual-gradient beam search.
    #[serde(rename = "protegi")]
    Protegi,
}

impl Condition {
    pub fn as_str(self) -> &'static str {
        match self {
            Condition::Structured => "promptimizer",
            Condition::Protegi => "protegi",
        }
    }
}

impl std::str::FromStr for Condition {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim() {
            "promptimizer" => Ok(Condition::Structured),
            "protegi" => Ok(Condition::Protegi),
            other => Err(format!("unknown condition {other:?}")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum CorpusSource {
    Synthetic(CorpusSpec),
    /// A JSONL comment file; ground truth is the hidden rule's judgment.
    File { path: PathBuf },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub corpus: CorpusSource,
    pub rule: SimulationRule,
    pub conditions: Vec<Condition>,
    pub iterations: usize,
    pub init_rounds: usize,
    pub budget: OptimizationBudget,
    pub policy: IterationPolicy,
    pub draft_seed: String,
    pub seed: u64,
    pub eval_seed: u64,
    pub minibatch_size: usize,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            corpus: CorpusSource::Synthetic(CorpusSpec::default()),
            rule: SimulationRule::new(["casino", "crypto", "giveaway"], ["charity"], 0.05, 7).expect("valid rule"),
            conditions: vec![Condition::Structured, Condition::Protegi],
            iterations: 3,
            init_rounds: 2,
            budget: OptimizationBudget::default(),
            policy: IterationPolicy::LargestPattern,
            draft_seed: "promote scams or spam".into(),
            seed: 7,
            eval_seed: 0,
            minibatch_size: 4,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    Draft,
    PostInit,
    PostIterations,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Phase {
    Init,
    Iteration,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageReport {
    pub stage: Stage,
    pub test: Metrics,
    pub prompt_hash: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RoundBudget {
    pub phase: Phase,
    pub round: usize,
    pub candidate_generations: u64,
    pub candidate_evaluations: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationRecord {
    pub iteration: usize,
    /// "pattern: <summary>", "clarified: <rationale>", or "none".
    pub guidance: String,
    pub incumbent_score: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub best_candidate_score: Option<f64>,
    pub accepted: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub diff: Option<EditDiff>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum FinalPrompt {
    Structured { prompt: FilterPrompt },
    Freestyle { prompt: FreestylePrompt },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConditionReport {
    pub condition: Condition,
    pub stages: Vec<StageReport>,
    pub rounds: Vec<RoundBudget>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub iterations: Vec<IterationRecord>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub trail: Vec<TrailEntry>,
    /// Set when per-round evaluation counts were matched to another condition.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub budget_matched_to: Option<Condition>,
    pub calls: CallCounts,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub final_prompt: Option<FinalPrompt>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    pub wall_time_ms: u64,
}

impl ConditionReport {
    pub fn stage(&self, stage: Stage) -> Option<&Metrics> {
        self.stages.iter().find(|s| s.stage == stage).map(|s| &s.test)
    }

    /// Candidate evaluations per round, init rounds first.
    pub fn evaluations_per_round(&self) -> Vec<u64> {
        self.rounds.iter().map(|r| r.candidate_evaluations).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorpusSummary {
    pub size: usize,
    pub positives: usize,
    pub split: DatasetSplit,
    pub draft_description: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub schema: String,
    pub config: ExperimentConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub corpus: Option<CorpusSummary>,
    pub setup_calls: CallCounts,
    pub conditions: Vec<ConditionReport>,
    pub partial: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    pub wall_time_ms: u64,
}

impl ExperimentReport {
    pub fn condition(&self, condition: Condition) -> Option<&ConditionReport> {
        self.conditions.iter().find(|c| c.condition == condition)
    }

    /// The report with every wall-time field zeroed, for replay comparison.
    pub fn without_timing(&self) -> Self {
        let mut r = self.clone();
        r.wall_time_ms = 0;
        for c in &mut r.conditions {
            c.wall_time_ms = 0;
        }
        r
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("reports serialize")
    }

    pub fn from_json(text: &str) -> Result<Self, String> {
        let r: Self = serde_json::from_str(text).map_err(|e| e.to_string())?;
        if r.schema != REPORT_SCHEMA {
            return Err(format!("unsupported report schema {:?}", r.schema));
        }
        Ok(r)
    }
}

#[derive(Debug, thiserror::Error)]
pub enum ExperimentError {
    #[error("invalid experiment config: {0}")]
    Config(String),
    #[error("corpus: {0}")]
    Corpus(String),
}

/// Loads or generates the corpus named by the config.
pub fn load_corpus(config: &ExperimentConfig) -> Result<Corpus, ExperimentError> {
    match &config.corpus {
        CorpusSource::Synthetic(spec) => make_synthetic_corpus(&config.rule, spec, config.seed).map_err(ExperimentError::Corpus),
        CorpusSource::File { path } => {
            let file = std::fs::File::open(path).map_err(|e| ExperimentError::Corpus(format!("{}: {e}", path.display())))?;
            let parsed = crate::jsonl::read_comments(std::io::BufReader::new(file))
                .map_err(|e| ExperimentError::Corpus(e.to_string()))?;
            let mut seen = std::collections::HashSet::new();
            let comments: Vec<_> = parsed.comments.into_iter().filter(|c| seen.insert(c.id.clone())).collect();
            Ok(Corpus::judged(comments, &config.rule))
        }
    }
}

fn check_config(config: &ExperimentConfig) -> Result<(), ExperimentError> {
    config.rule.validate().map_err(ExperimentError::Config)?;
    config.budget.check().map_err(|e| ExperimentError::Config(e.to_string()))?;
    if config.conditions.is_empty() {
        return Err(ExperimentError::Config("no conditions selected".into()));
    }
    if config.minibatch_size == 0 {
        return Err(ExperimentError::Config("minibatch_size must be at least 1".into()));
    }
    if config.draft_seed.trim().is_empty() {
        return Err(ExperimentError::Config("draft seed is empty".into()));
    }
    Ok(())
}

/// Shared inputs each condition starts from.
struct Setup {
    corpus: Corpus,
    split: DatasetSplit,
    v1: FilterPrompt,
}

impl Setup {
    fn labels(&self, ids: &[CommentId]) -> Vec<LabeledComment> {
        self.corpus.labeled(ids)
    }
}

fn engine(config: &ExperimentConfig) -> (Arc<Gateway>, Classifier) {
    let gateway = Arc::new(Gateway::simulated(config.rule.clone()));
    let classifier = Classifier::new(gateway.clone(), Arc::new(MemoryCache::new()));
    (gateway, classifier)
}

/// Runs every configured condition. Stage failures are recorded and mark the
/// report partial rather than aborting it.
pub async fn run_experiment(config: &ExperimentConfig) -> Result<ExperimentReport, ExperimentError> {
    check_config(config)?;
    let started = Instant::now();
    let corpus = load_corpus(config)?;
    if corpus.len() < 10 {
        return Err(ExperimentError::Corpus(format!("corpus of {} comments is too small", corpus.len())));
    }

    let mut report = ExperimentReport {
        schema: REPORT_SCHEMA.into(),
        config: config.clone(),
        corpus: None,
        setup_calls: CallCounts::default(),
        conditions: Vec::new(),
        partial: false,
        error: None,
        wall_time_ms: 0,
    };

    let (setup_gateway, setup_classifier) = engine(config);
    let setup_optimizer = Optimizer::new(
        setup_classifier,
        OptimizerConfig {
            eval_seed: config.eval_seed,
            ..OptimizerConfig::default()
        },
    );
    let setup = async {
        let description = setup_optimizer
            .draft_description(&DraftSeed::Description(config.draft_seed.clone()))
            .await?;
        let v1 = FilterPrompt::draft(FILTER_ID, FILTER_ID, description);
        let (split, _) = split_dataset(&corpus, setup_optimizer.classifier(), &v1, config.eval_seed, config.seed)
            .await
            .map_err(|e| OptimizeError::Invalid(e.to_string()))?;
        Ok::<_, OptimizeError>((v1, split))
    }
    .await;
    report.setup_calls = setup_gateway.counts();
    let (v1, split) = match setup {
        Ok(x) => x,
        Err(e) => {
            report.partial = true;
            report.error = Some(format!("setup: {e}"));
            report.wall_time_ms = started.elapsed().as_millis() as u64;
            return Ok(report);
        }
    };
    report.corpus = Some(CorpusSummary {
        size: corpus.len(),
        positives: corpus.positives(),
        split: split.clone(),
        draft_description: v1.description.clone(),
    });
    let setup = Setup { corpus, split, v1 };

    // The structured condition runs first so the baseline can match its
    // per-round evaluation counts.
    let mut order = config.conditions.clone();
    order.sort();
    order.dedup();
    let mut structured_rounds: Option<Vec<RoundBudget>> = None;
    for condition in order {
        let c = match condition {
            Condition::Structured => {
                let c = run_structured(config, &setup).await;
                if c.error.is_none() {
                    structured_rounds = Some(c.rounds.clone());
                }
                c
            }
            Condition::Protegi => run_protegi(config, &setup, structured_rounds.as_deref()).await,
        };
        report.partial |= c.error.is_some();
        report.conditions.push(c);
    }
    report
        .conditions
        .sort_by_key(|c| config.conditions.iter().position(|x| *x == c.condition));
    report.wall_time_ms = started.elapsed().as_millis() as u64;
    Ok(report)
}

fn empty_report(condition: Condition) -> ConditionReport {
    ConditionReport {
        condition,
        stages: Vec::new(),
        rounds: Vec::new(),
        iterations: Vec::new(),
        trail: Vec::new(),
        budget_matched_to: None,
        calls: CallCounts::default(),
        final_prompt: None,
        error: None,
        wall_time_ms: 0,
    }
}

async fn test_stage(classifier: &Classifier, prompt: &FilterPrompt, test: &[LabeledComment], stage: Stage, eval_seed: u64) -> Result<StageReport, OptimizeError> {
    let ev = classifier.evaluate(prompt, test, eval_seed).await?;
    Ok(StageReport {
        stage,
        test: ev.metrics,
        prompt_hash: prompt.content_hash.clone(),
    })
}

async fn run_structured(config: &ExperimentConfig, setup: &Setup) -> ConditionReport {
    let started = Instant::now();
    let (gateway, classifier) = engine(config);
    let optimizer = Optimizer::new(
        classifier,
        OptimizerConfig {
            eval_seed: config.eval_seed,
            ..OptimizerConfig::default()
        },
    );
    let mut report = empty_report(Condition::Structured);
    if let Err(e) = structured_stages(config, setup, &optimizer, &mut report).await {
        report.error = Some(e.to_string());
    }
    report.calls = gateway.counts();
    report.wall_time_ms = started.elapsed().as_millis() as u64;
    report
}

async fn structured_stages(
    config: &ExperimentConfig,
    setup: &Setup,
    optimizer: &Optimizer,
    report: &mut ConditionReport,
) -> Result<(), OptimizeError> {
    let train = setup.labels(&setup.split.train);
    let audit = setup.labels(&setup.split.audit);
    let test = setup.labels(&setup.split.test);
    let classifier = optimizer.classifier();

    report
        .stages
        .push(test_stage(classifier, &setup.v1, &test, Stage::Draft, config.eval_seed).await?);

    let init_budget = OptimizationBudget {
        rounds: config.init_rounds,
        ..config.budget
    };
    let init_seed = mix(&[config.seed, INIT_TAG]);
    let outcome = if config.init_rounds == 0 {
        None
    } else {
        Some(optimizer.complete_initialization(&setup.v1, train.clone(), &init_budget, init_seed).await?)
    };
    let mut prompt = outcome.as_ref().map_or_else(|| setup.v1.clone(), |o| o.v2.clone());
    if let Some(o) = &outcome {
        for r in &o.search.rounds {
            report.rounds.push(RoundBudget {
                phase: Phase::Init,
                round: r.round,
                candidate_generations: r.candidate_generations,
                candidate_evaluations: r.candidates_scored as u64,
            });
        }
    }
    // Rounds skipped after an early stop spent nothing.
    for round in report.rounds.len()..config.init_rounds {
        report.rounds.push(RoundBudget {
            phase: Phase::Init,
            round,
            candidate_generations: 0,
            candidate_evaluations: 0,
        });
    }
    report
        .stages
        .push(test_stage(classifier, &prompt, &test, Stage::PostInit, config.eval_seed).await?);

    let user = SimulatedUser::new(setup.corpus.truth.clone(), config.policy, config.rule.clone());
    let mut labeled = train.clone();
    labeled.extend(audit.iter().cloned());
    let round_budget = OptimizationBudget {
        rounds: 1,
        ..config.budget
    };
    for iteration in 0..config.iterations {
        let seed = mix(&[config.seed, iteration as u64, ITER_TAG]);
        let audit_eval = optimizer.evaluate(&prompt, &audit).await?;
        let incumbent = optimizer.evaluate(&prompt, &labeled).await?.metrics;
        let before = optimizer.stats();
        let mut record = IterationRecord {
            iteration,
            guidance: "none".into(),
            incumbent_score: incumbent.accuracy,
            best_candidate_score: None,
            accepted: false,
            diff: None,
        };
        if let Some(guidance) = user.guidance(optimizer, &prompt, &audit, &audit_eval, seed).await? {
            record.guidance = match &guidance {
                Guidance::Automatic => "automatic".into(),
                Guidance::Pattern { pattern } => format!("pattern: {}", pattern.summary),
                Guidance::Clarified { clarified } => format!("clarified: {}", clarified.rationale_text),
            };
            if let RoundOutcome::Ranked(ranked) = optimizer
                .optimize_round(&prompt, &labeled, &guidance, &round_budget, seed)
                .await?
            {
                record.best_candidate_score = ranked.best().map(|c| c.train_score);
                if ranked.improves() {
                    let best = ranked.best().expect("improving round has a candidate");
                    record.accepted = true;
                    record.diff = Some(best.diff.clone());
                    prompt = best.child_prompt.clone();
                }
            }
        }
        let after = optimizer.stats();
        report.rounds.push(RoundBudget {
            phase: Phase::Iteration,
            round: iteration,
            candidate_generations: after.candidate_generations - before.candidate_generations,
            candidate_evaluations: after.candidate_evaluations - before.candidate_evaluations,
        });
        report.iterations.push(record);
    }
    report
        .stages
        .push(test_stage(classifier, &prompt, &test, Stage::PostIterations, config.eval_seed).await?);
    report.final_prompt = Some(FinalPrompt::Structured { prompt });
    Ok(())
}

async fn run_protegi(config: &ExperimentConfig, setup: &Setup, matched: Option<&[RoundBudget]>) -> ConditionReport {
    let started = Instant::now();
    let (gateway, classifier) = engine(config);
    let baseline = Baseline::new(
        classifier,
        BaselineConfig {
            minibatch_size: config.minibatch_size,
            eval_seed: config.eval_seed,
        },
    );
    let mut report = empty_report(Condition::Protegi);
    if matched.is_some() {
        report.budget_matched_to = Some(Condition::Structured);
    }
    if let Err(e) = protegi_stages(config, setup, &baseline, matched, &mut report).await {
        report.error = Some(e.to_string());
    }
    report.calls = gateway.counts();
    report.wall_time_ms = started.elapsed().as_millis() as u64;
    report
}

fn schedule(matched: Option<&[RoundBudget]>, phase: Phase) -> Option<Vec<usize>> {
    matched.map(|rounds| {
        rounds
            .iter()
            .filter(|r| r.phase == phase)
            .map(|r| r.candidate_evaluations as usize)
            .collect()
    })
}

async fn protegi_stages(
    config: &ExperimentConfig,
    setup: &Setup,
    baseline: &Baseline,
    matched: Option<&[RoundBudget]>,
    report: &mut ConditionReport,
) -> Result<(), OptimizeError> {
    let train = setup.labels(&setup.split.train);
    let audit = setup.labels(&setup.split.audit);
    let test = setup.labels(&setup.split.test);
    let classifier = baseline.classifier();

    let initial = FreestylePrompt::new(setup.v1.description.clone());
    report
        .stages
        .push(test_stage(classifier, &initial.as_filter(), &test, Stage::Draft, config.eval_seed).await?);

    let mut phase_run = |phase: Phase, result: &crate::baseline::BaselineResult| {
        for r in &result.rounds {
            report.rounds.push(RoundBudget {
                phase,
                round: r.round - 1,
                candidate_generations: r.candidate_generations,
                candidate_evaluations: r.candidate_evaluations,
            });
        }
        report.trail.extend(result.trail.iter().cloned());
        result.error.clone()
    };

    let init_budget = OptimizationBudget {
        rounds: config.init_rounds,
        ..config.budget
    };
    let init_schedule = schedule(matched, Phase::Init);
    let init = baseline
        .optimize(&initial, &train, &init_budget, init_schedule.as_deref(), mix(&[config.seed, INIT_TAG]))
        .await?;
    if let Some(e) = phase_run(Phase::Init, &init) {
        return Err(OptimizeError::Invalid(format!("initialization search: {e}")));
    }
    let mut best = init.best;
    report
        .stages
        .push(test_stage(classifier, &best.as_filter(), &test, Stage::PostInit, config.eval_seed).await?);

    let mut labeled = train;
    labeled.extend(audit);
    let iter_budget = OptimizationBudget {
        rounds: config.iterations,
        ..config.budget
    };
    let iter_schedule = schedule(matched, Phase::Iteration);
    let iter = baseline
        .optimize(&best, &labeled, &iter_budget, iter_schedule.as_deref(), mix(&[config.seed, ITER_TAG]))
        .await?;
    if let Some(e) = phase_run(Phase::Iteration, &iter) {
        return Err(OptimizeError::Invalid(format!("iteration search: {e}")));
    }
    best = iter.best;
    report
        .stages
        .push(test_stage(classifier, &best.as_filter(), &test, Stage::PostIterations, config.eval_seed).await?);
    report.final_prompt = Some(FinalPrompt::Freestyle { prompt: best });
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> ExperimentConfig {
        ExperimentConfig {
            corpus: CorpusSource::Synthetic(CorpusSpec {
                n: 60,
                ..CorpusSpec::default()
            }),
            ..ExperimentConfig::default()
        }
    }

    #[test]
    fn condition_names() {
        assert_eq!("promptimizer".parse::<Condition>().unwrap(), Condition::Structured);
        assert_eq!("protegi".parse::<Condition>().unwrap(), Condition::Protegi);
        assert!("other".parse::<Condition>().is_err());
        assert_eq!(serde_json::to_string(&Condition::Structured).unwrap(), "\"promptimizer\"");
    }

    #[tokio::test]
    async fn report_round_trips_and_replays() {
        let a = run_experiment(&small()).await.unwrap();
        assert!(!a.partial, "{:?}", a.conditions.iter().map(|c| &c.error).collect::<Vec<_>>());
        let text = a.to_json();
        let parsed = ExperimentReport::from_json(&text).unwrap();
        assert_eq!(parsed, a);
        assert_eq!(parsed.to_json(), text);
        let b = run_experiment(&small()).await.unwrap();
        assert_eq!(a.without_timing().to_json(), b.without_timing().to_json());
    }

    #[tokio::test]
    async fn stages_rounds_and_matching() {
        let r = run_experiment(&small()).await.unwrap();
        let split = &r.corpus.as_ref().unwrap().split;
        assert_eq!((split.train.len(), split.audit.len(), split.test.len()), (6, 24, 30));
        let s = r.condition(Condition::Structured).unwrap();
        let p = r.condition(Condition::Protegi).unwrap();
        for c in [s, p] {
            assert_eq!(c.stages.len(), 3);
            assert_eq!(c.rounds.len(), 5);
            assert!(c.rounds.iter().all(|x| x.candidate_evaluations <= 4));
        }
        assert_eq!(p.budget_matched_to, Some(Condition::Structured));
        // Both start from the same draft.
        assert_eq!(s.stages[0], p.stages[0]);
        assert_eq!(s.iterations.len(), 3);
    }

    #[tokio::test]
    async fn single_condition_and_bad_config() {
        let cfg = ExperimentConfig {
            conditions: vec![Condition::Protegi],
            iterations: 1,
            ..small()
        };
        let r = run_experiment(&cfg).await.unwrap();
        assert_eq!(r.conditions.len(), 1);
        assert_eq!(r.conditions[0].budget_matched_to, None);

        let bad = ExperimentConfig {
            conditions: vec![],
            ..small()
        };
        assert!(matches!(run_experiment(&bad).await, Err(ExperimentError::Config(_))));
    }

    #[tokio::test]
    async fn file_corpus_is_judged_by_the_rule() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.jsonl");
        let corpus = make_synthetic_corpus(&ExperimentConfig::default().rule, &CorpusSpec { n: 30, ..CorpusSpec::default() }, 2).unwrap();
        let body: Vec<String> = corpus.comments.iter().map(crate::jsonl::to_line).collect();
        std::fs::write(&path, body.join("\n") + "\nnot json\n").unwrap();
        let cfg = ExperimentConfig {
            corpus: CorpusSource::File { path },
            ..ExperimentConfig::default()
        };
        let loaded = load_corpus(&cfg).unwrap();
        assert_eq!(loaded, corpus);
    }
}
