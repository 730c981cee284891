//! Draft, label, initialize and iterate with the SQLite store as the
//! prediction cache.

use std::collections::HashSet;
use std::sync::Arc;

use sieve_core::diff::diff_prompts;
use sieve_core::gateway::sim::SimulationRule;
use sieve_core::harness::corpus::{make_synthetic_corpus, CorpusSpec};
use sieve_core::optimizer::{Guidance, OptimizationBudget, Optimizer, OptimizerConfig, RoundOutcome};
use sieve_core::render::DraftSeed;
use sieve_core::sampler::select_for_labeling;
use sieve_core::store::Store;
use sieve_core::{Classifier, FilterPrompt, Gateway, Label, LabelSource, RubricOrigin};

fn rule() -> SimulationRule {
    SimulationRule::new(["casino", "crypto", "giveaway"], ["charity"], 0.05, 7).unwrap()
}

#[tokio::test]
async fn a_filter_survives_a_reopen_with_its_cache() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("s.db");
    let corpus = make_synthetic_corpus(&rule(), &CorpusSpec::default(), 7).unwrap();

    let (v2_hash, calls) = {
        let store = Arc::new(Store::open(&path).unwrap());
        store.put_comments(&corpus.comments).unwrap();
        let classifier = Classifier::new(Arc::new(Gateway::simulated(rule())), store.clone());
        let optimizer = Optimizer::new(classifier.clone(), OptimizerConfig::default());

        let description = optimizer
            .draft_description(&DraftSeed::Description("promote scams or spam".into()))
            .await
            .unwrap();
        let v1 = FilterPrompt::draft("spam", "Spam", description);
        store.create_filter("spam", "Spam").unwrap();
        store.put_filter_version("spam", &v1).unwrap();

        let preds = classifier.classify(&v1, &corpus.comments, 0).await.unwrap();
        let plan = select_for_labeling(&preds, &HashSet::new(), 20, 0);
        let now = chrono::Utc::now();
        let labels: Vec<Label> = plan
            .selected
            .iter()
            .map(|id| Label {
                comment_id: id.clone(),
                verdict: corpus.truth[id],
                source: LabelSource::Initialization,
                labeled_at: now,
            })
            .collect();
        store.put_labels("spam", &labels).unwrap();

        let labeled = store.labeled_comments("spam").unwrap();
        let init = optimizer
            .complete_initialization(&v1, labeled.clone(), &OptimizationBudget::automatic(), 0)
            .await
            .unwrap();
        assert!(init.v2.all_rubrics().all(|r| r.origin == RubricOrigin::Initial));
        assert!(init.search.best_metrics.accuracy >= init.search.start_metrics.accuracy);
        assert_eq!(store.put_filter_version("spam", &init.v2).unwrap(), 2);

        if let RoundOutcome::Ranked(r) = optimizer
            .optimize_round(&init.v2, &labeled, &Guidance::Automatic, &OptimizationBudget::default(), 1)
            .await
            .unwrap()
        {
            if let Some(best) = r.best() {
                let v = store.put_filter_version("spam", &best.child_prompt).unwrap();
                let parent = store.version("spam", v - 1).unwrap();
                let child = store.version("spam", v).unwrap();
                assert_eq!(diff_prompts(&parent, &child).unwrap(), vec![best.diff.clone()]);
            }
        }
        let latest = store.latest_version("spam").unwrap();
        classifier.classify(&latest, &corpus.comments, 0).await.unwrap();
        (latest.content_hash, classifier.gateway().counts().completions())
    };
    assert!(calls > 0);

    let store = Arc::new(Store::open(&path).unwrap());
    let latest = store.latest_version("spam").unwrap();
    assert_eq!(latest.content_hash, v2_hash);
    assert_eq!(store.predictions_for(&v2_hash).unwrap().len(), corpus.len());
    let classifier = Classifier::new(Arc::new(Gateway::simulated(rule())), store.clone());
    classifier.classify(&latest, &corpus.comments, 0).await.unwrap();
    assert_eq!(classifier.gateway().counts().completions(), 0);
    assert_eq!(store.labels("spam").unwrap().len(), 20);
}
