//! Structural diffs between consecutive prompt versions.

use thiserror::Error;

use crate::model::{EditDiff, EditDirection, FilterPrompt, Polarity, Rubric};

#[derive(Debug, Error, PartialEq, Eq)]
pub enum DiffError {
    #[error("child version {child} (parent {child_parent:?}) does not descend from version {parent}")]
    Lineage {
        parent: u32,
        child: u32,
        child_parent: Option<u32>,
    },
}

/// Minimal edit set turning `parent` into `child`.
///
/// Rubrics are aligned by `rubric_id`: ids only present in the child are
/// additions, ids present in both with different text are edits. A rubric
/// removed by a manual edit is reported as an edit whose `after_text` is empty.
pub fn diff_prompts(parent: &FilterPrompt, child: &FilterPrompt) -> Result<Vec<EditDiff>, DiffError> {
    if parent.content_hash == child.content_hash && parent.version == child.version {
        return Ok(Vec::new());
    }
    if child.parent_version != Some(parent.version) {
        return Err(DiffError::Lineage {
            parent: parent.version,
            child: child.version,
            child_parent: child.parent_version,
        });
    }

    let mut diffs = Vec::new();
    if parent.description != child.description {
        diffs.push(EditDiff {
            direction: EditDirection::DescriptionEdit,
            before_text: Some(parent.description.clone()),
            after_text: child.description.clone(),
        });
    }
    for polarity in [Polarity::Positive, Polarity::Negative] {
        diff_rubrics(polarity, parent.rubrics(polarity), child.rubrics(polarity), &mut diffs);
    }
    if parent.examples != child.examples {
        diffs.push(EditDiff {
            direction: EditDirection::ExampleChange,
            before_text: Some(render_examples(parent)),
            after_text: render_examples(child),
        });
    }
    Ok(diffs)
}

fn diff_rubrics(polarity: Polarity, before: &[Rubric], after: &[Rubric], out: &mut Vec<EditDiff>) {
    for old in before {
        match after.iter().find(|r| r.rubric_id == old.rubric_id) {
            Some(new) if new.text != old.text => out.push(EditDiff {
                direction: EditDirection::edit(polarity, &old.rubric_id),
                before_text: Some(old.text.clone()),
                after_text: new.text.clone(),
            }),
            Some(_) => {}
            None => out.push(EditDiff {
                direction: EditDirection::edit(polarity, &old.rubric_id),
                before_text: Some(old.text.clone()),
                after_text: String::new(),
            }),
        }
    }
    for new in after {
        if !before.iter().any(|r| r.rubric_id == new.rubric_id) {
            out.push(EditDiff {
                direction: EditDirection::add(polarity),
                before_text: None,
                after_text: new.text.clone(),
            });
        }
    }
}

fn render_examples(prompt: &FilterPrompt) -> String {
    prompt
        .examples
        .iter()
        .map(|e| format!("[{}] {}", e.verdict, e.comment_text))
        .collect::<Vec<_>>()
        .join("\n")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::RubricOrigin;

    fn rubric(id: &str, polarity: Polarity, text: &str) -> Rubric {
        Rubric {
            rubric_id: id.into(),
            polarity,
            text: text.into(),
            origin: RubricOrigin::Initial,
        }
    }

    fn parent() -> FilterPrompt {
        let mut p = FilterPrompt::draft("f", "spam", "Catch spam");
        p.positive_rubrics.push(rubric("p1", Polarity::Positive, "mentions giveaway"));
        p.rehash();
        p
    }

    /// Independent oracle: compare id sets and per-id texts, ignoring order.
    fn oracle(parent: &[Rubric], child: &[Rubric]) -> (Vec<String>, Vec<String>) {
        use std::collections::BTreeMap;
        let before: BTreeMap<_, _> = parent.iter().map(|r| (r.rubric_id.clone(), r.text.clone())).collect();
        let after: BTreeMap<_, _> = child.iter().map(|r| (r.rubric_id.clone(), r.text.clone())).collect();
        let added = after.keys().filter(|k| !before.contains_key(*k)).cloned().collect();
        let changed = before
            .iter()
            .filter(|(k, v)| after.get(*k).is_none_or(|t| t != *v))
            .map(|(k, _)| k.clone())
            .collect();
        (added, changed)
    }

    #[test]
    fn add_positive() {
        let p = parent();
        let mut c = p.next_version();
        c.positive_rubrics.push(rubric("p2", Polarity::Positive, "mentions crypto"));
        c.rehash();
        let d = diff_prompts(&p, &c).unwrap();
        assert_eq!(
            d,
            vec![EditDiff {
                direction: EditDirection::AddPositive,
                before_text: None,
                after_text: "mentions crypto".into()
            }]
        );
    }

    #[test]
    fn identical_prompt_has_empty_diff() {
        let p = parent();
        assert!(diff_prompts(&p, &p).unwrap().is_empty());
    }

    #[test]
    fn edit_positive_matches_oracle() {
        let p = parent();
        let mut c = p.next_version();
        c.positive_rubrics[0].text = "mentions giveaway or crypto".into();
        c.rehash();
        let d = diff_prompts(&p, &c).unwrap();
        let (added, changed) = oracle(&p.positive_rubrics, &c.positive_rubrics);
        assert!(added.is_empty());
        assert_eq!(changed, vec!["p1".to_string()]);
        assert_eq!(d.len(), 1);
        assert_eq!(d[0].direction, EditDirection::EditPositive("p1".into()));
        assert_eq!(d[0].before_text.as_deref(), Some("mentions giveaway"));
        assert_eq!(d[0].after_text, "mentions giveaway or crypto");
    }

    #[test]
    fn mismatched_lineage_is_rejected() {
        let p = parent();
        let mut c = p.next_version();
        c.parent_version = Some(7);
        c.description = "other".into();
        c.rehash();
        assert!(matches!(diff_prompts(&p, &c), Err(DiffError::Lineage { .. })));
    }

    #[test]
    fn manual_edits_use_description_and_example_variants() {
        let p = parent();
        let mut c = p.next_version();
        c.description = "Catch all spam".into();
        c.examples.push(crate::model::FewShotExample {
            comment_text: "free coins".into(),
            verdict: crate::model::Verdict::Catch,
            rationale: None,
        });
        c.rehash();
        let d = diff_prompts(&p, &c).unwrap();
        let kinds: Vec<_> = d.iter().map(|x| x.direction.clone()).collect();
        assert_eq!(kinds, vec![EditDirection::DescriptionEdit, EditDirection::ExampleChange]);
    }

    #[test]
    fn removed_rubric_is_an_edit_to_empty() {
        let p = parent();
        let mut c = p.next_version();
        c.positive_rubrics.clear();
        c.rehash();
        let d = diff_prompts(&p, &c).unwrap();
        assert_eq!(d.len(), 1);
        assert_eq!(d[0].after_text, "");
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn diff_agrees_with_id_oracle(
                base in proptest::collection::vec("[a-z]{1,6}", 0..5),
                edits in proptest::collection::vec(proptest::option::of("[a-z]{1,6}"), 0..5),
                extra in proptest::collection::vec("[a-z]{1,6}", 0..3),
            ) {
                let mut p = FilterPrompt::draft("f", "n", "d");
                for (i, t) in base.iter().enumerate() {
                    p.positive_rubrics.push(rubric(&format!("p{}", i + 1), Polarity::Positive, t));
                }
                p.rehash();
                let mut c = p.next_version();
                for (r, e) in c.positive_rubrics.iter_mut().zip(&edits) {
                    if let Some(t) = e { r.text = t.clone(); }
                }
                for (i, t) in extra.iter().enumerate() {
                    c.positive_rubrics.push(rubric(&format!("x{i}"), Polarity::Positive, t));
                }
                c.rehash();
                let d = diff_prompts(&p, &c).unwrap();
                let (added, changed) = oracle(&p.positive_rubrics, &c.positive_rubrics);
                let n_add = d.iter().filter(|x| x.direction == EditDirection::AddPositive).count();
                let n_edit = d.iter().filter(|x| matches!(x.direction, EditDirection::EditPositive(_))).count();
                prop_assert_eq!(n_add, added.len());
                prop_assert_eq!(n_edit, changed.len());
            }
        }
    }
}
