//! Density-based clustering over cosine distance.

use crate::gateway::{cosine_similarity, EmbeddingVector};

pub fn cosine_distance(a: &EmbeddingVector, b: &EmbeddingVector) -> f64 {
    1.0 - cosine_similarity(a, b)
}

/// DBSCAN. Returns one cluster index per point; points in no dense region
/// get a cluster of their own. Cluster indices are assigned in order of first
/// appearance.
pub fn dbscan(points: &[EmbeddingVector], eps: f64, min_points: usize) -> Vec<usize> {
    let n = points.len();
    let neighbors: Vec<Vec<usize>> = (0..n)
        .map(|i| (0..n).filter(|&j| cosine_distance(&points[i], &points[j]) <= eps).collect())
        .collect();
    let is_core = |i: usize| neighbors[i].len() >= min_points.max(1);

    let mut label: Vec<Option<usize>> = vec![None; n];
    let mut next = 0;
    for start in 0..n {
        if label[start].is_some() || !is_core(start) {
            continue;
        }
        let id = next;
        next += 1;
        label[start] = Some(id);
        let mut frontier = vec![start];
        while let Some(p) = frontier.pop() {
            if !is_core(p) {
                continue;
            }
            for &q in &neighbors[p] {
                if label[q].is_none() {
                    label[q] = Some(id);
                    frontier.push(q);
                }
            }
        }
    }
    for slot in label.iter_mut() {
        if slot.is_none() {
            *slot = Some(next);
            next += 1;
        }
    }
    label.into_iter().map(|l| l.expect("labelled")).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn v(x: &[f64]) -> EmbeddingVector {
        EmbeddingVector::new(x.to_vec())
    }

    #[test]
    fn identical_points_form_one_cluster() {
        let pts = vec![v(&[1.0, 0.0]); 4];
        assert_eq!(dbscan(&pts, 0.25, 2), vec![0, 0, 0, 0]);
    }

    #[test]
    fn far_points_are_singletons() {
        let pts = vec![v(&[1.0, 0.0]), v(&[0.0, 1.0]), v(&[-1.0, 0.0])];
        assert_eq!(dbscan(&pts, 0.25, 2), vec![0, 1, 2]);
    }

    #[test]
    fn two_groups() {
        let pts = vec![v(&[1.0, 0.0]), v(&[0.0, 1.0]), v(&[0.99, 0.05]), v(&[0.05, 0.99]), v(&[1.0, 0.01])];
        assert_eq!(dbscan(&pts, 0.25, 2), vec![0, 1, 0, 1, 0]);
    }

    #[test]
    fn border_points_join_but_do_not_extend() {
        // a-b close, b-c close, a-c far; with min_points 3 only b is core.
        let a = v(&[1.0, 0.0]);
        let b = v(&[0.8, 0.6]);
        let c = v(&[0.28, 0.96]);
        assert!(cosine_distance(&a, &b) <= 0.25 && cosine_distance(&b, &c) <= 0.25);
        assert!(cosine_distance(&a, &c) > 0.25);
        assert_eq!(dbscan(&[a, b, c], 0.25, 3), vec![0, 0, 0]);
    }

    proptest! {
        #[test]
        fn every_point_gets_exactly_one_cluster(raw in prop::collection::vec((-1.0f64..1.0, -1.0f64..1.0), 1..30)) {
            let pts: Vec<_> = raw.iter().map(|(x, y)| v(&[*x, *y])).collect();
            let labels = dbscan(&pts, 0.25, 2);
            prop_assert_eq!(labels.len(), pts.len());
            let max = *labels.iter().max().unwrap();
            for id in 0..=max {
                prop_assert!(labels.contains(&id));
            }
        }
    }
}
