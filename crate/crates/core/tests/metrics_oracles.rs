use proptest::prelude::*;

use delirium_risk::eval::{
    auprc, auroc, bootstrap_ci, derive_seed, pr_points, roc_area_trapezoid, roc_points, stratified_folds,
    stratified_holdout,
};

fn scored_labels() -> impl Strategy<Value = (Vec<f64>, Vec<bool>)> {
    prop::collection::vec((0u8..10, any::<bool>()), 2..80)
        .prop_filter("both classes", |v| v.iter().any(|x| x.1) && v.iter().any(|x| !x.1))
        .prop_map(|v| v.into_iter().map(|(s, l)| (s as f64 / 10.0, l)).unzip())
}

proptest! {
    #[test]
    fn rank_and_trapezoid_routes_agree((scores, labels) in scored_labels()) {
        let by_rank = auroc(&scores, &labels).unwrap();
        let by_area = roc_area_trapezoid(&roc_points(&scores, &labels).unwrap());
        prop_assert!((by_rank - by_area).abs() <= 1e-12, "{by_rank} vs {by_area}");
    }

    #[test]
    fn auroc_flips_under_score_negation((scores, labels) in scored_labels()) {
        let neg: Vec<f64> = scores.iter().map(|s| -s).collect();
        let sum = auroc(&scores, &labels).unwrap() + auroc(&neg, &labels).unwrap();
        prop_assert!((sum - 1.0).abs() <= 1e-12);
    }

    #[test]
    fn auprc_is_bounded_by_prevalence_and_one((scores, labels) in scored_labels()) {
        let ap = auprc(&scores, &labels).unwrap();
        prop_assert!(ap > 0.0 && ap <= 1.0 + 1e-12);
        let pr = pr_points(&scores, &labels).unwrap();
        let last = pr.last().unwrap();
        prop_assert!((last.recall - 1.0).abs() < 1e-12);
    }

    #[test]
    fn folds_are_stratified(labels in prop::collection::vec(any::<bool>(), 10..200), k in 2usize..8, seed in any::<u64>()) {
        let pos = labels.iter().filter(|&&l| l).count();
        prop_assume!(pos >= k && labels.len() - pos >= k);
        let folds = stratified_folds(&labels, k, seed).unwrap();
        let mut per_fold = vec![(0usize, 0usize); k];
        for (f, &l) in folds.iter().zip(&labels) {
            if l { per_fold[*f].0 += 1 } else { per_fold[*f].1 += 1 }
        }
        let spread = |get: fn(&(usize, usize)) -> usize| {
            let v: Vec<usize> = per_fold.iter().map(get).collect();
            v.iter().max().unwrap() - v.iter().min().unwrap()
        };
        prop_assert!(spread(|p| p.0) <= 1 && spread(|p| p.1) <= 1);
        let sizes: Vec<usize> = per_fold.iter().map(|p| p.0 + p.1).collect();
        prop_assert!(sizes.iter().max().unwrap() - sizes.iter().min().unwrap() <= 1);
    }
}

#[test]
fn perfect_and_inverted_rankings() {
    let labels = [false, false, true, true];
    assert_eq!(auroc(&[0.1, 0.2, 0.8, 0.9], &labels).unwrap(), 1.0);
    assert_eq!(auroc(&[0.9, 0.8, 0.2, 0.1], &labels).unwrap(), 0.0);
    assert_eq!(auroc(&[0.5; 4], &labels).unwrap(), 0.5);
    assert_eq!(auprc(&[0.1, 0.2, 0.8, 0.9], &labels).unwrap(), 1.0);
    assert!(auroc(&[0.1, 0.2], &[true, true]).is_err());
}

#[test]
fn bootstrap_interval_brackets_point_estimate_and_is_seeded() {
    let scores: Vec<f64> = (0..200).map(|i| ((i * 37) % 101) as f64 / 100.0).collect();
    let labels: Vec<bool> = scores.iter().enumerate().map(|(i, s)| s + 0.3 * ((i % 7) as f64 / 7.0) > 0.6).collect();
    let point = auroc(&scores, &labels).unwrap();
    let ci = bootstrap_ci(auroc, &scores, &labels, 500, 0.95, 3).unwrap();
    assert!(ci.lo <= point && point <= ci.hi, "{ci:?} vs {point}");
    assert_eq!(ci, bootstrap_ci(auroc, &scores, &labels, 500, 0.95, 3).unwrap());
}

#[test]
fn holdout_is_stratified_and_disjoint() {
    let labels: Vec<bool> = (0..100).map(|i| i % 4 == 0).collect();
    let idx: Vec<usize> = (0..100).collect();
    let (fit, hold) = stratified_holdout(&idx, &labels, 0.1, derive_seed(1, 2));
    assert_eq!(fit.len() + hold.len(), 100);
    assert!(hold.iter().all(|i| !fit.contains(i)));
    let hold_pos = hold.iter().filter(|&&i| labels[i]).count();
    assert!((2..=3).contains(&hold_pos), "{hold_pos}");
}

#[test]
fn derived_seeds_differ_per_stream() {
    let seeds: std::collections::HashSet<u64> = (0..1000).map(|s| derive_seed(42, s)).collect();
    assert_eq!(seeds.len(), 1000);
}
