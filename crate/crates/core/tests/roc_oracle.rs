//! ROC area checked against the pairwise concordance definition.

use cxr_core::{multiclass_roc, roc_curve};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Probability that a random positive outranks a random negative, ties
/// counting one half.
fn concordance(scores: &[f64], positive: &[bool]) -> f64 {
    let mut wins = 0.0;
    let mut pairs = 0.0;
    for (i, &si) in scores.iter().enumerate() {
        if !positive[i] {
            continue;
        }
        for (j, &sj) in scores.iter().enumerate() {
            if positive[j] {
                continue;
            }
            pairs += 1.0;
            if si > sj {
                wins += 1.0;
            } else if si == sj {
                wins += 0.5;
            }
        }
    }
    wins / pairs
}

/// Random labelled scores; `levels` quantizes scores so ties occur.
fn random_set(rng: &mut ChaCha8Rng) -> (Vec<f64>, Vec<bool>) {
    loop {
        let n = rng.random_range(2..=500);
        let levels = [5u32, 50, 1000, 1_000_000][rng.random_range(0..4)];
        let skill = rng.random_range(0.0..0.5);
        let mut scores = Vec::with_capacity(n);
        let mut labels = Vec::with_capacity(n);
        for _ in 0..n {
            let p = rng.random_bool(0.4);
            let raw: f64 = rng.random::<f64>() * (1.0 - skill) + if p { skill } else { 0.0 };
            scores.push((raw * levels as f64).floor() / levels as f64);
            labels.push(p);
        }
        if labels.iter().any(|&p| p) && labels.iter().any(|&p| !p) {
            return (scores, labels);
        }
    }
}

#[test]
fn trapezoidal_area_equals_pairwise_concordance() {
    let mut rng = ChaCha8Rng::seed_from_u64(2020);
    for _ in 0..100 {
        let (scores, labels) = random_set(&mut rng);
        let curve = roc_curve(&scores, &labels).unwrap();
        let want = concordance(&scores, &labels);
        assert!((curve.auc - want).abs() <= 1e-12, "{} vs {want}", curve.auc);
    }
}

#[test]
fn perfect_ranking_gives_exactly_one() {
    let scores: Vec<f64> = (0..200).map(|i| i as f64 / 200.0).collect();
    let labels: Vec<bool> = (0..200).map(|i| i >= 150).collect();
    let curve = roc_curve(&scores, &labels).unwrap();
    assert_eq!(curve.auc, 1.0);
    // The inverted ranking is perfectly wrong.
    let flipped: Vec<bool> = labels.iter().map(|p| !p).collect();
    assert_eq!(roc_curve(&scores, &flipped).unwrap().auc, 0.0);
}

#[test]
fn strictly_increasing_transforms_leave_area_unchanged() {
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    let transforms: [fn(f64) -> f64; 3] =
        [|s| 3.0 * s + 1.0, |s| s.exp(), |s| (s * 4.0 - 2.0).atan()];
    for _ in 0..50 {
        let (scores, labels) = random_set(&mut rng);
        let base = roc_curve(&scores, &labels).unwrap().auc;
        for f in transforms {
            let mapped: Vec<f64> = scores.iter().map(|&s| f(s)).collect();
            assert_eq!(roc_curve(&mapped, &labels).unwrap().auc, base);
        }
    }
}

#[test]
fn curve_runs_from_origin_to_one_one_monotonically() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let (scores, labels) = random_set(&mut rng);
    let points = roc_curve(&scores, &labels).unwrap().points;
    assert_eq!(points.first(), Some(&(0.0, 0.0)));
    assert_eq!(points.last(), Some(&(1.0, 1.0)));
    for w in points.windows(2) {
        assert!(w[1].0 >= w[0].0 && w[1].1 >= w[0].1);
    }
}

#[test]
fn uninformative_scores_sit_near_one_half() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let scores: Vec<f64> = (0..10_000).map(|_| rng.random()).collect();
    let labels: Vec<bool> = (0..10_000).map(|_| rng.random_bool(0.5)).collect();
    let auc = roc_curve(&scores, &labels).unwrap().auc;
    assert!((0.45..=0.55).contains(&auc), "{auc}");
}

#[test]
fn single_class_and_bad_scores_are_rejected() {
    assert!(roc_curve(&[0.1, 0.2], &[true, true]).is_err());
    assert!(roc_curve(&[0.1, f64::NAN], &[true, false]).is_err());
    assert!(roc_curve(&[0.1], &[true, false]).is_err());
}

#[test]
fn multiclass_curves_omit_absent_classes() {
    let scores = [
        [0.8, 0.1, 0.1],
        [0.2, 0.7, 0.1],
        [0.6, 0.3, 0.1],
        [0.1, 0.8, 0.1],
    ];
    let labels = [0, 1, 0, 1];
    let roc = multiclass_roc(&scores, &labels, 3).unwrap();
    assert_eq!(roc.omitted, vec![2]);
    assert_eq!(roc.per_class.len(), 2);
    assert_eq!(roc.per_class[0].positive_class, Some(0));
    assert_eq!(roc.per_class[0].auc, 1.0);
    // Micro average pools every (sample, class) indicator.
    let flat: Vec<f64> = scores.iter().flatten().copied().collect();
    let truth: Vec<bool> = labels
        .iter()
        .flat_map(|&l| (0..3).map(move |c| c == l))
        .collect();
    let micro = roc.micro.unwrap();
    assert!((micro.auc - concordance(&flat, &truth)).abs() <= 1e-12);
}
