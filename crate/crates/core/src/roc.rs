//! ROC curves and trapezoidal AUC.

use alloc::vec::Vec;

#[cfg(feature = "serde")]
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum RocError {
    #[error("{scores} scores for {labels} labels")]
    LengthMismatch { scores: usize, labels: usize },
    #[error("ROC needs at least one positive and one negative example")]
    SingleClass,
    #[error("score {0} is not finite")]
    NonFinite(f64),
    #[error("score row {row} has {len} entries, expected {classes}")]
    RaggedScores {
        row: usize,
        len: usize,
        classes: usize,
    },
    #[error("label index {index} is outside {classes} classes")]
    UnknownLabel { index: usize, classes: usize },
    #[error("multiclass ROC needs at least two classes")]
    TooFewClasses,
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(Serialize, Deserialize))]
pub struct RocCurve {
    /// Index of the positive class; `None` for a micro-averaged curve.
    pub positive_class: Option<usize>,
    /// (false-positive rate, true-positive rate), from (0,0) to (1,1).
    pub points: Vec<(f64, f64)>,
    pub auc: f64,
}

/// Sweeps a threshold down through the distinct scores, emitting one point
/// per distinct value, and integrates with the trapezoidal rule. Tied
/// scores move along the diagonal of their block, which is what counts a
/// tied positive/negative pair as half concordant.
pub fn roc_curve(scores: &[f64], positive: &[bool]) -> Result<RocCurve, RocError> {
    if scores.len() != positive.len() {
        return Err(RocError::LengthMismatch {
            scores: scores.len(),
            labels: positive.len(),
        });
    }
    if let Some(&bad) = scores.iter().find(|s| !s.is_finite()) {
        return Err(RocError::NonFinite(bad));
    }
    let n_pos = positive.iter().filter(|&&p| p).count();
    let n_neg = positive.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Err(RocError::SingleClass);
    }

    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));

    let mut points = Vec::with_capacity(scores.len() + 1);
    points.push((0.0, 0.0));
    let (mut tp, mut fp) = (0usize, 0usize);
    // Twice the area, in units of 1 / (n_pos * n_neg), kept exact.
    let mut area2: u128 = 0;
    let mut i = 0;
    while i < order.len() {
        let threshold = scores[order[i]];
        let (tp0, fp0) = (tp, fp);
        while i < order.len() && scores[order[i]] == threshold {
            if positive[order[i]] {
                tp += 1;
            } else {
                fp += 1;
            }
            i += 1;
        }
        area2 += ((fp - fp0) * (tp + tp0)) as u128;
        points.push((fp as f64 / n_neg as f64, tp as f64 / n_pos as f64));
    }
    let auc = area2 as f64 / (2.0 * n_pos as f64 * n_neg as f64);
    Ok(RocCurve {
        positive_class: None,
        points,
        auc,
    })
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(Serialize, Deserialize))]
pub struct MulticlassRoc {
    /// One-vs-rest curves for every class present among the labels.
    pub per_class: Vec<RocCurve>,
    /// Classes without positives (or without negatives); no curve emitted.
    pub omitted: Vec<usize>,
    /// Curve over all (sample, class) indicator pairs pooled together.
    pub micro: Option<RocCurve>,
}

/// One-vs-rest ROC per class plus the micro-averaged curve.
///
/// `scores[i][c]` is the probability of class `c` for sample `i`.
pub fn multiclass_roc<R: AsRef<[f64]>>(
    scores: &[R],
    labels: &[usize],
    num_classes: usize,
) -> Result<MulticlassRoc, RocError> {
    if num_classes < 2 {
        return Err(RocError::TooFewClasses);
    }
    if scores.len() != labels.len() {
        return Err(RocError::LengthMismatch {
            scores: scores.len(),
            labels: labels.len(),
        });
    }
    for (row, s) in scores.iter().enumerate() {
        if s.as_ref().len() != num_classes {
            return Err(RocError::RaggedScores {
                row,
                len: s.as_ref().len(),
                classes: num_classes,
            });
        }
    }
    if let Some(&index) = labels.iter().find(|&&l| l >= num_classes) {
        return Err(RocError::UnknownLabel {
            index,
            classes: num_classes,
        });
    }

    let mut per_class = Vec::new();
    let mut omitted = Vec::new();
    for c in 0..num_classes {
        let column: Vec<f64> = scores.iter().map(|s| s.as_ref()[c]).collect();
        let is_pos: Vec<bool> = labels.iter().map(|&l| l == c).collect();
        match roc_curve(&column, &is_pos) {
            Ok(mut curve) => {
                curve.positive_class = Some(c);
                per_class.push(curve);
            }
            Err(RocError::SingleClass) => omitted.push(c),
            Err(e) => return Err(e),
        }
    }

    let pooled: Vec<f64> = scores
        .iter()
        .flat_map(|s| s.as_ref().iter().copied())
        .collect();
    let pooled_pos: Vec<bool> = labels
        .iter()
        .flat_map(|&l| (0..num_classes).map(move |c| c == l))
        .collect();
    let micro = match roc_curve(&pooled, &pooled_pos) {
        Ok(curve) => Some(curve),
        Err(RocError::SingleClass) => None,
        Err(e) => return Err(e),
    };
    Ok(MulticlassRoc {
        per_class,
        omitted,
        micro,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    #[test]
    fn perfect_separation_gives_unit_auc() {
        let curve = roc_curve(&[0.9, 0.8, 0.3, 0.1], &[true, true, false, false]).unwrap();
        assert_eq!(curve.auc, 1.0);
        assert_eq!(curve.points.first(), Some(&(0.0, 0.0)));
        assert_eq!(curve.points.last(), Some(&(1.0, 1.0)));
    }

    #[test]
    fn all_tied_scores_give_half() {
        let curve = roc_curve(&[0.5; 6], &[true, false, true, false, false, true]).unwrap();
        assert_eq!(curve.auc, 0.5);
        assert_eq!(curve.points, vec![(0.0, 0.0), (1.0, 1.0)]);
    }

    #[test]
    fn single_class_rejected() {
        assert_eq!(
            roc_curve(&[0.1, 0.2], &[true, true]).unwrap_err(),
            RocError::SingleClass
        );
        assert!(matches!(
            roc_curve(&[f64::NAN, 0.2], &[true, false]),
            Err(RocError::NonFinite(_))
        ));
    }

    #[test]
    fn two_class_reduces_to_binary_curve() {
        let scores = vec![[0.2, 0.8], [0.6, 0.4], [0.3, 0.7], [0.9, 0.1], [0.5, 0.5]];
        let labels = vec![1, 0, 1, 0, 0];
        let multi = multiclass_roc(&scores, &labels, 2).unwrap();
        let col: Vec<f64> = scores.iter().map(|s| s[1]).collect();
        let pos: Vec<bool> = labels.iter().map(|&l| l == 1).collect();
        let mut binary = roc_curve(&col, &pos).unwrap();
        binary.positive_class = Some(1);
        assert_eq!(multi.per_class[1], binary);
    }

    #[test]
    fn absent_class_is_omitted() {
        let scores = vec![[0.7, 0.2, 0.1], [0.2, 0.7, 0.1]];
        let multi = multiclass_roc(&scores, &[0, 1], 3).unwrap();
        assert_eq!(multi.omitted, vec![2]);
        assert_eq!(multi.per_class.len(), 2);
        assert!(multi.micro.is_some());
    }
}
