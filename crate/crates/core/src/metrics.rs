//! Confusion-matrix accumulation and the five per-class screening metrics.

use alloc::string::String;
use alloc::vec::Vec;

#[cfg(feature = "serde")]
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum MetricsError {
    #[error("label streams differ in length: {truth} true vs {predicted} predicted")]
    LengthMismatch { truth: usize, predicted: usize },
    #[error("label index {index} is outside the {classes}-class matrix")]
    UnknownLabel { index: usize, classes: usize },
    #[error("confusion matrix is empty")]
    Empty,
    #[error("matrices have different class lists")]
    Incompatible,
    #[error("{supports} supports for {classes} classes")]
    SupportMismatch { supports: usize, classes: usize },
}

/// K×K counts; rows are true classes, columns predicted classes.
#[derive(Debug, Clone, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(Serialize, Deserialize))]
pub struct ConfusionMatrix {
    pub labels: Vec<String>,
    /// Row-major, `labels.len()²` entries.
    pub counts: Vec<u64>,
}

impl ConfusionMatrix {
    pub fn new(labels: Vec<String>) -> Self {
        let k = labels.len();
        ConfusionMatrix {
            labels,
            counts: alloc::vec![0; k * k],
        }
    }

    /// Builds from rows of counts. Panics when the rows are not square.
    pub fn from_rows<R: AsRef<[u64]>>(labels: Vec<String>, rows: &[R]) -> Self {
        let k = labels.len();
        assert_eq!(rows.len(), k, "expected {k} rows");
        let mut counts = Vec::with_capacity(k * k);
        for row in rows {
            assert_eq!(row.as_ref().len(), k, "expected {k} columns");
            counts.extend_from_slice(row.as_ref());
        }
        ConfusionMatrix { labels, counts }
    }

    pub fn num_classes(&self) -> usize {
        self.labels.len()
    }

    pub fn get(&self, truth: usize, predicted: usize) -> u64 {
        self.counts[truth * self.num_classes() + predicted]
    }

    pub fn row(&self, truth: usize) -> &[u64] {
        let k = self.num_classes();
        &self.counts[truth * k..(truth + 1) * k]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[u64]> {
        self.counts.chunks(self.num_classes().max(1))
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    pub fn correct(&self) -> u64 {
        (0..self.num_classes()).map(|i| self.get(i, i)).sum()
    }

    /// True-class totals (row sums).
    pub fn supports(&self) -> Vec<u64> {
        self.rows().map(|r| r.iter().sum()).collect()
    }

    /// Adds one fold's predictions. Nothing is recorded if any label is
    /// out of range.
    pub fn accumulate(&mut self, truth: &[usize], predicted: &[usize]) -> Result<(), MetricsError> {
        if truth.len() != predicted.len() {
            return Err(MetricsError::LengthMismatch {
                truth: truth.len(),
                predicted: predicted.len(),
            });
        }
        let k = self.num_classes();
        if let Some(&index) = truth.iter().chain(predicted).find(|&&i| i >= k) {
            return Err(MetricsError::UnknownLabel { index, classes: k });
        }
        for (&t, &p) in truth.iter().zip(predicted) {
            self.counts[t * k + p] += 1;
        }
        Ok(())
    }

    /// Element-wise sum of two matrices over the same classes.
    pub fn merge(&mut self, other: &ConfusionMatrix) -> Result<(), MetricsError> {
        if self.labels != other.labels {
            return Err(MetricsError::Incompatible);
        }
        for (a, b) in self.counts.iter_mut().zip(&other.counts) {
            *a += b;
        }
        Ok(())
    }

    /// One-vs-rest decomposition for class `i`.
    pub fn outcome(&self, i: usize) -> Outcome {
        let k = self.num_classes();
        let tp = self.get(i, i);
        let fn_ = self.row(i).iter().sum::<u64>() - tp;
        let fp = (0..k).map(|r| self.get(r, i)).sum::<u64>() - tp;
        let tn = self.total() - tp - fn_ - fp;
        Outcome { tp, fp, fn_, tn }
    }
}

/// TP/FP/FN/TN for one class against the rest.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(Serialize, Deserialize))]
pub struct Outcome {
    pub tp: u64,
    pub fp: u64,
    #[cfg_attr(feature = "serde", serde(rename = "fn"))]
    pub fn_: u64,
    pub tn: u64,
}

/// The five screening metrics, each a ratio in [0, 1].
#[derive(Debug, Clone, Copy, Default, PartialEq)]
#[cfg_attr(feature = "serde", derive(Serialize, Deserialize))]
pub struct MetricSet {
    pub accuracy: f64,
    pub precision: f64,
    pub sensitivity: f64,
    pub f1: f64,
    pub specificity: f64,
}

impl MetricSet {
    /// Values in the column order of the result tables: accuracy,
    /// precision, sensitivity, F1, specificity.
    pub fn as_array(&self) -> [f64; 5] {
        [
            self.accuracy,
            self.precision,
            self.sensitivity,
            self.f1,
            self.specificity,
        ]
    }

    fn from_array(a: [f64; 5]) -> Self {
        MetricSet {
            accuracy: a[0],
            precision: a[1],
            sensitivity: a[2],
            f1: a[3],
            specificity: a[4],
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(Serialize, Deserialize))]
pub struct PerClass {
    pub label: String,
    pub outcome: Outcome,
    pub metrics: MetricSet,
    /// Set when a zero denominator forced a metric to 0.
    pub degenerate: bool,
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(Serialize, Deserialize))]
pub struct ClassMetrics {
    pub classes: Vec<PerClass>,
}

impl ClassMetrics {
    pub fn degenerate(&self) -> bool {
        self.classes.iter().any(|c| c.degenerate)
    }
}

fn ratio(num: u64, den: u64, degenerate: &mut bool) -> f64 {
    if den == 0 {
        *degenerate = true;
        0.0
    } else {
        num as f64 / den as f64
    }
}

/// Accuracy, precision, sensitivity, F1 and specificity of every class,
/// from its one-vs-rest TP/TN/FP/FN counts. Zero denominators give 0 and
/// mark the class degenerate.
pub fn per_class_metrics(cm: &ConfusionMatrix) -> Result<ClassMetrics, MetricsError> {
    if cm.total() == 0 {
        return Err(MetricsError::Empty);
    }
    let classes = (0..cm.num_classes())
        .map(|i| {
            let o = cm.outcome(i);
            let mut degenerate = false;
            let accuracy = ratio(o.tp + o.tn, o.tp + o.tn + o.fp + o.fn_, &mut degenerate);
            let precision = ratio(o.tp, o.tp + o.fp, &mut degenerate);
            let sensitivity = ratio(o.tp, o.tp + o.fn_, &mut degenerate);
            let specificity = ratio(o.tn, o.tn + o.fp, &mut degenerate);
            let f1 = if precision + sensitivity > 0.0 {
                2.0 * (precision * sensitivity) / (precision + sensitivity)
            } else {
                degenerate = true;
                0.0
            };
            PerClass {
                label: cm.labels[i].clone(),
                outcome: o,
                metrics: MetricSet {
                    accuracy,
                    precision,
                    sensitivity,
                    f1,
                    specificity,
                },
                degenerate,
            }
        })
        .collect();
    Ok(ClassMetrics { classes })
}

/// Support-weighted and unweighted (macro) means of per-class metrics.
///
/// Under support weighting, recall collapses to overall accuracy; the
/// specificity the result tables print agrees with the macro mean instead,
/// so both are always reported.
///
/// The support-weighted mean of one-vs-rest accuracies counts every
/// true negative again for each class and exceeds the fraction of
/// correctly classified images once there are three or more classes. The
/// latter is kept separately as `overall_accuracy`; it is what the
/// Accuracy column of the result tables shows.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(Serialize, Deserialize))]
pub struct AggregateMetrics {
    /// Correctly classified images over all images.
    pub overall_accuracy: f64,
    pub weighted: MetricSet,
    pub macro_avg: MetricSet,
    pub supports: Vec<u64>,
}

pub fn aggregate(
    metrics: &ClassMetrics,
    supports: &[u64],
) -> Result<AggregateMetrics, MetricsError> {
    let k = metrics.classes.len();
    if supports.len() != k {
        return Err(MetricsError::SupportMismatch {
            supports: supports.len(),
            classes: k,
        });
    }
    let total: u64 = supports.iter().sum();
    if k == 0 || total == 0 {
        return Err(MetricsError::Empty);
    }
    let correct: u64 = metrics.classes.iter().map(|c| c.outcome.tp).sum();
    let mut weighted = [0.0f64; 5];
    let mut macro_sum = [0.0f64; 5];
    for (class, &support) in metrics.classes.iter().zip(supports) {
        for (j, v) in class.metrics.as_array().into_iter().enumerate() {
            weighted[j] += support as f64 * v;
            macro_sum[j] += v;
        }
    }
    Ok(AggregateMetrics {
        overall_accuracy: correct as f64 / total as f64,
        weighted: MetricSet::from_array(weighted.map(|w| w / total as f64)),
        macro_avg: MetricSet::from_array(macro_sum.map(|m| m / k as f64)),
        supports: supports.to_vec(),
    })
}

/// Formats a ratio as a percentage with two decimals, rounding half up.
pub fn format_percent(ratio: f64) -> String {
    // Nudge by a few ulps so values such as 0.99695 that sit just below a
    // half in binary still round up.
    let scaled = ratio * 10_000.0;
    let hundredths = libm::floor(scaled + 0.5 + scaled.abs() * 4.0 * f64::EPSILON) as i64;
    let sign = if hundredths < 0 { "-" } else { "" };
    let h = hundredths.unsigned_abs();
    alloc::format!("{sign}{}.{:02}", h / 100, h % 100)
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    fn labels(k: usize) -> Vec<String> {
        (0..k).map(|i| alloc::format!("c{i}")).collect()
    }

    #[test]
    fn two_class_worked_example() {
        let cm = ConfusionMatrix::from_rows(labels(2), &[[420, 3], [3, 1576]]);
        let m = per_class_metrics(&cm).unwrap();
        let covid = &m.classes[0].metrics;
        assert!((covid.precision - 420.0 / 423.0).abs() < 1e-15);
        assert!((covid.sensitivity - 420.0 / 423.0).abs() < 1e-15);
        assert!((covid.specificity - 1576.0 / 1579.0).abs() < 1e-15);
        assert!((covid.accuracy - 1996.0 / 2002.0).abs() < 1e-15);
        assert!((covid.precision - 0.99291).abs() < 5e-6);
        assert!((covid.specificity - 0.99810).abs() < 5e-6);
        assert!((covid.accuracy - 0.99700).abs() < 5e-6);
    }

    #[test]
    fn perfect_classifier_scores_one() {
        let cm = ConfusionMatrix::from_rows(labels(3), &[[5, 0, 0], [0, 5, 0], [0, 0, 5]]);
        for class in per_class_metrics(&cm).unwrap().classes {
            assert_eq!(class.metrics.as_array(), [1.0; 5]);
            assert!(!class.degenerate);
        }
    }

    #[test]
    fn zero_denominators_flagged() {
        // Class 1 never occurs and is never predicted.
        let cm = ConfusionMatrix::from_rows(labels(2), &[[4, 0], [0, 0]]);
        let m = per_class_metrics(&cm).unwrap();
        assert!(m.classes[1].degenerate);
        assert_eq!(m.classes[1].metrics.precision, 0.0);
        assert_eq!(m.classes[1].metrics.f1, 0.0);
        assert!(m.degenerate());
        assert_eq!(
            per_class_metrics(&ConfusionMatrix::new(labels(2))).unwrap_err(),
            MetricsError::Empty
        );
    }

    #[test]
    fn accumulate_rejects_bad_streams() {
        let mut cm = ConfusionMatrix::new(labels(2));
        cm.accumulate(&[], &[]).unwrap();
        assert_eq!(cm.total(), 0);
        assert!(matches!(
            cm.accumulate(&[0], &[]),
            Err(MetricsError::LengthMismatch { .. })
        ));
        assert_eq!(
            cm.accumulate(&[0, 2], &[0, 0]).unwrap_err(),
            MetricsError::UnknownLabel {
                index: 2,
                classes: 2
            }
        );
        assert_eq!(cm.total(), 0);
    }

    #[test]
    fn fold_order_does_not_matter() {
        let a = (vec![0, 1, 1, 2], vec![0, 2, 1, 2]);
        let b = (vec![2, 2, 0], vec![1, 2, 0]);
        let mut ab = ConfusionMatrix::new(labels(3));
        ab.accumulate(&a.0, &a.1).unwrap();
        ab.accumulate(&b.0, &b.1).unwrap();
        let mut ba = ConfusionMatrix::new(labels(3));
        ba.accumulate(&b.0, &b.1).unwrap();
        ba.accumulate(&a.0, &a.1).unwrap();
        assert_eq!(ab, ba);
    }

    #[test]
    fn equal_metrics_aggregate_to_themselves() {
        let m = MetricSet {
            accuracy: 0.9,
            precision: 0.8,
            sensitivity: 0.7,
            f1: 0.75,
            specificity: 0.6,
        };
        let cm = ClassMetrics {
            classes: (0..3)
                .map(|i| PerClass {
                    label: alloc::format!("{i}"),
                    outcome: Outcome {
                        tp: 0,
                        fp: 0,
                        fn_: 0,
                        tn: 0,
                    },
                    metrics: m,
                    degenerate: false,
                })
                .collect(),
        };
        let agg = aggregate(&cm, &[3, 17, 250]).unwrap();
        for (w, (a, b)) in agg
            .weighted
            .as_array()
            .iter()
            .zip(agg.macro_avg.as_array().iter().zip(m.as_array()))
        {
            assert!((w - b).abs() < 1e-12 && (a - b).abs() < 1e-12);
        }
        assert!(aggregate(&cm, &[1, 2]).is_err());
    }

    #[test]
    fn percent_formatting_rounds_half_up() {
        assert_eq!(format_percent(0.997), "99.70");
        assert_eq!(format_percent(0.99555), "99.56");
        assert_eq!(format_percent(0.12345), "12.35");
        assert_eq!(format_percent(1.0), "100.00");
        assert_eq!(format_percent(0.0), "0.00");
    }
}
