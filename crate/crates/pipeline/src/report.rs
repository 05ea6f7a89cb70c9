//! Evaluation of accumulated test-fold predictions and its renderings:
//! the metrics document, ROC point files, result tables and ROC plots.

use std::fmt::Write as _;
use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use cxr_core::{
    aggregate, format_percent, multiclass_roc, per_class_metrics, AggregateMetrics, ClassMetrics,
    ConfusionMatrix, MetricSet, MetricsError, MulticlassRoc, RocCurve, RocError, Scheme,
};
use image::{Rgb, RgbImage};
use imageproc::drawing::draw_line_segment_mut;
use serde::{Deserialize, Serialize};

pub const PREDICTIONS_FILE: &str = "predictions.tsv";
pub const METRICS_TEXT_FILE: &str = "metrics.txt";

#[derive(Debug, thiserror::Error)]
pub enum EvaluationError {
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error(transparent)]
    Roc(#[from] RocError),
    #[error("no predictions to evaluate")]
    Empty,
}

/// Test-fold output for one record.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub record_id: String,
    pub fold: usize,
    /// Class index in the scheme's order.
    pub truth: usize,
    pub predicted: usize,
    pub probabilities: Vec<f64>,
}

/// Area under one ROC curve; `class` is `None` for the micro average.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AucEntry {
    pub class: Option<String>,
    pub auc: f64,
}

/// Everything computed from the overall confusion matrix and scores.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Evaluation {
    pub confusion: ConfusionMatrix,
    pub class_metrics: ClassMetrics,
    pub aggregate: AggregateMetrics,
    pub aucs: Vec<AucEntry>,
    /// Classes whose ROC curve was omitted for lack of positives.
    pub roc_omitted: Vec<String>,
    /// True when some metric hit a zero denominator and was set to 0.
    pub degenerate: bool,
}

/// Confusion matrix, metrics and ROC data for predictions accumulated over
/// every test fold.
pub fn evaluate(
    scheme: Scheme,
    predictions: &[Prediction],
) -> Result<(Evaluation, MulticlassRoc), EvaluationError> {
    if predictions.is_empty() {
        return Err(EvaluationError::Empty);
    }
    let labels: Vec<String> = scheme
        .classes()
        .iter()
        .map(|c| c.display_name().to_string())
        .collect();
    let mut confusion = ConfusionMatrix::new(labels.clone());
    let truth: Vec<usize> = predictions.iter().map(|p| p.truth).collect();
    let predicted: Vec<usize> = predictions.iter().map(|p| p.predicted).collect();
    confusion.accumulate(&truth, &predicted)?;
    let class_metrics = per_class_metrics(&confusion)?;
    let aggregate = aggregate(&class_metrics, &confusion.supports())?;
    let scores: Vec<&[f64]> = predictions
        .iter()
        .map(|p| p.probabilities.as_slice())
        .collect();
    let roc = multiclass_roc(&scores, &truth, scheme.num_classes())?;
    for &c in &roc.omitted {
        log::warn!(
            "no ROC curve for {}: class absent from test labels",
            labels[c]
        );
    }
    let mut aucs: Vec<AucEntry> = roc
        .per_class
        .iter()
        .map(|c| AucEntry {
            class: c.positive_class.map(|i| labels[i].clone()),
            auc: c.auc,
        })
        .collect();
    if let Some(micro) = &roc.micro {
        aucs.push(AucEntry {
            class: None,
            auc: micro.auc,
        });
    }
    let degenerate = class_metrics.degenerate();
    Ok((
        Evaluation {
            confusion,
            class_metrics,
            aggregate,
            aucs,
            roc_omitted: roc.omitted.iter().map(|&c| labels[c].clone()).collect(),
            degenerate,
        },
        roc,
    ))
}

pub fn predictions_tsv(scheme: Scheme, predictions: &[Prediction]) -> String {
    let mut out = String::from("record_id\tfold\ttruth\tpredicted");
    for c in scheme.classes() {
        write!(out, "\tp_{}", c.as_str()).expect("string write");
    }
    out.push('\n');
    let name = |i: usize| scheme.classes()[i].as_str();
    for p in predictions {
        write!(
            out,
            "{}\t{}\t{}\t{}",
            p.record_id,
            p.fold,
            name(p.truth),
            name(p.predicted)
        )
        .expect("string write");
        for v in &p.probabilities {
            write!(out, "\t{v:.8}").expect("string write");
        }
        out.push('\n');
    }
    out
}

/// `fpr\ttpr` rows of one curve.
pub fn roc_tsv(curve: &RocCurve) -> String {
    let mut out = String::from("fpr\ttpr\n");
    for (fpr, tpr) in &curve.points {
        writeln!(out, "{fpr}\t{tpr}").expect("string write");
    }
    out
}

/// File-name fragment for a class display name.
pub fn slug(name: &str) -> String {
    name.chars()
        .map(|c| {
            if c.is_ascii_alphanumeric() {
                c.to_ascii_lowercase()
            } else {
                '_'
            }
        })
        .collect::<String>()
        .trim_matches('_')
        .to_string()
}

const COLUMNS: [&str; 5] = [
    "Accuracy",
    "Precision",
    "Sensitivity",
    "F1-score",
    "Specificity",
];

fn metric_row(out: &mut String, name: &str, m: &MetricSet) {
    write!(out, "{name:<18}").expect("string write");
    for v in m.as_array() {
        write!(out, " {:>11}", format_percent(v)).expect("string write");
    }
    out.push('\n');
}

fn metric_header(out: &mut String, first: &str) {
    write!(out, "{first:<18}").expect("string write");
    for c in COLUMNS {
        write!(out, " {c:>11}").expect("string write");
    }
    out.push('\n');
}

/// The structured metrics document for one backbone.
pub fn metrics_text(backbone: &str, eval: &Evaluation) -> String {
    let cm = &eval.confusion;
    let mut out = String::new();
    writeln!(out, "Backbone: {backbone}").expect("string write");
    writeln!(
        out,
        "Test images: {} ({} correct)",
        cm.total(),
        cm.correct()
    )
    .expect("string write");
    out.push_str("\nConfusion matrix (rows = true class, columns = predicted class)\n");
    write!(out, "{:<18}", "").expect("string write");
    for l in &cm.labels {
        write!(out, " {l:>16}").expect("string write");
    }
    out.push('\n');
    for (label, row) in cm.labels.iter().zip(cm.rows()) {
        write!(out, "{label:<18}").expect("string write");
        for v in row {
            write!(out, " {v:>16}").expect("string write");
        }
        out.push('\n');
    }
    out.push_str("\nPer-class metrics (%)\n");
    metric_header(&mut out, "Class");
    for c in &eval.class_metrics.classes {
        metric_row(&mut out, &c.label, &c.metrics);
    }
    out.push_str("\nAggregates (%)\n");
    metric_header(&mut out, "Average");
    metric_row(&mut out, "Weighted", &eval.aggregate.weighted);
    metric_row(&mut out, "Macro", &eval.aggregate.macro_avg);
    writeln!(
        out,
        "Overall accuracy: {}",
        format_percent(eval.aggregate.overall_accuracy)
    )
    .expect("string write");
    writeln!(
        out,
        "Supports: {}",
        eval.aggregate
            .supports
            .iter()
            .map(u64::to_string)
            .collect::<Vec<_>>()
            .join(", ")
    )
    .expect("string write");
    out.push_str("\nArea under the ROC curve\n");
    for a in &eval.aucs {
        let name = a.class.as_deref().unwrap_or("micro-average");
        writeln!(out, "{name:<18} {:.4}", a.auc).expect("string write");
    }
    for name in &eval.roc_omitted {
        writeln!(out, "{name:<18} omitted (class absent from test labels)").expect("string write");
    }
    if eval.degenerate {
        out.push_str("\nNote: at least one metric had a zero denominator and is reported as 0.\n");
    }
    out
}

/// The five figures a summary table row shows.
pub fn summary_row(a: &AggregateMetrics) -> MetricSet {
    MetricSet {
        accuracy: a.overall_accuracy,
        specificity: a.macro_avg.specificity,
        ..a.weighted
    }
}

/// One row of a result table.
#[derive(Debug, Clone)]
pub struct TableRow {
    pub backbone: String,
    pub aggregate: AggregateMetrics,
}

/// Weighted and macro result tables in the column order Accuracy,
/// Precision, Sensitivity, F1-score, Specificity, followed by a summary of
/// overall accuracy, weighted precision, sensitivity and F1, and macro
/// specificity.
pub fn results_table(title: &str, rows: &[TableRow]) -> String {
    let mut out = String::new();
    writeln!(out, "{title}").expect("string write");
    if rows.is_empty() {
        out.push_str("(no completed backbones)\n");
        return out;
    }
    for (heading, pick) in [
        (
            "Weighted average (%)",
            (|a: &AggregateMetrics| a.weighted) as fn(&AggregateMetrics) -> MetricSet,
        ),
        ("Macro average (%)", |a: &AggregateMetrics| a.macro_avg),
        (
            "Summary: overall accuracy, weighted, macro specificity (%)",
            |a| summary_row(a),
        ),
    ] {
        writeln!(out, "\n{heading}").expect("string write");
        metric_header(&mut out, "Network");
        for r in rows {
            metric_row(&mut out, &r.backbone, &pick(&r.aggregate));
        }
    }
    out
}

/// Colour of the `i`-th curve in ROC plots.
pub fn curve_color(i: usize) -> Rgb<u8> {
    let c = colorous::CATEGORY10[i % colorous::CATEGORY10.len()];
    Rgb([c.r, c.g, c.b])
}

const PLOT_SIDE: u32 = 480;
const MARGIN: f32 = 40.0;

/// ROC curves on a unit square, one colour per curve, with the chance
/// diagonal in grey. The legend lives in a text file next to the image.
pub fn plot_roc(curves: &[(&str, &RocCurve)]) -> RgbImage {
    let mut img = RgbImage::from_pixel(PLOT_SIDE, PLOT_SIDE, Rgb([255, 255, 255]));
    let span = PLOT_SIDE as f32 - 2.0 * MARGIN;
    let at = |fpr: f64, tpr: f64| {
        (
            MARGIN + fpr as f32 * span,
            MARGIN + (1.0 - tpr as f32) * span,
        )
    };
    let axis = Rgb([0, 0, 0]);
    for (a, b) in [
        ((0.0, 0.0), (1.0, 0.0)),
        ((0.0, 0.0), (0.0, 1.0)),
        ((1.0, 0.0), (1.0, 1.0)),
        ((0.0, 1.0), (1.0, 1.0)),
    ] {
        draw_line_segment_mut(&mut img, at(a.0, a.1), at(b.0, b.1), axis);
    }
    for t in 1..10 {
        let v = f64::from(t) / 10.0;
        let (x, y) = at(v, 0.0);
        draw_line_segment_mut(&mut img, (x, y), (x, y + 5.0), axis);
        let (x, y) = at(0.0, v);
        draw_line_segment_mut(&mut img, (x - 5.0, y), (x, y), axis);
    }
    draw_line_segment_mut(&mut img, at(0.0, 0.0), at(1.0, 1.0), Rgb([170, 170, 170]));
    for (i, (_, curve)) in curves.iter().enumerate() {
        let color = curve_color(i);
        for pair in curve.points.windows(2) {
            let (a, b) = (pair[0], pair[1]);
            let (pa, pb) = (at(a.0, a.1), at(b.0, b.1));
            draw_line_segment_mut(&mut img, pa, pb, color);
            draw_line_segment_mut(&mut img, (pa.0, pa.1 + 1.0), (pb.0, pb.1 + 1.0), color);
        }
    }
    img
}

/// Legend for [`plot_roc`]: curve colour, name and AUC.
pub fn roc_legend(curves: &[(&str, &RocCurve)]) -> String {
    let mut out = String::from("color\tcurve\tauc\n");
    for (i, (name, curve)) in curves.iter().enumerate() {
        let Rgb([r, g, b]) = curve_color(i);
        writeln!(out, "#{r:02x}{g:02x}{b:02x}\t{name}\t{:.4}", curve.auc).expect("string write");
    }
    out
}

/// Writes `plot_roc` as PNG plus its legend (`.legend.tsv`).
pub fn write_roc_plot(path: &Path, curves: &[(&str, &RocCurve)]) -> io::Result<(PathBuf, PathBuf)> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir)?;
    }
    plot_roc(curves).save(path).map_err(io::Error::other)?;
    let legend = path.with_extension("legend.tsv");
    fs::write(&legend, roc_legend(curves))?;
    Ok((path.to_path_buf(), legend))
}
