//! Pure algorithms behind the chest X-ray screening pipeline.
//!
//! Everything here works on in-memory values and needs only `alloc`:
//! stratified fold assignment, rotation/translation augmentation, the
//! per-class confusion-matrix metrics, ROC curves and activation-map
//! statistics. File formats, image decoding and network training live in
//! the `cxr-pipeline` crate.

#![cfg_attr(not(test), no_std)]

extern crate alloc;

pub mod activation;
pub mod augment;
pub mod label;
pub mod metrics;
pub mod roc;
pub mod seed;
pub mod split;

pub use activation::{normalize_map, strongest_channel, ActivationMap, NormalizedMap};
pub use augment::{
    expand_training_fold, rotate, translate, AugmentError, AugmentationSpec, AugmentedRecord,
    ClassAugmentation, FoldExpansion, Raster, TransformDescriptor,
};
pub use label::{ClassLabel, Scheme, UnknownLabel};
pub use metrics::{
    aggregate, format_percent, per_class_metrics, AggregateMetrics, ClassMetrics, ConfusionMatrix,
    MetricSet, MetricsError, PerClass,
};
pub use roc::{multiclass_roc, roc_curve, MulticlassRoc, RocCurve, RocError};
pub use split::{
    carve_validation, split_counts, stratified_kfold, FoldAssignment, FoldCounts, FoldView, Sample,
    SplitCountTable, SplitError, SplitPlan,
};
