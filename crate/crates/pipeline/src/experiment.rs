//! One experiment arm end to end: catalog, split, augment, train every
//! backbone on every fold, evaluate, explain, and a checksummed report.
//!
//! Run directory layout:
//!
//! ```text
//! <output_dir>/<timestamp>-<scheme>-<aug|noaug>/
//!     manifest/  manifest.tsv, integrity.tsv
//!     splits/    plan.json, counts.txt
//!     aug/       <fold>/<class>/<derived_id>.png, <fold>/descriptors.tsv  (optional)
//!     models/    <backbone>/fold<i>/{weights.safetensors, metadata.json, history.tsv}
//!     metrics/   <backbone>/{metrics.txt, metrics.json, predictions.tsv, roc_<class>.tsv}
//!     explain/   <backbone>.png, <backbone>.tsv
//!     report/    run_config.toml, run_report.json
//! ```

use std::collections::{BTreeMap, HashMap};
use std::fmt::Write as _;
use std::fs;
use std::io;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Instant;

use cxr_core::{
    expand_training_fold, seed, AugmentationSpec, ClassAugmentation, ClassLabel, FoldExpansion,
    Raster, Scheme, SplitCountTable, SplitPlan,
};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::augmentation::materialize_fold;
use crate::backbone::BackboneName;
use crate::catalog::{
    balance_subsample, ingest_directory, load_gray, sha256_file, ClassLayout, Manifest,
};
use crate::explain::{layer_inventory, render_panel, resolve_layer, DEFAULT_PANEL_LAYERS};
use crate::report::{self, evaluate, Evaluation, Prediction};
use crate::splits::{
    plan_checksum, plan_splits, render_count_table, save_plan, DEFAULT_K,
    DEFAULT_VALIDATION_FRACTION,
};
use crate::trainer::{
    argmax, build_classifier, predict_examples, train_fold, Example, TrainingConfig,
    WeightProvenance, WeightSource,
};

pub const REPORT_FILE: &str = "report/run_report.json";
pub const CONFIG_SNAPSHOT_FILE: &str = "report/run_config.toml";
pub const LOCK_FILE: &str = ".lock";

#[derive(Debug, thiserror::Error)]
pub enum ExperimentError {
    #[error("invalid run configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Catalog(#[from] crate::catalog::CatalogError),
    #[error(transparent)]
    Split(#[from] cxr_core::SplitError),
    #[error(transparent)]
    Augment(#[from] cxr_core::AugmentError),
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: io::Error },
    #[error("run directory {0} is locked by another process")]
    Locked(PathBuf),
    #[error("{0}")]
    Artifact(String),
}

fn io_at(path: &Path) -> impl FnOnce(io::Error) -> ExperimentError + '_ {
    move |source| ExperimentError::Io {
        path: path.to_path_buf(),
        source,
    }
}

/// When the corpus is subsampled to equal class sizes before splitting.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BalancePolicy {
    /// Balance exactly when augmentation is off.
    Auto,
    Always,
    Never,
}

/// Augmentation settings as written in a config file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AugmentationConfig {
    pub rotation_degrees: Vec<f64>,
    pub translation_x: (f64, f64),
    pub translation_y: (f64, f64),
    /// Synthetic copies per original, keyed by class (`COVID19`, `NORMAL`,
    /// `VIRAL_PNEUMONIA`).
    pub copies: BTreeMap<String, u32>,
    /// Classes whose copies are rotated before being shifted.
    pub rotate: Vec<String>,
    pub fill_value: f32,
    /// Also write every synthetic image under `aug/`.
    pub materialize: bool,
}

impl Default for AugmentationConfig {
    fn default() -> Self {
        let spec = AugmentationSpec::default();
        AugmentationConfig {
            rotation_degrees: spec.rotation_degrees.clone(),
            translation_x: spec.translation_x,
            translation_y: spec.translation_y,
            copies: spec
                .per_class
                .iter()
                .map(|(l, c)| (l.as_str().to_string(), c.copies))
                .collect(),
            rotate: spec
                .per_class
                .iter()
                .filter(|(_, c)| c.rotate)
                .map(|(l, _)| l.as_str().to_string())
                .collect(),
            fill_value: spec.fill_value,
            materialize: false,
        }
    }
}

impl AugmentationConfig {
    /// The augmentation spec, seeded from the run's master seed.
    pub fn to_spec(&self, master_seed: u64) -> Result<AugmentationSpec, ExperimentError> {
        let parse = |s: &str| {
            s.parse::<ClassLabel>()
                .map_err(|e| ExperimentError::Config(format!("augmentation: {e}")))
        };
        let mut per_class = BTreeMap::new();
        for (name, &copies) in &self.copies {
            per_class.insert(
                parse(name)?,
                ClassAugmentation {
                    copies,
                    rotate: false,
                },
            );
        }
        for name in &self.rotate {
            let label = parse(name)?;
            per_class
                .entry(label)
                .or_insert(ClassAugmentation {
                    copies: 0,
                    rotate: false,
                })
                .rotate = true;
        }
        let spec = AugmentationSpec {
            rotation_degrees: self.rotation_degrees.clone(),
            translation_x: self.translation_x,
            translation_y: self.translation_y,
            per_class,
            fill_value: self.fill_value,
            seed: seed::derive(master_seed, &[seed::tag("augment")]),
        };
        spec.validate()?;
        Ok(spec)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExplainConfig {
    pub enabled: bool,
    /// Layer names or `#n` convolution ordinals.
    pub layers: Vec<String>,
    /// Fold whose model is visualised.
    pub fold: usize,
}

impl Default for ExplainConfig {
    fn default() -> Self {
        ExplainConfig {
            enabled: true,
            layers: DEFAULT_PANEL_LAYERS.iter().map(|s| s.to_string()).collect(),
            fold: 0,
        }
    }
}

/// Everything one experiment arm needs. Defaults reproduce the reference
/// protocol: five folds, 10 % validation, SGD with α = 1e-3, β = 0.9,
/// batches of 16 for 20 epochs, ±5/10/15° rotations and ±5 % shifts with
/// six COVID-19 copies and one copy otherwise.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub corpus_root: PathBuf,
    pub output_dir: PathBuf,
    pub scheme: Scheme,
    pub augment: bool,
    pub backbones: Vec<BackboneName>,
    pub k: usize,
    /// Master seed for balancing, splitting, augmentation and head init.
    pub seed: u64,
    pub validation_fraction: f64,
    pub balance: BalancePolicy,
    /// Images per class after balancing; the smallest class size if unset.
    pub balance_count: Option<usize>,
    pub weights: WeightSource,
    pub augmentation: AugmentationConfig,
    pub training: TrainingConfig,
    pub explain: ExplainConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            corpus_root: PathBuf::from("corpus"),
            output_dir: PathBuf::from("runs"),
            scheme: Scheme::ThreeClass,
            augment: true,
            backbones: BackboneName::ALL.to_vec(),
            k: DEFAULT_K,
            seed: 1,
            validation_fraction: DEFAULT_VALIDATION_FRACTION,
            balance: BalancePolicy::Auto,
            balance_count: None,
            weights: WeightSource::Pretrained(PathBuf::from("weights")),
            augmentation: AugmentationConfig::default(),
            training: TrainingConfig::default(),
            explain: ExplainConfig::default(),
        }
    }
}

impl RunConfig {
    /// Parses a TOML config. Relative paths are taken relative to the
    /// config file's directory.
    pub fn load(path: &Path) -> Result<RunConfig, ExperimentError> {
        let text = fs::read_to_string(path).map_err(io_at(path))?;
        let mut config: RunConfig = toml::from_str(&text)
            .map_err(|e| ExperimentError::Config(format!("{}: {e}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new("."));
        let absolutize = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        absolutize(&mut config.corpus_root);
        absolutize(&mut config.output_dir);
        if let WeightSource::Pretrained(dir) = &mut config.weights {
            absolutize(dir);
        }
        Ok(config)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("run configs serialise")
    }

    pub fn validate(&self) -> Result<(), ExperimentError> {
        let bad = |m: String| Err(ExperimentError::Config(m));
        if !self.corpus_root.is_dir() {
            return bad(format!(
                "corpus_root {} is not a directory",
                self.corpus_root.display()
            ));
        }
        if self.k < 2 {
            return bad(format!("k must be at least 2, got {}", self.k));
        }
        if !(self.validation_fraction > 0.0 && self.validation_fraction < 1.0) {
            return bad(format!(
                "validation_fraction must lie in (0, 1), got {}",
                self.validation_fraction
            ));
        }
        if self.explain.enabled && self.explain.fold >= self.k {
            return bad(format!(
                "explain.fold {} is not below k = {}",
                self.explain.fold, self.k
            ));
        }
        self.training
            .validate()
            .map_err(|e| ExperimentError::Config(e.to_string()))?;
        self.augmentation.to_spec(self.seed)?;
        Ok(())
    }

    pub fn balances(&self) -> bool {
        match self.balance {
            BalancePolicy::Auto => !self.augment,
            BalancePolicy::Always => true,
            BalancePolicy::Never => false,
        }
    }

    /// Directory name of a run started at `timestamp`.
    pub fn run_name(&self, timestamp: &str) -> String {
        format!(
            "{timestamp}-{}-{}",
            self.scheme.as_str().to_ascii_lowercase().replace('_', ""),
            if self.augment { "aug" } else { "noaug" }
        )
    }
}

/// A file inside the run directory and its SHA-256.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Artifact {
    /// Path relative to the run directory, `/`-separated.
    pub path: String,
    pub sha256: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestSummary {
    pub file: String,
    pub sha256: String,
    /// Records ingested from the corpus, before restriction and balancing.
    pub ingested: usize,
    /// Records taking part in the experiment.
    pub records: usize,
    pub class_counts: BTreeMap<ClassLabel, usize>,
    pub balanced_to: Option<usize>,
    pub integrity_findings: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitSummary {
    pub file: String,
    pub sha256: String,
    /// Checksum of the canonical plan document.
    pub plan_checksum: String,
    pub k: usize,
    pub seed: u64,
    pub validation_fraction: f64,
    pub counts: SplitCountTable,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FoldSummary {
    pub fold: usize,
    pub train_originals: usize,
    pub train_total: usize,
    pub validation: usize,
    pub test: usize,
    pub best_epoch: usize,
    pub best_val_loss: f64,
    pub model_dir: String,
    pub history_file: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResolvedLayer {
    pub requested: String,
    pub name: Option<String>,
    pub ordinal: Option<usize>,
    pub shape: Option<(usize, usize, usize)>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PanelSummary {
    pub image: String,
    pub sidecar: String,
    pub fold: usize,
    pub layers: Vec<ResolvedLayer>,
    pub failed_cells: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BackboneStatus {
    Completed,
    Failed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BackboneReport {
    pub name: BackboneName,
    pub status: BackboneStatus,
    pub error: Option<String>,
    pub input_side: u32,
    pub normalization_mean: [f32; 3],
    pub normalization_std: [f32; 3],
    pub provenance: Option<WeightProvenance>,
    pub folds: Vec<FoldSummary>,
    pub evaluation: Option<Evaluation>,
    pub metrics_dir: Option<String>,
    pub explain: Option<PanelSummary>,
    pub wall_clock_secs: f64,
}

/// The self-describing record of one run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub tool_version: String,
    pub created_at: String,
    pub run_name: String,
    pub scheme: Scheme,
    pub augment: bool,
    pub config: RunConfig,
    pub manifest: ManifestSummary,
    pub split: SplitSummary,
    pub backbones: Vec<BackboneReport>,
    pub warnings: Vec<String>,
    /// Every file written by the run, except this report and the lock.
    pub artifacts: Vec<Artifact>,
}

impl RunReport {
    pub fn failed(&self) -> Vec<BackboneName> {
        self.backbones
            .iter()
            .filter(|b| b.status == BackboneStatus::Failed)
            .map(|b| b.name)
            .collect()
    }
}

/// Result of a completed (not dry) run.
#[derive(Debug)]
pub struct RunOutcome {
    pub run_dir: PathBuf,
    pub report: RunReport,
}

/// Corpus, plan and expansions: everything decided before training.
#[derive(Debug)]
pub struct Plan {
    pub ingested: Manifest,
    pub integrity: crate::catalog::IntegrityReport,
    pub manifest: Manifest,
    pub balanced_to: Option<usize>,
    pub split: SplitPlan,
    pub counts: SplitCountTable,
    pub expansions: Vec<FoldExpansion>,
    pub augmentation: AugmentationSpec,
    pub warnings: Vec<String>,
}

/// Ingests the corpus and fixes the folds and synthetic copies.
pub fn plan(config: &RunConfig) -> Result<Plan, ExperimentError> {
    config.validate()?;
    let mut warnings = Vec::new();
    let layout = ClassLayout::detect(&config.corpus_root)?;
    let ingest = ingest_directory(&config.corpus_root, &layout)?;
    let restricted = ingest.manifest.restrict(config.scheme);
    let (manifest, balanced_to) = if config.balances() {
        let smallest = config
            .scheme
            .classes()
            .iter()
            .map(|c| restricted.class_counts()[c])
            .min()
            .unwrap_or(0);
        let n = config.balance_count.unwrap_or(smallest);
        (
            balance_subsample(
                &restricted,
                n,
                seed::derive(config.seed, &[seed::tag("balance")]),
            )?,
            Some(n),
        )
    } else {
        (restricted, None)
    };
    let split = plan_splits(
        &manifest,
        config.scheme,
        config.k,
        config.seed,
        config.validation_fraction,
    )?;
    let mut counts = cxr_core::split_counts(&split);
    let augmentation = config.augmentation.to_spec(config.seed)?;
    let mut expansions = Vec::new();
    if config.augment {
        for (label, c) in &augmentation.per_class {
            if c.copies > 0 && config.scheme.class_index(*label).is_none() {
                let w = format!(
                    "augmentation copies for {label} ignored: not in {}",
                    config.scheme
                );
                log::warn!("{w}");
                warnings.push(w);
            }
        }
        for fold in split.fold_views() {
            let e = expand_training_fold(fold, &augmentation)?;
            e.update_counts(&mut counts);
            expansions.push(e);
        }
    } else {
        for (c, class) in counts.classes.clone().into_iter().enumerate() {
            for fold in 0..counts.folds() {
                let train = counts.cells[c][fold].train;
                counts.set_augmented(class, fold, train);
            }
        }
    }
    Ok(Plan {
        ingested: ingest.manifest,
        integrity: ingest.report,
        manifest,
        balanced_to,
        split,
        counts,
        expansions,
        augmentation,
        warnings,
    })
}

/// Human-readable description of what a run would do.
pub fn describe_plan(config: &RunConfig, plan: &Plan) -> String {
    let mut out = String::new();
    let w = &mut out;
    writeln!(
        w,
        "Corpus: {} ({} images ingested)",
        config.corpus_root.display(),
        plan.ingested.len()
    )
    .ok();
    writeln!(
        w,
        "Scheme: {}   augmentation: {}",
        config.scheme,
        if config.augment { "on" } else { "off" }
    )
    .ok();
    match plan.balanced_to {
        Some(n) => writeln!(
            w,
            "Balanced to {n} images per class ({} total)",
            plan.manifest.len()
        )
        .ok(),
        None => writeln!(w, "Unbalanced: {} images", plan.manifest.len()).ok(),
    };
    writeln!(w, "\n{}", render_count_table(&plan.split, &plan.counts)).ok();
    writeln!(w, "Backbones:").ok();
    for b in &config.backbones {
        let s = b.spec();
        writeln!(
            w,
            "  {:<12} input {}x{}  weights: {}",
            b.display_name(),
            s.input_side,
            s.input_side,
            config.weights
        )
        .ok();
    }
    writeln!(
        w,
        "\nStages: catalog -> split -> augment -> train {} backbone(s) x {} folds x {} epochs -> evaluate -> explain -> report",
        config.backbones.len(),
        config.k,
        config.training.epochs
    )
    .ok();
    writeln!(w, "Output: {}", config.output_dir.display()).ok();
    out
}

fn relative(run_dir: &Path, path: &Path) -> String {
    path.strip_prefix(run_dir)
        .unwrap_or(path)
        .to_string_lossy()
        .replace('\\', "/")
}

fn write_file(path: &Path, contents: impl AsRef<[u8]>) -> Result<(), ExperimentError> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(io_at(dir))?;
    }
    fs::write(path, contents).map_err(io_at(path))
}

/// Holds the run directory's lock file; removed on drop.
struct RunLock(PathBuf);

impl RunLock {
    fn acquire(run_dir: &Path) -> Result<RunLock, ExperimentError> {
        let path = run_dir.join(LOCK_FILE);
        match fs::OpenOptions::new()
            .write(true)
            .create_new(true)
            .open(&path)
        {
            Ok(mut f) => {
                use std::io::Write;
                writeln!(f, "{}", std::process::id()).map_err(io_at(&path))?;
                Ok(RunLock(path))
            }
            Err(e) if e.kind() == io::ErrorKind::AlreadyExists => {
                Err(ExperimentError::Locked(run_dir.to_path_buf()))
            }
            Err(e) => Err(io_at(&path)(e)),
        }
    }
}

impl Drop for RunLock {
    fn drop(&mut self) {
        let _ = fs::remove_file(&self.0);
    }
}

fn create_run_dir(config: &RunConfig) -> Result<PathBuf, ExperimentError> {
    fs::create_dir_all(&config.output_dir).map_err(io_at(&config.output_dir))?;
    let stamp = chrono::Utc::now().format("%Y%m%dT%H%M%SZ").to_string();
    let base = config.run_name(&stamp);
    for attempt in 0.. {
        let name = if attempt == 0 {
            base.clone()
        } else {
            format!("{base}-{}", attempt + 1)
        };
        let dir = config.output_dir.join(name);
        match fs::create_dir(&dir) {
            Ok(()) => return Ok(dir),
            Err(e) if e.kind() == io::ErrorKind::AlreadyExists => continue,
            Err(e) => return Err(io_at(&dir)(e)),
        }
    }
    unreachable!("the attempt counter is unbounded")
}

/// Grey [0, 1] rasters at one input side, keyed by record id.
fn load_rasters(
    manifest: &Manifest,
    side: u32,
) -> Result<HashMap<String, Arc<Raster>>, crate::catalog::CatalogError> {
    manifest
        .records
        .par_iter()
        .map(|r| Ok((r.record_id.clone(), Arc::new(load_gray(r, side)?))))
        .collect()
}

struct BackboneRun<'a> {
    config: &'a RunConfig,
    plan: &'a Plan,
    run_dir: &'a Path,
    rasters: &'a HashMap<String, Arc<Raster>>,
}

impl BackboneRun<'_> {
    fn example(&self, id: &str) -> Example {
        let label = self.plan.split.label_of(id).expect("plan ids are labelled");
        Example {
            id: id.to_string(),
            gray: self.rasters[id].clone(),
            label: self
                .config
                .scheme
                .class_index(label)
                .expect("label in scheme"),
            transform: None,
        }
    }

    fn run(&self, name: BackboneName, report: &mut BackboneReport) -> Result<(), String> {
        let scheme = self.config.scheme;
        let spec = name.spec();
        let mut predictions = Vec::new();
        let mut explain_model = None;
        for fold in self.plan.split.fold_views() {
            let i = fold.index;
            let mut train: Vec<Example> = fold.train().iter().map(|id| self.example(id)).collect();
            let originals = train.len();
            if let Some(expansion) = self.plan.expansions.get(i) {
                for r in &expansion.records {
                    train.push(Example {
                        id: r.derived_id.clone(),
                        gray: self.rasters[&r.parent_record_id].clone(),
                        label: scheme.class_index(r.label).expect("label in scheme"),
                        transform: Some(r.transform),
                    });
                }
            }
            let val: Vec<Example> = fold
                .validation()
                .iter()
                .map(|id| self.example(id))
                .collect();
            let test: Vec<Example> = fold.test().iter().map(|id| self.example(id)).collect();
            let head_seed = seed::derive(self.config.seed, &[seed::tag("head"), i as u64]);
            let fail = |stage: &str, e: &dyn std::fmt::Display| format!("fold {i} {stage}: {e}");
            let classifier =
                build_classifier(&spec, scheme.num_classes(), &self.config.weights, head_seed)
                    .map_err(|e| fail("build", &e))?;
            report
                .provenance
                .get_or_insert_with(|| classifier.provenance.clone());
            let model = train_fold(classifier, &train, &val, &self.config.training, i)
                .map_err(|e| fail("training", &e))?;
            let model_dir = self
                .run_dir
                .join("models")
                .join(name.as_str())
                .join(format!("fold{i}"));
            model.save(&model_dir).map_err(|e| fail("saving", &e))?;
            let probs = predict_examples(&model.classifier, &test, self.config.training.batch_size)
                .map_err(|e| fail("prediction", &e))?;
            for (e, p) in test.iter().zip(probs) {
                predictions.push(Prediction {
                    record_id: e.id.clone(),
                    fold: i,
                    truth: e.label,
                    predicted: argmax(&p),
                    probabilities: p,
                });
            }
            report.folds.push(FoldSummary {
                fold: i,
                train_originals: originals,
                train_total: train.len(),
                validation: val.len(),
                test: test.len(),
                best_epoch: model.best_epoch,
                best_val_loss: model.best_val_loss(),
                model_dir: relative(self.run_dir, &model_dir),
                history_file: relative(self.run_dir, &model_dir.join(crate::trainer::HISTORY_FILE)),
            });
            if self.config.explain.enabled && i == self.config.explain.fold {
                explain_model = Some(model);
            }
        }

        let (evaluation, roc) = evaluate(scheme, &predictions).map_err(|e| e.to_string())?;
        let metrics_dir = self.run_dir.join("metrics").join(name.as_str());
        let write = |file: &str, text: String| {
            write_file(&metrics_dir.join(file), text).map_err(|e| e.to_string())
        };
        write(
            report::PREDICTIONS_FILE,
            report::predictions_tsv(scheme, &predictions),
        )?;
        write(
            report::METRICS_TEXT_FILE,
            report::metrics_text(name.display_name(), &evaluation),
        )?;
        write(
            "metrics.json",
            serde_json::to_string_pretty(&evaluation).expect("evaluations serialise") + "\n",
        )?;
        for curve in &roc.per_class {
            let class = scheme.classes()[curve.positive_class.expect("per-class curve")];
            write(
                &format!("roc_{}.tsv", report::slug(class.display_name())),
                report::roc_tsv(curve),
            )?;
        }
        if let Some(micro) = &roc.micro {
            write("roc_micro.tsv", report::roc_tsv(micro))?;
        }
        report.metrics_dir = Some(relative(self.run_dir, &metrics_dir));
        report.evaluation = Some(evaluation);

        if let Some(model) = explain_model {
            report.explain = self
                .explain(name, &model)
                .map_err(|e| format!("explain: {e}"))?;
        }
        Ok(())
    }

    /// Panel of the first test record of every class in the chosen fold.
    fn explain(
        &self,
        name: BackboneName,
        model: &crate::trainer::FoldModel,
    ) -> Result<Option<PanelSummary>, crate::explain::ExplainError> {
        let fold = self.plan.split.fold(self.config.explain.fold);
        let index = self.plan.manifest.index();
        let rows: Vec<(ClassLabel, &crate::catalog::ImageRecord)> = self
            .config
            .scheme
            .classes()
            .iter()
            .filter_map(|&class| {
                fold.test()
                    .iter()
                    .find(|id| fold.label(id) == Some(class))
                    .map(|id| (class, index[id.as_str()]))
            })
            .collect();
        if rows.is_empty() {
            return Ok(None);
        }
        let inventory = layer_inventory(&model.classifier)?;
        let layers = self
            .config
            .explain
            .layers
            .iter()
            .map(|requested| match resolve_layer(&inventory, requested) {
                Ok(l) => ResolvedLayer {
                    requested: requested.clone(),
                    name: Some(l.name.clone()),
                    ordinal: Some(l.ordinal),
                    shape: Some((l.channels, l.height, l.width)),
                },
                Err(_) => ResolvedLayer {
                    requested: requested.clone(),
                    name: None,
                    ordinal: None,
                    shape: None,
                },
            })
            .collect();
        let png = self
            .run_dir
            .join("explain")
            .join(format!("{}.png", name.as_str()));
        let panel = render_panel(&model.classifier, &rows, &self.config.explain.layers, &png)?;
        Ok(Some(PanelSummary {
            image: relative(self.run_dir, &panel.image_path),
            sidecar: relative(self.run_dir, &panel.sidecar_path),
            fold: self.config.explain.fold,
            layers,
            failed_cells: panel.cells.iter().filter(|c| c.error.is_some()).count(),
        }))
    }
}

/// Lists every regular file of the run except the report and the lock.
fn collect_artifacts(run_dir: &Path) -> Result<Vec<Artifact>, ExperimentError> {
    let mut out = Vec::new();
    for entry in walkdir::WalkDir::new(run_dir).sort_by_file_name() {
        let entry = entry.map_err(|e| io_at(run_dir)(e.into()))?;
        if !entry.file_type().is_file() {
            continue;
        }
        let rel = relative(run_dir, entry.path());
        if rel == REPORT_FILE || rel == LOCK_FILE {
            continue;
        }
        out.push(Artifact {
            sha256: sha256_file(entry.path()).map_err(io_at(entry.path()))?,
            path: rel,
        });
    }
    Ok(out)
}

/// Runs every stage and writes the run directory. Backbone failures are
/// recorded in the report and do not stop the other backbones.
pub fn run_experiment(config: &RunConfig) -> Result<RunOutcome, ExperimentError> {
    let plan = plan(config)?;
    let mut warnings = plan.warnings.clone();
    if config.backbones.is_empty() {
        let w = "no backbones configured; nothing is trained".to_string();
        log::warn!("{w}");
        warnings.push(w);
    }
    if config.weights == WeightSource::RandomInit {
        warnings.push(
            "backbones start from random weights: results are not transfer-learning results".into(),
        );
    }
    let run_dir = create_run_dir(config)?;
    let _lock = RunLock::acquire(&run_dir)?;
    log::info!("run directory {}", run_dir.display());

    let manifest_path = run_dir.join("manifest/manifest.tsv");
    write_file(&manifest_path, plan.manifest.to_tsv())?;
    write_file(
        &run_dir.join("manifest/integrity.tsv"),
        plan.integrity.to_text(),
    )?;
    let plan_path = run_dir.join("splits/plan.json");
    fs::create_dir_all(run_dir.join("splits")).map_err(io_at(&run_dir))?;
    save_plan(&plan.split, &plan_path).map_err(|e| ExperimentError::Artifact(e.to_string()))?;
    write_file(
        &run_dir.join("splits/counts.txt"),
        render_count_table(&plan.split, &plan.counts),
    )?;
    write_file(&run_dir.join(CONFIG_SNAPSHOT_FILE), config.to_toml())?;
    if config.augment && config.augmentation.materialize {
        let side = config
            .backbones
            .first()
            .map_or(224, |b| b.spec().input_side);
        for e in &plan.expansions {
            materialize_fold(
                e,
                &plan.manifest,
                &run_dir.join("aug"),
                side,
                plan.augmentation.fill_value,
            )
            .map_err(|e| ExperimentError::Artifact(e.to_string()))?;
        }
    }

    let mut backbones = Vec::new();
    let mut cache: Option<(u32, HashMap<String, Arc<Raster>>)> = None;
    for &name in &config.backbones {
        let spec = name.spec();
        let started = Instant::now();
        let mut report = BackboneReport {
            name,
            status: BackboneStatus::Completed,
            error: None,
            input_side: spec.input_side,
            normalization_mean: spec.mean,
            normalization_std: spec.std,
            provenance: None,
            folds: Vec::new(),
            evaluation: None,
            metrics_dir: None,
            explain: None,
            wall_clock_secs: 0.0,
        };
        if cache.as_ref().map(|(s, _)| *s) != Some(spec.input_side) {
            cache = None;
            match load_rasters(&plan.manifest, spec.input_side) {
                Ok(r) => cache = Some((spec.input_side, r)),
                Err(e) => {
                    report.status = BackboneStatus::Failed;
                    report.error = Some(e.to_string());
                }
            }
        }
        if let Some((_, rasters)) = &cache {
            let job = BackboneRun {
                config,
                plan: &plan,
                run_dir: &run_dir,
                rasters,
            };
            if let Err(e) = job.run(name, &mut report) {
                log::error!("{name} failed: {e}");
                report.status = BackboneStatus::Failed;
                report.error = Some(e);
            }
        }
        report.wall_clock_secs = started.elapsed().as_secs_f64();
        backbones.push(report);
    }

    let report = RunReport {
        tool_version: env!("CARGO_PKG_VERSION").to_string(),
        created_at: chrono::Utc::now().to_rfc3339_opts(chrono::SecondsFormat::Secs, true),
        run_name: run_dir
            .file_name()
            .map(|n| n.to_string_lossy().into_owned())
            .unwrap_or_default(),
        scheme: config.scheme,
        augment: config.augment,
        config: config.clone(),
        manifest: ManifestSummary {
            file: relative(&run_dir, &manifest_path),
            sha256: sha256_file(&manifest_path).map_err(io_at(&manifest_path))?,
            ingested: plan.ingested.len(),
            records: plan.manifest.len(),
            class_counts: plan.manifest.class_counts(),
            balanced_to: plan.balanced_to,
            integrity_findings: plan.integrity.findings.len(),
        },
        split: SplitSummary {
            file: relative(&run_dir, &plan_path),
            sha256: sha256_file(&plan_path).map_err(io_at(&plan_path))?,
            plan_checksum: plan_checksum(&plan.split),
            k: plan.split.k,
            seed: plan.split.seed,
            validation_fraction: config.validation_fraction,
            counts: plan.counts.clone(),
        },
        backbones,
        warnings,
        artifacts: collect_artifacts(&run_dir)?,
    };
    let report_path = run_dir.join(REPORT_FILE);
    write_file(
        &report_path,
        serde_json::to_string_pretty(&report).expect("reports serialise") + "\n",
    )?;
    Ok(RunOutcome { run_dir, report })
}

#[derive(Debug, thiserror::Error)]
pub enum ValidationError {
    #[error("{path}: {detail}")]
    Unreadable { path: PathBuf, detail: String },
    #[error("{path}: listed in the run report but missing")]
    Missing { path: PathBuf },
    #[error("{path}: checksum {found} differs from recorded {recorded}")]
    Checksum {
        path: PathBuf,
        found: String,
        recorded: String,
    },
}

/// Loads a run's report and checks every listed artifact against its
/// recorded checksum.
pub fn validate_run(run_dir: &Path) -> Result<RunReport, ValidationError> {
    let path = run_dir.join(REPORT_FILE);
    let unreadable = |detail: String| ValidationError::Unreadable {
        path: path.clone(),
        detail,
    };
    let text = fs::read_to_string(&path).map_err(|e| unreadable(e.to_string()))?;
    let report: RunReport = serde_json::from_str(&text).map_err(|e| unreadable(e.to_string()))?;
    for a in &report.artifacts {
        let file = run_dir.join(&a.path);
        if !file.is_file() {
            return Err(ValidationError::Missing { path: file });
        }
        let found = sha256_file(&file).map_err(|e| ValidationError::Unreadable {
            path: file.clone(),
            detail: e.to_string(),
        })?;
        if found != a.sha256 {
            return Err(ValidationError::Checksum {
                path: file,
                found,
                recorded: a.sha256.clone(),
            });
        }
    }
    Ok(report)
}
