//! Fine-tuning of a backbone on one fold and inference with the result.

use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use candle_core::{DType, Device, Tensor, Var, D};
use cxr_core::{seed, Raster, TransformDescriptor};
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::backbone::{BackboneName, BackboneSpec, PretrainCorpus};
use crate::catalog::{standardize, BackboneInputSpec, CatalogError, ModelInput};
use crate::nn::layers::{apply_calibration, Init, ParamKind};
use crate::nn::{Ctx, Mode, Network, ParamStore};

#[derive(Debug, thiserror::Error)]
pub enum TrainError {
    #[error("no pretrained weights for {backbone}: {source_desc}")]
    MissingWeights {
        backbone: BackboneName,
        source_desc: String,
    },
    #[error("pretrained weights for {backbone} from {path} do not fit the architecture: {detail}")]
    WeightMismatch {
        backbone: BackboneName,
        path: PathBuf,
        detail: String,
    },
    #[error("non-finite training loss at epoch {epoch}, batch {batch}")]
    NonFiniteLoss { epoch: usize, batch: usize },
    #[error("invalid training configuration: {0}")]
    InvalidConfig(String),
    #[error("{0} set is empty")]
    EmptyInput(&'static str),
    #[error("input is {found}x{found}, {backbone} expects {expected}x{expected}")]
    InputShape {
        backbone: BackboneName,
        expected: usize,
        found: usize,
    },
    #[error("model artifact {path}: {detail}")]
    Artifact { path: PathBuf, detail: String },
    #[error(transparent)]
    Catalog(#[from] CatalogError),
    #[error(transparent)]
    Augment(#[from] cxr_core::AugmentError),
    #[error(transparent)]
    Tensor(#[from] candle_core::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, TrainError>;

/// Where initial backbone weights come from.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WeightSource {
    /// Directory holding `<backbone>.safetensors` files with torchvision
    /// parameter names.
    Pretrained(PathBuf),
    /// Seeded random initialisation; for smoke runs only, never reported
    /// as transfer learning.
    RandomInit,
}

impl fmt::Display for WeightSource {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            WeightSource::Pretrained(dir) => write!(f, "pretrained weights in {}", dir.display()),
            WeightSource::RandomInit => f.write_str("random initialisation"),
        }
    }
}

/// What the initial weights of a built classifier actually were.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct WeightProvenance {
    pub pretrained: bool,
    /// Corpus the loaded weights were learned on; `None` without pretraining.
    pub pretrain_corpus: Option<PretrainCorpus>,
    pub source: String,
    pub note: Option<String>,
}

/// How batch-norm running statistics are produced for inference.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BnStatistics {
    /// Exponential running averages updated by each training batch.
    Running,
    /// Recomputed over the whole training set after every epoch.
    Population,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainingConfig {
    pub learning_rate: f64,
    pub momentum: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
    /// Train only the replaced classification layer.
    pub head_only: bool,
    pub bn_statistics: BnStatistics,
}

impl Default for TrainingConfig {
    fn default() -> Self {
        TrainingConfig {
            learning_rate: 1e-3,
            momentum: 0.9,
            batch_size: 16,
            epochs: 20,
            seed: 1,
            head_only: false,
            bn_statistics: BnStatistics::Population,
        }
    }
}

impl TrainingConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(TrainError::InvalidConfig(m.to_string()));
        if !(self.learning_rate.is_finite() && self.learning_rate >= 0.0) {
            return bad("learning_rate must be finite and non-negative");
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return bad("momentum must lie in [0, 1)");
        }
        if self.batch_size == 0 {
            return bad("batch_size must be positive");
        }
        if self.epochs == 0 {
            return bad("epochs must be at least 1");
        }
        Ok(())
    }
}

/// A backbone with a freshly sized head, plus the tensors it owns.
pub struct Classifier {
    pub spec: BackboneSpec,
    pub num_classes: usize,
    pub store: ParamStore,
    pub provenance: WeightProvenance,
    net: Box<dyn Network>,
}

impl fmt::Debug for Classifier {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Classifier")
            .field("backbone", &self.spec.name)
            .field("num_classes", &self.num_classes)
            .field("parameters", &self.store.parameter_count())
            .finish()
    }
}

impl Classifier {
    pub fn input_spec(&self) -> BackboneInputSpec {
        BackboneInputSpec::from(&self.spec)
    }

    pub fn network(&self) -> &dyn Network {
        self.net.as_ref()
    }

    /// Parameter names of the replaced classification layer.
    pub fn head_parameters(&self) -> Vec<String> {
        let prefix = format!("{}.", self.spec.head_location);
        self.store
            .names()
            .filter(|n| n.starts_with(&prefix))
            .map(str::to_string)
            .collect()
    }

    pub fn forward(&self, x: &Tensor, ctx: &mut Ctx) -> Result<Tensor> {
        Ok(self.net.forward(x, ctx)?)
    }
}

fn architecture(
    name: BackboneName,
    num_classes: usize,
    seed: u64,
) -> Result<(ParamStore, Box<dyn Network>)> {
    let mut store = ParamStore::default();
    let net = name.build(&mut Init::new(&mut store, seed), num_classes)?;
    Ok((store, net))
}

/// Builds `spec`'s architecture with a `num_classes`-way head initialised
/// from `seed` and loads every other tensor from `source`.
pub fn build_classifier(
    spec: &BackboneSpec,
    num_classes: usize,
    source: &WeightSource,
    seed: u64,
) -> Result<Classifier> {
    if !(2..=3).contains(&num_classes) {
        return Err(TrainError::InvalidConfig(format!(
            "num_classes must be 2 or 3, got {num_classes}"
        )));
    }
    let (store, net) = architecture(spec.name, num_classes, seed)?;
    let provenance = match source {
        WeightSource::RandomInit => WeightProvenance {
            pretrained: false,
            pretrain_corpus: None,
            source: source.to_string(),
            note: Some("random initialisation; not a transfer-learning result".into()),
        },
        WeightSource::Pretrained(dir) => {
            let primary = dir.join(spec.weight_file);
            let (path, corpus, note) = if primary.is_file() {
                (primary, spec.pretrain_corpus, None)
            } else if spec.name == BackboneName::Chexnet
                && dir.join("densenet121.safetensors").is_file()
            {
                (
                    dir.join("densenet121.safetensors"),
                    PretrainCorpus::ImageNet,
                    Some(
                        "chest X-ray weights unavailable; using general-image DenseNet-121 weights"
                            .to_string(),
                    ),
                )
            } else {
                return Err(TrainError::MissingWeights {
                    backbone: spec.name,
                    source_desc: format!("{} not found", primary.display()),
                });
            };
            load_backbone_weights(&store, spec, &path)?;
            if let Some(n) = &note {
                log::warn!("{}: {n}", spec.name);
            }
            WeightProvenance {
                pretrained: true,
                pretrain_corpus: Some(corpus),
                source: path.display().to_string(),
                note,
            }
        }
    };
    Ok(Classifier {
        spec: *spec,
        num_classes,
        store,
        provenance,
        net,
    })
}

/// Copies every non-head tensor of the store from a safetensors file.
fn load_backbone_weights(store: &ParamStore, spec: &BackboneSpec, path: &Path) -> Result<()> {
    let mismatch = |detail: String| TrainError::WeightMismatch {
        backbone: spec.name,
        path: path.to_path_buf(),
        detail,
    };
    let file = ParamStore::load_file(path).map_err(|e| mismatch(e.to_string()))?;
    let head = format!("{}.", spec.head_location);
    let mut values = BTreeMap::new();
    let mut missing = Vec::new();
    for (name, param) in store.iter() {
        if name.starts_with(&head) {
            continue;
        }
        match file.get(name) {
            Some(t) if t.dims() == param.var.dims() => {
                values.insert(name.to_string(), t.clone());
            }
            Some(t) => {
                return Err(mismatch(format!(
                    "{name} has shape {:?} in the file, {:?} in the model",
                    t.dims(),
                    param.var.dims()
                )))
            }
            None => missing.push(name.to_string()),
        }
    }
    if !missing.is_empty() {
        let shown: Vec<_> = missing.iter().take(5).cloned().collect();
        return Err(mismatch(format!(
            "{} tensors missing, e.g. {}",
            missing.len(),
            shown.join(", ")
        )));
    }
    store.restore(&values)?;
    Ok(())
}

/// One training or evaluation example: a cached [0, 1] grey image at the
/// backbone's input side and, for synthetic copies, the transform to apply.
#[derive(Debug, Clone)]
pub struct Example {
    pub id: String,
    pub gray: Arc<Raster>,
    pub label: usize,
    pub transform: Option<TransformDescriptor>,
}

impl Example {
    pub fn materialize(&self, spec: &BackboneInputSpec) -> Result<ModelInput> {
        let raster = match &self.transform {
            Some(t) => t.apply(&self.gray, 0.0)?,
            None => (*self.gray).clone(),
        };
        Ok(standardize(&raster, spec))
    }
}

/// Stacks inputs into the channel-major `(3, N, side, side)` layout.
pub fn batch_tensor(inputs: &[ModelInput]) -> Result<Tensor> {
    let Some(first) = inputs.first() else {
        return Err(TrainError::EmptyInput("batch"));
    };
    let side = first.side;
    let mut data = Vec::with_capacity(3 * inputs.len() * side * side);
    for c in 0..3 {
        for input in inputs {
            if input.side != side {
                return Err(TrainError::InvalidConfig(
                    "mixed input sizes in one batch".into(),
                ));
            }
            data.extend_from_slice(input.channel(c));
        }
    }
    Ok(Tensor::from_vec(
        data,
        (3, inputs.len(), side, side),
        &Device::Cpu,
    )?)
}

/// Mean categorical cross-entropy of `(N, K)` logits against class indices.
pub fn cross_entropy(logits: &Tensor, targets: &[usize]) -> Result<Tensor> {
    let n = targets.len();
    let idx = Tensor::from_vec(
        targets.iter().map(|&t| t as u32).collect::<Vec<_>>(),
        (n, 1),
        logits.device(),
    )?;
    let log_p = candle_nn::ops::log_softmax(logits, D::Minus1)?;
    Ok(log_p.gather(&idx, 1)?.mean_all()?.neg()?)
}

/// Softmax in double precision, one row per sample.
pub fn softmax_rows(logits: &Tensor) -> Result<Vec<Vec<f64>>> {
    let rows = logits.to_dtype(DType::F64)?.to_vec2::<f64>()?;
    Ok(rows
        .into_iter()
        .map(|row| {
            let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let exp: Vec<f64> = row.iter().map(|v| (v - max).exp()).collect();
            let sum: f64 = exp.iter().sum();
            exp.into_iter().map(|e| e / sum).collect()
        })
        .collect())
}

/// Index of the largest score; ties go to the lowest index.
pub fn argmax(scores: &[f64]) -> usize {
    let mut best = 0;
    for (i, &s) in scores.iter().enumerate() {
        if s > scores[best] {
            best = i;
        }
    }
    best
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochStats {
    pub epoch: usize,
    pub train_loss: f64,
    pub train_acc: f64,
    pub val_loss: f64,
    pub val_acc: f64,
}

pub const HISTORY_HEADER: &str = "epoch\ttrain_loss\ttrain_acc\tval_loss\tval_acc";

pub fn history_tsv(history: &[EpochStats]) -> String {
    let mut out = format!("{HISTORY_HEADER}\n");
    for h in history {
        out.push_str(&format!(
            "{}\t{}\t{}\t{}\t{}\n",
            h.epoch, h.train_loss, h.train_acc, h.val_loss, h.val_acc
        ));
    }
    out
}

/// A trained classifier for one fold with its learning curve.
#[derive(Debug)]
pub struct FoldModel {
    pub classifier: Classifier,
    pub fold: usize,
    pub history: Vec<EpochStats>,
    /// Epoch (1-based) whose parameters were kept.
    pub best_epoch: usize,
    pub config: TrainingConfig,
}

impl FoldModel {
    pub fn best_val_loss(&self) -> f64 {
        self.history[self.best_epoch - 1].val_loss
    }
}

fn eval_loss_acc(
    classifier: &Classifier,
    examples: &[Example],
    batch_size: usize,
) -> Result<(f64, f64)> {
    let spec = classifier.input_spec();
    let (mut loss, mut correct) = (0.0, 0usize);
    for chunk in examples.chunks(batch_size) {
        let inputs = chunk
            .iter()
            .map(|e| e.materialize(&spec))
            .collect::<Result<Vec<_>>>()?;
        let logits = classifier.forward(&batch_tensor(&inputs)?, &mut Ctx::eval())?;
        let targets: Vec<usize> = chunk.iter().map(|e| e.label).collect();
        loss +=
            f64::from(cross_entropy(&logits, &targets)?.to_scalar::<f32>()?) * chunk.len() as f64;
        for (p, &t) in softmax_rows(&logits)?.iter().zip(&targets) {
            correct += usize::from(argmax(p) == t);
        }
    }
    let n = examples.len() as f64;
    Ok((loss / n, correct as f64 / n))
}

/// Recomputes batch-norm running statistics over `examples`.
pub fn calibrate_batch_norm(
    classifier: &Classifier,
    examples: &[Example],
    batch_size: usize,
) -> Result<usize> {
    let spec = classifier.input_spec();
    let mut ctx = Ctx::new(Mode::Calibrate, 0);
    for chunk in examples.chunks(batch_size) {
        let inputs = chunk
            .iter()
            .map(|e| e.materialize(&spec))
            .collect::<Result<Vec<_>>>()?;
        classifier.forward(&batch_tensor(&inputs)?, &mut ctx)?;
    }
    Ok(apply_calibration(&classifier.store, &ctx)?)
}

/// Mini-batch SGD with momentum (`v ← βv + g`, `θ ← θ − αv`) on
/// cross-entropy for `config.epochs` epochs. The batch order is reshuffled
/// every epoch from the run seed. After each epoch the model is scored on
/// `val`; the parameters of the lowest validation loss are returned.
pub fn train_fold(
    classifier: Classifier,
    train: &[Example],
    val: &[Example],
    config: &TrainingConfig,
    fold: usize,
) -> Result<FoldModel> {
    config.validate()?;
    if train.is_empty() {
        return Err(TrainError::EmptyInput("training"));
    }
    if val.is_empty() {
        return Err(TrainError::EmptyInput("validation"));
    }
    let spec = classifier.input_spec();
    let head: Vec<String> = classifier.head_parameters();
    let trainable: Vec<Var> = classifier
        .store
        .iter()
        .filter(|(name, p)| {
            p.kind == ParamKind::Weight && (!config.head_only || head.iter().any(|h| h == name))
        })
        .map(|(_, p)| p.var.clone())
        .collect();
    let mut velocity: Vec<Option<Tensor>> = vec![None; trainable.len()];
    let originals: Vec<Example> = train
        .iter()
        .filter(|e| e.transform.is_none())
        .cloned()
        .collect();

    let mut history = Vec::with_capacity(config.epochs);
    let mut best: Option<(f64, usize, BTreeMap<String, Tensor>)> = None;
    let mut order: Vec<usize> = (0..train.len()).collect();
    for epoch in 1..=config.epochs {
        let mut rng = seed::rng(
            config.seed,
            &[seed::tag("batch-order"), fold as u64, epoch as u64],
        );
        order.sort_unstable();
        order.shuffle(&mut rng);
        let (mut loss_sum, mut correct) = (0.0, 0usize);
        for (b, chunk) in order.chunks(config.batch_size).enumerate() {
            let inputs = chunk
                .iter()
                .map(|&i| train[i].materialize(&spec))
                .collect::<Result<Vec<_>>>()?;
            let targets: Vec<usize> = chunk.iter().map(|&i| train[i].label).collect();
            let dropout_seed = seed::derive(
                config.seed,
                &[seed::tag("dropout"), fold as u64, epoch as u64, b as u64],
            );
            let mut ctx = Ctx::new(Mode::Train, dropout_seed);
            let logits = classifier.forward(&batch_tensor(&inputs)?, &mut ctx)?;
            let loss = cross_entropy(&logits, &targets)?;
            let value = f64::from(loss.to_scalar::<f32>()?);
            if !value.is_finite() {
                return Err(TrainError::NonFiniteLoss {
                    epoch,
                    batch: b + 1,
                });
            }
            loss_sum += value * chunk.len() as f64;
            for (p, &t) in softmax_rows(&logits)?.iter().zip(&targets) {
                correct += usize::from(argmax(p) == t);
            }
            let grads = loss.backward()?;
            for (var, v) in trainable.iter().zip(velocity.iter_mut()) {
                let Some(g) = grads.get(var) else { continue };
                let next = match v.take() {
                    Some(prev) => ((prev * config.momentum)? + g)?,
                    None => g.clone(),
                };
                var.set(&(var.as_tensor() - (&next * config.learning_rate)?)?)?;
                *v = Some(next);
            }
        }
        if config.bn_statistics == BnStatistics::Population {
            calibrate_batch_norm(&classifier, &originals, config.batch_size)?;
        }
        let (val_loss, val_acc) = eval_loss_acc(&classifier, val, config.batch_size)?;
        let stats = EpochStats {
            epoch,
            train_loss: loss_sum / train.len() as f64,
            train_acc: correct as f64 / train.len() as f64,
            val_loss,
            val_acc,
        };
        log::info!(
            "{} fold {fold} epoch {epoch}: train loss {:.4} acc {:.3}, val loss {:.4} acc {:.3}",
            classifier.spec.name,
            stats.train_loss,
            stats.train_acc,
            stats.val_loss,
            stats.val_acc
        );
        history.push(stats);
        if best.as_ref().is_none_or(|(l, _, _)| val_loss < *l) {
            best = Some((val_loss, epoch, classifier.store.snapshot()?));
        }
    }
    let (_, best_epoch, params) = best.expect("at least one epoch ran");
    classifier.store.restore(&params)?;
    Ok(FoldModel {
        classifier,
        fold,
        history,
        best_epoch,
        config: config.clone(),
    })
}

/// Class probabilities for already standardised inputs.
pub fn predict(
    classifier: &Classifier,
    inputs: &[ModelInput],
    batch_size: usize,
) -> Result<Vec<Vec<f64>>> {
    let expected = classifier.spec.input_side as usize;
    if let Some(bad) = inputs.iter().find(|i| i.side != expected) {
        return Err(TrainError::InputShape {
            backbone: classifier.spec.name,
            expected,
            found: bad.side,
        });
    }
    let mut out = Vec::with_capacity(inputs.len());
    for chunk in inputs.chunks(batch_size.max(1)) {
        let logits = classifier.forward(&batch_tensor(chunk)?, &mut Ctx::eval())?;
        out.extend(softmax_rows(&logits)?);
    }
    Ok(out)
}

/// Probabilities for cached examples (their transforms, if any, applied).
pub fn predict_examples(
    classifier: &Classifier,
    examples: &[Example],
    batch_size: usize,
) -> Result<Vec<Vec<f64>>> {
    let spec = classifier.input_spec();
    let mut out = Vec::with_capacity(examples.len());
    for chunk in examples.chunks(batch_size.max(1)) {
        let inputs = chunk
            .iter()
            .map(|e| e.materialize(&spec))
            .collect::<Result<Vec<_>>>()?;
        out.extend(predict(classifier, &inputs, chunk.len())?);
    }
    Ok(out)
}

/// Sidecar describing a saved fold model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelMetadata {
    pub backbone: BackboneName,
    pub fold: usize,
    pub num_classes: usize,
    pub config: TrainingConfig,
    pub best_epoch: usize,
    pub provenance: WeightProvenance,
    pub weights_file: String,
    pub weights_sha256: String,
    pub parameter_checksum: String,
    pub history_file: String,
}

pub const WEIGHTS_FILE: &str = "weights.safetensors";
pub const METADATA_FILE: &str = "metadata.json";
pub const HISTORY_FILE: &str = "history.tsv";

impl FoldModel {
    /// Writes weights, metadata sidecar and history into `dir`.
    pub fn save(&self, dir: &Path) -> Result<ModelMetadata> {
        fs::create_dir_all(dir)?;
        let weights = dir.join(WEIGHTS_FILE);
        self.classifier.store.save(&weights)?;
        fs::write(dir.join(HISTORY_FILE), history_tsv(&self.history))?;
        let meta = ModelMetadata {
            backbone: self.classifier.spec.name,
            fold: self.fold,
            num_classes: self.classifier.num_classes,
            config: self.config.clone(),
            best_epoch: self.best_epoch,
            provenance: self.classifier.provenance.clone(),
            weights_file: WEIGHTS_FILE.into(),
            weights_sha256: crate::catalog::sha256_file(&weights)?,
            parameter_checksum: self.classifier.store.checksum()?,
            history_file: HISTORY_FILE.into(),
        };
        let json = serde_json::to_string_pretty(&meta).expect("metadata serialises");
        fs::write(dir.join(METADATA_FILE), json + "\n")?;
        Ok(meta)
    }

    /// Rebuilds a saved fold model; the weight file must match its checksum.
    pub fn load(dir: &Path) -> Result<FoldModel> {
        let meta_path = dir.join(METADATA_FILE);
        let artifact = |detail: String| TrainError::Artifact {
            path: meta_path.clone(),
            detail,
        };
        let meta: ModelMetadata = serde_json::from_str(&fs::read_to_string(&meta_path)?)
            .map_err(|e| artifact(e.to_string()))?;
        let weights = dir.join(&meta.weights_file);
        let sum = crate::catalog::sha256_file(&weights)?;
        if sum != meta.weights_sha256 {
            return Err(artifact(format!(
                "{} checksum {sum} differs from recorded {}",
                weights.display(),
                meta.weights_sha256
            )));
        }
        let (store, net) = architecture(meta.backbone, meta.num_classes, 0)?;
        store.restore(&ParamStore::load_file(&weights)?)?;
        let history =
            parse_history(&fs::read_to_string(dir.join(&meta.history_file))?).map_err(artifact)?;
        Ok(FoldModel {
            classifier: Classifier {
                spec: meta.backbone.spec(),
                num_classes: meta.num_classes,
                store,
                provenance: meta.provenance,
                net,
            },
            fold: meta.fold,
            history,
            best_epoch: meta.best_epoch,
            config: meta.config,
        })
    }
}

pub fn parse_history(text: &str) -> std::result::Result<Vec<EpochStats>, String> {
    let mut lines = text.lines();
    if lines.next() != Some(HISTORY_HEADER) {
        return Err("history header missing".into());
    }
    lines
        .filter(|l| !l.is_empty())
        .map(|l| {
            let f: Vec<&str> = l.split('\t').collect();
            if f.len() != 5 {
                return Err(format!("bad history row {l:?}"));
            }
            let num = |s: &str| s.parse::<f64>().map_err(|e| format!("{s:?}: {e}"));
            Ok(EpochStats {
                epoch: f[0].parse().map_err(|e| format!("{e}"))?,
                train_loss: num(f[1])?,
                train_acc: num(f[2])?,
                val_loss: num(f[3])?,
                val_acc: num(f[4])?,
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn argmax_ties_go_low() {
        assert_eq!(argmax(&[0.5, 0.5]), 0);
        assert_eq!(argmax(&[0.2, 0.4, 0.4]), 1);
    }

    #[test]
    fn softmax_rows_sum_to_one() {
        let t = Tensor::new(&[[1000f32, 0.0, -1000.0], [0.1, 0.2, 0.3]], &Device::Cpu).unwrap();
        for row in softmax_rows(&t).unwrap() {
            assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            assert!(row.iter().all(|&p| p >= 0.0));
        }
    }

    #[test]
    fn cross_entropy_of_uniform_logits_is_log_k() {
        let t = Tensor::zeros((4, 3), DType::F32, &Device::Cpu).unwrap();
        let l = cross_entropy(&t, &[0, 1, 2, 0])
            .unwrap()
            .to_scalar::<f32>()
            .unwrap();
        assert!((f64::from(l) - 3f64.ln()).abs() < 1e-6);
    }

    #[test]
    fn config_validation() {
        assert!(TrainingConfig::default().validate().is_ok());
        let bad = TrainingConfig {
            epochs: 0,
            ..TrainingConfig::default()
        };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn missing_weights_name_backbone_and_source() {
        let dir = std::env::temp_dir().join("cxr-no-weights-here");
        let err = build_classifier(
            &BackboneName::Squeezenet.spec(),
            2,
            &WeightSource::Pretrained(dir.clone()),
            0,
        )
        .unwrap_err();
        let msg = err.to_string();
        assert!(
            msg.contains("squeezenet") && msg.contains(&dir.display().to_string()),
            "{msg}"
        );
    }
}
