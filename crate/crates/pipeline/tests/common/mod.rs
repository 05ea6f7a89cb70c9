//! Helpers shared by the pipeline integration tests.
#![allow(dead_code)]

use std::sync::Arc;

use candle_core::Tensor;
use cxr_core::{ClassLabel, Scheme};
use cxr_pipeline::backbone::BackboneName;
use cxr_pipeline::catalog::gray_to_raster;
use cxr_pipeline::nn::Ctx;
use cxr_pipeline::toy::toy_image;
use cxr_pipeline::trainer::{
    argmax, batch_tensor, build_classifier, cross_entropy, predict_examples, train_fold,
    Classifier, Example, TrainingConfig, WeightSource,
};

/// In-memory toy examples: `per_class` images of every class of `scheme`,
/// starting at image index `first`.
pub fn toy_examples(
    scheme: Scheme,
    per_class: usize,
    first: usize,
    seed: u64,
    side: u32,
) -> Vec<Example> {
    let mut out = Vec::new();
    for &class in scheme.classes() {
        for i in first..first + per_class {
            out.push(Example {
                id: format!("{}-{i}", class.as_str()),
                gray: Arc::new(gray_to_raster(&toy_image(class, i, seed, side))),
                label: scheme.class_index(class).unwrap(),
                transform: None,
            });
        }
    }
    out
}

pub fn labels_of(examples: &[Example]) -> Vec<usize> {
    examples.iter().map(|e| e.label).collect()
}

pub fn accuracy(classifier: &Classifier, examples: &[Example]) -> f64 {
    let probs = predict_examples(classifier, examples, 16).unwrap();
    let correct = probs
        .iter()
        .zip(examples)
        .filter(|(p, e)| argmax(p) == e.label)
        .count();
    correct as f64 / examples.len() as f64
}

/// Mean cross-entropy of a linear head over fixed features, in f64.
fn head_loss(features: &[Vec<f64>], targets: &[usize], w: &[f64], b: &[f64]) -> f64 {
    let k = b.len();
    let d = features[0].len();
    let mut total = 0.0;
    for (x, &t) in features.iter().zip(targets) {
        let z: Vec<f64> = (0..k)
            .map(|c| b[c] + (0..d).map(|j| w[c * d + j] * x[j]).sum::<f64>())
            .collect();
        let m = z.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let lse = m + z.iter().map(|v| (v - m).exp()).sum::<f64>().ln();
        total += lse - z[t];
    }
    total / features.len() as f64
}

#[derive(Debug)]
pub struct GradCheck {
    /// max |autograd − finite difference| / max |finite difference|,
    /// over weight and bias entries together.
    pub relative_error: f64,
    /// |network loss − loss rebuilt from captured head inputs|.
    pub loss_gap: f64,
    pub entries: usize,
}

/// Compares the autograd gradient of the loss with respect to the head
/// parameters against central differences of an f64 re-implementation of
/// the head applied to the captured head inputs.
pub fn head_gradient_check(classifier: &Classifier, examples: &[Example]) -> GradCheck {
    let spec = classifier.input_spec();
    let inputs: Vec<_> = examples
        .iter()
        .map(|e| e.materialize(&spec).unwrap())
        .collect();
    let x = batch_tensor(&inputs).unwrap();
    let head = classifier.spec.head_location;
    let mut ctx = Ctx::eval().capture(head);
    let logits = classifier.forward(&x, &mut ctx).unwrap();
    let targets = labels_of(examples);
    let loss = cross_entropy(&logits, &targets).unwrap();
    let grads = loss.backward().unwrap();

    let features: Vec<Vec<f64>> = ctx
        .take_captured()
        .expect("head input captured")
        .to_dtype(candle_core::DType::F64)
        .unwrap()
        .to_vec2()
        .unwrap();
    let param = |suffix: &str| {
        let p = classifier.store.get(&format!("{head}.{suffix}")).unwrap();
        let values: Vec<f64> = p
            .var
            .as_tensor()
            .flatten_all()
            .unwrap()
            .to_dtype(candle_core::DType::F64)
            .unwrap()
            .to_vec1()
            .unwrap();
        let grad: Vec<f64> = grads
            .get(p.var.as_tensor())
            .expect("head parameter has a gradient")
            .flatten_all()
            .unwrap()
            .to_dtype(candle_core::DType::F64)
            .unwrap()
            .to_vec1()
            .unwrap();
        (values, grad)
    };
    let (w, gw) = param("weight");
    let (b, gb) = param("bias");

    let network_loss = f64::from(loss.to_scalar::<f32>().unwrap());
    let loss_gap = (network_loss - head_loss(&features, &targets, &w, &b)).abs();

    let h = 1e-5;
    let mut numeric = Vec::with_capacity(w.len() + b.len());
    for i in 0..w.len() {
        let (mut up, mut down) = (w.clone(), w.clone());
        up[i] += h;
        down[i] -= h;
        numeric.push(
            (head_loss(&features, &targets, &up, &b) - head_loss(&features, &targets, &down, &b))
                / (2.0 * h),
        );
    }
    for i in 0..b.len() {
        let (mut up, mut down) = (b.clone(), b.clone());
        up[i] += h;
        down[i] -= h;
        numeric.push(
            (head_loss(&features, &targets, &w, &up) - head_loss(&features, &targets, &w, &down))
                / (2.0 * h),
        );
    }
    let analytic: Vec<f64> = gw.into_iter().chain(gb).collect();
    let scale = numeric.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let worst = analytic
        .iter()
        .zip(&numeric)
        .fold(0.0f64, |m, (a, n)| m.max((a - n).abs()));
    GradCheck {
        relative_error: worst / scale,
        loss_gap,
        entries: numeric.len(),
    }
}

pub const SMOKE_EPOCHS: usize = 5;

#[derive(Debug)]
pub struct SmokeRun {
    pub train_accuracy: f64,
    pub last_epoch_train_accuracy: f64,
    pub test_labels: Vec<usize>,
    pub test_probabilities: Vec<Vec<f64>>,
    pub parameter_checksum: String,
}

/// ResNet-18 from a seeded initialisation, 15 training, 5 validation and 5
/// test toy images per class, five epochs.
pub fn resnet18_smoke(seed: u64) -> SmokeRun {
    let side = BackboneName::Resnet18.spec().input_side;
    let scheme = Scheme::ThreeClass;
    let train = toy_examples(scheme, 15, 0, seed, side);
    let val = toy_examples(scheme, 5, 15, seed, side);
    let test = toy_examples(scheme, 5, 20, seed, side);
    let classifier = build_classifier(
        &BackboneName::Resnet18.spec(),
        scheme.num_classes(),
        &WeightSource::RandomInit,
        seed,
    )
    .unwrap();
    let config = TrainingConfig {
        epochs: SMOKE_EPOCHS,
        seed,
        ..TrainingConfig::default()
    };
    let model = train_fold(classifier, &train, &val, &config, 0).unwrap();
    let probs = predict_examples(&model.classifier, &test, 16).unwrap();
    SmokeRun {
        train_accuracy: accuracy(&model.classifier, &train),
        last_epoch_train_accuracy: model.history.last().unwrap().train_acc,
        test_labels: probs.iter().map(|p| argmax(p)).collect(),
        test_probabilities: probs,
        parameter_checksum: model.classifier.store.checksum().unwrap(),
    }
}

/// Builds a corpus label count list for the toy generator.
pub fn counts(scheme: Scheme, per_class: usize) -> Vec<(ClassLabel, usize)> {
    scheme.classes().iter().map(|&c| (c, per_class)).collect()
}

pub fn zeros(side: usize, n: usize) -> Tensor {
    Tensor::zeros(
        (3, n, side, side),
        candle_core::DType::F32,
        &candle_core::Device::Cpu,
    )
    .unwrap()
}
