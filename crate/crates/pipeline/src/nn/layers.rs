//! Parameter store, forward context and the layer types the backbones use.

use std::collections::BTreeMap;
use std::path::Path;

use candle_core::{bail, DType, Device, Result, Tensor, Var, D};
use cxr_core::seed;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use sha2::{Digest, Sha256};

use super::ops::{
    channel_moments, AvgPool2d, BatchNormTrain, Conv2dOp, Im2Col, MaxPool2d, Relu, Window,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ParamKind {
    /// Updated by the optimizer.
    Weight,
    /// Running statistics; updated by the forward pass only.
    Buffer,
}

#[derive(Debug, Clone)]
pub struct Param {
    pub var: Var,
    pub kind: ParamKind,
}

/// Every tensor a network owns, keyed by dotted path.
#[derive(Debug, Clone, Default)]
pub struct ParamStore {
    params: BTreeMap<String, Param>,
}

impl ParamStore {
    pub fn get(&self, name: &str) -> Option<&Param> {
        self.params.get(name)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Param)> {
        self.params.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.params.keys().map(String::as_str)
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn weights(&self) -> impl Iterator<Item = (&str, &Var)> {
        self.iter()
            .filter(|(_, p)| p.kind == ParamKind::Weight)
            .map(|(n, p)| (n, &p.var))
    }

    pub fn parameter_count(&self) -> usize {
        self.weights().map(|(_, v)| v.elem_count()).sum()
    }

    /// Detached copies of every tensor.
    pub fn snapshot(&self) -> Result<BTreeMap<String, Tensor>> {
        self.params
            .iter()
            .map(|(k, p)| Ok((k.clone(), p.var.as_tensor().copy()?.detach())))
            .collect()
    }

    /// Overwrites tensors named in `values`; names absent from the store are
    /// an error, names absent from `values` are left alone.
    pub fn restore(&self, values: &BTreeMap<String, Tensor>) -> Result<()> {
        for (name, value) in values {
            let Some(p) = self.params.get(name) else {
                bail!("unknown parameter {name}");
            };
            if p.var.shape() != value.shape() {
                bail!(
                    "parameter {name} has shape {:?}, value has {:?}",
                    p.var.shape(),
                    value.shape()
                );
            }
            p.var.set(&value.to_dtype(p.var.dtype())?)?;
        }
        Ok(())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let tensors: std::collections::HashMap<String, Tensor> = self
            .params
            .iter()
            .map(|(k, p)| (k.clone(), p.var.as_tensor().clone()))
            .collect();
        candle_core::safetensors::save(&tensors, path)
    }

    pub fn load_file(path: &Path) -> Result<BTreeMap<String, Tensor>> {
        Ok(candle_core::safetensors::load(path, &Device::Cpu)?
            .into_iter()
            .collect())
    }

    /// SHA-256 over names, shapes and little-endian values, in name order.
    pub fn checksum(&self) -> Result<String> {
        let mut h = Sha256::new();
        for (name, p) in &self.params {
            h.update(name.as_bytes());
            for d in p.var.dims() {
                h.update((*d as u64).to_le_bytes());
            }
            for v in p
                .var
                .as_tensor()
                .flatten_all()?
                .to_dtype(DType::F32)?
                .to_vec1::<f32>()?
            {
                h.update(v.to_le_bytes());
            }
        }
        Ok(hex::encode(h.finalize()))
    }
}

/// Initial value of a freshly created parameter.
#[derive(Debug, Clone, Copy)]
pub enum InitDist {
    /// N(0, 2 / fan_out), for convolutions followed by ReLU.
    KaimingNormalFanOut,
    /// U(-√(6 / fan_in), √(6 / fan_in)).
    KaimingUniformFanIn,
    /// U(-bound, bound).
    Uniform(f64),
    Normal(f64),
    Const(f64),
}

/// Registers parameters under a dotted prefix. Each tensor draws from its
/// own stream keyed by (seed, full name), so replacing one layer leaves the
/// initial values of every other layer untouched.
pub struct Init<'a> {
    store: &'a mut ParamStore,
    prefix: String,
    seed: u64,
    device: Device,
}

impl<'a> Init<'a> {
    pub fn new(store: &'a mut ParamStore, seed: u64) -> Self {
        Init {
            store,
            prefix: String::new(),
            seed,
            device: Device::Cpu,
        }
    }

    pub fn path(&self, name: &str) -> String {
        if self.prefix.is_empty() {
            name.to_string()
        } else {
            format!("{}.{name}", self.prefix)
        }
    }

    pub fn sub(&mut self, name: impl std::fmt::Display) -> Init<'_> {
        let prefix = self.path(&name.to_string());
        Init {
            store: self.store,
            prefix,
            seed: self.seed,
            device: self.device.clone(),
        }
    }

    pub fn prefix(&self) -> &str {
        &self.prefix
    }

    fn create(
        &mut self,
        name: &str,
        shape: &[usize],
        dist: InitDist,
        kind: ParamKind,
    ) -> Result<Var> {
        let full = self.path(name);
        let n: usize = shape.iter().product();
        let fan_out = if shape.len() > 1 {
            shape[0] * shape[2..].iter().product::<usize>()
        } else {
            n
        };
        let fan_in = if shape.len() > 1 { n / shape[0] } else { n };
        let mut rng: ChaCha8Rng = seed::rng(self.seed, &[seed::tag(&full)]);
        let values: Vec<f32> = match dist {
            InitDist::Const(c) => vec![c as f32; n],
            InitDist::Normal(std) => (0..n)
                .map(|_| {
                    let z: f64 = StandardNormal.sample(&mut rng);
                    (z * std) as f32
                })
                .collect(),
            InitDist::KaimingNormalFanOut => {
                let std = (2.0 / fan_out.max(1) as f64).sqrt();
                (0..n)
                    .map(|_| {
                        let z: f64 = StandardNormal.sample(&mut rng);
                        (z * std) as f32
                    })
                    .collect()
            }
            InitDist::KaimingUniformFanIn => {
                let bound = (6.0 / fan_in.max(1) as f64).sqrt();
                (0..n)
                    .map(|_| rng.random_range(-bound..bound) as f32)
                    .collect()
            }
            InitDist::Uniform(bound) => (0..n)
                .map(|_| rng.random_range(-bound..bound) as f32)
                .collect(),
        };
        let var = Var::from_tensor(&Tensor::from_vec(values, shape, &self.device)?)?;
        if self
            .store
            .params
            .insert(
                full.clone(),
                Param {
                    var: var.clone(),
                    kind,
                },
            )
            .is_some()
        {
            bail!("parameter {full} registered twice");
        }
        Ok(var)
    }

    pub fn weight(&mut self, name: &str, shape: &[usize], dist: InitDist) -> Result<Var> {
        self.create(name, shape, dist, ParamKind::Weight)
    }

    pub fn buffer(&mut self, name: &str, shape: &[usize], value: f64) -> Result<Var> {
        self.create(name, shape, InitDist::Const(value), ParamKind::Buffer)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    /// Batch statistics, running averages updated, dropout active.
    Train,
    /// Running statistics, no dropout.
    Eval,
    /// Batch statistics used and pooled per layer; nothing else changes.
    Calibrate,
}

#[derive(Debug, Clone, Default)]
struct MomentSums {
    count: f64,
    sum: Vec<f64>,
    sum_sq: Vec<f64>,
}

/// Per-call forward state: mode, dropout stream, activation capture and
/// batch-norm calibration sums.
pub struct Ctx {
    pub mode: Mode,
    rng: ChaCha8Rng,
    capture: Option<String>,
    captured: Option<Tensor>,
    inventory: Option<Vec<(String, Vec<usize>)>>,
    moments: BTreeMap<String, MomentSums>,
}

impl Ctx {
    pub fn new(mode: Mode, dropout_seed: u64) -> Self {
        Ctx {
            mode,
            rng: seed::rng(dropout_seed, &[seed::tag("dropout")]),
            capture: None,
            captured: None,
            inventory: None,
            moments: BTreeMap::new(),
        }
    }

    pub fn eval() -> Self {
        Ctx::new(Mode::Eval, 0)
    }

    pub fn train(&self) -> bool {
        self.mode == Mode::Train
    }

    /// Keeps the output of the convolution named `layer` during the next
    /// forward; for a fully connected layer, the rows it receives instead.
    pub fn capture(mut self, layer: &str) -> Self {
        self.capture = Some(layer.to_string());
        self
    }

    pub fn take_captured(&mut self) -> Option<Tensor> {
        self.captured.take()
    }

    /// Records the name and channel-major output shape of every convolution.
    pub fn record_inventory(mut self) -> Self {
        self.inventory = Some(Vec::new());
        self
    }

    pub fn take_inventory(&mut self) -> Vec<(String, Vec<usize>)> {
        self.inventory.take().unwrap_or_default()
    }

    fn observe_input(&mut self, name: &str, t: &Tensor) {
        if self.capture.as_deref() == Some(name) {
            self.captured = Some(t.detach());
        }
    }

    fn observe(&mut self, name: &str, t: &Tensor) {
        if self.capture.as_deref() == Some(name) {
            self.captured = Some(t.detach());
        }
        if let Some(inv) = self.inventory.as_mut() {
            inv.push((name.to_string(), t.dims().to_vec()));
        }
    }

    /// Population mean and unbiased variance of every batch-norm input seen
    /// in calibration mode.
    pub fn calibrated_moments(&self) -> BTreeMap<String, (Vec<f64>, Vec<f64>)> {
        self.moments
            .iter()
            .map(|(name, m)| {
                let mean: Vec<f64> = m.sum.iter().map(|s| s / m.count).collect();
                let var = m
                    .sum_sq
                    .iter()
                    .zip(&mean)
                    .map(|(sq, mu)| {
                        let biased = (sq / m.count - mu * mu).max(0.0);
                        if m.count > 1.0 {
                            biased * m.count / (m.count - 1.0)
                        } else {
                            biased
                        }
                    })
                    .collect();
                (name.clone(), (mean, var))
            })
            .collect()
    }

    fn uniform_mask(&mut self, n: usize, keep: f64) -> Vec<f32> {
        let scale = (1.0 / keep) as f32;
        (0..n)
            .map(|_| {
                if self.rng.random::<f64>() < keep {
                    scale
                } else {
                    0.0
                }
            })
            .collect()
    }
}

/// 2-D convolution over channel-major activations.
#[derive(Debug, Clone)]
pub struct Conv2d {
    pub name: String,
    weight: Var,
    bias: Option<Var>,
    window: Window,
    groups: usize,
    in_channels: usize,
    out_channels: usize,
}

#[derive(Debug, Clone, Copy)]
pub struct ConvCfg {
    pub kernel: (usize, usize),
    pub stride: usize,
    pub padding: (usize, usize),
    pub groups: usize,
    pub bias: bool,
    pub init: InitDist,
}

impl ConvCfg {
    pub fn k(kernel: usize) -> Self {
        ConvCfg {
            kernel: (kernel, kernel),
            stride: 1,
            padding: (0, 0),
            groups: 1,
            bias: false,
            init: InitDist::KaimingNormalFanOut,
        }
    }

    pub fn rect(kh: usize, kw: usize) -> Self {
        ConvCfg {
            kernel: (kh, kw),
            ..ConvCfg::k(1)
        }
    }

    pub fn stride(mut self, s: usize) -> Self {
        self.stride = s;
        self
    }

    pub fn pad(mut self, p: usize) -> Self {
        self.padding = (p, p);
        self
    }

    pub fn pad2(mut self, ph: usize, pw: usize) -> Self {
        self.padding = (ph, pw);
        self
    }

    pub fn groups(mut self, g: usize) -> Self {
        self.groups = g;
        self
    }

    pub fn bias(mut self) -> Self {
        self.bias = true;
        self
    }

    pub fn init(mut self, dist: InitDist) -> Self {
        self.init = dist;
        self
    }
}

impl Conv2d {
    pub fn new(
        init: &mut Init<'_>,
        name: &str,
        cin: usize,
        cout: usize,
        cfg: ConvCfg,
    ) -> Result<Self> {
        if !cin.is_multiple_of(cfg.groups) || !cout.is_multiple_of(cfg.groups) {
            bail!(
                "{name}: {cin} -> {cout} channels not divisible into {} groups",
                cfg.groups
            );
        }
        let mut sub = init.sub(name);
        let shape = [cout, cin / cfg.groups, cfg.kernel.0, cfg.kernel.1];
        let weight = sub.weight("weight", &shape, cfg.init)?;
        let bias = if cfg.bias {
            Some(sub.weight("bias", &[cout], InitDist::Const(0.0))?)
        } else {
            None
        };
        Ok(Conv2d {
            name: sub.prefix().to_string(),
            weight,
            bias,
            window: Window {
                kernel: cfg.kernel,
                stride: (cfg.stride, cfg.stride),
                padding: cfg.padding,
            },
            groups: cfg.groups,
            in_channels: cin,
            out_channels: cout,
        })
    }

    pub fn out_channels(&self) -> usize {
        self.out_channels
    }

    pub fn forward(&self, x: &Tensor, ctx: &mut Ctx) -> Result<Tensor> {
        let (c, n, h, w) = x.dims4()?;
        if c != self.in_channels {
            bail!(
                "{}: expected {} input channels, got {c}",
                self.name,
                self.in_channels
            );
        }
        let (ho, wo) = self.window.output_dims(h, w, false)?;
        let (kh, kw) = self.window.kernel;
        let l = n * ho * wo;
        let g = self.groups;
        let y = if g == 1 {
            let w = self.weight.reshape((self.out_channels, c * kh * kw))?;
            x.contiguous()?.apply_op2(
                &w,
                Conv2dOp {
                    window: self.window,
                },
            )?
        } else {
            let cols = x.contiguous()?.apply_op1(Im2Col {
                window: self.window,
            })?;
            if g == c && g == self.out_channels {
                // Depthwise: one kh·kw filter per channel.
                let cols = cols.reshape((c, kh * kw, l))?;
                let wt = self.weight.reshape((c, kh * kw, 1))?;
                cols.broadcast_mul(&wt)?.sum(1)?
            } else {
                let cols = cols.reshape((g, (c / g) * kh * kw, l))?;
                let wt = self
                    .weight
                    .reshape((g, self.out_channels / g, (c / g) * kh * kw))?;
                wt.matmul(&cols)?.reshape((self.out_channels, l))?
            }
        };
        let y = match &self.bias {
            Some(b) => y.broadcast_add(&b.reshape((self.out_channels, 1))?)?,
            None => y,
        };
        let y = y.reshape((self.out_channels, n, ho, wo))?;
        ctx.observe(&self.name, &y);
        Ok(y)
    }
}

/// Batch normalisation over channel-major activations.
#[derive(Debug, Clone)]
pub struct BatchNorm2d {
    pub name: String,
    weight: Var,
    bias: Var,
    running_mean: Var,
    running_var: Var,
    eps: f64,
    momentum: f64,
}

impl BatchNorm2d {
    pub fn new(init: &mut Init<'_>, name: &str, channels: usize, eps: f64) -> Result<Self> {
        let mut sub = init.sub(name);
        Ok(BatchNorm2d {
            weight: sub.weight("weight", &[channels], InitDist::Const(1.0))?,
            bias: sub.weight("bias", &[channels], InitDist::Const(0.0))?,
            running_mean: sub.buffer("running_mean", &[channels], 0.0)?,
            running_var: sub.buffer("running_var", &[channels], 1.0)?,
            name: sub.prefix().to_string(),
            eps,
            momentum: 0.1,
        })
    }

    pub fn forward(&self, x: &Tensor, ctx: &mut Ctx) -> Result<Tensor> {
        let dims = x.dims().to_vec();
        let c = dims[0];
        let m = x.elem_count() / c;
        let flat = x.contiguous()?.reshape((c, m))?;
        if ctx.mode == Mode::Eval {
            let istd = (self.running_var.as_tensor() + self.eps)?.sqrt()?.recip()?;
            let scale = (istd * self.weight.as_tensor())?;
            let shift = (self.bias.as_tensor() - (self.running_mean.as_tensor() * &scale)?)?;
            return flat
                .broadcast_mul(&scale.reshape((c, 1))?)?
                .broadcast_add(&shift.reshape((c, 1))?)?
                .reshape(dims);
        }
        let (mean, var) = channel_moments(&flat)?;
        if ctx.mode == Mode::Train {
            let correction = if m > 1 {
                m as f64 / (m as f64 - 1.0)
            } else {
                1.0
            };
            let mo = self.momentum;
            let rm = self.running_mean.to_vec1::<f32>()?;
            let rv = self.running_var.to_vec1::<f32>()?;
            let rm: Vec<f32> = rm
                .iter()
                .zip(&mean)
                .map(|(&r, &b)| ((1.0 - mo) * f64::from(r) + mo * b) as f32)
                .collect();
            let rv: Vec<f32> = rv
                .iter()
                .zip(&var)
                .map(|(&r, &b)| ((1.0 - mo) * f64::from(r) + mo * b * correction) as f32)
                .collect();
            self.running_mean
                .set(&Tensor::from_vec(rm, c, x.device())?)?;
            self.running_var
                .set(&Tensor::from_vec(rv, c, x.device())?)?;
        } else {
            let acc = ctx
                .moments
                .entry(self.name.clone())
                .or_insert_with(|| MomentSums {
                    count: 0.0,
                    sum: vec![0.0; c],
                    sum_sq: vec![0.0; c],
                });
            let n = m as f64;
            acc.count += n;
            for i in 0..c {
                acc.sum[i] += mean[i] * n;
                acc.sum_sq[i] += (var[i] + mean[i] * mean[i]) * n;
            }
        }
        flat.apply_op3(
            self.weight.as_tensor(),
            self.bias.as_tensor(),
            BatchNormTrain { eps: self.eps },
        )?
        .reshape(dims)
    }
}

/// Fully connected layer on `(N, in)` rows.
#[derive(Debug, Clone)]
pub struct Linear {
    pub name: String,
    weight: Var,
    bias: Var,
}

impl Linear {
    pub fn new(init: &mut Init<'_>, name: &str, cin: usize, cout: usize) -> Result<Self> {
        let mut sub = init.sub(name);
        let bound = 1.0 / (cin as f64).sqrt();
        Ok(Linear {
            weight: sub.weight("weight", &[cout, cin], InitDist::Uniform(bound))?,
            bias: sub.weight("bias", &[cout], InitDist::Uniform(bound))?,
            name: sub.prefix().to_string(),
        })
    }

    pub fn forward(&self, x: &Tensor, ctx: &mut Ctx) -> Result<Tensor> {
        ctx.observe_input(&self.name, x);
        x.matmul(&self.weight.t()?)?.broadcast_add(&self.bias)
    }
}

/// Inverted dropout with a seeded mask stream.
#[derive(Debug, Clone, Copy)]
pub struct Dropout {
    pub p: f64,
}

impl Dropout {
    pub fn forward(&self, x: &Tensor, ctx: &mut Ctx) -> Result<Tensor> {
        if !ctx.train() || self.p == 0.0 {
            return Ok(x.clone());
        }
        let mask = ctx.uniform_mask(x.elem_count(), 1.0 - self.p);
        x * Tensor::from_vec(mask, x.shape(), x.device())?
    }
}

pub fn max_pool(
    x: &Tensor,
    kernel: usize,
    stride: usize,
    padding: usize,
    ceil_mode: bool,
) -> Result<Tensor> {
    x.contiguous()?.apply_op1(MaxPool2d {
        window: Window::square(kernel, stride, padding),
        ceil_mode,
    })
}

pub fn avg_pool(x: &Tensor, kernel: usize, stride: usize, padding: usize) -> Result<Tensor> {
    x.contiguous()?.apply_op1(AvgPool2d {
        window: Window::square(kernel, stride, padding),
        ceil_mode: false,
        count_include_pad: true,
    })
}

/// `(C, N, H, W)` → `(N, C)` spatial mean.
pub fn global_avg_pool(x: &Tensor) -> Result<Tensor> {
    x.mean(D::Minus1)?.mean(D::Minus1)?.t()
}

pub fn relu(x: &Tensor) -> Result<Tensor> {
    x.contiguous()?.apply_op1(Relu)
}

/// Method-call form of [`relu`] for use in layer chains.
pub trait Rectify {
    fn rectify(&self) -> Result<Tensor>;
}

impl Rectify for Tensor {
    fn rectify(&self) -> Result<Tensor> {
        relu(self)
    }
}

pub fn relu6(x: &Tensor) -> Result<Tensor> {
    x.clamp(0f32, 6f32)
}

/// Overwrites batch-norm running statistics with the moments pooled by a
/// calibration pass. Returns the number of layers updated.
pub fn apply_calibration(store: &ParamStore, ctx: &Ctx) -> Result<usize> {
    let mut updated = 0;
    for (layer, (mean, var)) in ctx.calibrated_moments() {
        let (Some(rm), Some(rv)) = (
            store.get(&format!("{layer}.running_mean")),
            store.get(&format!("{layer}.running_var")),
        ) else {
            bail!("calibrated layer {layer} has no running statistics");
        };
        let to_tensor = |v: &[f64]| {
            Tensor::from_vec(
                v.iter().map(|&x| x as f32).collect::<Vec<_>>(),
                v.len(),
                &Device::Cpu,
            )
        };
        rm.var.set(&to_tensor(&mean)?)?;
        rv.var.set(&to_tensor(&var)?)?;
        updated += 1;
    }
    Ok(updated)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn same_seed_same_values_and_names_are_unique() {
        let mut a = ParamStore::default();
        let mut b = ParamStore::default();
        Conv2d::new(&mut Init::new(&mut a, 5), "c", 3, 4, ConvCfg::k(3)).unwrap();
        Conv2d::new(&mut Init::new(&mut b, 5), "c", 3, 4, ConvCfg::k(3)).unwrap();
        assert_eq!(a.checksum().unwrap(), b.checksum().unwrap());
        let mut init = Init::new(&mut a, 5);
        assert!(Conv2d::new(&mut init, "c", 3, 4, ConvCfg::k(3)).is_err());
    }

    #[test]
    fn batch_norm_train_normalizes_and_eval_uses_running_stats() {
        let mut store = ParamStore::default();
        let bn = BatchNorm2d::new(&mut Init::new(&mut store, 0), "bn", 2, 1e-5).unwrap();
        let x = Tensor::from_vec(
            (0..16).map(|v| v as f32).collect::<Vec<_>>(),
            (2, 2, 2, 2),
            &Device::Cpu,
        )
        .unwrap();
        let mut ctx = Ctx::new(Mode::Train, 0);
        let y = bn.forward(&x, &mut ctx).unwrap();
        let per_channel = y
            .reshape((2, 8))
            .unwrap()
            .mean(1)
            .unwrap()
            .to_vec1::<f32>()
            .unwrap();
        assert!(per_channel.iter().all(|m| m.abs() < 1e-5));
        // running mean moved 10% of the way to the batch mean (3.5, 11.5).
        let rm = store
            .get("bn.running_mean")
            .unwrap()
            .var
            .to_vec1::<f32>()
            .unwrap();
        assert!((rm[0] - 0.35).abs() < 1e-5 && (rm[1] - 1.15).abs() < 1e-5);

        let mut cal = Ctx::new(Mode::Calibrate, 0);
        bn.forward(&x, &mut cal).unwrap();
        apply_calibration(&store, &cal).unwrap();
        let rm = store
            .get("bn.running_mean")
            .unwrap()
            .var
            .to_vec1::<f32>()
            .unwrap();
        assert!((rm[0] - 3.5).abs() < 1e-5 && (rm[1] - 11.5).abs() < 1e-5);
        let mut eval = Ctx::eval();
        let y = bn.forward(&x, &mut eval).unwrap();
        let mean = y
            .reshape((2, 8))
            .unwrap()
            .mean(1)
            .unwrap()
            .to_vec1::<f32>()
            .unwrap();
        assert!(mean.iter().all(|m| m.abs() < 1e-4));
    }

    #[test]
    fn grouped_and_depthwise_convs_match_per_group_dense_convs() {
        let dev = Device::Cpu;
        let x = Tensor::from_vec(
            (0..4 * 2 * 5 * 5)
                .map(|v| ((v * 13 % 29) as f32) / 29.0)
                .collect::<Vec<_>>(),
            (4, 2, 5, 5),
            &dev,
        )
        .unwrap();
        for groups in [2usize, 4] {
            let mut store = ParamStore::default();
            let mut init = Init::new(&mut store, 1);
            let conv =
                Conv2d::new(&mut init, "g", 4, 4, ConvCfg::k(3).pad(1).groups(groups)).unwrap();
            let y = conv.forward(&x, &mut Ctx::eval()).unwrap();
            let w = store.get("g.weight").unwrap().var.as_tensor().clone();
            let per = 4 / groups;
            for g in 0..groups {
                let mut s2 = ParamStore::default();
                let dense = Conv2d::new(
                    &mut Init::new(&mut s2, 0),
                    "d",
                    per,
                    per,
                    ConvCfg::k(3).pad(1),
                )
                .unwrap();
                s2.get("d.weight")
                    .unwrap()
                    .var
                    .set(&w.narrow(0, g * per, per).unwrap())
                    .unwrap();
                let yg = dense
                    .forward(&x.narrow(0, g * per, per).unwrap(), &mut Ctx::eval())
                    .unwrap();
                let diff = (yg - y.narrow(0, g * per, per).unwrap())
                    .unwrap()
                    .abs()
                    .unwrap()
                    .max_all()
                    .unwrap()
                    .to_scalar::<f32>()
                    .unwrap();
                assert!(diff < 1e-5, "groups={groups} g={g}: {diff}");
            }
        }
    }

    #[test]
    fn dropout_is_identity_outside_training_and_seeded_inside() {
        let x = Tensor::ones((4, 8), DType::F32, &Device::Cpu).unwrap();
        let d = Dropout { p: 0.5 };
        let same = d.forward(&x, &mut Ctx::eval()).unwrap();
        assert_eq!(same.to_vec2::<f32>().unwrap(), x.to_vec2::<f32>().unwrap());
        let a = d
            .forward(&x, &mut Ctx::new(Mode::Train, 3))
            .unwrap()
            .to_vec2::<f32>()
            .unwrap();
        let b = d
            .forward(&x, &mut Ctx::new(Mode::Train, 3))
            .unwrap()
            .to_vec2::<f32>()
            .unwrap();
        assert_eq!(a, b);
        assert!(a.iter().flatten().all(|&v| v == 0.0 || v == 2.0));
    }
}
