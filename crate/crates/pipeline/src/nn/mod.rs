//! Convolutional backbones and the pieces they are built from.
//!
//! Parameter names follow the torchvision state-dict layout, so weights
//! exported from torchvision to safetensors load without renaming.

pub mod densenet;
pub mod inception;
pub mod layers;
pub mod mobilenet;
pub mod ops;
pub mod resnet;
pub mod squeezenet;
pub mod vgg;

use candle_core::{Result, Tensor};

use layers::Rectify;

pub use layers::{Ctx, Mode, ParamStore};

/// A classification network over channel-major `(3, N, H, W)` input that
/// returns `(N, classes)` logits.
pub trait Network: Send + Sync {
    fn forward(&self, x: &Tensor, ctx: &mut Ctx) -> Result<Tensor>;
}

/// Convolution followed by batch normalisation and an optional ReLU.
#[derive(Debug, Clone)]
pub(crate) struct ConvBn {
    conv: layers::Conv2d,
    bn: layers::BatchNorm2d,
}

impl ConvBn {
    /// `conv`/`bn` name the two children under the caller's prefix.
    pub(crate) fn new(
        init: &mut layers::Init<'_>,
        conv: &str,
        bn: &str,
        cin: usize,
        cout: usize,
        cfg: layers::ConvCfg,
        eps: f64,
    ) -> Result<Self> {
        Ok(ConvBn {
            conv: layers::Conv2d::new(init, conv, cin, cout, cfg)?,
            bn: layers::BatchNorm2d::new(init, bn, cout, eps)?,
        })
    }

    pub(crate) fn forward(&self, x: &Tensor, ctx: &mut Ctx) -> Result<Tensor> {
        self.bn.forward(&self.conv.forward(x, ctx)?, ctx)
    }

    pub(crate) fn forward_relu(&self, x: &Tensor, ctx: &mut Ctx) -> Result<Tensor> {
        self.forward(x, ctx)?.rectify()
    }

    pub(crate) fn forward_relu6(&self, x: &Tensor, ctx: &mut Ctx) -> Result<Tensor> {
        layers::relu6(&self.forward(x, ctx)?)
    }
}
