//! SqueezeNet 1.1 (227×227 input); the classifier is a 1×1 convolution.
//!
//! Without batch normalisation the initial scale matters: convolutions are
//! drawn fan-in uniform and the classifier from N(0, 0.01²), as in
//! torchvision.

use candle_core::{Result, Tensor};

use super::layers::{
    global_avg_pool, max_pool, Conv2d, ConvCfg, Ctx, Dropout, Init, InitDist, Rectify,
};
use super::Network;

fn conv(kernel: usize) -> ConvCfg {
    ConvCfg::k(kernel)
        .bias()
        .init(InitDist::KaimingUniformFanIn)
}

#[derive(Debug, Clone)]
struct Fire {
    squeeze: Conv2d,
    expand1x1: Conv2d,
    expand3x3: Conv2d,
}

impl Fire {
    fn new(
        init: &mut Init<'_>,
        index: usize,
        cin: usize,
        squeeze: usize,
        expand: usize,
    ) -> Result<Self> {
        let mut f = init.sub(index);
        Ok(Fire {
            squeeze: Conv2d::new(&mut f, "squeeze", cin, squeeze, conv(1))?,
            expand1x1: Conv2d::new(&mut f, "expand1x1", squeeze, expand, conv(1))?,
            expand3x3: Conv2d::new(&mut f, "expand3x3", squeeze, expand, conv(3).pad(1))?,
        })
    }

    fn forward(&self, x: &Tensor, ctx: &mut Ctx) -> Result<Tensor> {
        let s = self.squeeze.forward(x, ctx)?.rectify()?;
        let a = self.expand1x1.forward(&s, ctx)?.rectify()?;
        let b = self.expand3x3.forward(&s, ctx)?.rectify()?;
        Tensor::cat(&[a, b], 0)
    }
}

pub struct SqueezeNet {
    conv0: Conv2d,
    fires: Vec<(Fire, bool)>,
    classifier: Conv2d,
}

impl SqueezeNet {
    pub fn new(init: &mut Init<'_>, num_classes: usize) -> Result<Self> {
        let mut features = init.sub("features");
        let conv0 = Conv2d::new(&mut features, "0", 3, 64, conv(3).stride(2))?;
        // (module index, in, squeeze, expand, max-pool before this module)
        let layout = [
            (3, 64, 16, 64, true),
            (4, 128, 16, 64, false),
            (6, 128, 32, 128, true),
            (7, 256, 32, 128, false),
            (9, 256, 48, 192, true),
            (10, 384, 48, 192, false),
            (11, 384, 64, 256, false),
            (12, 512, 64, 256, false),
        ];
        let fires = layout
            .iter()
            .map(|&(i, cin, s, e, pool)| Ok((Fire::new(&mut features, i, cin, s, e)?, pool)))
            .collect::<Result<Vec<_>>>()?;
        let mut cls = init.sub("classifier");
        let classifier = Conv2d::new(
            &mut cls,
            "1",
            512,
            num_classes,
            conv(1).init(InitDist::Normal(0.01)),
        )?;
        Ok(SqueezeNet {
            conv0,
            fires,
            classifier,
        })
    }
}

impl Network for SqueezeNet {
    fn forward(&self, x: &Tensor, ctx: &mut Ctx) -> Result<Tensor> {
        let mut h = self.conv0.forward(x, ctx)?.rectify()?;
        for (fire, pool_first) in &self.fires {
            if *pool_first {
                h = max_pool(&h, 3, 2, 0, true)?;
            }
            h = fire.forward(&h, ctx)?;
        }
        let h = Dropout { p: 0.5 }.forward(&h, ctx)?;
        let h = self.classifier.forward(&h, ctx)?.rectify()?;
        global_avg_pool(&h)
    }
}
