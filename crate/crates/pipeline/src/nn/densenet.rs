//! DenseNet-121 (the CheXNet topology) and DenseNet-201.

use candle_core::{Result, Tensor};

use super::layers::{
    avg_pool, global_avg_pool, max_pool, BatchNorm2d, Conv2d, ConvCfg, Init, Linear, Rectify,
};
use super::{Ctx, Network};

#[derive(Debug, Clone, Copy)]
pub enum Depth {
    D121,
    D201,
}

const GROWTH: usize = 32;
const BN_SIZE: usize = 4;

/// Pre-activation unit: BN → ReLU → conv.
#[derive(Debug, Clone)]
struct BnReluConv {
    bn: BatchNorm2d,
    conv: Conv2d,
}

impl BnReluConv {
    fn new(
        init: &mut Init<'_>,
        bn: &str,
        conv: &str,
        cin: usize,
        cout: usize,
        cfg: ConvCfg,
    ) -> Result<Self> {
        Ok(BnReluConv {
            bn: BatchNorm2d::new(init, bn, cin, 1e-5)?,
            conv: Conv2d::new(init, conv, cin, cout, cfg)?,
        })
    }

    fn forward(&self, x: &Tensor, ctx: &mut Ctx) -> Result<Tensor> {
        let h = self.bn.forward(x, ctx)?.rectify()?;
        self.conv.forward(&h, ctx)
    }
}

#[derive(Debug, Clone)]
struct DenseLayer {
    bottleneck: BnReluConv,
    growth: BnReluConv,
}

#[derive(Debug, Clone)]
enum Stage {
    Block(Vec<DenseLayer>),
    Transition(BnReluConv),
}

pub struct DenseNet {
    conv0: Conv2d,
    norm0: BatchNorm2d,
    stages: Vec<Stage>,
    norm5: BatchNorm2d,
    classifier: Linear,
}

impl DenseNet {
    pub fn new(init: &mut Init<'_>, depth: Depth, num_classes: usize) -> Result<Self> {
        let config: [usize; 4] = match depth {
            Depth::D121 => [6, 12, 24, 16],
            Depth::D201 => [6, 12, 48, 32],
        };
        let mut features = init.sub("features");
        let conv0 = Conv2d::new(
            &mut features,
            "conv0",
            3,
            64,
            ConvCfg::k(7).stride(2).pad(3),
        )?;
        let norm0 = BatchNorm2d::new(&mut features, "norm0", 64, 1e-5)?;
        let mut channels = 64;
        let mut stages = Vec::new();
        for (b, &n) in config.iter().enumerate() {
            let mut block = features.sub(format!("denseblock{}", b + 1));
            let mut layers = Vec::with_capacity(n);
            for l in 0..n {
                let mut layer = block.sub(format!("denselayer{}", l + 1));
                let cin = channels + l * GROWTH;
                layers.push(DenseLayer {
                    bottleneck: BnReluConv::new(
                        &mut layer,
                        "norm1",
                        "conv1",
                        cin,
                        BN_SIZE * GROWTH,
                        ConvCfg::k(1),
                    )?,
                    growth: BnReluConv::new(
                        &mut layer,
                        "norm2",
                        "conv2",
                        BN_SIZE * GROWTH,
                        GROWTH,
                        ConvCfg::k(3).pad(1),
                    )?,
                });
            }
            stages.push(Stage::Block(layers));
            channels += n * GROWTH;
            if b + 1 < config.len() {
                let mut t = features.sub(format!("transition{}", b + 1));
                stages.push(Stage::Transition(BnReluConv::new(
                    &mut t,
                    "norm",
                    "conv",
                    channels,
                    channels / 2,
                    ConvCfg::k(1),
                )?));
                channels /= 2;
            }
        }
        let norm5 = BatchNorm2d::new(&mut features, "norm5", channels, 1e-5)?;
        let classifier = Linear::new(init, "classifier", channels, num_classes)?;
        Ok(DenseNet {
            conv0,
            norm0,
            stages,
            norm5,
            classifier,
        })
    }
}

impl Network for DenseNet {
    fn forward(&self, x: &Tensor, ctx: &mut Ctx) -> Result<Tensor> {
        let h = self
            .norm0
            .forward(&self.conv0.forward(x, ctx)?, ctx)?
            .rectify()?;
        let mut h = max_pool(&h, 3, 2, 1, false)?;
        for stage in &self.stages {
            h = match stage {
                Stage::Block(layers) => {
                    let mut feats = vec![h];
                    for layer in layers {
                        let input = Tensor::cat(&feats, 0)?;
                        let y = layer.bottleneck.forward(&input, ctx)?;
                        feats.push(layer.growth.forward(&y, ctx)?);
                    }
                    Tensor::cat(&feats, 0)?
                }
                Stage::Transition(t) => avg_pool(&t.forward(&h, ctx)?, 2, 2, 0)?,
            };
        }
        let h = self.norm5.forward(&h, ctx)?.rectify()?;
        self.classifier.forward(&global_avg_pool(&h)?, ctx)
    }
}
