//! MobileNetV2 with inverted residual blocks and ReLU6.

use candle_core::{Result, Tensor};

use super::layers::{global_avg_pool, ConvCfg, Ctx, Dropout, Init, Linear};
use super::{ConvBn, Network};

#[derive(Debug, Clone)]
struct InvertedResidual {
    expand: Option<ConvBn>,
    depthwise: ConvBn,
    project: ConvBn,
    residual: bool,
}

impl InvertedResidual {
    fn forward(&self, x: &Tensor, ctx: &mut Ctx) -> Result<Tensor> {
        let h = match &self.expand {
            Some(e) => e.forward_relu6(x, ctx)?,
            None => x.clone(),
        };
        let h = self.depthwise.forward_relu6(&h, ctx)?;
        let h = self.project.forward(&h, ctx)?;
        if self.residual {
            x + h
        } else {
            Ok(h)
        }
    }
}

pub struct MobileNetV2 {
    stem: ConvBn,
    blocks: Vec<InvertedResidual>,
    last: ConvBn,
    classifier: Linear,
}

impl MobileNetV2 {
    pub fn new(init: &mut Init<'_>, num_classes: usize) -> Result<Self> {
        // (expansion, output channels, repeats, first stride)
        const SETTINGS: [(usize, usize, usize, usize); 7] = [
            (1, 16, 1, 1),
            (6, 24, 2, 2),
            (6, 32, 3, 2),
            (6, 64, 4, 2),
            (6, 96, 3, 1),
            (6, 160, 3, 2),
            (6, 320, 1, 1),
        ];
        let mut features = init.sub("features");
        let stem = {
            let mut f0 = features.sub(0);
            ConvBn::new(
                &mut f0,
                "0",
                "1",
                3,
                32,
                ConvCfg::k(3).stride(2).pad(1),
                1e-5,
            )?
        };
        let mut cin = 32;
        let mut index = 1;
        let mut blocks = Vec::new();
        for (t, c, n, s) in SETTINGS {
            for i in 0..n {
                let stride = if i == 0 { s } else { 1 };
                let hidden = cin * t;
                let mut f = features.sub(index);
                let mut conv = f.sub("conv");
                let mut next = 0;
                let expand = if t != 1 {
                    let mut e = conv.sub(next);
                    next += 1;
                    Some(ConvBn::new(
                        &mut e,
                        "0",
                        "1",
                        cin,
                        hidden,
                        ConvCfg::k(1),
                        1e-5,
                    )?)
                } else {
                    None
                };
                let depthwise = {
                    let mut d = conv.sub(next);
                    next += 1;
                    ConvBn::new(
                        &mut d,
                        "0",
                        "1",
                        hidden,
                        hidden,
                        ConvCfg::k(3).stride(stride).pad(1).groups(hidden),
                        1e-5,
                    )?
                };
                let project = ConvBn::new(
                    &mut conv,
                    &next.to_string(),
                    &(next + 1).to_string(),
                    hidden,
                    c,
                    ConvCfg::k(1),
                    1e-5,
                )?;
                blocks.push(InvertedResidual {
                    expand,
                    depthwise,
                    project,
                    residual: stride == 1 && cin == c,
                });
                cin = c;
                index += 1;
            }
        }
        let last = {
            let mut f = features.sub(index);
            ConvBn::new(&mut f, "0", "1", cin, 1280, ConvCfg::k(1), 1e-5)?
        };
        let mut cls = init.sub("classifier");
        let classifier = Linear::new(&mut cls, "1", 1280, num_classes)?;
        Ok(MobileNetV2 {
            stem,
            blocks,
            last,
            classifier,
        })
    }
}

impl Network for MobileNetV2 {
    fn forward(&self, x: &Tensor, ctx: &mut Ctx) -> Result<Tensor> {
        let mut h = self.stem.forward_relu6(x, ctx)?;
        for block in &self.blocks {
            h = block.forward(&h, ctx)?;
        }
        let h = self.last.forward_relu6(&h, ctx)?;
        let h = Dropout { p: 0.2 }.forward(&global_avg_pool(&h)?, ctx)?;
        self.classifier.forward(&h, ctx)
    }
}
