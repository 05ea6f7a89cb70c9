//! ResNet-18 and ResNet-101 (stride on the 3×3 convolution).

use candle_core::{Result, Tensor};

use super::layers::{global_avg_pool, max_pool, ConvCfg, Init, Linear, Rectify};
use super::{ConvBn, Ctx, Network};

#[derive(Debug, Clone, Copy)]
pub enum Depth {
    D18,
    D101,
}

#[derive(Debug, Clone)]
enum Block {
    Basic {
        a: ConvBn,
        b: ConvBn,
        downsample: Option<ConvBn>,
    },
    Bottleneck {
        a: ConvBn,
        b: ConvBn,
        c: ConvBn,
        downsample: Option<ConvBn>,
    },
}

impl Block {
    fn forward(&self, x: &Tensor, ctx: &mut Ctx) -> Result<Tensor> {
        let (y, downsample) = match self {
            Block::Basic { a, b, downsample } => {
                let y = a.forward_relu(x, ctx)?;
                (b.forward(&y, ctx)?, downsample)
            }
            Block::Bottleneck {
                a,
                b,
                c,
                downsample,
            } => {
                let y = a.forward_relu(x, ctx)?;
                let y = b.forward_relu(&y, ctx)?;
                (c.forward(&y, ctx)?, downsample)
            }
        };
        let shortcut = match downsample {
            Some(d) => d.forward(x, ctx)?,
            None => x.clone(),
        };
        (y + shortcut)?.rectify()
    }
}

pub struct ResNet {
    stem: ConvBn,
    stages: Vec<Vec<Block>>,
    fc: Linear,
}

impl ResNet {
    pub fn new(init: &mut Init<'_>, depth: Depth, num_classes: usize) -> Result<Self> {
        let (blocks, bottleneck): ([usize; 4], bool) = match depth {
            Depth::D18 => ([2, 2, 2, 2], false),
            Depth::D101 => ([3, 4, 23, 3], true),
        };
        let expansion = if bottleneck { 4 } else { 1 };
        let stem = ConvBn::new(
            init,
            "conv1",
            "bn1",
            3,
            64,
            ConvCfg::k(7).stride(2).pad(3),
            1e-5,
        )?;
        let mut cin = 64;
        let mut stages = Vec::new();
        for (s, (&n, width)) in blocks.iter().zip([64, 128, 256, 512]).enumerate() {
            let mut layer = init.sub(format!("layer{}", s + 1));
            let mut stage = Vec::new();
            for i in 0..n {
                let stride = if i == 0 && s > 0 { 2 } else { 1 };
                let cout = width * expansion;
                let mut blk = layer.sub(i);
                let downsample = if stride != 1 || cin != cout {
                    let mut ds = blk.sub("downsample");
                    Some(ConvBn::new(
                        &mut ds,
                        "0",
                        "1",
                        cin,
                        cout,
                        ConvCfg::k(1).stride(stride),
                        1e-5,
                    )?)
                } else {
                    None
                };
                let block = if bottleneck {
                    Block::Bottleneck {
                        a: ConvBn::new(&mut blk, "conv1", "bn1", cin, width, ConvCfg::k(1), 1e-5)?,
                        b: ConvBn::new(
                            &mut blk,
                            "conv2",
                            "bn2",
                            width,
                            width,
                            ConvCfg::k(3).stride(stride).pad(1),
                            1e-5,
                        )?,
                        c: ConvBn::new(&mut blk, "conv3", "bn3", width, cout, ConvCfg::k(1), 1e-5)?,
                        downsample,
                    }
                } else {
                    Block::Basic {
                        a: ConvBn::new(
                            &mut blk,
                            "conv1",
                            "bn1",
                            cin,
                            width,
                            ConvCfg::k(3).stride(stride).pad(1),
                            1e-5,
                        )?,
                        b: ConvBn::new(
                            &mut blk,
                            "conv2",
                            "bn2",
                            width,
                            width,
                            ConvCfg::k(3).pad(1),
                            1e-5,
                        )?,
                        downsample,
                    }
                };
                stage.push(block);
                cin = cout;
            }
            stages.push(stage);
        }
        let fc = Linear::new(init, "fc", cin, num_classes)?;
        Ok(ResNet { stem, stages, fc })
    }
}

impl Network for ResNet {
    fn forward(&self, x: &Tensor, ctx: &mut Ctx) -> Result<Tensor> {
        let mut h = max_pool(&self.stem.forward_relu(x, ctx)?, 3, 2, 1, false)?;
        for block in self.stages.iter().flatten() {
            h = block.forward(&h, ctx)?;
        }
        self.fc.forward(&global_avg_pool(&h)?, ctx)
    }
}
