//! VGG-19 with the three-layer fully connected classifier.

use candle_core::{Result, Tensor};

use super::layers::{Conv2d, ConvCfg, Ctx, Dropout, Init, Linear, Rectify};
use super::Network;

const CONFIG: [usize; 21] = [
    64, 64, 0, 128, 128, 0, 256, 256, 256, 256, 0, 512, 512, 512, 512, 0, 512, 512, 512, 512, 0,
];

pub struct Vgg19 {
    convs: Vec<Option<Conv2d>>,
    fc: [Linear; 3],
}

impl Vgg19 {
    pub fn new(init: &mut Init<'_>, num_classes: usize) -> Result<Self> {
        let mut features = init.sub("features");
        let mut convs = Vec::new();
        let mut cin = 3;
        // torchvision numbers every module, including the ReLUs and pools.
        let mut index = 0;
        for &c in &CONFIG {
            if c == 0 {
                convs.push(None);
                index += 1;
            } else {
                convs.push(Some(Conv2d::new(
                    &mut features,
                    &index.to_string(),
                    cin,
                    c,
                    ConvCfg::k(3).pad(1).bias(),
                )?));
                cin = c;
                index += 2;
            }
        }
        let mut classifier = init.sub("classifier");
        let fc = [
            Linear::new(&mut classifier, "0", 512 * 7 * 7, 4096)?,
            Linear::new(&mut classifier, "3", 4096, 4096)?,
            Linear::new(&mut classifier, "6", 4096, num_classes)?,
        ];
        Ok(Vgg19 { convs, fc })
    }
}

impl Network for Vgg19 {
    fn forward(&self, x: &Tensor, ctx: &mut Ctx) -> Result<Tensor> {
        let mut h = x.clone();
        for conv in &self.convs {
            h = match conv {
                Some(c) => c.forward(&h, ctx)?.rectify()?,
                None => super::layers::max_pool(&h, 2, 2, 0, false)?,
            };
        }
        let (c, n, hh, ww) = h.dims4()?;
        if (hh, ww) != (7, 7) {
            candle_core::bail!(
                "VGG-19 expects a 7x7 feature map before the classifier, got {hh}x{ww}"
            );
        }
        // Flatten per sample in (C, H, W) order.
        let flat = h
            .permute((1, 0, 2, 3))?
            .contiguous()?
            .reshape((n, c * hh * ww))?;
        let drop = Dropout { p: 0.5 };
        let h = drop.forward(&self.fc[0].forward(&flat, ctx)?.rectify()?, ctx)?;
        let h = drop.forward(&self.fc[1].forward(&h, ctx)?.rectify()?, ctx)?;
        self.fc[2].forward(&h, ctx)
    }
}
