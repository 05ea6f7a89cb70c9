//! Inception-v3 (299×299 input) without the auxiliary classifier.

use candle_core::{Result, Tensor};

use super::layers::{avg_pool, global_avg_pool, max_pool, ConvCfg, Ctx, Dropout, Init, Linear};
use super::{ConvBn, Network};

const EPS: f64 = 1e-3;

fn basic(init: &mut Init<'_>, name: &str, cin: usize, cout: usize, cfg: ConvCfg) -> Result<ConvBn> {
    let mut sub = init.sub(name);
    ConvBn::new(&mut sub, "conv", "bn", cin, cout, cfg, EPS)
}

fn chain(convs: &[ConvBn], x: &Tensor, ctx: &mut Ctx) -> Result<Tensor> {
    let mut h = x.clone();
    for c in convs {
        h = c.forward_relu(&h, ctx)?;
    }
    Ok(h)
}

#[derive(Debug, Clone)]
enum Module {
    /// 1×1, 5×5, double 3×3 and pooled branches.
    A {
        b1: ConvBn,
        b5: [ConvBn; 2],
        b3: [ConvBn; 3],
        pool: ConvBn,
    },
    /// Grid reduction with a strided 3×3 and a strided double 3×3.
    B { b3: ConvBn, dbl: [ConvBn; 3] },
    /// Factorised 7×7 branches.
    C {
        b1: ConvBn,
        b7: [ConvBn; 3],
        dbl: [ConvBn; 5],
        pool: ConvBn,
    },
    /// Grid reduction with a factorised 7×7 path.
    D { b3: [ConvBn; 2], b7: [ConvBn; 4] },
    /// Expanded filter bank with split 1×3 / 3×1 outputs.
    E {
        b1: ConvBn,
        b3: ConvBn,
        b3_split: [ConvBn; 2],
        dbl: [ConvBn; 2],
        dbl_split: [ConvBn; 2],
        pool: ConvBn,
    },
}

impl Module {
    fn a(init: &mut Init<'_>, cin: usize, pool_features: usize) -> Result<Self> {
        Ok(Module::A {
            b1: basic(init, "branch1x1", cin, 64, ConvCfg::k(1))?,
            b5: [
                basic(init, "branch5x5_1", cin, 48, ConvCfg::k(1))?,
                basic(init, "branch5x5_2", 48, 64, ConvCfg::k(5).pad(2))?,
            ],
            b3: [
                basic(init, "branch3x3dbl_1", cin, 64, ConvCfg::k(1))?,
                basic(init, "branch3x3dbl_2", 64, 96, ConvCfg::k(3).pad(1))?,
                basic(init, "branch3x3dbl_3", 96, 96, ConvCfg::k(3).pad(1))?,
            ],
            pool: basic(init, "branch_pool", cin, pool_features, ConvCfg::k(1))?,
        })
    }

    fn b(init: &mut Init<'_>, cin: usize) -> Result<Self> {
        Ok(Module::B {
            b3: basic(init, "branch3x3", cin, 384, ConvCfg::k(3).stride(2))?,
            dbl: [
                basic(init, "branch3x3dbl_1", cin, 64, ConvCfg::k(1))?,
                basic(init, "branch3x3dbl_2", 64, 96, ConvCfg::k(3).pad(1))?,
                basic(init, "branch3x3dbl_3", 96, 96, ConvCfg::k(3).stride(2))?,
            ],
        })
    }

    fn c(init: &mut Init<'_>, cin: usize, c7: usize) -> Result<Self> {
        let row = || ConvCfg::rect(1, 7).pad2(0, 3);
        let col = || ConvCfg::rect(7, 1).pad2(3, 0);
        Ok(Module::C {
            b1: basic(init, "branch1x1", cin, 192, ConvCfg::k(1))?,
            b7: [
                basic(init, "branch7x7_1", cin, c7, ConvCfg::k(1))?,
                basic(init, "branch7x7_2", c7, c7, row())?,
                basic(init, "branch7x7_3", c7, 192, col())?,
            ],
            dbl: [
                basic(init, "branch7x7dbl_1", cin, c7, ConvCfg::k(1))?,
                basic(init, "branch7x7dbl_2", c7, c7, col())?,
                basic(init, "branch7x7dbl_3", c7, c7, row())?,
                basic(init, "branch7x7dbl_4", c7, c7, col())?,
                basic(init, "branch7x7dbl_5", c7, 192, row())?,
            ],
            pool: basic(init, "branch_pool", cin, 192, ConvCfg::k(1))?,
        })
    }

    fn d(init: &mut Init<'_>, cin: usize) -> Result<Self> {
        Ok(Module::D {
            b3: [
                basic(init, "branch3x3_1", cin, 192, ConvCfg::k(1))?,
                basic(init, "branch3x3_2", 192, 320, ConvCfg::k(3).stride(2))?,
            ],
            b7: [
                basic(init, "branch7x7x3_1", cin, 192, ConvCfg::k(1))?,
                basic(
                    init,
                    "branch7x7x3_2",
                    192,
                    192,
                    ConvCfg::rect(1, 7).pad2(0, 3),
                )?,
                basic(
                    init,
                    "branch7x7x3_3",
                    192,
                    192,
                    ConvCfg::rect(7, 1).pad2(3, 0),
                )?,
                basic(init, "branch7x7x3_4", 192, 192, ConvCfg::k(3).stride(2))?,
            ],
        })
    }

    fn e(init: &mut Init<'_>, cin: usize) -> Result<Self> {
        Ok(Module::E {
            b1: basic(init, "branch1x1", cin, 320, ConvCfg::k(1))?,
            b3: basic(init, "branch3x3_1", cin, 384, ConvCfg::k(1))?,
            b3_split: [
                basic(
                    init,
                    "branch3x3_2a",
                    384,
                    384,
                    ConvCfg::rect(1, 3).pad2(0, 1),
                )?,
                basic(
                    init,
                    "branch3x3_2b",
                    384,
                    384,
                    ConvCfg::rect(3, 1).pad2(1, 0),
                )?,
            ],
            dbl: [
                basic(init, "branch3x3dbl_1", cin, 448, ConvCfg::k(1))?,
                basic(init, "branch3x3dbl_2", 448, 384, ConvCfg::k(3).pad(1))?,
            ],
            dbl_split: [
                basic(
                    init,
                    "branch3x3dbl_3a",
                    384,
                    384,
                    ConvCfg::rect(1, 3).pad2(0, 1),
                )?,
                basic(
                    init,
                    "branch3x3dbl_3b",
                    384,
                    384,
                    ConvCfg::rect(3, 1).pad2(1, 0),
                )?,
            ],
            pool: basic(init, "branch_pool", cin, 192, ConvCfg::k(1))?,
        })
    }

    fn forward(&self, x: &Tensor, ctx: &mut Ctx) -> Result<Tensor> {
        let branches = match self {
            Module::A { b1, b5, b3, pool } => vec![
                b1.forward_relu(x, ctx)?,
                chain(b5, x, ctx)?,
                chain(b3, x, ctx)?,
                pool.forward_relu(&avg_pool(x, 3, 1, 1)?, ctx)?,
            ],
            Module::B { b3, dbl } => vec![
                b3.forward_relu(x, ctx)?,
                chain(dbl, x, ctx)?,
                max_pool(x, 3, 2, 0, false)?,
            ],
            Module::C { b1, b7, dbl, pool } => vec![
                b1.forward_relu(x, ctx)?,
                chain(b7, x, ctx)?,
                chain(dbl, x, ctx)?,
                pool.forward_relu(&avg_pool(x, 3, 1, 1)?, ctx)?,
            ],
            Module::D { b3, b7 } => vec![
                chain(b3, x, ctx)?,
                chain(b7, x, ctx)?,
                max_pool(x, 3, 2, 0, false)?,
            ],
            Module::E {
                b1,
                b3,
                b3_split,
                dbl,
                dbl_split,
                pool,
            } => {
                let h3 = b3.forward_relu(x, ctx)?;
                let hd = chain(dbl, x, ctx)?;
                vec![
                    b1.forward_relu(x, ctx)?,
                    b3_split[0].forward_relu(&h3, ctx)?,
                    b3_split[1].forward_relu(&h3, ctx)?,
                    dbl_split[0].forward_relu(&hd, ctx)?,
                    dbl_split[1].forward_relu(&hd, ctx)?,
                    pool.forward_relu(&avg_pool(x, 3, 1, 1)?, ctx)?,
                ]
            }
        };
        Tensor::cat(&branches, 0)
    }
}

pub struct InceptionV3 {
    stem: [ConvBn; 5],
    modules: Vec<Module>,
    fc: Linear,
}

impl InceptionV3 {
    pub fn new(init: &mut Init<'_>, num_classes: usize) -> Result<Self> {
        let stem = [
            basic(init, "Conv2d_1a_3x3", 3, 32, ConvCfg::k(3).stride(2))?,
            basic(init, "Conv2d_2a_3x3", 32, 32, ConvCfg::k(3))?,
            basic(init, "Conv2d_2b_3x3", 32, 64, ConvCfg::k(3).pad(1))?,
            basic(init, "Conv2d_3b_1x1", 64, 80, ConvCfg::k(1))?,
            basic(init, "Conv2d_4a_3x3", 80, 192, ConvCfg::k(3))?,
        ];
        let modules = vec![
            Module::a(&mut init.sub("Mixed_5b"), 192, 32)?,
            Module::a(&mut init.sub("Mixed_5c"), 256, 64)?,
            Module::a(&mut init.sub("Mixed_5d"), 288, 64)?,
            Module::b(&mut init.sub("Mixed_6a"), 288)?,
            Module::c(&mut init.sub("Mixed_6b"), 768, 128)?,
            Module::c(&mut init.sub("Mixed_6c"), 768, 160)?,
            Module::c(&mut init.sub("Mixed_6d"), 768, 160)?,
            Module::c(&mut init.sub("Mixed_6e"), 768, 192)?,
            Module::d(&mut init.sub("Mixed_7a"), 768)?,
            Module::e(&mut init.sub("Mixed_7b"), 1280)?,
            Module::e(&mut init.sub("Mixed_7c"), 2048)?,
        ];
        let fc = Linear::new(init, "fc", 2048, num_classes)?;
        Ok(InceptionV3 { stem, modules, fc })
    }
}

impl Network for InceptionV3 {
    fn forward(&self, x: &Tensor, ctx: &mut Ctx) -> Result<Tensor> {
        let h = chain(&self.stem[..3], x, ctx)?;
        let h = max_pool(&h, 3, 2, 0, false)?;
        let h = chain(&self.stem[3..], &h, ctx)?;
        let mut h = max_pool(&h, 3, 2, 0, false)?;
        for m in &self.modules {
            h = m.forward(&h, ctx)?;
        }
        let h = Dropout { p: 0.5 }.forward(&global_avg_pool(&h)?, ctx)?;
        self.fc.forward(&h, ctx)
    }
}
