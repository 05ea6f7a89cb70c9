//! CPU kernels with hand-written backward passes.
//!
//! Activations flow through the networks channel-major, `(C, N, H, W)`, so a
//! convolution is one GEMM of the `(O, C·kh·kw)` weight matrix against an
//! `(C·kh·kw, N·Ho·Wo)` patch matrix and its output is already in
//! channel-major order. Pooling kernels only look at the trailing two axes
//! and work for either layout.

use candle_core::backend::BackendStorage;
use candle_core::{
    bail, CpuStorage, CustomOp1, CustomOp2, CustomOp3, Layout, Result, Shape, Storage, Tensor,
};
use rayon::prelude::*;

/// Kernel size, stride and zero padding of a 2-D window.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Window {
    pub kernel: (usize, usize),
    pub stride: (usize, usize),
    pub padding: (usize, usize),
}

impl Window {
    pub fn square(kernel: usize, stride: usize, padding: usize) -> Self {
        Window {
            kernel: (kernel, kernel),
            stride: (stride, stride),
            padding: (padding, padding),
        }
    }

    fn out_len(
        input: usize,
        kernel: usize,
        stride: usize,
        pad: usize,
        ceil: bool,
    ) -> Result<usize> {
        let span = input + 2 * pad;
        if span < kernel {
            bail!("window of {kernel} does not fit input of {input} with padding {pad}");
        }
        let mut out = if ceil {
            (span - kernel).div_ceil(stride) + 1
        } else {
            (span - kernel) / stride + 1
        };
        // The last window must start inside the input or its left padding.
        if ceil && (out - 1) * stride >= input + pad {
            out -= 1;
        }
        Ok(out)
    }

    pub fn output_dims(&self, h: usize, w: usize, ceil: bool) -> Result<(usize, usize)> {
        Ok((
            Self::out_len(h, self.kernel.0, self.stride.0, self.padding.0, ceil)?,
            Self::out_len(w, self.kernel.1, self.stride.1, self.padding.1, ceil)?,
        ))
    }
}

fn f32_slice<'a>(storage: &'a CpuStorage, layout: &Layout) -> Result<&'a [f32]> {
    let data = match storage {
        CpuStorage::F32(v) => v.as_slice(),
        other => bail!("f32 kernel called on {:?} storage", other.dtype()),
    };
    match layout.contiguous_offsets() {
        Some((start, end)) => Ok(&data[start..end]),
        None => bail!("kernel input must be contiguous"),
    }
}

fn dims4(shape: &Shape) -> Result<(usize, usize, usize, usize)> {
    match shape.dims() {
        &[a, b, c, d] => Ok((a, b, c, d)),
        other => bail!("expected a rank-4 tensor, got shape {other:?}"),
    }
}

fn host_vec(t: &Tensor) -> Result<Vec<f32>> {
    t.contiguous()?.flatten_all()?.to_vec1::<f32>()
}

/// Valid output columns `[lo, hi)` for kernel offset `j` along one axis.
fn valid_range(out: usize, input: usize, stride: usize, pad: usize, j: usize) -> (usize, usize) {
    let lo = if pad > j {
        (pad - j).div_ceil(stride)
    } else {
        0
    };
    let hi = if input + pad > j {
        ((input + pad - j - 1) / stride + 1).min(out)
    } else {
        0
    };
    (lo.min(hi), hi)
}

/// Unfolds `(C, N, H, W)` into `(C·kh·kw, N·Ho·Wo)` patches.
#[derive(Debug, Clone, Copy)]
pub struct Im2Col {
    pub window: Window,
}

impl Im2Col {
    fn unfold(
        &self,
        src: &[f32],
        (c, n, h, w): (usize, usize, usize, usize),
    ) -> Result<(Vec<f32>, usize)> {
        let Window {
            kernel: (kh, kw),
            stride: (sh, sw),
            padding: (ph, pw),
        } = self.window;
        let (ho, wo) = self.window.output_dims(h, w, false)?;
        let l = n * ho * wo;
        let mut out = vec![0f32; c * kh * kw * l];
        out.par_chunks_mut(kh * kw * l)
            .enumerate()
            .for_each(|(ci, rows)| {
                for i in 0..kh {
                    let (oy_lo, oy_hi) = valid_range(ho, h, sh, ph, i);
                    for j in 0..kw {
                        let (ox_lo, ox_hi) = valid_range(wo, w, sw, pw, j);
                        let row = &mut rows[(i * kw + j) * l..(i * kw + j + 1) * l];
                        for ni in 0..n {
                            let plane = &src[(ci * n + ni) * h * w..(ci * n + ni + 1) * h * w];
                            for oy in oy_lo..oy_hi {
                                let iy = oy * sh + i - ph;
                                let dst = &mut row[(ni * ho + oy) * wo..(ni * ho + oy + 1) * wo];
                                let line = &plane[iy * w..(iy + 1) * w];
                                if sw == 1 {
                                    let ix0 = ox_lo + j - pw;
                                    dst[ox_lo..ox_hi]
                                        .copy_from_slice(&line[ix0..ix0 + (ox_hi - ox_lo)]);
                                } else {
                                    for ox in ox_lo..ox_hi {
                                        dst[ox] = line[ox * sw + j - pw];
                                    }
                                }
                            }
                        }
                    }
                }
            });
        Ok((out, l))
    }
}

impl CustomOp1 for Im2Col {
    fn name(&self) -> &'static str {
        "im2col"
    }

    fn cpu_fwd(&self, storage: &CpuStorage, layout: &Layout) -> Result<(CpuStorage, Shape)> {
        let dims = dims4(layout.shape())?;
        let src = f32_slice(storage, layout)?;
        let (out, l) = self.unfold(src, dims)?;
        let k = self.window.kernel;
        Ok((CpuStorage::F32(out), Shape::from((dims.0 * k.0 * k.1, l))))
    }

    fn bwd(&self, arg: &Tensor, _res: &Tensor, grad: &Tensor) -> Result<Option<Tensor>> {
        let fold = Col2Im {
            window: self.window,
            dims: dims4(arg.shape())?,
        };
        Ok(Some(grad.contiguous()?.apply_op1_no_bwd(&fold)?))
    }
}

/// `c = a · b` (or `c += a · b`) for an `m×k` by `k×n` product written into a
/// row-major `m×n` buffer. Operands are addressed through explicit row and
/// column strides so transposed views need no copy.
#[allow(clippy::too_many_arguments)]
pub fn sgemm(
    (m, n, k): (usize, usize, usize),
    a: &[f32],
    (a_rs, a_cs): (usize, usize),
    b: &[f32],
    (b_rs, b_cs): (usize, usize),
    c: &mut [f32],
    accumulate: bool,
) {
    if m == 0 || n == 0 {
        return;
    }
    let span =
        |rows: usize, cols: usize, rs: usize, cs: usize| (rows - 1) * rs + (cols - 1) * cs + 1;
    assert!(c.len() >= m * n, "gemm destination too small");
    if k == 0 {
        if !accumulate {
            c[..m * n].fill(0.0);
        }
        return;
    }
    assert!(a.len() >= span(m, k, a_rs, a_cs), "gemm lhs too small");
    assert!(b.len() >= span(k, n, b_rs, b_cs), "gemm rhs too small");
    let threads = rayon::current_num_threads();
    let parallelism = if threads > 1 {
        gemm::Parallelism::Rayon(threads)
    } else {
        gemm::Parallelism::None
    };
    // SAFETY: the asserts above keep every strided access inside the slices,
    // and `c` is borrowed mutably so it cannot alias `a` or `b`.
    unsafe {
        gemm::gemm(
            m,
            n,
            k,
            c.as_mut_ptr(),
            1,
            n as isize,
            accumulate,
            a.as_ptr(),
            a_cs as isize,
            a_rs as isize,
            b.as_ptr(),
            b_cs as isize,
            b_rs as isize,
            1.0,
            1.0,
            false,
            false,
            false,
            parallelism,
        );
    }
}

/// Dense convolution of `(C, N, H, W)` activations with an `(O, C·kh·kw)`
/// weight matrix, producing `(O, N·Ho·Wo)`. The patch matrix is rebuilt in
/// the backward pass rather than kept alive between the passes.
#[derive(Debug, Clone, Copy)]
pub struct Conv2dOp {
    pub window: Window,
}

impl Conv2dOp {
    fn pointwise(&self) -> bool {
        self.window.kernel == (1, 1)
            && self.window.stride == (1, 1)
            && self.window.padding == (0, 0)
    }

    fn with_cols<R>(
        &self,
        x: &[f32],
        dims: (usize, usize, usize, usize),
        f: impl FnOnce(&[f32], usize) -> R,
    ) -> Result<R> {
        if self.pointwise() {
            Ok(f(x, dims.1 * dims.2 * dims.3))
        } else {
            let (cols, l) = Im2Col {
                window: self.window,
            }
            .unfold(x, dims)?;
            Ok(f(&cols, l))
        }
    }
}

impl CustomOp2 for Conv2dOp {
    fn name(&self) -> &'static str {
        "conv2d-gemm"
    }

    fn cpu_fwd(
        &self,
        s1: &CpuStorage,
        l1: &Layout,
        s2: &CpuStorage,
        l2: &Layout,
    ) -> Result<(CpuStorage, Shape)> {
        let dims = dims4(l1.shape())?;
        let (x, w) = (f32_slice(s1, l1)?, f32_slice(s2, l2)?);
        let &[o, k] = l2.shape().dims() else {
            bail!("convolution weight must be a matrix, got {:?}", l2.shape());
        };
        let (kh, kw) = self.window.kernel;
        if k != dims.0 * kh * kw {
            bail!("weight has {k} columns, input needs {}", dims.0 * kh * kw);
        }
        let (out, l) = self.with_cols(x, dims, |cols, l| {
            let mut out = vec![0f32; o * l];
            sgemm((o, l, k), w, (k, 1), cols, (l, 1), &mut out, false);
            (out, l)
        })?;
        Ok((CpuStorage::F32(out), Shape::from((o, l))))
    }

    fn bwd(
        &self,
        x: &Tensor,
        w: &Tensor,
        _res: &Tensor,
        grad: &Tensor,
    ) -> Result<(Option<Tensor>, Option<Tensor>)> {
        let dims = dims4(x.shape())?;
        let (o, k) = w.dims2()?;
        let grad = grad.contiguous()?;
        let dw = with_f32(x, |xs| {
            with_f32(&grad, |g| {
                self.with_cols(xs, dims, |cols, l| {
                    let mut dw = vec![0f32; o * k];
                    // dW = G · colsᵀ
                    sgemm((o, k, l), g, (l, 1), cols, (1, l), &mut dw, false);
                    dw
                })
            })
        })???;
        let dw = Tensor::from_vec(dw, (o, k), w.device())?;
        if !x.track_op() {
            return Ok((None, Some(dw)));
        }
        let l = grad.dims2()?.1;
        let dcols = with_f32(w, |ws| {
            with_f32(&grad, |g| {
                let mut dcols = vec![0f32; k * l];
                // dcols = Wᵀ · G
                sgemm((k, l, o), ws, (1, k), g, (l, 1), &mut dcols, false);
                dcols
            })
        })??;
        let dx = if self.pointwise() {
            Tensor::from_vec(dcols, x.shape(), x.device())?
        } else {
            Tensor::from_vec(dcols, (k, l), x.device())?.apply_op1_no_bwd(&Col2Im {
                window: self.window,
                dims,
            })?
        };
        Ok((Some(dx), Some(dw)))
    }
}

/// Adjoint of [`Im2Col`]: sums patch columns back into `(C, N, H, W)`.
#[derive(Debug, Clone, Copy)]
pub struct Col2Im {
    pub window: Window,
    pub dims: (usize, usize, usize, usize),
}

impl CustomOp1 for Col2Im {
    fn name(&self) -> &'static str {
        "col2im"
    }

    fn cpu_fwd(&self, storage: &CpuStorage, layout: &Layout) -> Result<(CpuStorage, Shape)> {
        let cols = f32_slice(storage, layout)?;
        let (c, n, h, w) = self.dims;
        let Window {
            kernel: (kh, kw),
            stride: (sh, sw),
            padding: (ph, pw),
        } = self.window;
        let (ho, wo) = self.window.output_dims(h, w, false)?;
        let l = n * ho * wo;
        if cols.len() != c * kh * kw * l {
            bail!(
                "col2im: {} columns do not match {:?}",
                cols.len(),
                self.dims
            );
        }
        let mut out = vec![0f32; c * n * h * w];
        out.par_chunks_mut(n * h * w)
            .enumerate()
            .for_each(|(ci, planes)| {
                let rows = &cols[ci * kh * kw * l..(ci + 1) * kh * kw * l];
                for i in 0..kh {
                    let (oy_lo, oy_hi) = valid_range(ho, h, sh, ph, i);
                    for j in 0..kw {
                        let (ox_lo, ox_hi) = valid_range(wo, w, sw, pw, j);
                        let row = &rows[(i * kw + j) * l..(i * kw + j + 1) * l];
                        for ni in 0..n {
                            let plane = &mut planes[ni * h * w..(ni + 1) * h * w];
                            for oy in oy_lo..oy_hi {
                                let iy = oy * sh + i - ph;
                                let src = &row[(ni * ho + oy) * wo..(ni * ho + oy + 1) * wo];
                                let line = &mut plane[iy * w..(iy + 1) * w];
                                for ox in ox_lo..ox_hi {
                                    line[ox * sw + j - pw] += src[ox];
                                }
                            }
                        }
                    }
                }
            });
        Ok((CpuStorage::F32(out), Shape::from((c, n, h, w))))
    }
}

/// Max pooling over the trailing two axes; padded cells never win.
#[derive(Debug, Clone, Copy)]
pub struct MaxPool2d {
    pub window: Window,
    pub ceil_mode: bool,
}

impl MaxPool2d {
    /// Index (within the plane) of the maximum of each output window.
    fn argmax(
        &self,
        src: &[f32],
        planes: usize,
        h: usize,
        w: usize,
    ) -> Result<(Vec<u32>, usize, usize)> {
        let (ho, wo) = self.window.output_dims(h, w, self.ceil_mode)?;
        let Window {
            kernel: (kh, kw),
            stride: (sh, sw),
            padding: (ph, pw),
        } = self.window;
        let mut idx = vec![0u32; planes * ho * wo];
        idx.par_chunks_mut(ho * wo)
            .enumerate()
            .for_each(|(p, out)| {
                let plane = &src[p * h * w..(p + 1) * h * w];
                for oy in 0..ho {
                    let y0 = (oy * sh).saturating_sub(ph);
                    let y1 = (oy * sh + kh).saturating_sub(ph).min(h);
                    for ox in 0..wo {
                        let x0 = (ox * sw).saturating_sub(pw);
                        let x1 = (ox * sw + kw).saturating_sub(pw).min(w);
                        let mut best = (f32::NEG_INFINITY, y0 * w + x0);
                        for y in y0..y1 {
                            for x in x0..x1 {
                                let v = plane[y * w + x];
                                if v > best.0 {
                                    best = (v, y * w + x);
                                }
                            }
                        }
                        out[oy * wo + ox] = best.1 as u32;
                    }
                }
            });
        Ok((idx, ho, wo))
    }
}

impl CustomOp1 for MaxPool2d {
    fn name(&self) -> &'static str {
        "max-pool2d"
    }

    fn cpu_fwd(&self, storage: &CpuStorage, layout: &Layout) -> Result<(CpuStorage, Shape)> {
        let (a, b, h, w) = dims4(layout.shape())?;
        let src = f32_slice(storage, layout)?;
        let (idx, ho, wo) = self.argmax(src, a * b, h, w)?;
        let out = idx
            .iter()
            .enumerate()
            .map(|(o, &i)| src[(o / (ho * wo)) * h * w + i as usize])
            .collect();
        Ok((CpuStorage::F32(out), Shape::from((a, b, ho, wo))))
    }

    fn bwd(&self, arg: &Tensor, _res: &Tensor, grad: &Tensor) -> Result<Option<Tensor>> {
        let (a, b, h, w) = dims4(arg.shape())?;
        let src = host_vec(arg)?;
        let g = host_vec(grad)?;
        let (idx, ho, wo) = self.argmax(&src, a * b, h, w)?;
        let mut out = vec![0f32; a * b * h * w];
        for (o, &i) in idx.iter().enumerate() {
            out[(o / (ho * wo)) * h * w + i as usize] += g[o];
        }
        Ok(Some(Tensor::from_vec(out, arg.shape(), arg.device())?))
    }
}

/// Valid input rectangle `(y0, y1, x0, x1)` of one output cell and its divisor.
type PoolCell = (usize, usize, usize, usize, f32);

/// Average pooling over the trailing two axes.
#[derive(Debug, Clone, Copy)]
pub struct AvgPool2d {
    pub window: Window,
    pub ceil_mode: bool,
    /// Divide by the padded window area rather than the valid cell count.
    pub count_include_pad: bool,
}

impl AvgPool2d {
    /// For each output cell: valid input rectangle and divisor.
    fn cells(&self, h: usize, w: usize) -> Result<(Vec<PoolCell>, usize, usize)> {
        let (ho, wo) = self.window.output_dims(h, w, self.ceil_mode)?;
        let Window {
            kernel: (kh, kw),
            stride: (sh, sw),
            padding: (ph, pw),
        } = self.window;
        let mut cells = Vec::with_capacity(ho * wo);
        for oy in 0..ho {
            let ys = oy * sh;
            let ye = (ys + kh).min(h + 2 * ph);
            let (y0, y1) = (ys.saturating_sub(ph), ye.saturating_sub(ph).min(h));
            for ox in 0..wo {
                let xs = ox * sw;
                let xe = (xs + kw).min(w + 2 * pw);
                let (x0, x1) = (xs.saturating_sub(pw), xe.saturating_sub(pw).min(w));
                let div = if self.count_include_pad {
                    (ye - ys) * (xe - xs)
                } else {
                    (y1 - y0) * (x1 - x0)
                };
                cells.push((y0, y1, x0, x1, div.max(1) as f32));
            }
        }
        Ok((cells, ho, wo))
    }
}

impl CustomOp1 for AvgPool2d {
    fn name(&self) -> &'static str {
        "avg-pool2d"
    }

    fn cpu_fwd(&self, storage: &CpuStorage, layout: &Layout) -> Result<(CpuStorage, Shape)> {
        let (a, b, h, w) = dims4(layout.shape())?;
        let src = f32_slice(storage, layout)?;
        let (cells, ho, wo) = self.cells(h, w)?;
        let mut out = vec![0f32; a * b * ho * wo];
        out.par_chunks_mut(ho * wo)
            .enumerate()
            .for_each(|(p, dst)| {
                let plane = &src[p * h * w..(p + 1) * h * w];
                for (o, &(y0, y1, x0, x1, div)) in cells.iter().enumerate() {
                    let mut sum = 0f32;
                    for y in y0..y1 {
                        sum += plane[y * w + x0..y * w + x1].iter().sum::<f32>();
                    }
                    dst[o] = sum / div;
                }
            });
        Ok((CpuStorage::F32(out), Shape::from((a, b, ho, wo))))
    }

    fn bwd(&self, arg: &Tensor, _res: &Tensor, grad: &Tensor) -> Result<Option<Tensor>> {
        let (a, b, h, w) = dims4(arg.shape())?;
        let g = host_vec(grad)?;
        let (cells, ho, wo) = self.cells(h, w)?;
        let mut out = vec![0f32; a * b * h * w];
        out.par_chunks_mut(h * w)
            .enumerate()
            .for_each(|(p, plane)| {
                let gp = &g[p * ho * wo..(p + 1) * ho * wo];
                for (o, &(y0, y1, x0, x1, div)) in cells.iter().enumerate() {
                    let share = gp[o] / div;
                    for y in y0..y1 {
                        for v in &mut plane[y * w + x0..y * w + x1] {
                            *v += share;
                        }
                    }
                }
            });
        Ok(Some(Tensor::from_vec(out, arg.shape(), arg.device())?))
    }
}

/// Runs `f` on the contiguous f32 data of `t` without copying it out.
pub fn with_f32<R>(t: &Tensor, f: impl FnOnce(&[f32]) -> R) -> Result<R> {
    let t = t.contiguous()?;
    let (storage, layout) = t.storage_and_layout();
    match &*storage {
        Storage::Cpu(cpu) => Ok(f(f32_slice(cpu, layout)?)),
        _ => bail!("only CPU tensors are supported"),
    }
}

/// Per-row mean and biased variance of a `(C, M)` tensor, accumulated in f64.
pub fn channel_moments(x: &Tensor) -> Result<(Vec<f64>, Vec<f64>)> {
    let (c, m) = x.dims2()?;
    with_f32(x, |data| {
        data.par_chunks(m.max(1)).take(c).map(row_moments).unzip()
    })
}

fn row_moments(row: &[f32]) -> (f64, f64) {
    let n = row.len().max(1) as f64;
    let mean = row.iter().map(|&v| f64::from(v)).sum::<f64>() / n;
    let var = row
        .iter()
        .map(|&v| (f64::from(v) - mean).powi(2))
        .sum::<f64>()
        / n;
    (mean, var)
}

/// Training-mode batch normalisation of `(C, M)` rows with per-row scale
/// (`gamma`) and shift (`beta`), normalising with the batch statistics.
#[derive(Debug, Clone, Copy)]
pub struct BatchNormTrain {
    pub eps: f64,
}

impl CustomOp3 for BatchNormTrain {
    fn name(&self) -> &'static str {
        "batch-norm-train"
    }

    fn cpu_fwd(
        &self,
        s1: &CpuStorage,
        l1: &Layout,
        s2: &CpuStorage,
        l2: &Layout,
        s3: &CpuStorage,
        l3: &Layout,
    ) -> Result<(CpuStorage, Shape)> {
        let x = f32_slice(s1, l1)?;
        let (gamma, beta) = (f32_slice(s2, l2)?, f32_slice(s3, l3)?);
        let &[c, m] = l1.shape().dims() else {
            bail!("batch norm expects (C, M) rows, got {:?}", l1.shape());
        };
        if gamma.len() != c || beta.len() != c {
            bail!(
                "batch norm: {c} rows but {} scales and {} shifts",
                gamma.len(),
                beta.len()
            );
        }
        let mut out = vec![0f32; c * m];
        out.par_chunks_mut(m.max(1))
            .zip(x.par_chunks(m.max(1)))
            .enumerate()
            .for_each(|(ci, (dst, row))| {
                let (mean, var) = row_moments(row);
                let scale = f64::from(gamma[ci]) / (var + self.eps).sqrt();
                let shift = f64::from(beta[ci]) - mean * scale;
                let (scale, shift) = (scale as f32, shift as f32);
                for (d, &v) in dst.iter_mut().zip(row) {
                    *d = v * scale + shift;
                }
            });
        Ok((CpuStorage::F32(out), l1.shape().clone()))
    }

    fn bwd(
        &self,
        x: &Tensor,
        gamma: &Tensor,
        _beta: &Tensor,
        _res: &Tensor,
        grad: &Tensor,
    ) -> Result<(Option<Tensor>, Option<Tensor>, Option<Tensor>)> {
        let (c, m) = x.dims2()?;
        let gamma = gamma.to_vec1::<f32>()?;
        let grad = grad.contiguous()?;
        let eps = self.eps;
        let mut dx = vec![0f32; c * m];
        let (dgamma, dbeta): (Vec<f32>, Vec<f32>) = with_f32(x, |xs| {
            with_f32(&grad, |gs| {
                dx.par_chunks_mut(m.max(1))
                    .zip(xs.par_chunks(m.max(1)).zip(gs.par_chunks(m.max(1))))
                    .enumerate()
                    .map(|(ci, (dst, (row, g)))| {
                        let (mean, var) = row_moments(row);
                        let istd = 1.0 / (var + eps).sqrt();
                        let (mut sum_g, mut sum_gx) = (0.0f64, 0.0f64);
                        for (&v, &gv) in row.iter().zip(g) {
                            sum_g += f64::from(gv);
                            sum_gx += f64::from(gv) * (f64::from(v) - mean) * istd;
                        }
                        let n = m as f64;
                        let k = f64::from(gamma[ci]) * istd / n;
                        for ((d, &v), &gv) in dst.iter_mut().zip(row).zip(g) {
                            let xhat = (f64::from(v) - mean) * istd;
                            *d = (k * (n * f64::from(gv) - sum_g - xhat * sum_gx)) as f32;
                        }
                        (sum_gx as f32, sum_g as f32)
                    })
                    .unzip()
            })
        })??;
        let dev = x.device();
        Ok((
            Some(Tensor::from_vec(dx, (c, m), dev)?),
            Some(Tensor::from_vec(dgamma, c, dev)?),
            Some(Tensor::from_vec(dbeta, c, dev)?),
        ))
    }
}

/// `max(x, 0)` with a single-pass backward.
#[derive(Debug, Clone, Copy)]
pub struct Relu;

impl CustomOp1 for Relu {
    fn name(&self) -> &'static str {
        "relu"
    }

    fn cpu_fwd(&self, storage: &CpuStorage, layout: &Layout) -> Result<(CpuStorage, Shape)> {
        let x = f32_slice(storage, layout)?;
        let mut out = vec![0f32; x.len()];
        out.par_chunks_mut(1 << 16)
            .zip(x.par_chunks(1 << 16))
            .for_each(|(d, s)| {
                for (d, &v) in d.iter_mut().zip(s) {
                    *d = v.max(0.0);
                }
            });
        Ok((CpuStorage::F32(out), layout.shape().clone()))
    }

    fn bwd(&self, _arg: &Tensor, res: &Tensor, grad: &Tensor) -> Result<Option<Tensor>> {
        let mut dx = vec![0f32; res.elem_count()];
        with_f32(res, |r| {
            with_f32(grad, |g| {
                dx.par_chunks_mut(1 << 16)
                    .zip(r.par_chunks(1 << 16).zip(g.par_chunks(1 << 16)))
                    .for_each(|(d, (r, g))| {
                        for ((d, &r), &g) in d.iter_mut().zip(r).zip(g) {
                            *d = if r > 0.0 { g } else { 0.0 };
                        }
                    });
            })
        })??;
        Ok(Some(Tensor::from_vec(dx, res.shape(), res.device())?))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use candle_core::{Device, Var};

    fn naive_conv(
        x: &[f32],
        dims: (usize, usize, usize, usize),
        wt: &[f32],
        o: usize,
        win: Window,
    ) -> Vec<f32> {
        // x is (C, N, H, W); weights (O, C, kh, kw); output (O, N, Ho, Wo).
        let (c, n, h, w) = dims;
        let (ho, wo) = win.output_dims(h, w, false).unwrap();
        let (kh, kw) = win.kernel;
        let mut out = vec![0f32; o * n * ho * wo];
        for oc in 0..o {
            for ni in 0..n {
                for oy in 0..ho {
                    for ox in 0..wo {
                        let mut acc = 0f32;
                        for ci in 0..c {
                            for i in 0..kh {
                                for j in 0..kw {
                                    let iy =
                                        (oy * win.stride.0 + i) as isize - win.padding.0 as isize;
                                    let ix =
                                        (ox * win.stride.1 + j) as isize - win.padding.1 as isize;
                                    if iy < 0 || ix < 0 || iy >= h as isize || ix >= w as isize {
                                        continue;
                                    }
                                    acc += x[((ci * n + ni) * h + iy as usize) * w + ix as usize]
                                        * wt[((oc * c + ci) * kh + i) * kw + j];
                                }
                            }
                        }
                        out[((oc * n + ni) * ho + oy) * wo + ox] = acc;
                    }
                }
            }
        }
        out
    }

    fn seq(len: usize, scale: f32) -> Vec<f32> {
        (0..len)
            .map(|i| ((i * 37 % 101) as f32 - 50.0) * scale)
            .collect()
    }

    #[test]
    fn im2col_matmul_matches_direct_convolution() {
        let dev = Device::Cpu;
        for win in [
            Window::square(3, 1, 1),
            Window::square(3, 2, 0),
            Window::square(7, 2, 3),
            Window {
                kernel: (1, 3),
                stride: (1, 1),
                padding: (0, 1),
            },
        ] {
            let dims = (2, 3, 9, 8);
            let x = seq(2 * 3 * 9 * 8, 0.01);
            let wt = seq(4 * 2 * win.kernel.0 * win.kernel.1, 0.02);
            let xt = Tensor::from_vec(x.clone(), dims, &dev).unwrap();
            let cols = xt.apply_op1(Im2Col { window: win }).unwrap();
            let wm =
                Tensor::from_vec(wt.clone(), (4, 2 * win.kernel.0 * win.kernel.1), &dev).unwrap();
            let got = wm
                .matmul(&cols)
                .unwrap()
                .flatten_all()
                .unwrap()
                .to_vec1::<f32>()
                .unwrap();
            let want = naive_conv(&x, dims, &wt, 4, win);
            assert_eq!(got.len(), want.len());
            for (g, w) in got.iter().zip(&want) {
                assert!((g - w).abs() < 1e-4, "{win:?}: {g} vs {w}");
            }
        }
    }

    #[test]
    fn col2im_is_adjoint_of_im2col() {
        // <im2col(x), y> == <x, col2im(y)> for arbitrary x, y.
        let dev = Device::Cpu;
        let win = Window::square(3, 2, 1);
        let dims = (3, 2, 7, 6);
        let x = Tensor::from_vec(seq(3 * 2 * 7 * 6, 0.1), dims, &dev).unwrap();
        let cols = x.apply_op1_no_bwd(&Im2Col { window: win }).unwrap();
        let y = Tensor::from_vec(seq(cols.elem_count(), 0.03), cols.shape(), &dev).unwrap();
        let back = y.apply_op1_no_bwd(&Col2Im { window: win, dims }).unwrap();
        let lhs = (cols * &y)
            .unwrap()
            .sum_all()
            .unwrap()
            .to_scalar::<f32>()
            .unwrap();
        let rhs = (x * back)
            .unwrap()
            .sum_all()
            .unwrap()
            .to_scalar::<f32>()
            .unwrap();
        assert!(
            (lhs - rhs).abs() < 1e-3 * lhs.abs().max(1.0),
            "{lhs} vs {rhs}"
        );
    }

    #[test]
    fn max_pool_forward_backward() {
        let dev = Device::Cpu;
        let x = Var::from_tensor(
            &Tensor::from_vec(
                vec![
                    1f32, 2., 3., 4., //
                    5., 6., 7., 8., //
                    9., 10., 11., 12., //
                    13., 14., 15., 16.,
                ],
                (1, 1, 4, 4),
                &dev,
            )
            .unwrap(),
        )
        .unwrap();
        let pool = MaxPool2d {
            window: Window::square(3, 2, 1),
            ceil_mode: false,
        };
        let y = x.as_tensor().apply_op1(pool).unwrap();
        assert_eq!(
            y.flatten_all().unwrap().to_vec1::<f32>().unwrap(),
            [6., 8., 14., 16.]
        );
        let grads = y.sum_all().unwrap().backward().unwrap();
        let g = grads
            .get(&x)
            .unwrap()
            .flatten_all()
            .unwrap()
            .to_vec1::<f32>()
            .unwrap();
        let mut want = vec![0f32; 16];
        for i in [5, 7, 13, 15] {
            want[i] = 1.0;
        }
        assert_eq!(g, want);
    }

    #[test]
    fn ceil_mode_keeps_partial_window() {
        let w = Window::square(3, 2, 0);
        assert_eq!(w.output_dims(113, 113, true).unwrap(), (56, 56));
        assert_eq!(w.output_dims(113, 113, false).unwrap(), (56, 56));
        assert_eq!(w.output_dims(56, 56, true).unwrap(), (28, 28));
        assert_eq!(w.output_dims(56, 56, false).unwrap(), (27, 27));
    }

    #[test]
    fn avg_pool_padding_divisors() {
        let dev = Device::Cpu;
        let x = Tensor::ones((1, 1, 3, 3), candle_core::DType::F32, &dev).unwrap();
        let incl = AvgPool2d {
            window: Window::square(3, 1, 1),
            ceil_mode: false,
            count_include_pad: true,
        };
        let y = x
            .apply_op1_no_bwd(&incl)
            .unwrap()
            .flatten_all()
            .unwrap()
            .to_vec1::<f32>()
            .unwrap();
        assert!((y[0] - 4.0 / 9.0).abs() < 1e-6 && (y[4] - 1.0).abs() < 1e-6);
        let excl = AvgPool2d {
            count_include_pad: false,
            ..incl
        };
        let y = x
            .apply_op1_no_bwd(&excl)
            .unwrap()
            .flatten_all()
            .unwrap()
            .to_vec1::<f32>()
            .unwrap();
        assert!(y.iter().all(|v| (v - 1.0).abs() < 1e-6));
    }

    #[test]
    fn avg_pool_gradient_matches_finite_difference() {
        let dev = Device::Cpu;
        let data = seq(2 * 5 * 5, 0.05);
        let pool = AvgPool2d {
            window: Window::square(2, 2, 0),
            ceil_mode: false,
            count_include_pad: true,
        };
        let weights = Tensor::from_vec(seq(2 * 2 * 2, 0.3), (1, 2, 2, 2), &dev).unwrap();
        let loss = |v: &[f32]| -> f32 {
            let t = Tensor::from_vec(v.to_vec(), (1, 2, 5, 5), &dev).unwrap();
            (t.apply_op1_no_bwd(&pool).unwrap() * &weights)
                .unwrap()
                .sum_all()
                .unwrap()
                .to_scalar::<f32>()
                .unwrap()
        };
        let x =
            Var::from_tensor(&Tensor::from_vec(data.clone(), (1, 2, 5, 5), &dev).unwrap()).unwrap();
        let y = (x.as_tensor().apply_op1(pool).unwrap() * &weights)
            .unwrap()
            .sum_all()
            .unwrap();
        let g = y
            .backward()
            .unwrap()
            .get(&x)
            .unwrap()
            .flatten_all()
            .unwrap()
            .to_vec1::<f32>()
            .unwrap();
        for i in [0usize, 6, 24, 31, 49] {
            let mut up = data.clone();
            up[i] += 0.5;
            let mut down = data.clone();
            down[i] -= 0.5;
            let fd = (loss(&up) - loss(&down)) / 1.0;
            assert!((fd - g[i]).abs() < 1e-4, "cell {i}: {fd} vs {}", g[i]);
        }
    }

    #[test]
    fn fused_batch_norm_matches_composite_gradients() {
        use candle_core::{Device, Var};
        let dev = Device::Cpu;
        let x = Var::from_tensor(
            &Tensor::from_vec(
                (0..24)
                    .map(|v| ((v * 7 % 11) as f32) / 3.0)
                    .collect::<Vec<_>>(),
                (3, 8),
                &dev,
            )
            .unwrap(),
        )
        .unwrap();
        let g = Var::from_tensor(&Tensor::new(&[1.5f32, -0.5, 2.0], &dev).unwrap()).unwrap();
        let b = Var::from_tensor(&Tensor::new(&[0.1f32, 0.2, -0.3], &dev).unwrap()).unwrap();
        let w = Tensor::from_vec(
            (0..24).map(|v| (v as f32 * 0.37).sin()).collect::<Vec<_>>(),
            (3, 8),
            &dev,
        )
        .unwrap();

        let fused = x
            .as_tensor()
            .apply_op3(g.as_tensor(), b.as_tensor(), BatchNormTrain { eps: 1e-5 })
            .unwrap();
        let mean = x.as_tensor().mean_keepdim(1).unwrap();
        let centered = x.as_tensor().broadcast_sub(&mean).unwrap();
        let var = centered.sqr().unwrap().mean_keepdim(1).unwrap();
        let composite = centered
            .broadcast_div(&(var + 1e-5).unwrap().sqrt().unwrap())
            .unwrap()
            .broadcast_mul(&g.as_tensor().reshape((3, 1)).unwrap())
            .unwrap()
            .broadcast_add(&b.as_tensor().reshape((3, 1)).unwrap())
            .unwrap();
        let close = |a: &Tensor, b: &Tensor| {
            let d = (a - b)
                .unwrap()
                .abs()
                .unwrap()
                .max_all()
                .unwrap()
                .to_scalar::<f32>()
                .unwrap();
            assert!(d < 1e-4, "difference {d}");
        };
        close(&fused, &composite);
        let gf = (fused * &w).unwrap().sum_all().unwrap().backward().unwrap();
        let gc = (composite * &w)
            .unwrap()
            .sum_all()
            .unwrap()
            .backward()
            .unwrap();
        for v in [&x, &g, &b] {
            close(gf.get(v).unwrap(), gc.get(v).unwrap());
        }
    }

    #[test]
    fn relu_gradient_masks_negative_inputs() {
        use candle_core::{Device, Var};
        let x =
            Var::from_tensor(&Tensor::new(&[-1f32, 0.0, 2.0, 3.0], &Device::Cpu).unwrap()).unwrap();
        let y = x.as_tensor().apply_op1(Relu).unwrap();
        assert_eq!(y.to_vec1::<f32>().unwrap(), [0.0, 0.0, 2.0, 3.0]);
        let g = (y * 2.0).unwrap().sum_all().unwrap().backward().unwrap();
        assert_eq!(
            g.get(&x).unwrap().to_vec1::<f32>().unwrap(),
            [0.0, 0.0, 2.0, 2.0]
        );
    }

    #[test]
    fn fused_convolution_gradients_match_im2col_matmul() {
        use candle_core::{Device, Var};
        let dev = Device::Cpu;
        let window = Window::square(3, 2, 1);
        let x = Var::from_tensor(
            &Tensor::from_vec(
                (0..2 * 2 * 5 * 5)
                    .map(|v| ((v * 5 % 13) as f32) / 7.0)
                    .collect::<Vec<_>>(),
                (2, 2, 5, 5),
                &dev,
            )
            .unwrap(),
        )
        .unwrap();
        let w = Var::from_tensor(
            &Tensor::from_vec(
                (0..3 * 18)
                    .map(|v| ((v * 3 % 11) as f32) / 5.0 - 1.0)
                    .collect::<Vec<_>>(),
                (3, 18),
                &dev,
            )
            .unwrap(),
        )
        .unwrap();
        let fused = x
            .as_tensor()
            .apply_op2(w.as_tensor(), Conv2dOp { window })
            .unwrap();
        let reference = w
            .as_tensor()
            .matmul(&x.as_tensor().apply_op1(Im2Col { window }).unwrap())
            .unwrap();
        let probe = Tensor::from_vec(
            (0..fused.elem_count())
                .map(|v| (v as f32 * 0.3).cos())
                .collect::<Vec<_>>(),
            fused.shape(),
            &dev,
        )
        .unwrap();
        let diff = |a: &Tensor, b: &Tensor| {
            a.sub(b)
                .unwrap()
                .abs()
                .unwrap()
                .max_all()
                .unwrap()
                .to_scalar::<f32>()
                .unwrap()
        };
        assert!(diff(&fused, &reference) < 1e-4);
        let gf = (fused * &probe)
            .unwrap()
            .sum_all()
            .unwrap()
            .backward()
            .unwrap();
        let gr = (reference * &probe)
            .unwrap()
            .sum_all()
            .unwrap()
            .backward()
            .unwrap();
        assert!(diff(gf.get(&x).unwrap(), gr.get(&x).unwrap()) < 1e-4);
        assert!(diff(gf.get(&w).unwrap(), gr.get(&w).unwrap()) < 1e-4);
    }
}
