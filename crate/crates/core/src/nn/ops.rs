//! Layer primitives with explicit forward and backward passes.
//!
//! Convolution works on one sample `[C, H, W]` at a time through im2col and a
//! GEMM. Pooling and ReLU accept any leading batch axes. Dense layers take a
//! batch `[N, in]`.

use crate::error::{Error, Result};
use crate::rng::RandomStream;

use super::tensor::{gemm, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvGeometry {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    pub kernel: usize,
    pub stride: usize,
    pub pad: usize,
}

impl ConvGeometry {
    pub fn out_height(&self) -> usize {
        (self.height + 2 * self.pad - self.kernel) / self.stride + 1
    }

    pub fn out_width(&self) -> usize {
        (self.width + 2 * self.pad - self.kernel) / self.stride + 1
    }

    fn patch_len(&self) -> usize {
        self.channels * self.kernel * self.kernel
    }
}

fn conv_geometry(op: &'static str, input: &[usize], weights: &[usize], stride: usize, pad: usize) -> Result<ConvGeometry> {
    let (&[c, h, w], &[_, wc, kh, kw]) = (input, weights) else {
        return Err(Error::shape(op, format!("input {input:?} must be [C,H,W], weights {weights:?} [O,C,k,k]")));
    };
    if wc != c || kh != kw || kh == 0 || stride == 0 {
        return Err(Error::shape(op, format!("weights {weights:?} do not fit input {input:?} at stride {stride}")));
    }
    if h + 2 * pad < kh || w + 2 * pad < kw {
        return Err(Error::shape(op, format!("{kh}x{kw} kernel exceeds padded input {h}x{w} (pad {pad})")));
    }
    Ok(ConvGeometry { channels: c, height: h, width: w, kernel: kh, stride, pad })
}

/// Unfolds padded patches into a `[C·k·k, Ho·Wo]` matrix.
fn im2col(x: &[f64], g: &ConvGeometry) -> Vec<f64> {
    let (ho, wo) = (g.out_height(), g.out_width());
    let mut cols = vec![0.0; g.patch_len() * ho * wo];
    for c in 0..g.channels {
        let plane = &x[c * g.height * g.width..(c + 1) * g.height * g.width];
        for ki in 0..g.kernel {
            for kj in 0..g.kernel {
                let row = ((c * g.kernel + ki) * g.kernel + kj) * ho * wo;
                for oy in 0..ho {
                    let iy = (oy * g.stride + ki) as isize - g.pad as isize;
                    if iy < 0 || iy >= g.height as isize {
                        continue;
                    }
                    let src = &plane[iy as usize * g.width..(iy as usize + 1) * g.width];
                    let dst = &mut cols[row + oy * wo..row + (oy + 1) * wo];
                    for (ox, d) in dst.iter_mut().enumerate() {
                        let ix = (ox * g.stride + kj) as isize - g.pad as isize;
                        if ix >= 0 && ix < g.width as isize {
                            *d = src[ix as usize];
                        }
                    }
                }
            }
        }
    }
    cols
}

/// Adjoint of [`im2col`]: scatters patch gradients back onto the input.
fn col2im(cols: &[f64], g: &ConvGeometry) -> Vec<f64> {
    let (ho, wo) = (g.out_height(), g.out_width());
    let mut x = vec![0.0; g.channels * g.height * g.width];
    for c in 0..g.channels {
        let plane = &mut x[c * g.height * g.width..(c + 1) * g.height * g.width];
        for ki in 0..g.kernel {
            for kj in 0..g.kernel {
                let row = ((c * g.kernel + ki) * g.kernel + kj) * ho * wo;
                for oy in 0..ho {
                    let iy = (oy * g.stride + ki) as isize - g.pad as isize;
                    if iy < 0 || iy >= g.height as isize {
                        continue;
                    }
                    let dst = &mut plane[iy as usize * g.width..(iy as usize + 1) * g.width];
                    for (ox, s) in cols[row + oy * wo..row + (oy + 1) * wo].iter().enumerate() {
                        let ix = (ox * g.stride + kj) as isize - g.pad as isize;
                        if ix >= 0 && ix < g.width as isize {
                            dst[ix as usize] += s;
                        }
                    }
                }
            }
        }
    }
    x
}

/// Cross-correlation of `input [C,H,W]` with `weights [O,C,k,k]` plus `bias [O]`.
pub fn conv2d_forward(input: &Tensor, weights: &Tensor, bias: &Tensor, stride: usize, pad: usize) -> Result<Tensor> {
    let g = conv_geometry("conv2d_forward", input.shape(), weights.shape(), stride, pad)?;
    let out_c = weights.shape()[0];
    if bias.shape() != [out_c] {
        return Err(Error::shape("conv2d_forward", format!("bias {:?} for {out_c} filters", bias.shape())));
    }
    let (ho, wo) = (g.out_height(), g.out_width());
    let cols = im2col(input.data(), &g);
    let mut out = vec![0.0; out_c * ho * wo];
    for (o, row) in out.chunks_mut(ho * wo).enumerate() {
        row.fill(bias.data()[o]);
    }
    gemm(out_c, g.patch_len(), ho * wo, weights.data(), false, &cols, false, &mut out, 1.0);
    Tensor::new(&[out_c, ho, wo], out)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConvGrads {
    /// Absent when the caller did not ask for it.
    pub input: Option<Tensor>,
    pub weights: Tensor,
    pub bias: Tensor,
}

pub fn conv2d_backward(
    grad_out: &Tensor,
    input: &Tensor,
    weights: &Tensor,
    stride: usize,
    pad: usize,
    need_input_grad: bool,
) -> Result<ConvGrads> {
    let g = conv_geometry("conv2d_backward", input.shape(), weights.shape(), stride, pad)?;
    let out_c = weights.shape()[0];
    let (ho, wo) = (g.out_height(), g.out_width());
    if grad_out.shape() != [out_c, ho, wo] {
        return Err(Error::shape(
            "conv2d_backward",
            format!("grad_out {:?}, expected {:?}", grad_out.shape(), [out_c, ho, wo]),
        ));
    }
    let cols = im2col(input.data(), &g);
    let mut gw = vec![0.0; out_c * g.patch_len()];
    gemm(out_c, ho * wo, g.patch_len(), grad_out.data(), false, &cols, true, &mut gw, 0.0);
    let gb = grad_out.data().chunks(ho * wo).map(|r| r.iter().sum()).collect();
    let gi = if need_input_grad {
        let mut gcols = cols;
        gemm(g.patch_len(), out_c, ho * wo, weights.data(), true, grad_out.data(), false, &mut gcols, 0.0);
        Some(Tensor::new(input.shape(), col2im(&gcols, &g))?)
    } else {
        None
    };
    Ok(ConvGrads { input: gi, weights: Tensor::new(weights.shape(), gw)?, bias: Tensor::new(&[out_c], gb)? })
}

/// 2×2, stride-2 max pooling over the last two axes. Returns the pooled
/// tensor and, per output, the winning window position `dy·2 + dx`; ties go
/// to the first position in row-major order.
pub fn maxpool2d(input: &Tensor) -> Result<(Tensor, Vec<u8>)> {
    let s = input.shape();
    if s.len() < 2 || s[s.len() - 1] % 2 != 0 || s[s.len() - 2] % 2 != 0 {
        return Err(Error::shape("maxpool2d", format!("input {s:?} needs even trailing extents")));
    }
    let (h, w) = (s[s.len() - 2], s[s.len() - 1]);
    let (ho, wo) = (h / 2, w / 2);
    let planes = input.len() / (h * w);
    let mut out = Vec::with_capacity(planes * ho * wo);
    let mut argmax = Vec::with_capacity(planes * ho * wo);
    for plane in input.data().chunks(h * w) {
        for oy in 0..ho {
            for ox in 0..wo {
                let mut best = (plane[2 * oy * w + 2 * ox], 0u8);
                for k in 1..4u8 {
                    let v = plane[(2 * oy + k as usize / 2) * w + 2 * ox + k as usize % 2];
                    if v > best.0 {
                        best = (v, k);
                    }
                }
                out.push(best.0);
                argmax.push(best.1);
            }
        }
    }
    let mut shape = s.to_vec();
    let n = shape.len();
    shape[n - 2] = ho;
    shape[n - 1] = wo;
    Ok((Tensor::new(&shape, out)?, argmax))
}

pub fn maxpool2d_backward(grad_out: &Tensor, argmax: &[u8], input_shape: &[usize]) -> Result<Tensor> {
    let n = input_shape.len();
    if n < 2 || grad_out.len() != argmax.len() || grad_out.len() * 4 != input_shape.iter().product::<usize>() {
        return Err(Error::shape(
            "maxpool2d_backward",
            format!("grad {:?} with {} indices for input {input_shape:?}", grad_out.shape(), argmax.len()),
        ));
    }
    let (h, w) = (input_shape[n - 2], input_shape[n - 1]);
    let (ho, wo) = (h / 2, w / 2);
    let mut gi = vec![0.0; h * w * (grad_out.len() / (ho * wo))];
    for (p, plane) in gi.chunks_mut(h * w).enumerate() {
        for oy in 0..ho {
            for ox in 0..wo {
                let o = p * ho * wo + oy * wo + ox;
                let k = argmax[o] as usize;
                plane[(2 * oy + k / 2) * w + 2 * ox + k % 2] += grad_out.data()[o];
            }
        }
    }
    Tensor::new(input_shape, gi)
}

/// In-place ReLU; the mask marks positive inputs.
pub fn relu_forward(mut x: Tensor) -> (Tensor, Vec<bool>) {
    let mask: Vec<bool> = x.data().iter().map(|&v| v > 0.0).collect();
    for (v, &m) in x.data_mut().iter_mut().zip(&mask) {
        if !m {
            *v = 0.0;
        }
    }
    (x, mask)
}

pub fn relu_backward(mut grad: Tensor, mask: &[bool]) -> Result<Tensor> {
    if grad.len() != mask.len() {
        return Err(Error::shape("relu_backward", format!("{} gradients for {} inputs", grad.len(), mask.len())));
    }
    for (g, &m) in grad.data_mut().iter_mut().zip(mask) {
        if !m {
            *g = 0.0;
        }
    }
    Ok(grad)
}

fn dense_dims(op: &'static str, x: &Tensor, w: &Tensor) -> Result<(usize, usize, usize)> {
    match (x.shape(), w.shape()) {
        (&[n, i], &[o, wi]) if i == wi => Ok((n, i, o)),
        (xs, ws) => Err(Error::shape(op, format!("input {xs:?} against weights {ws:?} ([out, in])"))),
    }
}

/// `x [N, in] · wᵀ + b` with `w [out, in]`.
pub fn dense_forward(x: &Tensor, w: &Tensor, b: &Tensor) -> Result<Tensor> {
    let (n, i, o) = dense_dims("dense_forward", x, w)?;
    if b.shape() != [o] {
        return Err(Error::shape("dense_forward", format!("bias {:?} for {o} outputs", b.shape())));
    }
    let mut out: Vec<f64> = (0..n).flat_map(|_| b.data().iter().copied()).collect();
    gemm(n, i, o, x.data(), false, w.data(), true, &mut out, 1.0);
    Tensor::new(&[n, o], out)
}

#[derive(Debug, Clone, PartialEq)]
pub struct DenseGrads {
    pub input: Tensor,
    pub weights: Tensor,
    pub bias: Tensor,
}

pub fn dense_backward(grad_out: &Tensor, x: &Tensor, w: &Tensor) -> Result<DenseGrads> {
    let (n, i, o) = dense_dims("dense_backward", x, w)?;
    if grad_out.shape() != [n, o] {
        return Err(Error::shape("dense_backward", format!("grad_out {:?}, expected [{n}, {o}]", grad_out.shape())));
    }
    let mut gx = vec![0.0; n * i];
    gemm(n, o, i, grad_out.data(), false, w.data(), false, &mut gx, 0.0);
    let mut gw = vec![0.0; o * i];
    gemm(o, n, i, grad_out.data(), true, x.data(), false, &mut gw, 0.0);
    let mut gb = vec![0.0; o];
    for row in grad_out.data().chunks(o) {
        for (acc, g) in gb.iter_mut().zip(row) {
            *acc += g;
        }
    }
    Ok(DenseGrads {
        input: Tensor::new(&[n, i], gx)?,
        weights: Tensor::new(&[o, i], gw)?,
        bias: Tensor::new(&[o], gb)?,
    })
}

fn check_dropout(p: f64) -> Result<()> {
    if (0.0..1.0).contains(&p) {
        Ok(())
    } else {
        Err(Error::Domain(format!("dropout probability {p} outside [0, 1)")))
    }
}

/// Inverted dropout. In training mode each element is zeroed with
/// probability `p` and survivors are scaled by `1/(1-p)`; the returned mask
/// marks survivors. Evaluation mode is the identity.
pub fn dropout_forward(mut x: Tensor, p: f64, training: bool, rng: &mut RandomStream) -> Result<(Tensor, Option<Vec<bool>>)> {
    check_dropout(p)?;
    if !training || p == 0.0 {
        return Ok((x, None));
    }
    let scale = 1.0 / (1.0 - p);
    let mask: Vec<bool> = (0..x.len()).map(|_| !rng.bernoulli(p)).collect();
    for (v, &keep) in x.data_mut().iter_mut().zip(&mask) {
        *v = if keep { *v * scale } else { 0.0 };
    }
    Ok((x, Some(mask)))
}

pub fn dropout_backward(mut grad: Tensor, p: f64, mask: Option<&[bool]>) -> Result<Tensor> {
    check_dropout(p)?;
    let Some(mask) = mask else {
        return Ok(grad);
    };
    if mask.len() != grad.len() {
        return Err(Error::shape("dropout_backward", format!("{} gradients, {} mask bits", grad.len(), mask.len())));
    }
    let scale = 1.0 / (1.0 - p);
    for (g, &keep) in grad.data_mut().iter_mut().zip(mask) {
        *g = if keep { *g * scale } else { 0.0 };
    }
    Ok(grad)
}

/// Mean squared error and its gradient `2(pred - target)/n`.
pub fn mse_loss(pred: &Tensor, target: &Tensor) -> Result<(f64, Tensor)> {
    if pred.shape() != target.shape() || pred.is_empty() {
        return Err(Error::shape("mse_loss", format!("pred {:?} vs target {:?}", pred.shape(), target.shape())));
    }
    let n = pred.len() as f64;
    let diff: Vec<f64> = pred.data().iter().zip(target.data()).map(|(p, t)| p - t).collect();
    let loss = diff.iter().map(|d| d * d).sum::<f64>() / n;
    let grad = diff.into_iter().map(|d| 2.0 * d / n).collect();
    Ok((loss, Tensor::new(pred.shape(), grad)?))
}
