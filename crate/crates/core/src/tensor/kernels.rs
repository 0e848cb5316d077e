//! Forward kernels and their adjoints.
//!
//! Every kernel here is a plain function on [`Tensor`]s. The autograd tape
//! calls the forward kernel and records enough state to call the matching
//! `*_backward` kernel later. Spatial maps are `H×W×C` with channels fastest.
//!
//! Reductions and accumulations run in a fixed order, so results never
//! depend on the worker count.

use rayon::prelude::*;

use super::{check_same_dtype, check_same_shape, Tensor};
use crate::error::{Error, Result};

// ---------------------------------------------------------------------------
// elementwise

pub fn add(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    zip_with("add", a, b, |x, y| x + y)
}

pub fn sub(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    zip_with("sub", a, b, |x, y| x - y)
}

pub fn mul(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    zip_with("mul", a, b, |x, y| x * y)
}

fn zip_with(op: &'static str, a: &Tensor, b: &Tensor, f: impl Fn(f64, f64) -> f64) -> Result<Tensor> {
    check_same_shape(op, a, b)?;
    let data = a.data().iter().zip(b.data()).map(|(&x, &y)| f(x, y)).collect();
    Ok(Tensor::from_parts(a.shape().to_vec(), data, a.dtype()))
}

pub fn relu(x: &Tensor) -> Tensor {
    x.map(|v| if v > 0.0 { v } else { 0.0 })
}

pub fn clamp(x: &Tensor, lo: f64, hi: f64) -> Tensor {
    x.map(|v| v.clamp(lo, hi))
}

/// Gradient mask of `clamp`: 1 strictly inside `(lo, hi)`, else 0.
pub fn clamp_backward(x: &Tensor, grad: &Tensor, lo: f64, hi: f64) -> Tensor {
    let data = x
        .data()
        .iter()
        .zip(grad.data())
        .map(|(&v, &g)| if v > lo && v < hi { g } else { 0.0 })
        .collect();
    Tensor::from_parts(x.shape().to_vec(), data, x.dtype())
}

// ---------------------------------------------------------------------------
// reductions

pub fn sum(x: &Tensor) -> Tensor {
    Tensor::scalar(x.data().iter().sum(), x.dtype())
}

pub fn mean(x: &Tensor) -> Tensor {
    Tensor::scalar(x.data().iter().sum::<f64>() / x.numel() as f64, x.dtype())
}

// ---------------------------------------------------------------------------
// matrix ops

fn as_matrix(op: &'static str, t: &Tensor) -> Result<(usize, usize)> {
    match t.shape()[..] {
        [r, c] => Ok((r, c)),
        _ => Err(Error::invalid(format!(
            "{op}: expected a 2-d tensor, got shape {:?}",
            t.shape()
        ))),
    }
}

pub fn matmul(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    check_same_dtype("matmul", a, b)?;
    let (m, k) = as_matrix("matmul", a)?;
    let (k2, n) = as_matrix("matmul", b)?;
    if k != k2 {
        return Err(Error::shape("matmul", a.shape(), b.shape()));
    }
    let (ad, bd) = (a.data(), b.data());
    let mut out = vec![0.0; m * n];
    out.par_chunks_mut(n).enumerate().for_each(|(i, row)| {
        for p in 0..k {
            let av = ad[i * k + p];
            let brow = &bd[p * n..(p + 1) * n];
            for (o, &bv) in row.iter_mut().zip(brow) {
                *o += av * bv;
            }
        }
    });
    Ok(Tensor::from_parts(vec![m, n], out, a.dtype()))
}

pub fn transpose(a: &Tensor) -> Result<Tensor> {
    let (r, c) = as_matrix("transpose", a)?;
    let d = a.data();
    let mut out = vec![0.0; r * c];
    for i in 0..r {
        for j in 0..c {
            out[j * r + i] = d[i * c + j];
        }
    }
    Ok(Tensor::from_parts(vec![c, r], out, a.dtype()))
}

/// `(dA, dB)` for `C = A·B`.
pub fn matmul_backward(a: &Tensor, b: &Tensor, grad: &Tensor) -> Result<(Tensor, Tensor)> {
    let da = matmul(grad, &transpose(b)?)?;
    let db = matmul(&transpose(a)?, grad)?;
    Ok((da, db))
}

/// Row-wise softmax of a 2-d tensor with max subtraction.
pub fn softmax_rows(x: &Tensor) -> Result<Tensor> {
    let (_, c) = as_matrix("softmax_rows", x)?;
    let mut out = x.to_vec();
    out.par_chunks_mut(c).for_each(|row| {
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut total = 0.0;
        for v in row.iter_mut() {
            *v = (*v - max).exp();
            total += *v;
        }
        for v in row.iter_mut() {
            *v /= total;
        }
    });
    Ok(Tensor::from_parts(x.shape().to_vec(), out, x.dtype()))
}

/// Adjoint of softmax given its output `y`: `y ⊙ (g − Σ g⊙y)` per row.
pub fn softmax_rows_backward(y: &Tensor, grad: &Tensor) -> Result<Tensor> {
    let (_, c) = as_matrix("softmax_rows", y)?;
    let mut out = vec![0.0; y.numel()];
    out.par_chunks_mut(c)
        .zip(y.data().par_chunks(c))
        .zip(grad.data().par_chunks(c))
        .for_each(|((o, yr), gr)| {
            let dot: f64 = yr.iter().zip(gr).map(|(a, b)| a * b).sum();
            for ((o, &yv), &gv) in o.iter_mut().zip(yr).zip(gr) {
                *o = yv * (gv - dot);
            }
        });
    Ok(Tensor::from_parts(y.shape().to_vec(), out, y.dtype()))
}

// ---------------------------------------------------------------------------
// layout

fn axis_split(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    let outer = shape[..axis].iter().product();
    let inner = shape[axis + 1..].iter().product();
    (outer, shape[axis], inner)
}

pub fn concat(parts: &[&Tensor], axis: usize) -> Result<Tensor> {
    let first = parts.first().ok_or_else(|| Error::invalid("concat of zero tensors"))?;
    if axis >= first.ndim() {
        return Err(Error::invalid(format!(
            "concat axis {axis} out of range for shape {:?}",
            first.shape()
        )));
    }
    let mut shape = first.shape().to_vec();
    shape[axis] = 0;
    for p in parts {
        check_same_dtype("concat", first, p)?;
        let compatible = p.ndim() == first.ndim()
            && p.shape()
                .iter()
                .zip(first.shape())
                .enumerate()
                .all(|(i, (a, b))| i == axis || a == b);
        if !compatible {
            return Err(Error::shape("concat", first.shape(), p.shape()));
        }
        shape[axis] += p.shape()[axis];
    }
    let (outer, _, inner) = axis_split(&shape, axis);
    let mut out = Vec::with_capacity(shape.iter().product());
    for o in 0..outer {
        for p in parts {
            let block = p.shape()[axis] * inner;
            out.extend_from_slice(&p.data()[o * block..(o + 1) * block]);
        }
    }
    Ok(Tensor::from_parts(shape, out, first.dtype()))
}

/// Slice `len` entries of `axis` starting at `start`.
pub fn narrow(x: &Tensor, axis: usize, start: usize, len: usize) -> Result<Tensor> {
    if axis >= x.ndim() || len == 0 || start + len > x.shape()[axis] {
        return Err(Error::invalid(format!(
            "narrow(axis={axis}, start={start}, len={len}) out of range for shape {:?}",
            x.shape()
        )));
    }
    let (outer, extent, inner) = axis_split(x.shape(), axis);
    let mut out = Vec::with_capacity(outer * len * inner);
    for o in 0..outer {
        let base = o * extent * inner + start * inner;
        out.extend_from_slice(&x.data()[base..base + len * inner]);
    }
    let mut shape = x.shape().to_vec();
    shape[axis] = len;
    Ok(Tensor::from_parts(shape, out, x.dtype()))
}

/// Adjoint of `narrow`: scatter into zeros of the original shape.
pub fn narrow_backward(full_shape: &[usize], grad: &Tensor, axis: usize, start: usize) -> Tensor {
    let (outer, extent, inner) = axis_split(full_shape, axis);
    let len = grad.shape()[axis];
    let mut out = vec![0.0; full_shape.iter().product()];
    for o in 0..outer {
        let base = o * extent * inner + start * inner;
        out[base..base + len * inner].copy_from_slice(&grad.data()[o * len * inner..(o + 1) * len * inner]);
    }
    Tensor::from_parts(full_shape.to_vec(), out, grad.dtype())
}

// ---------------------------------------------------------------------------
// convolution

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvGeometry {
    pub in_h: usize,
    pub in_w: usize,
    pub in_c: usize,
    pub k_h: usize,
    pub k_w: usize,
    pub out_c: usize,
    pub out_h: usize,
    pub out_w: usize,
    pub stride: usize,
    pub pad: usize,
}

impl ConvGeometry {
    pub fn new(x: &Tensor, w: &Tensor, stride: usize, pad: usize) -> Result<Self> {
        let [in_h, in_w, in_c] = x.shape()[..] else {
            return Err(Error::invalid(format!(
                "conv2d: input must be H×W×C, got {:?}",
                x.shape()
            )));
        };
        let [k_h, k_w, w_c, out_c] = w.shape()[..] else {
            return Err(Error::invalid(format!(
                "conv2d: weight must be kH×kW×Cin×Cout, got {:?}",
                w.shape()
            )));
        };
        if w_c != in_c {
            return Err(Error::shape("conv2d", x.shape(), w.shape()));
        }
        if stride == 0 {
            return Err(Error::invalid("conv2d: stride must be positive"));
        }
        if in_h + 2 * pad < k_h || in_w + 2 * pad < k_w {
            return Err(Error::shape("conv2d", x.shape(), w.shape()));
        }
        Ok(ConvGeometry {
            in_h,
            in_w,
            in_c,
            k_h,
            k_w,
            out_c,
            out_h: (in_h + 2 * pad - k_h) / stride + 1,
            out_w: (in_w + 2 * pad - k_w) / stride + 1,
            stride,
            pad,
        })
    }

    /// Input coordinate read by output `o` through kernel tap `k`.
    #[inline]
    fn input_index(&self, o: usize, k: usize, extent: usize) -> Option<usize> {
        let i = (o * self.stride + k) as isize - self.pad as isize;
        (i >= 0 && (i as usize) < extent).then_some(i as usize)
    }

    /// Output coordinate that reads input `i` through kernel tap `k`.
    #[inline]
    fn output_index(&self, i: usize, k: usize, extent: usize) -> Option<usize> {
        let num = (i + self.pad) as isize - k as isize;
        if num < 0 || !(num as usize).is_multiple_of(self.stride) {
            return None;
        }
        let o = num as usize / self.stride;
        (o < extent).then_some(o)
    }
}

/// 2-d cross-correlation with zero padding.
///
/// `x`: `H×W×Cin`, `w`: `kH×kW×Cin×Cout`, `bias`: `Cout`.
pub fn conv2d(x: &Tensor, w: &Tensor, bias: Option<&Tensor>, stride: usize, pad: usize) -> Result<Tensor> {
    check_same_dtype("conv2d", x, w)?;
    let g = ConvGeometry::new(x, w, stride, pad)?;
    if let Some(b) = bias {
        check_same_dtype("conv2d", x, b)?;
        if b.shape() != [g.out_c] {
            return Err(Error::shape("conv2d bias", b.shape(), &[g.out_c]));
        }
    }
    let (xd, wd) = (x.data(), w.data());
    let co = g.out_c;
    let mut out = vec![0.0; g.out_h * g.out_w * co];
    out.par_chunks_mut(g.out_w * co).enumerate().for_each(|(oy, row)| {
        for ox in 0..g.out_w {
            let acc = &mut row[ox * co..(ox + 1) * co];
            if let Some(b) = bias {
                acc.copy_from_slice(b.data());
            }
            for ky in 0..g.k_h {
                let Some(iy) = g.input_index(oy, ky, g.in_h) else {
                    continue;
                };
                for kx in 0..g.k_w {
                    let Some(ix) = g.input_index(ox, kx, g.in_w) else {
                        continue;
                    };
                    let xin = &xd[(iy * g.in_w + ix) * g.in_c..][..g.in_c];
                    let wtap = &wd[(ky * g.k_w + kx) * g.in_c * co..][..g.in_c * co];
                    for (c, &xv) in xin.iter().enumerate() {
                        if xv == 0.0 {
                            continue;
                        }
                        for (a, &wv) in acc.iter_mut().zip(&wtap[c * co..(c + 1) * co]) {
                            *a += xv * wv;
                        }
                    }
                }
            }
        }
    });
    Ok(Tensor::from_parts(vec![g.out_h, g.out_w, co], out, x.dtype()))
}

pub fn conv2d_backward_input(
    x_shape: &[usize],
    w: &Tensor,
    grad: &Tensor,
    stride: usize,
    pad: usize,
) -> Result<Tensor> {
    let probe = Tensor::zeros(x_shape, w.dtype());
    let g = ConvGeometry::new(&probe, w, stride, pad)?;
    let (wd, gd) = (w.data(), grad.data());
    let co = g.out_c;
    let mut dx = vec![0.0; g.in_h * g.in_w * g.in_c];
    dx.par_chunks_mut(g.in_w * g.in_c).enumerate().for_each(|(iy, row)| {
        for ix in 0..g.in_w {
            let acc = &mut row[ix * g.in_c..(ix + 1) * g.in_c];
            for ky in 0..g.k_h {
                let Some(oy) = g.output_index(iy, ky, g.out_h) else {
                    continue;
                };
                for kx in 0..g.k_w {
                    let Some(ox) = g.output_index(ix, kx, g.out_w) else {
                        continue;
                    };
                    let gout = &gd[(oy * g.out_w + ox) * co..][..co];
                    let wtap = &wd[(ky * g.k_w + kx) * g.in_c * co..][..g.in_c * co];
                    for (c, a) in acc.iter_mut().enumerate() {
                        let wrow = &wtap[c * co..(c + 1) * co];
                        *a += wrow.iter().zip(gout).map(|(w, g)| w * g).sum::<f64>();
                    }
                }
            }
        }
    });
    Ok(Tensor::from_parts(x_shape.to_vec(), dx, grad.dtype()))
}

pub fn conv2d_backward_weight(
    x: &Tensor,
    w_shape: &[usize],
    grad: &Tensor,
    stride: usize,
    pad: usize,
) -> Result<Tensor> {
    let probe = Tensor::zeros(w_shape, x.dtype());
    let g = ConvGeometry::new(x, &probe, stride, pad)?;
    let (xd, gd) = (x.data(), grad.data());
    let co = g.out_c;
    let mut dw = vec![0.0; g.k_h * g.k_w * g.in_c * co];
    dw.par_chunks_mut(g.in_c * co).enumerate().for_each(|(tap, block)| {
        let (ky, kx) = (tap / g.k_w, tap % g.k_w);
        for oy in 0..g.out_h {
            let Some(iy) = g.input_index(oy, ky, g.in_h) else {
                continue;
            };
            for ox in 0..g.out_w {
                let Some(ix) = g.input_index(ox, kx, g.in_w) else {
                    continue;
                };
                let xin = &xd[(iy * g.in_w + ix) * g.in_c..][..g.in_c];
                let gout = &gd[(oy * g.out_w + ox) * co..][..co];
                for (c, &xv) in xin.iter().enumerate() {
                    if xv == 0.0 {
                        continue;
                    }
                    for (a, &gv) in block[c * co..(c + 1) * co].iter_mut().zip(gout) {
                        *a += xv * gv;
                    }
                }
            }
        }
    });
    Ok(Tensor::from_parts(w_shape.to_vec(), dw, x.dtype()))
}

pub fn conv2d_backward_bias(grad: &Tensor) -> Tensor {
    let co = grad.channels();
    let mut db = vec![0.0; co];
    for px in grad.data().chunks(co) {
        for (a, &g) in db.iter_mut().zip(px) {
            *a += g;
        }
    }
    Tensor::from_parts(vec![co], db, grad.dtype())
}

// ---------------------------------------------------------------------------
// resampling

/// One output coordinate of a separable bilinear resample: reads `lo` and
/// `hi` and blends with weight `frac` on `hi`.
#[derive(Debug, Clone, Copy)]
pub(crate) struct Tap {
    lo: usize,
    hi: usize,
    frac: f64,
}

/// Half-pixel-centred taps with edge clamping.
pub(crate) fn resample_taps(input: usize, output: usize) -> Vec<Tap> {
    let scale = input as f64 / output as f64;
    (0..output)
        .map(|o| {
            let src = ((o as f64 + 0.5) * scale - 0.5).clamp(0.0, (input - 1) as f64);
            let lo = src.floor() as usize;
            let hi = (lo + 1).min(input - 1);
            Tap {
                lo,
                hi,
                frac: src - lo as f64,
            }
        })
        .collect()
}

#[inline]
fn lerp(a: f64, b: f64, t: f64) -> f64 {
    a + t * (b - a)
}

/// Bilinear resampling of an `H×W×C` map to `out_h×out_w×C`.
///
/// Interpolation is written as `a + t·(b − a)`, so a constant map stays
/// bitwise constant through any chain of resamples.
pub fn bilinear_resample(x: &Tensor, out_h: usize, out_w: usize) -> Result<Tensor> {
    let (h, w) = x.hw()?;
    if out_h == 0 || out_w == 0 {
        return Err(Error::invalid("bilinear_resample to an empty size"));
    }
    if (h, w) == (out_h, out_w) {
        return Ok(x.clone());
    }
    let c = x.channels();
    let ty = resample_taps(h, out_h);
    let tx = resample_taps(w, out_w);
    let d = x.data();
    let mut out = vec![0.0; out_h * out_w * c];
    out.par_chunks_mut(out_w * c).enumerate().for_each(|(oy, row)| {
        let Tap {
            lo: y0,
            hi: y1,
            frac: fy,
        } = ty[oy];
        for (
            ox,
            &Tap {
                lo: x0,
                hi: x1,
                frac: fx,
            },
        ) in tx.iter().enumerate()
        {
            for ch in 0..c {
                let p = |yy: usize, xx: usize| d[(yy * w + xx) * c + ch];
                let top = lerp(p(y0, x0), p(y0, x1), fx);
                let bottom = lerp(p(y1, x0), p(y1, x1), fx);
                row[ox * c + ch] = lerp(top, bottom, fy);
            }
        }
    });
    Ok(Tensor::from_parts(vec![out_h, out_w, c], out, x.dtype()))
}

pub fn bilinear_resample_backward(in_shape: &[usize], grad: &Tensor) -> Result<Tensor> {
    let [h, w, c] = in_shape[..] else {
        return Err(Error::invalid("bilinear_resample_backward: bad input shape"));
    };
    let (out_h, out_w) = grad.hw()?;
    if (h, w) == (out_h, out_w) {
        return Ok(grad.clone());
    }
    let ty = resample_taps(h, out_h);
    let tx = resample_taps(w, out_w);
    let g = grad.data();
    let mut dx = vec![0.0; h * w * c];
    for (
        oy,
        &Tap {
            lo: y0,
            hi: y1,
            frac: fy,
        },
    ) in ty.iter().enumerate()
    {
        for (
            ox,
            &Tap {
                lo: x0,
                hi: x1,
                frac: fx,
            },
        ) in tx.iter().enumerate()
        {
            let weights = [
                (y0, x0, (1.0 - fy) * (1.0 - fx)),
                (y0, x1, (1.0 - fy) * fx),
                (y1, x0, fy * (1.0 - fx)),
                (y1, x1, fy * fx),
            ];
            for ch in 0..c {
                let gv = g[(oy * out_w + ox) * c + ch];
                for &(yy, xx, wt) in &weights {
                    dx[(yy * w + xx) * c + ch] += wt * gv;
                }
            }
        }
    }
    Ok(Tensor::from_parts(in_shape.to_vec(), dx, grad.dtype()))
}

/// Sample location of a flow-warped pixel, or `None` when it leaves the frame.
fn flow_source(flow: &[f64], y: usize, x: usize, h: usize, w: usize) -> Option<(usize, usize, usize, usize, f64, f64)> {
    let i = (y * w + x) * 2;
    let sx = x as f64 + flow[i];
    let sy = y as f64 + flow[i + 1];
    if !(0.0..=(w - 1) as f64).contains(&sx) || !(0.0..=(h - 1) as f64).contains(&sy) {
        return None;
    }
    let x0 = sx.floor() as usize;
    let y0 = sy.floor() as usize;
    Some((
        y0,
        (y0 + 1).min(h - 1),
        x0,
        (x0 + 1).min(w - 1),
        sy - y0 as f64,
        sx - x0 as f64,
    ))
}

/// Backward-warp `src` (`H×W×C`) by a displacement field `flow` (`H×W×2`,
/// `(dx, dy)` in pixels): `out(p) = src(p + flow(p))`. Returns the warped map
/// and an `H×W×C` validity mask (1 where the sample lands in-frame).
pub fn flow_warp(src: &Tensor, flow: &Tensor) -> Result<(Tensor, Tensor)> {
    let (h, w) = src.hw()?;
    if flow.shape() != [h, w, 2] {
        return Err(Error::shape("flow_warp", src.shape(), flow.shape()));
    }
    let c = src.channels();
    let (d, f) = (src.data(), flow.data());
    let mut out = vec![0.0; h * w * c];
    let mut mask = vec![0.0; h * w * c];
    for y in 0..h {
        for x in 0..w {
            let Some((y0, y1, x0, x1, fy, fx)) = flow_source(f, y, x, h, w) else {
                continue;
            };
            for ch in 0..c {
                let p = |yy: usize, xx: usize| d[(yy * w + xx) * c + ch];
                let top = lerp(p(y0, x0), p(y0, x1), fx);
                let bottom = lerp(p(y1, x0), p(y1, x1), fx);
                out[(y * w + x) * c + ch] = lerp(top, bottom, fy);
                mask[(y * w + x) * c + ch] = 1.0;
            }
        }
    }
    Ok((
        Tensor::from_parts(src.shape().to_vec(), out, src.dtype()),
        Tensor::from_parts(src.shape().to_vec(), mask, src.dtype()),
    ))
}

pub fn flow_warp_backward(src_shape: &[usize], flow: &Tensor, grad: &Tensor) -> Result<Tensor> {
    let [h, w, c] = src_shape[..] else {
        return Err(Error::invalid("flow_warp_backward: bad source shape"));
    };
    let (f, g) = (flow.data(), grad.data());
    let mut dx = vec![0.0; h * w * c];
    for y in 0..h {
        for x in 0..w {
            let Some((y0, y1, x0, x1, fy, fx)) = flow_source(f, y, x, h, w) else {
                continue;
            };
            let weights = [
                (y0, x0, (1.0 - fy) * (1.0 - fx)),
                (y0, x1, (1.0 - fy) * fx),
                (y1, x0, fy * (1.0 - fx)),
                (y1, x1, fy * fx),
            ];
            for ch in 0..c {
                let gv = g[(y * w + x) * c + ch];
                for &(yy, xx, wt) in &weights {
                    dx[(yy * w + xx) * c + ch] += wt * gv;
                }
            }
        }
    }
    Ok(Tensor::from_parts(src_shape.to_vec(), dx, grad.dtype()))
}

/// Replicate-pad an `H×W×C` map on the bottom and right edges.
pub fn pad_replicate(x: &Tensor, out_h: usize, out_w: usize) -> Result<Tensor> {
    let (h, w) = x.hw()?;
    if out_h < h || out_w < w {
        return Err(Error::shape("pad_replicate", x.shape(), &[out_h, out_w, x.channels()]));
    }
    let c = x.channels();
    let d = x.data();
    let mut out = Vec::with_capacity(out_h * out_w * c);
    for y in 0..out_h {
        let sy = y.min(h - 1);
        for xx in 0..out_w {
            let sx = xx.min(w - 1);
            out.extend_from_slice(&d[(sy * w + sx) * c..(sy * w + sx + 1) * c]);
        }
    }
    Ok(Tensor::from_parts(vec![out_h, out_w, c], out, x.dtype()))
}

/// Top-left `h×w` window of an `H×W×C` map.
pub fn crop(x: &Tensor, h: usize, w: usize) -> Result<Tensor> {
    let (_, full_w) = x.hw()?;
    narrow(&narrow(x, 0, 0, h)?, 1, 0, w.min(full_w))
}
