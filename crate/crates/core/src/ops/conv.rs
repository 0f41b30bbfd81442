//! Standard, depthwise, pointwise and separable 2-D convolutions (NHWC).
//!
//! Weight layouts: standard `K×K×C_in×C_out`, depthwise `K×K×C`,
//! pointwise `C_in×C_out`. Every output element is accumulated in
//! `(ky, kx, c_in)` order on both the reference and the fast path, so the
//! two agree bit for bit.

use serde::{Deserialize, Serialize};

use super::parallel::{for_each_chunk, map_indices};
use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Padding {
    Same,
    Valid,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ConvKind {
    Standard,
    Depthwise,
    Pointwise,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConvKernel<T = f32> {
    pub kind: ConvKind,
    pub weights: Tensor<T>,
    pub bias: Option<Tensor<T>>,
    pub stride: usize,
    pub padding: Padding,
}

impl<T: Scalar> ConvKernel<T> {
    pub fn standard(weights: Tensor<T>, stride: usize, padding: Padding) -> Self {
        ConvKernel {
            kind: ConvKind::Standard,
            weights,
            bias: None,
            stride,
            padding,
        }
    }

    pub fn depthwise(weights: Tensor<T>, stride: usize, padding: Padding) -> Self {
        ConvKernel {
            kind: ConvKind::Depthwise,
            weights,
            bias: None,
            stride,
            padding,
        }
    }

    pub fn pointwise(weights: Tensor<T>) -> Self {
        ConvKernel {
            kind: ConvKind::Pointwise,
            weights,
            bias: None,
            stride: 1,
            padding: Padding::Valid,
        }
    }

    pub fn with_bias(mut self, bias: Tensor<T>) -> Self {
        self.bias = Some(bias);
        self
    }

    pub fn kernel_size(&self) -> usize {
        match self.kind {
            ConvKind::Pointwise => 1,
            _ => self.weights.shape()[0],
        }
    }
}

/// Output extent and leading padding of one spatial axis.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Geometry {
    pub out_h: usize,
    pub out_w: usize,
    pub pad_top: usize,
    pub pad_left: usize,
}

fn axis(len: usize, k: usize, stride: usize, padding: Padding) -> Option<(usize, usize)> {
    match padding {
        Padding::Same => {
            let out = len.div_ceil(stride);
            let total = ((out - 1) * stride + k).saturating_sub(len);
            Some((out, total / 2))
        }
        Padding::Valid => (len >= k).then(|| ((len - k) / stride + 1, 0)),
    }
}

pub fn geometry(h: usize, w: usize, k: usize, stride: usize, padding: Padding) -> Result<Geometry> {
    if stride == 0 || k == 0 {
        return Err(Error::invalid("conv", "stride and kernel size must be positive"));
    }
    if padding == Padding::Same && k.is_multiple_of(2) {
        return Err(Error::invalid(
            "conv",
            format!("`same` padding needs an odd kernel, got K={k}"),
        ));
    }
    let (out_h, pad_top) = axis(h, k, stride, padding)
        .ok_or_else(|| Error::invalid("conv", format!("input {h}×{w} smaller than kernel {k}")))?;
    let (out_w, pad_left) = axis(w, k, stride, padding)
        .ok_or_else(|| Error::invalid("conv", format!("input {h}×{w} smaller than kernel {k}")))?;
    Ok(Geometry {
        out_h,
        out_w,
        pad_top,
        pad_left,
    })
}

fn out_shape(x: &Tensor<impl Scalar>, n: usize, oh: usize, ow: usize, c: usize) -> Vec<usize> {
    if x.rank() == 3 {
        vec![oh, ow, c]
    } else {
        vec![n, oh, ow, c]
    }
}

/// Input coordinate for output `o` and tap `k`, or `None` inside the padding.
#[inline]
fn src(o: usize, k: usize, stride: usize, pad: usize, len: usize) -> Option<usize> {
    let i = (o * stride + k) as isize - pad as isize;
    (i >= 0 && (i as usize) < len).then_some(i as usize)
}

fn check_standard<T: Scalar>(x: &Tensor<T>, w: &Tensor<T>) -> Result<(usize, usize, usize)> {
    let (_, _, _, c_in) = x.nhwc("conv2d")?;
    let ws = w.shape();
    if ws.len() != 4 || ws[0] != ws[1] || ws[2] != c_in {
        return Err(Error::shape(
            "conv2d",
            &[
                ws.first().copied().unwrap_or(0),
                ws.first().copied().unwrap_or(0),
                c_in,
                ws.last().copied().unwrap_or(0),
            ],
            ws,
        ));
    }
    Ok((ws[0], c_in, ws[3]))
}

/// Direct definition of a standard convolution. This is the semantic
/// reference the fast path is tested against.
pub fn conv2d_reference<T: Scalar>(x: &Tensor<T>, w: &Tensor<T>, stride: usize, padding: Padding) -> Result<Tensor<T>> {
    let (k, c_in, c_out) = check_standard(x, w)?;
    let (n, h, wd, _) = x.nhwc("conv2d")?;
    let g = geometry(h, wd, k, stride, padding)?;
    let (xd, wdata) = (x.data(), w.data());
    let mut out = vec![T::zero(); n * g.out_h * g.out_w * c_out];
    for b in 0..n {
        for oy in 0..g.out_h {
            for ox in 0..g.out_w {
                for co in 0..c_out {
                    let mut acc = T::zero();
                    for ky in 0..k {
                        let Some(iy) = src(oy, ky, stride, g.pad_top, h) else {
                            continue;
                        };
                        for kx in 0..k {
                            let Some(ix) = src(ox, kx, stride, g.pad_left, wd) else {
                                continue;
                            };
                            for ci in 0..c_in {
                                acc += xd[((b * h + iy) * wd + ix) * c_in + ci]
                                    * wdata[((ky * k + kx) * c_in + ci) * c_out + co];
                            }
                        }
                    }
                    out[((b * g.out_h + oy) * g.out_w + ox) * c_out + co] = acc;
                }
            }
        }
    }
    Tensor::new(&out_shape(x, n, g.out_h, g.out_w, c_out), out)
}

/// Standard convolution, fast path. Parallel over output rows, vectorized
/// over output channels.
pub fn conv2d_raw<T: Scalar>(x: &Tensor<T>, w: &Tensor<T>, stride: usize, padding: Padding) -> Result<Tensor<T>> {
    let (k, c_in, c_out) = check_standard(x, w)?;
    let (n, h, wd, _) = x.nhwc("conv2d")?;
    let g = geometry(h, wd, k, stride, padding)?;
    let (xd, wdata) = (x.data(), w.data());
    let row = g.out_w * c_out;
    let mut out = vec![T::zero(); n * g.out_h * row];
    for_each_chunk(&mut out, row, |r, orow| {
        let (b, oy) = (r / g.out_h, r % g.out_h);
        for ox in 0..g.out_w {
            let acc = &mut orow[ox * c_out..(ox + 1) * c_out];
            for ky in 0..k {
                let Some(iy) = src(oy, ky, stride, g.pad_top, h) else {
                    continue;
                };
                for kx in 0..k {
                    let Some(ix) = src(ox, kx, stride, g.pad_left, wd) else {
                        continue;
                    };
                    let xp = &xd[((b * h + iy) * wd + ix) * c_in..][..c_in];
                    let wt = &wdata[(ky * k + kx) * c_in * c_out..][..c_in * c_out];
                    for (ci, &xv) in xp.iter().enumerate() {
                        for (a, &wv) in acc.iter_mut().zip(&wt[ci * c_out..(ci + 1) * c_out]) {
                            *a += xv * wv;
                        }
                    }
                }
            }
        }
    });
    Tensor::new(&out_shape(x, n, g.out_h, g.out_w, c_out), out)
}

/// Gradients of [`conv2d_raw`] with respect to input and weights.
pub fn conv2d_backward<T: Scalar>(
    x: &Tensor<T>,
    w: &Tensor<T>,
    dy: &Tensor<T>,
    stride: usize,
    padding: Padding,
) -> Result<(Tensor<T>, Tensor<T>)> {
    let (k, c_in, c_out) = check_standard(x, w)?;
    let (n, h, wd, _) = x.nhwc("conv2d")?;
    let g = geometry(h, wd, k, stride, padding)?;
    let (xd, wdata, dyd) = (x.data(), w.data(), dy.data());
    let img = h * wd * c_in;
    let mut dx = vec![T::zero(); x.len()];
    for_each_chunk(&mut dx, img, |b, dxi| {
        for oy in 0..g.out_h {
            for ox in 0..g.out_w {
                let gy = &dyd[((b * g.out_h + oy) * g.out_w + ox) * c_out..][..c_out];
                for ky in 0..k {
                    let Some(iy) = src(oy, ky, stride, g.pad_top, h) else {
                        continue;
                    };
                    for kx in 0..k {
                        let Some(ix) = src(ox, kx, stride, g.pad_left, wd) else {
                            continue;
                        };
                        let base = (iy * wd + ix) * c_in;
                        for ci in 0..c_in {
                            let wt = &wdata[((ky * k + kx) * c_in + ci) * c_out..][..c_out];
                            let mut s = T::zero();
                            for (&a, &b) in gy.iter().zip(wt) {
                                s += a * b;
                            }
                            dxi[base + ci] += s;
                        }
                    }
                }
            }
        }
    });
    let partials = map_indices(n, |b| {
        let mut dw = vec![T::zero(); w.len()];
        for oy in 0..g.out_h {
            for ox in 0..g.out_w {
                let gy = &dyd[((b * g.out_h + oy) * g.out_w + ox) * c_out..][..c_out];
                for ky in 0..k {
                    let Some(iy) = src(oy, ky, stride, g.pad_top, h) else {
                        continue;
                    };
                    for kx in 0..k {
                        let Some(ix) = src(ox, kx, stride, g.pad_left, wd) else {
                            continue;
                        };
                        let xp = &xd[((b * h + iy) * wd + ix) * c_in..][..c_in];
                        for (ci, &xv) in xp.iter().enumerate() {
                            let dwt = &mut dw[((ky * k + kx) * c_in + ci) * c_out..][..c_out];
                            for (d, &gv) in dwt.iter_mut().zip(gy) {
                                *d += xv * gv;
                            }
                        }
                    }
                }
            }
        }
        dw
    });
    Ok((
        Tensor::new(x.shape(), dx)?,
        Tensor::new(w.shape(), sum_partials(partials, w.len()))?,
    ))
}

fn sum_partials<T: Scalar>(parts: Vec<Vec<T>>, len: usize) -> Vec<T> {
    let mut acc = vec![T::zero(); len];
    for p in parts {
        for (a, v) in acc.iter_mut().zip(p) {
            *a += v;
        }
    }
    acc
}

fn check_depthwise<T: Scalar>(x: &Tensor<T>, w: &Tensor<T>) -> Result<usize> {
    let (_, _, _, c) = x.nhwc("depthwise_conv2d")?;
    let ws = w.shape();
    if ws.len() != 3 || ws[0] != ws[1] || ws[2] != c {
        let k = ws.first().copied().unwrap_or(0);
        return Err(Error::shape("depthwise_conv2d", &[k, k, c], ws));
    }
    Ok(ws[0])
}

pub fn depthwise_raw<T: Scalar>(x: &Tensor<T>, w: &Tensor<T>, stride: usize, padding: Padding) -> Result<Tensor<T>> {
    let k = check_depthwise(x, w)?;
    let (n, h, wd, c) = x.nhwc("depthwise_conv2d")?;
    let g = geometry(h, wd, k, stride, padding)?;
    let (xd, wdata) = (x.data(), w.data());
    let row = g.out_w * c;
    let mut out = vec![T::zero(); n * g.out_h * row];
    for_each_chunk(&mut out, row, |r, orow| {
        let (b, oy) = (r / g.out_h, r % g.out_h);
        for ox in 0..g.out_w {
            let acc = &mut orow[ox * c..(ox + 1) * c];
            for ky in 0..k {
                let Some(iy) = src(oy, ky, stride, g.pad_top, h) else {
                    continue;
                };
                for kx in 0..k {
                    let Some(ix) = src(ox, kx, stride, g.pad_left, wd) else {
                        continue;
                    };
                    let xp = &xd[((b * h + iy) * wd + ix) * c..][..c];
                    let wt = &wdata[(ky * k + kx) * c..][..c];
                    for ((a, &xv), &wv) in acc.iter_mut().zip(xp).zip(wt) {
                        *a += xv * wv;
                    }
                }
            }
        }
    });
    Tensor::new(&out_shape(x, n, g.out_h, g.out_w, c), out)
}

pub fn depthwise_backward<T: Scalar>(
    x: &Tensor<T>,
    w: &Tensor<T>,
    dy: &Tensor<T>,
    stride: usize,
    padding: Padding,
) -> Result<(Tensor<T>, Tensor<T>)> {
    let k = check_depthwise(x, w)?;
    let (n, h, wd, c) = x.nhwc("depthwise_conv2d")?;
    let g = geometry(h, wd, k, stride, padding)?;
    let (xd, wdata, dyd) = (x.data(), w.data(), dy.data());
    let mut dx = vec![T::zero(); x.len()];
    for_each_chunk(&mut dx, h * wd * c, |b, dxi| {
        for oy in 0..g.out_h {
            for ox in 0..g.out_w {
                let gy = &dyd[((b * g.out_h + oy) * g.out_w + ox) * c..][..c];
                for ky in 0..k {
                    let Some(iy) = src(oy, ky, stride, g.pad_top, h) else {
                        continue;
                    };
                    for kx in 0..k {
                        let Some(ix) = src(ox, kx, stride, g.pad_left, wd) else {
                            continue;
                        };
                        let d = &mut dxi[(iy * wd + ix) * c..][..c];
                        let wt = &wdata[(ky * k + kx) * c..][..c];
                        for ((dv, &gv), &wv) in d.iter_mut().zip(gy).zip(wt) {
                            *dv += gv * wv;
                        }
                    }
                }
            }
        }
    });
    let partials = map_indices(n, |b| {
        let mut dw = vec![T::zero(); w.len()];
        for oy in 0..g.out_h {
            for ox in 0..g.out_w {
                let gy = &dyd[((b * g.out_h + oy) * g.out_w + ox) * c..][..c];
                for ky in 0..k {
                    let Some(iy) = src(oy, ky, stride, g.pad_top, h) else {
                        continue;
                    };
                    for kx in 0..k {
                        let Some(ix) = src(ox, kx, stride, g.pad_left, wd) else {
                            continue;
                        };
                        let xp = &xd[((b * h + iy) * wd + ix) * c..][..c];
                        let dwt = &mut dw[(ky * k + kx) * c..][..c];
                        for ((d, &xv), &gv) in dwt.iter_mut().zip(xp).zip(gy) {
                            *d += xv * gv;
                        }
                    }
                }
            }
        }
        dw
    });
    Ok((
        Tensor::new(x.shape(), dx)?,
        Tensor::new(w.shape(), sum_partials(partials, w.len()))?,
    ))
}

fn check_pointwise<T: Scalar>(x: &Tensor<T>, w: &Tensor<T>) -> Result<(usize, usize)> {
    let c_in = x.channels();
    let ws = w.shape();
    if ws.len() != 2 || ws[0] != c_in {
        return Err(Error::shape(
            "pointwise_conv2d",
            &[c_in, ws.last().copied().unwrap_or(0)],
            ws,
        ));
    }
    Ok((c_in, ws[1]))
}

/// Per-pixel linear map `C_in → C_out`. Accepts any rank; the last axis is
/// the channel axis, so this doubles as the dense-layer matmul.
pub fn pointwise_raw<T: Scalar>(x: &Tensor<T>, w: &Tensor<T>) -> Result<Tensor<T>> {
    let (c_in, c_out) = check_pointwise(x, w)?;
    let pixels = x.len() / c_in.max(1);
    let (xd, wdata) = (x.data(), w.data());
    let mut out = vec![T::zero(); pixels * c_out];
    // Group pixels so each parallel task has some work.
    let group = 64;
    for_each_chunk(&mut out, group * c_out.max(1), |gi, orows| {
        for (j, acc) in orows.chunks_mut(c_out.max(1)).enumerate() {
            let p = gi * group + j;
            let xp = &xd[p * c_in..(p + 1) * c_in];
            for (ci, &xv) in xp.iter().enumerate() {
                for (a, &wv) in acc.iter_mut().zip(&wdata[ci * c_out..(ci + 1) * c_out]) {
                    *a += xv * wv;
                }
            }
        }
    });
    let mut shape = x.shape().to_vec();
    *shape.last_mut().expect("rank >= 1") = c_out;
    Tensor::new(&shape, out)
}

pub fn pointwise_backward<T: Scalar>(x: &Tensor<T>, w: &Tensor<T>, dy: &Tensor<T>) -> Result<(Tensor<T>, Tensor<T>)> {
    let (c_in, c_out) = check_pointwise(x, w)?;
    let pixels = x.len() / c_in.max(1);
    let (xd, wdata, dyd) = (x.data(), w.data(), dy.data());
    let mut dx = vec![T::zero(); x.len()];
    for_each_chunk(&mut dx, c_in.max(1), |p, d| {
        let gy = &dyd[p * c_out..(p + 1) * c_out];
        for (ci, dv) in d.iter_mut().enumerate() {
            let mut s = T::zero();
            for (&g, &wv) in gy.iter().zip(&wdata[ci * c_out..(ci + 1) * c_out]) {
                s += g * wv;
            }
            *dv = s;
        }
    });
    let block = 256;
    let blocks = pixels.div_ceil(block);
    let partials = map_indices(blocks, |bi| {
        let mut dw = vec![T::zero(); w.len()];
        for p in bi * block..((bi + 1) * block).min(pixels) {
            let gy = &dyd[p * c_out..(p + 1) * c_out];
            for (ci, &xv) in xd[p * c_in..(p + 1) * c_in].iter().enumerate() {
                for (d, &g) in dw[ci * c_out..(ci + 1) * c_out].iter_mut().zip(gy) {
                    *d += xv * g;
                }
            }
        }
        dw
    });
    Ok((
        Tensor::new(x.shape(), dx)?,
        Tensor::new(w.shape(), sum_partials(partials, w.len()))?,
    ))
}

/// Adds a per-channel bias along the last axis.
pub fn bias_add<T: Scalar>(x: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    let c = x.channels();
    if b.shape() != [c] {
        return Err(Error::shape("bias_add", &[c], b.shape()));
    }
    let bd = b.data();
    let data = x
        .data()
        .chunks(c.max(1))
        .flat_map(|px| px.iter().zip(bd).map(|(&v, &bv)| v + bv))
        .collect();
    Tensor::new(x.shape(), data)
}

/// Bias gradient: `dy` summed over every axis but the last.
pub fn bias_grad<T: Scalar>(dy: &Tensor<T>) -> Tensor<T> {
    let c = dy.channels();
    let mut g = vec![T::zero(); c];
    for px in dy.data().chunks(c.max(1)) {
        for (a, &v) in g.iter_mut().zip(px) {
            *a += v;
        }
    }
    Tensor::new(&[c], g).expect("bias shape")
}

fn apply_bias<T: Scalar>(y: Tensor<T>, bias: &Option<Tensor<T>>) -> Result<Tensor<T>> {
    match bias {
        Some(b) => bias_add(&y, b),
        None => Ok(y),
    }
}

fn expect_kind<T: Scalar>(k: &ConvKernel<T>, kind: ConvKind, op: &'static str) -> Result<()> {
    if k.kind != kind {
        return Err(Error::invalid(
            op,
            format!("expected a {kind:?} kernel, got {:?}", k.kind),
        ));
    }
    Ok(())
}

pub fn conv2d<T: Scalar>(x: &Tensor<T>, k: &ConvKernel<T>) -> Result<Tensor<T>> {
    expect_kind(k, ConvKind::Standard, "conv2d")?;
    apply_bias(conv2d_raw(x, &k.weights, k.stride, k.padding)?, &k.bias)
}

pub fn depthwise_conv2d<T: Scalar>(x: &Tensor<T>, k: &ConvKernel<T>) -> Result<Tensor<T>> {
    expect_kind(k, ConvKind::Depthwise, "depthwise_conv2d")?;
    apply_bias(depthwise_raw(x, &k.weights, k.stride, k.padding)?, &k.bias)
}

pub fn pointwise_conv2d<T: Scalar>(x: &Tensor<T>, k: &ConvKernel<T>) -> Result<Tensor<T>> {
    expect_kind(k, ConvKind::Pointwise, "pointwise_conv2d")?;
    apply_bias(pointwise_raw(x, &k.weights)?, &k.bias)
}

/// Pointwise after depthwise; only the pointwise kernel's bias is applied,
/// once, after the composition.
pub fn separable_conv2d<T: Scalar>(x: &Tensor<T>, dw: &ConvKernel<T>, pw: &ConvKernel<T>) -> Result<Tensor<T>> {
    expect_kind(dw, ConvKind::Depthwise, "separable_conv2d")?;
    expect_kind(pw, ConvKind::Pointwise, "separable_conv2d")?;
    let mid = depthwise_raw(x, &dw.weights, dw.stride, dw.padding)?;
    apply_bias(pointwise_raw(&mid, &pw.weights)?, &pw.bias)
}

/// Rank-one expansion of a separable pair into a dense kernel:
/// `full[i, j, c, n] = dw[i, j, c] · pw[c, n]`.
pub fn expand_separable<T: Scalar>(dw: &Tensor<T>, pw: &Tensor<T>) -> Result<Tensor<T>> {
    let ds = dw.shape();
    let ps = pw.shape();
    if ds.len() != 3 || ps.len() != 2 || ds[2] != ps[0] {
        return Err(Error::shape(
            "expand_separable",
            &[ds[ds.len() - 1], ps[ps.len() - 1]],
            ps,
        ));
    }
    let (k, c, n) = (ds[0], ds[2], ps[1]);
    let (dd, pd) = (dw.data(), pw.data());
    let full = Tensor::from_fn(&[k, k, c, n], |idx| {
        let (tap_c, o) = (idx / n, idx % n);
        dd[tap_c] * pd[(tap_c % c) * n + o]
    });
    Ok(full)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(shape: &[usize], v: &[f64]) -> Tensor<f64> {
        Tensor::from_f64(shape, v).unwrap()
    }

    #[test]
    fn scalar_product() {
        let k = ConvKernel::standard(t(&[1, 1, 1, 1], &[3.0]), 1, Padding::Valid);
        let y = conv2d(&t(&[1, 1, 1], &[5.0]), &k).unwrap();
        assert_eq!(y.data(), &[15.0]);
    }

    #[test]
    fn valid_window_sum() {
        let k = ConvKernel::standard(Tensor::ones(&[3, 3, 1, 1]), 1, Padding::Valid);
        let y = conv2d(&Tensor::<f64>::ones(&[3, 3, 1]), &k).unwrap();
        assert_eq!(y.shape(), &[1, 1, 1]);
        assert_eq!(y.data(), &[9.0]);
    }

    #[test]
    fn same_padding_geometry() {
        let g = geometry(7, 7, 3, 1, Padding::Same).unwrap();
        assert_eq!((g.out_h, g.pad_top), (7, 1));
        let g = geometry(224, 224, 3, 2, Padding::Same).unwrap();
        assert_eq!((g.out_h, g.pad_top), (112, 0));
        let g = geometry(7, 7, 3, 2, Padding::Same).unwrap();
        assert_eq!((g.out_h, g.pad_top), (4, 1));
        let g = geometry(9, 9, 3, 1, Padding::Valid).unwrap();
        assert_eq!(g.out_h, 7);
        assert!(geometry(5, 5, 4, 1, Padding::Same).is_err());
        assert!(geometry(2, 2, 3, 1, Padding::Valid).is_err());
    }

    #[test]
    fn depthwise_delta_kernels() {
        // channel 0: identity delta, channel 1: 2× delta
        let mut w = vec![0.0; 18];
        w[4 * 2] = 1.0;
        w[4 * 2 + 1] = 2.0;
        let k = ConvKernel::depthwise(t(&[3, 3, 2], &w), 1, Padding::Same);
        let x = Tensor::<f64>::from_fn(&[4, 4, 2], |i| i as f64 * 0.5 - 3.0);
        let y = depthwise_conv2d(&x, &k).unwrap();
        for (i, (&a, &b)) in x.data().iter().zip(y.data()).enumerate() {
            let expect = if i % 2 == 0 { a } else { 2.0 * a };
            assert_eq!(b, expect);
        }
    }

    #[test]
    fn depthwise_constant_interior() {
        let w = Tensor::<f64>::from_fn(&[3, 3, 1], |i| i as f64 + 1.0);
        let k = ConvKernel::depthwise(w.clone(), 1, Padding::Same);
        let y = depthwise_conv2d(&Tensor::full(&[5, 5, 1], 2.0), &k).unwrap();
        assert_eq!(y.at(&[2, 2, 0]), 2.0 * w.sum());
        assert!(y.at(&[0, 0, 0]) < 2.0 * w.sum());
    }

    #[test]
    fn pointwise_identity_and_channel_sum() {
        let x = Tensor::<f64>::from_fn(&[2, 3, 3], |i| (i as f64).sin());
        let eye = Tensor::from_fn(&[3, 3], |i| if i % 4 == 0 { 1.0 } else { 0.0 });
        assert_eq!(pointwise_conv2d(&x, &ConvKernel::pointwise(eye)).unwrap(), x);
        let ones = ConvKernel::pointwise(Tensor::ones(&[3, 1]));
        let y = pointwise_conv2d(&x, &ones).unwrap();
        for (p, px) in x.data().chunks(3).enumerate() {
            assert_eq!(y.data()[p], px[0] + px[1] + px[2]);
        }
    }

    #[test]
    fn separable_with_delta_is_pointwise() {
        let mut d = vec![0.0; 9 * 3];
        for c in 0..3 {
            d[4 * 3 + c] = 1.0;
        }
        let dw = ConvKernel::depthwise(t(&[3, 3, 3], &d), 1, Padding::Same);
        let pw = ConvKernel::pointwise(Tensor::<f64>::from_fn(&[3, 2], |i| i as f64 - 2.5));
        let x = Tensor::<f64>::from_fn(&[4, 5, 3], |i| ((i * 7) % 11) as f64 / 11.0);
        assert_eq!(
            separable_conv2d(&x, &dw, &pw).unwrap(),
            pointwise_conv2d(&x, &pw).unwrap()
        );
    }

    #[test]
    fn wrong_channels_name_both_shapes() {
        let k = ConvKernel::standard(Tensor::<f64>::ones(&[3, 3, 2, 4]), 1, Padding::Same);
        let err = conv2d(&Tensor::ones(&[5, 5, 3]), &k).unwrap_err().to_string();
        assert!(err.contains("[3, 3, 2, 4]") && err.contains("[3, 3, 3, 4]"), "{err}");
    }

    #[test]
    fn kind_is_checked() {
        let k = ConvKernel::pointwise(Tensor::<f64>::ones(&[2, 2]));
        assert!(conv2d(&Tensor::ones(&[2, 2, 2]), &k).is_err());
    }
}
