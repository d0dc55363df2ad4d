//! Pointwise activations and channel/spatial plumbing with their backward
//! passes.

use super::tensor::Tensor4;
use crate::error::{Error, Result};

pub fn relu(x: &Tensor4) -> Tensor4 {
    x.map(|v| v.max(0.0))
}

/// Gradient through ReLU given the forward input (or output; the masks agree).
pub fn relu_backward(x: &Tensor4, dy: &Tensor4) -> Result<Tensor4> {
    x.zip_map(dy, |v, d| if v > 0.0 { d } else { 0.0 })
}

pub fn leaky_relu(x: &Tensor4, slope: f64) -> Tensor4 {
    x.map(|v| if v > 0.0 { v } else { slope * v })
}

pub fn leaky_relu_backward(x: &Tensor4, dy: &Tensor4, slope: f64) -> Result<Tensor4> {
    x.zip_map(dy, |v, d| if v > 0.0 { d } else { slope * d })
}

#[inline]
pub fn sigmoid_scalar(v: f64) -> f64 {
    if v >= 0.0 {
        1.0 / (1.0 + (-v).exp())
    } else {
        let e = v.exp();
        e / (1.0 + e)
    }
}

pub fn sigmoid(x: &Tensor4) -> Tensor4 {
    x.map(sigmoid_scalar)
}

/// Gradient through a sigmoid given its output `y`.
pub fn sigmoid_backward(y: &Tensor4, dy: &Tensor4) -> Result<Tensor4> {
    y.zip_map(dy, |s, d| d * s * (1.0 - s))
}

/// Softmax across the channel axis at every pixel.
pub fn softmax_channels(x: &Tensor4) -> Tensor4 {
    let [n, c, h, w] = x.shape();
    let hw = h * w;
    let mut out = x.clone();
    for b in 0..n {
        let s = out.sample_mut(b);
        for p in 0..hw {
            let m = (0..c).map(|k| s[k * hw + p]).fold(f64::NEG_INFINITY, f64::max);
            let mut z = 0.0;
            for k in 0..c {
                let e = (s[k * hw + p] - m).exp();
                s[k * hw + p] = e;
                z += e;
            }
            for k in 0..c {
                s[k * hw + p] /= z;
            }
        }
    }
    out
}

/// Gradient through a channel softmax given its output `y`.
pub fn softmax_channels_backward(y: &Tensor4, dy: &Tensor4) -> Result<Tensor4> {
    y.check_same(dy, "softmax backward")?;
    let [n, c, h, w] = y.shape();
    let hw = h * w;
    let mut dx = Tensor4::zeros(y.shape());
    for b in 0..n {
        let (ys, ds) = (y.sample(b), dy.sample(b));
        let out = dx.sample_mut(b);
        for p in 0..hw {
            let dot: f64 = (0..c).map(|k| ys[k * hw + p] * ds[k * hw + p]).sum();
            for k in 0..c {
                out[k * hw + p] = ys[k * hw + p] * (ds[k * hw + p] - dot);
            }
        }
    }
    Ok(dx)
}

/// Concatenates along the channel axis.
pub fn concat_channels(parts: &[&Tensor4]) -> Result<Tensor4> {
    let first = parts
        .first()
        .ok_or_else(|| Error::Shape("cannot concatenate zero tensors".into()))?;
    let [n, _, h, w] = first.shape();
    for p in parts {
        if p.n() != n || p.h() != h || p.w() != w {
            return Err(Error::Shape(format!(
                "concat: shapes {:?} and {:?} differ outside the channel axis",
                first.shape(),
                p.shape()
            )));
        }
    }
    let c: usize = parts.iter().map(|p| p.c()).sum();
    let mut data = Vec::with_capacity(n * c * h * w);
    for b in 0..n {
        for p in parts {
            data.extend_from_slice(p.sample(b));
        }
    }
    Tensor4::from_vec([n, c, h, w], data)
}

/// Splits along the channel axis into pieces of the given channel counts.
pub fn split_channels(x: &Tensor4, sizes: &[usize]) -> Result<Vec<Tensor4>> {
    if sizes.iter().sum::<usize>() != x.c() || sizes.contains(&0) {
        return Err(Error::Shape(format!(
            "cannot split {} channels into {sizes:?}",
            x.c()
        )));
    }
    let [n, _, h, w] = x.shape();
    let hw = h * w;
    let mut out: Vec<Vec<f64>> = sizes.iter().map(|s| Vec::with_capacity(n * s * hw)).collect();
    for b in 0..n {
        let s = x.sample(b);
        let mut off = 0;
        for (o, &sz) in out.iter_mut().zip(sizes) {
            o.extend_from_slice(&s[off * hw..(off + sz) * hw]);
            off += sz;
        }
    }
    out.into_iter()
        .zip(sizes)
        .map(|(d, &sz)| Tensor4::from_vec([n, sz, h, w], d))
        .collect()
}

/// Nearest-neighbor resize of the spatial axes. Output pixel `(y, x)` reads
/// input `(floor(y*H/h), floor(x*W/w))`.
pub fn resize_nearest(x: &Tensor4, h: usize, w: usize) -> Tensor4 {
    let [n, c, ih, iw] = x.shape();
    if (ih, iw) == (h, w) {
        return x.clone();
    }
    let ys: Vec<usize> = (0..h).map(|y| y * ih / h).collect();
    let xs: Vec<usize> = (0..w).map(|xx| xx * iw / w).collect();
    let mut out = Tensor4::zeros([n, c, h, w]);
    for b in 0..n {
        for ch in 0..c {
            let src = x.plane(b, ch).to_vec();
            let dst = out.plane_mut(b, ch);
            for (y, &sy) in ys.iter().enumerate() {
                for (xx, &sx) in xs.iter().enumerate() {
                    dst[y * w + xx] = src[sy * iw + sx];
                }
            }
        }
    }
    out
}

/// Scatter-adds output gradients back to the input pixels they read.
pub fn resize_nearest_backward(dy: &Tensor4, ih: usize, iw: usize) -> Tensor4 {
    let [n, c, h, w] = dy.shape();
    if (ih, iw) == (h, w) {
        return dy.clone();
    }
    let ys: Vec<usize> = (0..h).map(|y| y * ih / h).collect();
    let xs: Vec<usize> = (0..w).map(|xx| xx * iw / w).collect();
    let mut dx = Tensor4::zeros([n, c, ih, iw]);
    for b in 0..n {
        for ch in 0..c {
            let src = dy.plane(b, ch).to_vec();
            let dst = dx.plane_mut(b, ch);
            for (y, &sy) in ys.iter().enumerate() {
                for (xx, &sx) in xs.iter().enumerate() {
                    dst[sy * iw + sx] += src[y * w + xx];
                }
            }
        }
    }
    dx
}

/// Integer-factor nearest-neighbor upsampling.
pub fn nearest_upsample(x: &Tensor4, factor: usize) -> Tensor4 {
    resize_nearest(x, x.h() * factor, x.w() * factor)
}

pub fn nearest_upsample_backward(dy: &Tensor4, factor: usize) -> Tensor4 {
    resize_nearest_backward(dy, dy.h() / factor, dy.w() / factor)
}
