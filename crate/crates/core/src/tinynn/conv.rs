//! Convolutions with circular padding along x and zero padding along y.
//!
//! Kernels are `[out, in, k, k]` for [`conv2d_circx`] and `[in, out, k, k]`
//! for [`conv_transpose2d_circx`], so that the same kernel tensor gives a
//! convolution and its adjoint. Spatial output of a stride-`s` convolution is
//! `(H/s, W/s)`; both dims must be divisible by `s`.

use super::tensor::Tensor4;
use crate::error::{Error, Result};

/// `c = a * b` (or `c += a * b`), `a` logically `m x k`, `b` logically `k x n`,
/// each optionally stored transposed.
#[allow(clippy::too_many_arguments)]
pub(crate) fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    a_t: bool,
    b: &[f64],
    b_t: bool,
    c: &mut [f64],
    accumulate: bool,
) {
    debug_assert!(a.len() >= m * k && b.len() >= k * n && c.len() >= m * n);
    let (rsa, csa) = if a_t { (1, m as isize) } else { (k as isize, 1) };
    let (rsb, csb) = if b_t { (1, k as isize) } else { (n as isize, 1) };
    let beta = if accumulate { 1.0 } else { 0.0 };
    if m == 0 || n == 0 {
        return;
    }
    if k == 0 {
        if !accumulate {
            c[..m * n].fill(0.0);
        }
        return;
    }
    // SAFETY: slice lengths cover every index reachable from the given
    // dimensions and strides (checked above in debug builds), and `c` does
    // not alias `a` or `b`.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa,
            csa,
            b.as_ptr(),
            rsb,
            csb,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

/// Spatial layout of one convolution: input `(cin, h, w)` to output `(ho, wo)`.
#[derive(Clone, Copy, Debug)]
struct Geom {
    cin: usize,
    h: usize,
    w: usize,
    k: usize,
    stride: usize,
    ho: usize,
    wo: usize,
}

impl Geom {
    fn new(cin: usize, h: usize, w: usize, k: usize, stride: usize) -> Result<Self> {
        if k.is_multiple_of(2) {
            return Err(Error::Shape(format!("kernel size must be odd, got {k}")));
        }
        if stride == 0 || !h.is_multiple_of(stride) || !w.is_multiple_of(stride) {
            return Err(Error::Shape(format!(
                "spatial dims {h}x{w} are not divisible by stride {stride}"
            )));
        }
        Ok(Geom {
            cin,
            h,
            w,
            k,
            stride,
            ho: h / stride,
            wo: w / stride,
        })
    }

    fn rows(&self) -> usize {
        self.cin * self.k * self.k
    }

    fn cols(&self) -> usize {
        self.ho * self.wo
    }

    /// Source column for each `(kx, ox)` pair.
    fn x_table(&self) -> Vec<usize> {
        let p = self.k / 2;
        let mut t = Vec::with_capacity(self.k * self.wo);
        for kx in 0..self.k {
            for ox in 0..self.wo {
                t.push((ox * self.stride + kx + self.w * self.k - p) % self.w);
            }
        }
        t
    }

    fn src_row(&self, oy: usize, ky: usize) -> Option<usize> {
        let iy = (oy * self.stride + ky) as isize - (self.k / 2) as isize;
        (iy >= 0 && (iy as usize) < self.h).then_some(iy as usize)
    }
}

fn im2col(g: &Geom, x: &[f64], xt: &[usize], col: &mut [f64]) {
    let (k, cols) = (g.k, g.cols());
    for ci in 0..g.cin {
        let plane = &x[ci * g.h * g.w..(ci + 1) * g.h * g.w];
        for ky in 0..k {
            for kx in 0..k {
                let r = (ci * k + ky) * k + kx;
                let row = &mut col[r * cols..(r + 1) * cols];
                let xs = &xt[kx * g.wo..(kx + 1) * g.wo];
                for oy in 0..g.ho {
                    let dst = &mut row[oy * g.wo..(oy + 1) * g.wo];
                    match g.src_row(oy, ky) {
                        Some(iy) => {
                            let src = &plane[iy * g.w..(iy + 1) * g.w];
                            for (d, &ix) in dst.iter_mut().zip(xs) {
                                *d = src[ix];
                            }
                        }
                        None => dst.fill(0.0),
                    }
                }
            }
        }
    }
}

fn col2im(g: &Geom, col: &[f64], xt: &[usize], x: &mut [f64]) {
    let (k, cols) = (g.k, g.cols());
    for ci in 0..g.cin {
        let plane = &mut x[ci * g.h * g.w..(ci + 1) * g.h * g.w];
        for ky in 0..k {
            for kx in 0..k {
                let r = (ci * k + ky) * k + kx;
                let row = &col[r * cols..(r + 1) * cols];
                let xs = &xt[kx * g.wo..(kx + 1) * g.wo];
                for oy in 0..g.ho {
                    if let Some(iy) = g.src_row(oy, ky) {
                        let dst = &mut plane[iy * g.w..(iy + 1) * g.w];
                        let src = &row[oy * g.wo..(oy + 1) * g.wo];
                        for (&v, &ix) in src.iter().zip(xs) {
                            dst[ix] += v;
                        }
                    }
                }
            }
        }
    }
}

fn check_kernel(kernel: &Tensor4, bias: Option<&[f64]>, cin: usize, out_axis: usize) -> Result<usize> {
    let ks = kernel.shape();
    if ks[2] != ks[3] {
        return Err(Error::Shape(format!("kernel must be square, got {ks:?}")));
    }
    let in_axis = 1 - out_axis;
    if ks[in_axis] != cin {
        return Err(Error::Shape(format!(
            "kernel {ks:?} expects {} input channels, input has {cin}",
            ks[in_axis]
        )));
    }
    let cout = ks[out_axis];
    if let Some(b) = bias {
        if b.len() != cout {
            return Err(Error::Shape(format!(
                "bias has {} entries, kernel produces {cout} channels",
                b.len()
            )));
        }
    }
    Ok(cout)
}

fn add_bias(out: &mut [f64], bias: &[f64], plane: usize) {
    for (c, &b) in bias.iter().enumerate() {
        for v in &mut out[c * plane..(c + 1) * plane] {
            *v += b;
        }
    }
}

fn bias_grad(dout: &Tensor4) -> Vec<f64> {
    let mut db = vec![0.0; dout.c()];
    for n in 0..dout.n() {
        for (c, d) in db.iter_mut().enumerate() {
            *d += dout.plane(n, c).iter().sum::<f64>();
        }
    }
    db
}

/// Cross-correlation with "same" padding: circular along x, zeros along y.
pub fn conv2d_circx(x: &Tensor4, kernel: &Tensor4, bias: &[f64], stride: usize) -> Result<Tensor4> {
    let cout = check_kernel(kernel, Some(bias), x.c(), 0)?;
    let g = Geom::new(x.c(), x.h(), x.w(), kernel.h(), stride)?;
    let xt = g.x_table();
    let mut col = vec![0.0; g.rows() * g.cols()];
    let mut out = Tensor4::zeros([x.n(), cout, g.ho, g.wo]);
    for n in 0..x.n() {
        im2col(&g, x.sample(n), &xt, &mut col);
        let o = out.sample_mut(n);
        gemm(cout, g.rows(), g.cols(), kernel.data(), false, &col, false, o, false);
        add_bias(o, bias, g.cols());
    }
    Ok(out)
}

/// Gradients of a convolution with respect to its input, kernel and bias.
#[derive(Clone, Debug)]
pub struct ConvGrads {
    pub dx: Tensor4,
    pub dkernel: Vec<f64>,
    pub dbias: Vec<f64>,
}

pub fn conv2d_circx_backward(
    x: &Tensor4,
    kernel: &Tensor4,
    dout: &Tensor4,
    stride: usize,
) -> Result<ConvGrads> {
    let cout = check_kernel(kernel, None, x.c(), 0)?;
    let g = Geom::new(x.c(), x.h(), x.w(), kernel.h(), stride)?;
    dout.check_shape([x.n(), cout, g.ho, g.wo], "conv2d output gradient")?;
    let xt = g.x_table();
    let mut col = vec![0.0; g.rows() * g.cols()];
    let mut dcol = vec![0.0; g.rows() * g.cols()];
    let mut dk = vec![0.0; kernel.len()];
    let mut dx = Tensor4::zeros(x.shape());
    for n in 0..x.n() {
        im2col(&g, x.sample(n), &xt, &mut col);
        let d = dout.sample(n);
        gemm(cout, g.cols(), g.rows(), d, false, &col, true, &mut dk, true);
        gemm(g.rows(), cout, g.cols(), kernel.data(), true, d, false, &mut dcol, false);
        col2im(&g, &dcol, &xt, dx.sample_mut(n));
    }
    Ok(ConvGrads {
        dx,
        dkernel: dk,
        dbias: bias_grad(dout),
    })
}

/// Adjoint of [`conv2d_circx`] plus bias; output dims are input dims times
/// `stride`.
pub fn conv_transpose2d_circx(
    x: &Tensor4,
    kernel: &Tensor4,
    bias: &[f64],
    stride: usize,
) -> Result<Tensor4> {
    let cout = check_kernel(kernel, Some(bias), x.c(), 1)?;
    let g = Geom::new(cout, x.h() * stride, x.w() * stride, kernel.h(), stride)?;
    let xt = g.x_table();
    let mut col = vec![0.0; g.rows() * g.cols()];
    let mut out = Tensor4::zeros([x.n(), cout, g.h, g.w]);
    for n in 0..x.n() {
        gemm(g.rows(), x.c(), g.cols(), kernel.data(), true, x.sample(n), false, &mut col, false);
        let o = out.sample_mut(n);
        col2im(&g, &col, &xt, o);
        add_bias(o, bias, g.h * g.w);
    }
    Ok(out)
}

pub fn conv_transpose2d_circx_backward(
    x: &Tensor4,
    kernel: &Tensor4,
    dout: &Tensor4,
    stride: usize,
) -> Result<ConvGrads> {
    let cout = check_kernel(kernel, None, x.c(), 1)?;
    let g = Geom::new(cout, x.h() * stride, x.w() * stride, kernel.h(), stride)?;
    dout.check_shape([x.n(), cout, g.h, g.w], "conv_transpose2d output gradient")?;
    let xt = g.x_table();
    let mut dcol = vec![0.0; g.rows() * g.cols()];
    let mut dk = vec![0.0; kernel.len()];
    let mut dx = Tensor4::zeros(x.shape());
    let cin = x.c();
    for n in 0..x.n() {
        im2col(&g, dout.sample(n), &xt, &mut dcol);
        gemm(cin, g.rows(), g.cols(), kernel.data(), false, &dcol, false, dx.sample_mut(n), false);
        gemm(cin, g.cols(), g.rows(), x.sample(n), false, &dcol, true, &mut dk, true);
    }
    Ok(ConvGrads {
        dx,
        dkernel: dk,
        dbias: bias_grad(dout),
    })
}

/// Per-pixel count of valid mask entries under a `k x k` window (stride 1).
pub(crate) fn window_count(mask: &Tensor4, k: usize) -> Result<Tensor4> {
    if mask.c() != 1 {
        return Err(Error::Shape(format!("mask must have 1 channel, got {}", mask.c())));
    }
    let ones = Tensor4::filled([1, 1, k, k], 1.0);
    conv2d_circx(mask, &ones, &[0.0], 1)
}

/// In-bounds taps per output pixel; smaller than `k*k` on the top and bottom
/// rows, where the window reaches into the zero padding.
fn window_area(h: usize, w: usize, k: usize) -> Result<Vec<f64>> {
    Ok(window_count(&Tensor4::filled([1, 1, h, w], 1.0), k)?.into_data())
}

/// Convolution over masked input, renormalized by the fraction of valid
/// pixels among the in-bounds pixels of each window. Returns the output and the updated mask (1 where
/// any input under the window was valid).
pub fn partial_conv2d(
    x: &Tensor4,
    mask: &Tensor4,
    kernel: &Tensor4,
    bias: &[f64],
) -> Result<(Tensor4, Tensor4)> {
    mask.check_shape([x.n(), 1, x.h(), x.w()], "partial conv mask")?;
    let k = kernel.h();
    let masked = masked_input(x, mask);
    let zero = vec![0.0; bias.len()];
    let mut out = conv2d_circx(&masked, kernel, &zero, 1)?;
    let count = window_count(mask, k)?;
    let area = window_area(x.h(), x.w(), k)?;
    let plane = x.plane_len();
    let mut new_mask = Tensor4::zeros(mask.shape());
    for n in 0..x.n() {
        let cnt = count.plane(n, 0);
        for (i, &c) in cnt.iter().enumerate() {
            new_mask.data_mut()[n * plane + i] = if c > 0.5 { 1.0 } else { 0.0 };
        }
        for (co, &b) in bias.iter().enumerate() {
            let o = out.plane_mut(n, co);
            for ((v, &c), &a) in o.iter_mut().zip(cnt).zip(&area) {
                *v = if c > 0.5 { *v * a / c + b } else { b };
            }
        }
    }
    Ok((out, new_mask))
}

fn masked_input(x: &Tensor4, mask: &Tensor4) -> Tensor4 {
    let mut m = x.clone();
    let plane = x.plane_len();
    for n in 0..x.n() {
        let mk = mask.plane(n, 0).to_vec();
        for c in 0..x.c() {
            for (v, &w) in m.plane_mut(n, c).iter_mut().zip(&mk) {
                *v *= w;
            }
        }
    }
    debug_assert_eq!(plane, mask.plane_len());
    m
}

pub fn partial_conv2d_backward(
    x: &Tensor4,
    mask: &Tensor4,
    kernel: &Tensor4,
    dout: &Tensor4,
) -> Result<ConvGrads> {
    mask.check_shape([x.n(), 1, x.h(), x.w()], "partial conv mask")?;
    let k = kernel.h();
    let count = window_count(mask, k)?;
    let area = window_area(x.h(), x.w(), k)?;
    let mut draw = dout.clone();
    for n in 0..x.n() {
        let cnt = count.plane(n, 0).to_vec();
        for c in 0..dout.c() {
            for ((v, &c), &a) in draw.plane_mut(n, c).iter_mut().zip(&cnt).zip(&area) {
                *v = if c > 0.5 { *v * a / c } else { 0.0 };
            }
        }
    }
    let masked = masked_input(x, mask);
    let mut g = conv2d_circx_backward(&masked, kernel, &draw, 1)?;
    g.dx = masked_input(&g.dx, mask);
    g.dbias = bias_grad(dout);
    Ok(g)
}
