use super::tensor::Tensor4;
use crate::error::Result;

pub const INSTANCE_NORM_EPS: f64 = 1e-5;

/// Per-sample, per-channel normalization to zero mean and unit variance over
/// the spatial axes. Returns the normalized tensor and `1/sqrt(var + eps)`
/// for every `(n, c)` plane.
pub fn instance_norm(x: &Tensor4) -> (Tensor4, Vec<f64>) {
    let hw = x.plane_len() as f64;
    let mut out = x.clone();
    let mut inv_std = Vec::with_capacity(x.n() * x.c());
    for n in 0..x.n() {
        for c in 0..x.c() {
            let p = out.plane_mut(n, c);
            let mean = p.iter().sum::<f64>() / hw;
            let var = p.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / hw;
            let is = 1.0 / (var + INSTANCE_NORM_EPS).sqrt();
            for v in p.iter_mut() {
                *v = (*v - mean) * is;
            }
            inv_std.push(is);
        }
    }
    (out, inv_std)
}

/// Gradient through [`instance_norm`] given its output and saved scales.
pub fn instance_norm_backward(xhat: &Tensor4, inv_std: &[f64], dy: &Tensor4) -> Result<Tensor4> {
    xhat.check_same(dy, "instance norm backward")?;
    let hw = xhat.plane_len() as f64;
    let mut dx = Tensor4::zeros(xhat.shape());
    for n in 0..xhat.n() {
        for c in 0..xhat.c() {
            let (xh, d) = (xhat.plane(n, c), dy.plane(n, c));
            let md = d.iter().sum::<f64>() / hw;
            let mdx = d.iter().zip(xh).map(|(a, b)| a * b).sum::<f64>() / hw;
            let is = inv_std[n * xhat.c() + c];
            for ((o, &di), &xi) in dx.plane_mut(n, c).iter_mut().zip(d).zip(xh) {
                *o = is * (di - md - xi * mdx);
            }
        }
    }
    Ok(dx)
}
