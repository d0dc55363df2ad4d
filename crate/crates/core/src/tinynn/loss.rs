//! Scalar losses returning their value and the gradient of that value.

use super::tensor::Tensor4;
use crate::error::{Error, Result};

/// Mean over pixels of `-log softmax(logits)[target]`.
///
/// `targets` holds one class per `(n, y, x)` in row-major order.
pub fn cross_entropy(logits: &Tensor4, targets: &[u8]) -> Result<(f64, Tensor4)> {
    let [n, c, h, w] = logits.shape();
    let hw = h * w;
    if targets.len() != n * hw {
        return Err(Error::Shape(format!(
            "cross entropy: {} targets for {} pixels",
            targets.len(),
            n * hw
        )));
    }
    if let Some(&t) = targets.iter().find(|&&t| t as usize >= c) {
        return Err(Error::Data(format!("target class {t} is not below class count {c}")));
    }
    let count = (n * hw) as f64;
    let mut loss = 0.0;
    let mut grad = Tensor4::zeros(logits.shape());
    for b in 0..n {
        let s = logits.sample(b);
        let g = grad.sample_mut(b);
        for p in 0..hw {
            let m = (0..c).map(|k| s[k * hw + p]).fold(f64::NEG_INFINITY, f64::max);
            let z: f64 = (0..c).map(|k| (s[k * hw + p] - m).exp()).sum();
            let lse = m + z.ln();
            let t = targets[b * hw + p] as usize;
            loss += lse - s[t * hw + p];
            for k in 0..c {
                g[k * hw + p] = ((s[k * hw + p] - lse).exp() - if k == t { 1.0 } else { 0.0 }) / count;
            }
        }
    }
    Ok((loss / count, grad))
}

/// Mean absolute error. The subgradient at equality is 0.
pub fn l1_mean(pred: &Tensor4, target: &Tensor4) -> Result<(f64, Tensor4)> {
    pred.check_same(target, "l1 loss")?;
    let count = pred.len() as f64;
    let loss = pred.data().iter().zip(target.data()).map(|(a, b)| (a - b).abs()).sum::<f64>() / count;
    let grad = pred.zip_map(target, |a, b| {
        if a > b {
            1.0 / count
        } else if a < b {
            -1.0 / count
        } else {
            0.0
        }
    })?;
    Ok((loss, grad))
}

/// Gradients of [`kl_diag_gauss`] with respect to its four inputs.
#[derive(Clone, Debug)]
pub struct KlGrads {
    pub mu_q: Tensor4,
    pub log_var_q: Tensor4,
    pub mu_p: Tensor4,
    pub log_var_p: Tensor4,
}

/// `KL(q || p)` between diagonal Gaussians given by means and log-variances,
/// summed over all latent elements and averaged over the batch.
pub fn kl_diag_gauss(
    mu_q: &Tensor4,
    log_var_q: &Tensor4,
    mu_p: &Tensor4,
    log_var_p: &Tensor4,
) -> Result<(f64, KlGrads)> {
    for t in [log_var_q, mu_p, log_var_p] {
        mu_q.check_same(t, "kl divergence")?;
    }
    let batch = mu_q.n() as f64;
    let mut kl = 0.0;
    let mut g = KlGrads {
        mu_q: Tensor4::zeros(mu_q.shape()),
        log_var_q: Tensor4::zeros(mu_q.shape()),
        mu_p: Tensor4::zeros(mu_q.shape()),
        log_var_p: Tensor4::zeros(mu_q.shape()),
    };
    for i in 0..mu_q.len() {
        let (mq, lq, mp, lp) = (
            mu_q.data()[i],
            log_var_q.data()[i],
            mu_p.data()[i],
            log_var_p.data()[i],
        );
        // Divide by vp rather than multiply by exp(-lp) so that q = p
        // gives exactly zero.
        let vp = lp.exp();
        let inv_vp = 1.0 / vp;
        let vq = lq.exp();
        let d = mq - mp;
        kl += 0.5 * (lp - lq + (vq + d * d) / vp - 1.0);
        g.mu_q.data_mut()[i] = d * inv_vp / batch;
        g.mu_p.data_mut()[i] = -d * inv_vp / batch;
        g.log_var_q.data_mut()[i] = 0.5 * (vq * inv_vp - 1.0) / batch;
        g.log_var_p.data_mut()[i] = 0.5 * (1.0 - (vq + d * d) * inv_vp) / batch;
    }
    Ok((kl / batch, g))
}

/// Discriminator hinge loss `mean(relu(1 - D(real))) + mean(relu(1 + D(fake)))`
/// with gradients for both score tensors.
pub fn hinge_discriminator(real: &Tensor4, fake: &Tensor4) -> (f64, Tensor4, Tensor4) {
    let (nr, nf) = (real.len() as f64, fake.len() as f64);
    let lr = real.data().iter().map(|&r| (1.0 - r).max(0.0)).sum::<f64>() / nr;
    let lf = fake.data().iter().map(|&f| (1.0 + f).max(0.0)).sum::<f64>() / nf;
    let gr = real.map(|r| if r < 1.0 { -1.0 / nr } else { 0.0 });
    let gf = fake.map(|f| if f > -1.0 { 1.0 / nf } else { 0.0 });
    (lr + lf, gr, gf)
}

/// Generator adversarial term `-mean(D(fake))` and its gradient.
pub fn hinge_generator(fake: &Tensor4) -> (f64, Tensor4) {
    let n = fake.len() as f64;
    (-fake.sum() / n, fake.map(|_| -1.0 / n))
}
