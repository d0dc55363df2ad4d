use crate::error::Result;
use crate::tinynn::{kl_diag_gauss, KlGrads, Tensor4};

pub const LOG_VAR_MIN: f64 = -10.0;
pub const LOG_VAR_MAX: f64 = 10.0;

/// Diagonal Gaussian over the latent tensor.
#[derive(Clone, Debug, PartialEq)]
pub struct GaussianParams {
    pub mu: Tensor4,
    /// Log-variance, already clamped to `[LOG_VAR_MIN, LOG_VAR_MAX]`.
    pub log_var: Tensor4,
}

impl GaussianParams {
    /// Builds the distribution from raw network outputs, clamping the
    /// log-variance.
    pub fn from_raw(mu: Tensor4, raw_log_var: &Tensor4) -> Result<Self> {
        mu.check_same(raw_log_var, "gaussian params")?;
        Ok(GaussianParams {
            mu,
            log_var: raw_log_var.map(|v| v.clamp(LOG_VAR_MIN, LOG_VAR_MAX)),
        })
    }

    pub fn standard(shape: [usize; 4]) -> Self {
        GaussianParams {
            mu: Tensor4::zeros(shape),
            log_var: Tensor4::zeros(shape),
        }
    }
}

/// Reparameterized draw `mu + exp(log_var / 2) * eps`.
pub fn sample_z(gp: &GaussianParams, eps: &Tensor4) -> Result<Tensor4> {
    eps.check_same(&gp.mu, "latent noise")?;
    let std = gp.log_var.map(|v| (0.5 * v).exp());
    let scaled = std.zip_map(eps, |s, e| s * e)?;
    gp.mu.zip_map(&scaled, |m, s| m + s)
}

/// Gradients of [`sample_z`] with respect to `mu` and `log_var`.
pub fn sample_z_backward(gp: &GaussianParams, eps: &Tensor4, dz: &Tensor4) -> Result<(Tensor4, Tensor4)> {
    let dlv = Tensor4::from_vec(
        dz.shape(),
        dz.data()
            .iter()
            .zip(gp.log_var.data())
            .zip(eps.data())
            .map(|((d, lv), e)| d * 0.5 * (0.5 * lv).exp() * e)
            .collect(),
    )?;
    Ok((dz.clone(), dlv))
}

/// `KL(q || p)` summed over latent elements, averaged over the batch.
pub fn kl_divergence(q: &GaussianParams, p: &GaussianParams) -> Result<(f64, KlGrads)> {
    kl_diag_gauss(&q.mu, &q.log_var, &p.mu, &p.log_var)
}
