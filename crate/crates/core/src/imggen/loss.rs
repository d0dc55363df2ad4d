use serde::{Deserialize, Serialize};

use super::critic::Critic;
use super::model::FeatureExtractor;
use crate::error::Result;
use crate::tinynn::{hinge_discriminator, hinge_generator, l1_mean, Tensor4};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LossWeights {
    pub gan: f64,
    pub vgg: f64,
    pub fm: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights {
            gan: 1.0,
            vgg: 10.0,
            fm: 10.0,
        }
    }
}

/// Generator objective; the three components are already weighted and sum
/// to `total`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GeneratorLoss {
    pub total: f64,
    pub gan: f64,
    pub vgg: f64,
    pub fm: f64,
}

/// `-w.gan * mean D(fake) + w.vgg * mean_i L1(phi_i) + w.fm * mean_i L1(D_i)`,
/// each L1 a mean over elements. Real features are constants.
pub fn generator_loss(
    fake: &Tensor4,
    real: &Tensor4,
    cond: &Tensor4,
    critic: &dyn Critic,
    fx: &FeatureExtractor,
    w: &LossWeights,
) -> Result<GeneratorLoss> {
    Ok(generator_loss_and_grad(fake, real, cond, critic, fx, w)?.0)
}

/// [`generator_loss`] and its gradient with respect to `fake`.
pub fn generator_loss_and_grad(
    fake: &Tensor4,
    real: &Tensor4,
    cond: &Tensor4,
    critic: &dyn Critic,
    fx: &FeatureExtractor,
    w: &LossWeights,
) -> Result<(GeneratorLoss, Tensor4)> {
    fake.check_same(real, "generator target")?;
    let d_fake = critic.evaluate(fake, cond)?;
    let d_real = critic.evaluate(real, cond)?;
    let (adv, dscore_unit) = hinge_generator(&d_fake.score);
    let dscore = dscore_unit.map(|g| g * w.gan);

    let (fm, dfeat) = mean_l1(&d_fake.features, &d_real.features, w.fm)?;
    let mut dfake = critic.input_grad(fake, cond, &dfeat, &dscore)?;

    let t_fake = fx.trace(fake)?;
    let phi_real = fx.features(real)?;
    let (vgg, dphi) = mean_l1(&t_fake.features, &phi_real, w.vgg)?;
    dfake.add_assign(&fx.backward(&t_fake, &dphi)?)?;

    let gan = w.gan * adv;
    Ok((
        GeneratorLoss {
            total: gan + vgg + fm,
            gan,
            vgg,
            fm,
        },
        dfake,
    ))
}

/// `weight * (1/n) * sum_i L1mean(a_i, b_i)` and its gradient for each `a_i`.
/// An empty list scores 0.
fn mean_l1(a: &[Tensor4], b: &[Tensor4], weight: f64) -> Result<(f64, Vec<Tensor4>)> {
    if a.is_empty() {
        return Ok((0.0, Vec::new()));
    }
    let k = weight / a.len() as f64;
    let mut total = 0.0;
    let mut grads = Vec::with_capacity(a.len());
    for (x, y) in a.iter().zip(b) {
        let (l, g) = l1_mean(x, y)?;
        total += l;
        grads.push(g.map(|v| v * k));
    }
    Ok((total * k, grads))
}

/// Hinge loss `-mean(min(0, -1 + D(real))) - mean(min(0, -1 - D(fake)))`.
pub fn discriminator_loss(critic: &dyn Critic, real: &Tensor4, fake: &Tensor4, cond: &Tensor4) -> Result<f64> {
    real.check_same(fake, "discriminator batch")?;
    let r = critic.evaluate(real, cond)?;
    let f = critic.evaluate(fake, cond)?;
    Ok(hinge_discriminator(&r.score, &f.score).0)
}
