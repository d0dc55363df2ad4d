use rand::Rng;
use serde::{Deserialize, Serialize};

use super::critic::Discriminator;
use super::loss::{generator_loss_and_grad, LossWeights};
use super::model::{encode_condition, encode_guide, rgb_to_tensor, FeatureExtractor, ImageGenerator, ImageInputs};
use crate::cloud::PointCloud;
use crate::error::{Error, Result};
use crate::grid::{ClassMap, DepthMap, Mask, RgbImage};
use crate::seed;
use crate::structgen::Episode;
use crate::tinynn::{adam_step, l1_mean, AdamConfig, Grads, Tensor4};

/// One training tuple: conditioning maps, sparse RGB guidance, target image.
#[derive(Clone, Debug, PartialEq)]
pub struct ImageSample {
    pub sem: ClassMap,
    /// Meters.
    pub depth: DepthMap,
    pub guide_rgb: RgbImage,
    pub guide_mask: Mask,
    pub real: RgbImage,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ImageTrainConfig {
    pub steps: usize,
    pub batch: usize,
    pub lr_g: f64,
    pub lr_d: f64,
    pub seed: u64,
    pub weights: LossWeights,
    /// Seed of the fixed perceptual feature extractor.
    pub fx_seed: u64,
}

impl Default for ImageTrainConfig {
    fn default() -> Self {
        ImageTrainConfig {
            steps: 500,
            batch: 2,
            lr_g: 2e-4,
            lr_d: 2e-4,
            seed: 0,
            weights: LossWeights::default(),
            fx_seed: 7,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ImageLossRecord {
    pub step: usize,
    pub g_total: f64,
    pub gan: f64,
    pub vgg: f64,
    pub fm: f64,
    pub d_loss: f64,
    /// Mean absolute error of the generated batch against the real images.
    pub l1: f64,
}

/// Tensor inputs and real images for a batch of samples.
pub fn image_batch(gen: &ImageGenerator, samples: &[&ImageSample]) -> Result<(ImageInputs, Tensor4)> {
    let cfg = gen.config();
    let maps: Vec<_> = samples.iter().map(|s| (&s.sem, &s.depth)).collect();
    let cond = encode_condition(cfg.class_count, cfg.d_max, &maps)?;
    let guides: Vec<_> = samples.iter().map(|s| (&s.guide_rgb, &s.guide_mask)).collect();
    let (guide_rgb, guide_mask) = encode_guide(&guides)?;
    let real = rgb_to_tensor(&samples.iter().map(|s| &s.real).collect::<Vec<_>>())?;
    Ok((
        ImageInputs {
            cond,
            guide_rgb,
            guide_mask,
        },
        real,
    ))
}

/// Training tuples from episodes: for every frame after the first, the RGB
/// guidance is re-projected from up to `max_context` preceding frames and
/// the condition is the frame's own ground-truth semantics and depth.
pub fn image_samples(episodes: &[Episode], max_context: usize) -> Result<Vec<ImageSample>> {
    let mut out = Vec::new();
    for ep in episodes {
        for t in 1..ep.frames.len() {
            let target = &ep.frames[t];
            let mut cloud = PointCloud::new(crate::palette::CLASS_COUNT);
            for f in &ep.frames[t.saturating_sub(max_context.max(1))..t] {
                cloud.insert_frame(f, 1)?;
            }
            let guide = cloud.render_guidance(&target.pose, target.geometry());
            out.push(ImageSample {
                sem: target.sem.clone(),
                depth: target.depth.clone(),
                guide_rgb: guide.rgb,
                guide_mask: guide.valid,
                real: target.rgb.clone(),
            });
        }
    }
    Ok(out)
}

/// Alternating single-step discriminator and generator updates with Adam.
/// With a zero adversarial weight the discriminator is left untouched, so
/// the generator regresses onto fixed feature targets.
pub fn train_image_generator(
    gen: &mut ImageGenerator,
    disc: &mut Discriminator,
    samples: &[ImageSample],
    cfg: &ImageTrainConfig,
    mut on_step: impl FnMut(&ImageLossRecord),
) -> Result<Vec<ImageLossRecord>> {
    if samples.is_empty() {
        return Err(Error::Domain("image training needs at least one sample".into()));
    }
    if cfg.batch == 0 {
        return Err(Error::Domain("batch must be positive".into()));
    }
    let fx = FeatureExtractor::new(cfg.fx_seed)?;
    let adam_g = AdamConfig::with_lr(cfg.lr_g);
    let adam_d = AdamConfig::with_lr(cfg.lr_d);
    let mut rng = seed::rng(cfg.seed);
    let mut curve = Vec::with_capacity(cfg.steps);
    for step in 0..cfg.steps {
        let picks: Vec<&ImageSample> = (0..cfg.batch.min(samples.len()))
            .map(|i| {
                if cfg.batch >= samples.len() {
                    &samples[i]
                } else {
                    &samples[rng.random_range(0..samples.len())]
                }
            })
            .collect();
        let (inp, real) = image_batch(gen, &picks)?;
        let (fake, cache) = gen.forward_with(gen.params(), &inp)?;

        let d_loss = if cfg.weights.gan != 0.0 {
            let (l, g) = disc.loss_and_grads(&real, &fake, &inp.cond)?;
            adam_step(disc.params_mut(), &g, &adam_d)?;
            l
        } else {
            disc.loss_with(disc.params(), &real, &fake, &inp.cond)?
        };

        let (gl, dfake) = generator_loss_and_grad(&fake, &real, &inp.cond, &*disc, &fx, &cfg.weights)?;
        let l1 = l1_mean(&fake, &real)?.0;
        if ![gl.total, gl.gan, gl.vgg, gl.fm, d_loss].iter().all(|v| v.is_finite()) {
            return Err(Error::NonFiniteGradient(format!(
                "image loss at step {step}: total {} gan {} vgg {} fm {} disc {d_loss}",
                gl.total, gl.gan, gl.vgg, gl.fm
            )));
        }
        let mut grads = Grads::zeros_like(gen.params());
        gen.backward(gen.params(), &mut grads, &inp, &cache, &dfake)?;
        adam_step(gen.params_mut(), &grads, &adam_g)?;

        let rec = ImageLossRecord {
            step,
            g_total: gl.total,
            gan: gl.gan,
            vgg: gl.vgg,
            fm: gl.fm,
            d_loss,
            l1,
        };
        on_step(&rec);
        curve.push(rec);
    }
    Ok(curve)
}
