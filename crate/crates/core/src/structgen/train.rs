use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::data::{pick, Episode};
use super::model::{encode_frames, encode_guidance, StructureBatch, StructureGenerator, StructureLoss};
use super::rollout::RolloutMode;
use crate::cloud::{GuidanceImage, PanoFrame, PointCloud};
use crate::error::{Error, Result};
use crate::imggen::colorize;
use crate::seed;
use crate::tinynn::{adam_step, AdamConfig, Tensor4};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StructureTrainConfig {
    pub mode: TrainMode,
    pub lr: f64,
    pub batch: usize,
    pub steps: usize,
    pub seed: u64,
    /// Context frames per rollout are drawn uniformly from `1..=max_context`.
    pub max_context: usize,
    /// The learning rate decays linearly from `lr` to `lr * final_lr_scale`
    /// over the run.
    pub final_lr_scale: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TrainMode {
    TeacherForcing,
    Recurrent,
}

impl From<TrainMode> for RolloutMode {
    fn from(m: TrainMode) -> Self {
        match m {
            TrainMode::TeacherForcing => RolloutMode::TeacherForcing,
            TrainMode::Recurrent => RolloutMode::Recurrent,
        }
    }
}

impl Default for StructureTrainConfig {
    fn default() -> Self {
        StructureTrainConfig {
            mode: TrainMode::TeacherForcing,
            lr: 1e-3,
            batch: 8,
            steps: 1000,
            seed: 0,
            max_context: 3,
            final_lr_scale: 1.0,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossRecord {
    pub step: usize,
    pub total: f64,
    pub ce: f64,
    pub depth: f64,
    pub kl: f64,
}

/// One in-flight training rollout.
struct Slot {
    episode: usize,
    cloud: PointCloud,
    t: usize,
}

impl Slot {
    fn start(episodes: &[Episode], class_count: usize, max_context: usize, rng: &mut ChaCha8Rng) -> Result<Slot> {
        let episode = pick(rng, episodes.len());
        let frames = &episodes[episode].frames;
        let c = rng.random_range(1..=max_context.min(frames.len() - 1).max(1));
        let mut cloud = PointCloud::new(class_count);
        for f in &frames[..c] {
            cloud.insert_frame(f, 1)?;
        }
        Ok(Slot { episode, cloud, t: c })
    }

    fn target<'a>(&self, episodes: &'a [Episode]) -> &'a PanoFrame {
        &episodes[self.episode].frames[self.t]
    }
}

/// Trains on rollouts through the episodes: every optimizer step advances a
/// batch of concurrent rollouts by one pose. Teacher forcing inserts the
/// ground-truth frame after each step, recurrent mode inserts the model's
/// prediction (posterior latent). Gradients stop at the point cloud.
pub fn train_structure(
    model: &mut StructureGenerator,
    episodes: &[Episode],
    cfg: &StructureTrainConfig,
    mut on_step: impl FnMut(&LossRecord),
) -> Result<Vec<LossRecord>> {
    if episodes.is_empty() {
        return Err(Error::Domain("training needs at least one episode".into()));
    }
    if let Some(e) = episodes.iter().find(|e| e.frames.len() < 2) {
        return Err(Error::Domain(format!(
            "episode in world {} has {} frames, need at least 2",
            e.world_seed,
            e.frames.len()
        )));
    }
    if cfg.batch == 0 || cfg.max_context == 0 {
        return Err(Error::Domain("batch and max_context must be positive".into()));
    }
    let mc = model.config().clone();
    let g = mc.geometry()?;
    let mut rng = seed::rng(cfg.seed);
    let mut slots = (0..cfg.batch)
        .map(|_| Slot::start(episodes, mc.class_count, cfg.max_context, &mut rng))
        .collect::<Result<Vec<_>>>()?;
    let mut curve = Vec::with_capacity(cfg.steps);

    for step in 0..cfg.steps {
        let guides: Vec<GuidanceImage> = slots
            .iter()
            .map(|s| s.cloud.render_guidance(&s.target(episodes).pose, g))
            .collect();
        let targets: Vec<&PanoFrame> = slots.iter().map(|s| s.target(episodes)).collect();
        let batch = make_batch(model, &guides.iter().collect::<Vec<_>>(), &targets, &mut rng)?;
        let (loss, grads, dec) = model.loss_grads_decoded(&batch)?;
        check_finite(step, &loss)?;
        let frac = if cfg.steps > 1 { step as f64 / (cfg.steps - 1) as f64 } else { 0.0 };
        let adam = AdamConfig::with_lr(cfg.lr * (1.0 + (cfg.final_lr_scale - 1.0) * frac));
        adam_step(model.params_mut(), &grads, &adam)?;
        let rec = LossRecord {
            step,
            total: loss.total,
            ce: loss.ce,
            depth: loss.depth,
            kl: loss.kl,
        };
        on_step(&rec);
        curve.push(rec);

        let preds = match cfg.mode {
            TrainMode::Recurrent => Some(model.to_maps(&dec)?),
            TrainMode::TeacherForcing => None,
        };
        for (i, slot) in slots.iter_mut().enumerate() {
            let target = slot.target(episodes);
            match &preds {
                None => {
                    slot.cloud.insert_frame(target, 1)?;
                }
                Some(p) => {
                    let (sem, depth) = &p[i];
                    let frame = PanoFrame::new(sem.clone(), depth.clone(), colorize(sem, depth)?, target.pose)?;
                    slot.cloud.insert_frame(&frame, 1)?;
                }
            }
            slot.t += 1;
            if slot.t >= episodes[slot.episode].frames.len() {
                *slot = Slot::start(episodes, mc.class_count, cfg.max_context, &mut rng)?;
            }
        }
    }
    Ok(curve)
}

fn check_finite(step: usize, l: &StructureLoss) -> Result<()> {
    if [l.total, l.ce, l.depth, l.kl].iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::NonFiniteLoss {
            step,
            total: l.total,
            ce: l.ce,
            depth: l.depth,
            kl: l.kl,
        })
    }
}

/// Assembles a batch with fresh standard-normal reparameterization noise.
pub fn make_batch(
    model: &StructureGenerator,
    guides: &[&GuidanceImage],
    targets: &[&PanoFrame],
    rng: &mut impl Rng,
) -> Result<StructureBatch> {
    let cfg = model.config();
    let guide_input = encode_guidance(cfg, guides)?;
    let frames: Vec<_> = targets.iter().map(|f| (&f.sem, &f.depth)).collect();
    let gt_input = encode_frames(cfg, &frames)?;
    let gt_sem: Vec<u8> = targets.iter().flat_map(|f| f.sem.as_slice().iter().copied()).collect();
    let (w, h) = (cfg.width, cfg.height);
    let gt_depth = Tensor4::from_vec(
        [targets.len(), 1, h, w],
        targets
            .iter()
            .flat_map(|f| f.depth.as_slice().iter().map(|d| (d / cfg.d_max).clamp(0.0, 1.0)))
            .collect(),
    )?;
    let eps = Tensor4::from_fn(cfg.latent_shape(targets.len()), |_| StandardNormal.sample(rng));
    Ok(StructureBatch {
        guide_input,
        gt_input,
        gt_sem,
        gt_depth,
        eps,
    })
}
