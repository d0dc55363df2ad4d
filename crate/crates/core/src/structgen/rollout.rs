use rand_distr::{Distribution, StandardNormal};

use super::model::{encode_guidance, StructureGenerator};
use super::gaussian::sample_z;
use crate::cloud::{nn_fill, GuidanceImage, PanoFrame, PointCloud};
use crate::error::{Error, Result};
use crate::geom::{PanoGeometry, Pose};
use crate::grid::{ClassMap, DepthMap};
use crate::imggen::colorize;
use crate::seed;
use crate::tinynn::Tensor4;

/// What goes back into the point cloud after each step.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum RolloutMode {
    /// Insert the ground-truth frame.
    TeacherForcing,
    /// Insert the model's own prediction.
    Recurrent,
}

/// Latent choice at inference.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ZPolicy {
    PriorMean,
    /// Fresh prior draws, seeded per step.
    PriorSample(u64),
    /// Posterior from the ground-truth frame (needs ground truth).
    Posterior,
}

/// Anything that turns a guidance image into dense semantics and depth.
pub trait StructurePredictor {
    fn predict(&self, guide: &GuidanceImage, step: usize, gt: Option<&PanoFrame>) -> Result<(ClassMap, DepthMap)>;
}

/// Nearest-valid-pixel fill of the guidance.
#[derive(Clone, Copy, Debug, Default)]
pub struct NearestNeighbor;

impl StructurePredictor for NearestNeighbor {
    fn predict(&self, guide: &GuidanceImage, _step: usize, _gt: Option<&PanoFrame>) -> Result<(ClassMap, DepthMap)> {
        nn_fill(guide)
    }
}

/// A structure generator paired with a latent policy.
#[derive(Clone, Copy, Debug)]
pub struct GeneratorPredictor<'a> {
    pub model: &'a StructureGenerator,
    pub z: ZPolicy,
}

impl StructurePredictor for GeneratorPredictor<'_> {
    fn predict(&self, guide: &GuidanceImage, step: usize, gt: Option<&PanoFrame>) -> Result<(ClassMap, DepthMap)> {
        let m = self.model;
        let input = encode_guidance(m.config(), &[guide])?;
        let enc = m.encode(&input)?;
        let z = match self.z {
            ZPolicy::PriorMean => m.prior(&enc)?.mu,
            ZPolicy::PriorSample(s) => {
                let p = m.prior(&enc)?;
                let mut rng = seed::rng(seed::derive(s, step as u64));
                let eps = Tensor4::from_fn(p.mu.shape(), |_| StandardNormal.sample(&mut rng));
                sample_z(&p, &eps)?
            }
            ZPolicy::Posterior => {
                let gt = gt.ok_or_else(|| Error::Usage("posterior latents need ground truth".into()))?;
                let gt_in = super::model::encode_frames(m.config(), &[(&gt.sem, &gt.depth)])?;
                m.posterior(&m.encode(&gt_in)?)?.mu
            }
        };
        let dec = m.decode(&enc, &z)?;
        Ok(m.to_maps(&dec)?.swap_remove(0))
    }
}

/// One predicted step of a rollout.
#[derive(Clone, Debug, PartialEq)]
pub struct RolloutStep {
    pub pose: Pose,
    pub guidance: GuidanceImage,
    pub sem: ClassMap,
    /// Meters.
    pub depth: DepthMap,
}

/// Predicts a trajectory of future poses from context frames, feeding either
/// ground truth or predictions back into the point cloud after every step.
pub fn rollout(
    predictor: &dyn StructurePredictor,
    context: &[PanoFrame],
    trajectory: &[Pose],
    gt: Option<&[PanoFrame]>,
    mode: RolloutMode,
    class_count: usize,
    geometry: PanoGeometry,
) -> Result<Vec<RolloutStep>> {
    if context.is_empty() {
        return Err(Error::Domain("rollout needs at least one context frame".into()));
    }
    if trajectory.is_empty() {
        return Err(Error::Domain("rollout needs a non-empty trajectory".into()));
    }
    if let Some(gt) = gt {
        if gt.len() != trajectory.len() {
            return Err(Error::Shape(format!(
                "{} ground-truth frames for {} poses",
                gt.len(),
                trajectory.len()
            )));
        }
    } else if mode == RolloutMode::TeacherForcing {
        return Err(Error::Usage("teacher forcing needs ground-truth frames".into()));
    }
    let mut cloud = PointCloud::new(class_count);
    for f in context {
        cloud.insert_frame(f, 1)?;
    }
    let mut out = Vec::with_capacity(trajectory.len());
    for (t, pose) in trajectory.iter().enumerate() {
        let gt_t = gt.map(|g| &g[t]);
        let guidance = cloud.render_guidance(pose, geometry);
        let (sem, depth) = predictor.predict(&guidance, t, gt_t)?;
        match mode {
            RolloutMode::TeacherForcing => {
                cloud.insert_frame(gt_t.expect("checked above"), 1)?;
            }
            RolloutMode::Recurrent => {
                let rgb = colorize(&sem, &depth)?;
                let frame = PanoFrame::new(sem.clone(), depth.clone(), rgb, *pose)?;
                cloud.insert_frame(&frame, 1)?;
            }
        }
        out.push(RolloutStep {
            pose: *pose,
            guidance,
            sem,
            depth,
        });
    }
    Ok(out)
}
