use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::metrics::{depth_mae, diversity_score, miou, pixel_accuracy};
use crate::cloud::{PanoFrame, PointCloud};
use crate::error::{Error, Result};
use crate::geom::PanoGeometry;
use crate::grid::Mask;
use crate::palette::CLASS_COUNT;
use crate::seed;
use crate::structgen::{
    build_episodes, rollout, Episode, EpisodeSpec, GeneratorPredictor, NearestNeighbor, RolloutMode,
    StructureGenerator, StructurePredictor, ZPolicy,
};
use crate::synthworld::WorldParams;

pub const EVAL_SCHEMA_VERSION: u32 = 1;

/// CSV header of [`EvalReport::to_csv`].
pub const CSV_HEADER: &str = "model,context,step,metric,value";

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    NearestNeighbor,
    StructTf,
    StructRec,
}

impl ModelKind {
    pub const ALL: [ModelKind; 3] = [ModelKind::NearestNeighbor, ModelKind::StructTf, ModelKind::StructRec];

    pub fn name(self) -> &'static str {
        match self {
            ModelKind::NearestNeighbor => "nearest_neighbor",
            ModelKind::StructTf => "struct_tf",
            ModelKind::StructRec => "struct_rec",
        }
    }
}

/// The models taking part in an evaluation. Absent models are skipped.
#[derive(Clone, Copy, Debug, Default)]
pub struct EvalModels<'a> {
    pub nearest_neighbor: bool,
    pub struct_tf: Option<&'a StructureGenerator>,
    pub struct_rec: Option<&'a StructureGenerator>,
}

impl<'a> EvalModels<'a> {
    fn list(&self) -> Vec<(ModelKind, Option<&'a StructureGenerator>)> {
        let mut out = Vec::new();
        if self.nearest_neighbor {
            out.push((ModelKind::NearestNeighbor, None));
        }
        if let Some(m) = self.struct_tf {
            out.push((ModelKind::StructTf, Some(m)));
        }
        if let Some(m) = self.struct_rec {
            out.push((ModelKind::StructRec, Some(m)));
        }
        out
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalConfig {
    pub world: WorldParams,
    /// Held-out world seeds.
    pub world_seeds: Vec<u64>,
    pub trajectories_per_world: usize,
    pub contexts: Vec<usize>,
    pub steps: usize,
    pub geometry: PanoGeometry,
    pub seed: u64,
    /// Prior samples per rollout for the diversity score; 0 disables it.
    pub diversity_samples: usize,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            world: WorldParams::default(),
            world_seeds: (1000..1010).collect(),
            trajectories_per_world: 5,
            contexts: vec![1, 2, 3],
            steps: 6,
            geometry: PanoGeometry::new(64, 32).expect("valid geometry"),
            seed: 0,
            diversity_samples: 2,
        }
    }
}

impl EvalConfig {
    fn validate(&self) -> Result<()> {
        if self.world_seeds.is_empty() {
            return Err(Error::Domain("evaluation needs at least one world".into()));
        }
        if self.contexts.is_empty() || self.contexts.contains(&0) {
            return Err(Error::Domain("contexts must be non-empty and positive".into()));
        }
        if self.steps == 0 || self.trajectories_per_world == 0 {
            return Err(Error::Domain("steps and trajectories per world must be positive".into()));
        }
        if self.diversity_samples == 1 {
            return Err(Error::Domain("diversity needs at least 2 samples".into()));
        }
        Ok(())
    }

    fn max_context(&self) -> usize {
        self.contexts.iter().copied().max().unwrap_or(1)
    }
}

/// Averaged metrics of one (model, context, step) cell.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalCell {
    pub model: ModelKind,
    pub context: usize,
    pub step: usize,
    /// Number of rollouts averaged.
    pub count: usize,
    pub miou: f64,
    /// Meters.
    pub depth_mae: f64,
    pub pixel_accuracy: f64,
    /// Mean fraction of valid guidance pixels.
    pub guidance_coverage: f64,
    pub diversity_unobserved: Option<f64>,
    pub diversity_observed: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub schema_version: u32,
    pub seed: u64,
    /// SHA-256 over the evaluation config and model parameters.
    pub config_fingerprint: String,
    pub trajectories: usize,
    pub cells: Vec<EvalCell>,
}

impl EvalReport {
    pub fn cell(&self, model: ModelKind, context: usize, step: usize) -> Option<&EvalCell> {
        self.cells
            .iter()
            .find(|c| c.model == model && c.context == context && c.step == step)
    }

    /// Mean mIOU of `model` over the given contexts and steps (cells
    /// weighted equally). `None` when no cell matches.
    pub fn mean_miou(&self, model: ModelKind, contexts: &[usize], steps: std::ops::RangeInclusive<usize>) -> Option<f64> {
        let v: Vec<f64> = self
            .cells
            .iter()
            .filter(|c| c.model == model && contexts.contains(&c.context) && steps.contains(&c.step))
            .map(|c| c.miou)
            .collect();
        (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
    }

    pub fn models(&self) -> Vec<ModelKind> {
        let mut m: Vec<_> = self.cells.iter().map(|c| c.model).collect();
        m.sort();
        m.dedup();
        m
    }

    /// One row per metric: `model,context,step,metric,value`.
    pub fn to_csv(&self) -> String {
        let mut s = String::from(CSV_HEADER);
        s.push('\n');
        for c in &self.cells {
            let mut row = |metric: &str, v: f64| {
                s.push_str(&format!("{},{},{},{metric},{v}\n", c.model.name(), c.context, c.step));
            };
            row("miou", c.miou);
            row("depth_mae", c.depth_mae);
            row("pixel_accuracy", c.pixel_accuracy);
            row("guidance_coverage", c.guidance_coverage);
            if let Some(d) = c.diversity_unobserved {
                row("diversity_unobserved", d);
            }
            if let Some(d) = c.diversity_observed {
                row("diversity_observed", d);
            }
        }
        s
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

/// Generates the held-out worlds and evaluates every model on them.
pub fn run_eval_grid(models: &EvalModels<'_>, cfg: &EvalConfig) -> Result<EvalReport> {
    cfg.validate()?;
    let es = EpisodeSpec {
        world: cfg.world.clone(),
        per_world: cfg.trajectories_per_world,
        length: Some(cfg.max_context() + cfg.steps),
        augment: false,
        geometry: cfg.geometry,
        seed: seed::derive(cfg.seed, 0xE7A1),
    };
    let episodes = build_episodes(&cfg.world_seeds, &es)?;
    eval_episodes(models, &episodes, cfg)
}

#[derive(Default, Clone)]
struct Acc {
    count: usize,
    miou: f64,
    mae: f64,
    acc: f64,
    coverage: f64,
    div: Option<(f64, f64)>,
}

type Key = (ModelKind, usize, usize);

/// Evaluates prepared episodes. The first `max(contexts)` frames of each
/// episode are the context pool and the rest are targets, so every context
/// count predicts the same poses. Shorter episodes truncate their steps.
pub fn eval_episodes(models: &EvalModels<'_>, episodes: &[Episode], cfg: &EvalConfig) -> Result<EvalReport> {
    cfg.validate()?;
    if episodes.is_empty() {
        return Err(Error::Domain("evaluation needs at least one trajectory".into()));
    }
    let list = models.list();
    let per_episode: Vec<Vec<(Key, Acc)>> = episodes
        .par_iter()
        .enumerate()
        .map(|(i, ep)| eval_one(&list, i, &ep.frames, cfg))
        .collect::<Result<_>>()?;

    let mut sums: BTreeMap<Key, Acc> = BTreeMap::new();
    for rows in per_episode {
        for (k, a) in rows {
            let e = sums.entry(k).or_default();
            e.count += a.count;
            e.miou += a.miou;
            e.mae += a.mae;
            e.acc += a.acc;
            e.coverage += a.coverage;
            if let Some((u, o)) = a.div {
                let (su, so) = e.div.unwrap_or((0.0, 0.0));
                e.div = Some((su + u, so + o));
            }
        }
    }
    let cells = sums
        .into_iter()
        .map(|((model, context, step), a)| {
            let n = a.count as f64;
            EvalCell {
                model,
                context,
                step,
                count: a.count,
                miou: a.miou / n,
                depth_mae: a.mae / n,
                pixel_accuracy: a.acc / n,
                guidance_coverage: a.coverage / n,
                diversity_unobserved: a.div.map(|d| d.0 / n),
                diversity_observed: a.div.map(|d| d.1 / n),
            }
        })
        .collect();
    Ok(EvalReport {
        schema_version: EVAL_SCHEMA_VERSION,
        seed: cfg.seed,
        config_fingerprint: fingerprint(models, cfg)?,
        trajectories: episodes.len(),
        cells,
    })
}

fn eval_one(
    models: &[(ModelKind, Option<&StructureGenerator>)],
    index: usize,
    frames: &[PanoFrame],
    cfg: &EvalConfig,
) -> Result<Vec<(Key, Acc)>> {
    if frames.len() < 2 {
        return Ok(Vec::new());
    }
    let split = cfg.max_context().min(frames.len() - 1);
    let targets = &frames[split..(split + cfg.steps).min(frames.len())];
    let poses: Vec<_> = targets.iter().map(|f| f.pose).collect();
    let mut out = Vec::new();
    for &c in &cfg.contexts {
        if c > split {
            continue;
        }
        let context = &frames[split - c..split];
        let unobserved = unobserved_masks(context, &poses, cfg.geometry)?;
        for &(kind, model) in models {
            let nn = NearestNeighbor;
            let mean_pred;
            let predictor: &dyn StructurePredictor = match model {
                None => &nn,
                Some(m) => {
                    mean_pred = GeneratorPredictor { model: m, z: ZPolicy::PriorMean };
                    &mean_pred
                }
            };
            let steps = rollout(predictor, context, &poses, Some(targets), RolloutMode::Recurrent, CLASS_COUNT, cfg.geometry)?;
            let samples = match model {
                Some(m) if cfg.diversity_samples >= 2 => (0..cfg.diversity_samples)
                    .map(|k| {
                        let s = seed::derive(seed::derive(cfg.seed, index as u64), (c * 1000 + k) as u64);
                        let p = GeneratorPredictor { model: m, z: ZPolicy::PriorSample(s) };
                        rollout(&p, context, &poses, Some(targets), RolloutMode::Recurrent, CLASS_COUNT, cfg.geometry)
                    })
                    .collect::<Result<Vec<_>>>()
                    .map(Some)?,
                _ => None,
            };
            for (t, (st, gt)) in steps.iter().zip(targets).enumerate() {
                let div = match &samples {
                    Some(s) => {
                        let maps: Vec<_> = s.iter().map(|r| r[t].sem.clone()).collect();
                        Some(diversity_score(&maps, &unobserved[t])?)
                    }
                    None => None,
                };
                out.push((
                    (kind, c, t + 1),
                    Acc {
                        count: 1,
                        miou: miou(&gt.sem, &st.sem, CLASS_COUNT)?,
                        mae: depth_mae(&gt.depth, &st.depth)?,
                        acc: pixel_accuracy(&gt.sem, &st.sem)?,
                        coverage: st.guidance.valid_fraction(),
                        div,
                    },
                ));
            }
        }
    }
    Ok(out)
}

/// Pixels at each pose that no context frame observed.
fn unobserved_masks(context: &[PanoFrame], poses: &[crate::geom::Pose], g: PanoGeometry) -> Result<Vec<Mask>> {
    let mut cloud = PointCloud::new(CLASS_COUNT);
    for f in context {
        cloud.insert_frame(f, 1)?;
    }
    Ok(poses
        .iter()
        .map(|p| cloud.render_guidance(p, g).valid.map(|v| !v))
        .collect())
}

fn fingerprint(models: &EvalModels<'_>, cfg: &EvalConfig) -> Result<String> {
    let mut h = Sha256::new();
    h.update(serde_json::to_vec(cfg)?);
    for (kind, m) in models.list() {
        h.update(kind.name().as_bytes());
        if let Some(m) = m {
            h.update(m.params().checksum().to_le_bytes());
        }
    }
    Ok(h.finalize().iter().map(|b| format!("{b:02x}")).collect())
}
