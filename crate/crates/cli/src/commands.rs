use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use anyhow::{bail, ensure, Context, Result};
use serde::{Deserialize, Serialize};

use panodream::eval::{depth_mae, diversity_score, miou, pixel_accuracy, run_eval_grid, EvalModels, EvalReport};
use panodream::grid::resize_nearest;
use panodream::imggen::{colorize, image_samples, train_image_generator, Discriminator, ImageGenerator, ImageLossRecord};
use panodream::palette::CLASS_COUNT;
use panodream::seed;
use panodream::structgen::{
    episodes_for_world, rollout, train_structure, Episode, EpisodeSpec, GeneratorPredictor, LossRecord,
    NearestNeighbor, RolloutMode, StructureGenerator, StructurePredictor, TrainMode, ZPolicy,
};
use panodream::synthworld::{
    generate_world, perturb_viewpoint, sample_trajectory_nodes, sample_walk, validate_world, NavGraph, Scene,
    SceneSpec,
};
use panodream::{ClassMap, Mask, PanoFrame, PanoGeometry, PointCloud, Pose};

use crate::config::RunConfig;
use crate::io::{graph_path, read_json, read_world, world_path, write_frame, write_json};
use crate::models::{self, CheckpointMeta};

pub const TRAJECTORY_SCHEMA_VERSION: u32 = 1;
pub const DREAM_SCHEMA_VERSION: u32 = 1;

pub const STRUCTURE_CURVE_HEADER: &str = "step,total,ce,depth,kl";
pub const IMAGE_CURVE_HEADER: &str = "step,g_total,gan,vgg,fm,d_loss,l1";

/// Generates each world and writes `world_<seed>.json` and `graph_<seed>.json`.
pub fn worldgen(cfg: &RunConfig, seeds: &[u64], out: &Path) -> Result<()> {
    std::fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    for &s in seeds {
        let (spec, graph) = generate_world(s, &cfg.world)?;
        write_json(&world_path(out, s), &spec)?;
        write_json(&graph_path(out, s), &graph)?;
    }
    Ok(())
}

/// Problems with a world/graph pair; empty when valid.
pub fn validate(world: &Path, graph: &Path) -> Result<Vec<String>> {
    let (spec, graph) = read_world(world, graph)?;
    let mut problems = validate_world(&spec, &graph);
    let again: SceneSpec = serde_json::from_str(&serde_json::to_string(&spec)?)?;
    if again != spec {
        problems.push("scene does not survive a JSON round trip".into());
    }
    let again: NavGraph = serde_json::from_str(&serde_json::to_string(&graph)?)?;
    if again != graph {
        problems.push("navigation graph does not survive a JSON round trip".into());
    }
    Ok(problems)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrajectoryFile {
    pub schema_version: u32,
    pub world_seed: u64,
    pub seed: u64,
    pub augment: bool,
    pub nodes: Vec<usize>,
    pub poses: Vec<Pose>,
}

/// Samples a walk over the navigation graph. Without `length` the walk has
/// 5 to 8 viewpoints.
pub fn trajectory(
    spec: &SceneSpec,
    graph: &NavGraph,
    seed: u64,
    length: Option<usize>,
    augment: bool,
) -> Result<TrajectoryFile> {
    let nodes = match length {
        Some(len) => sample_walk(graph, len, &mut seed::rng(seed))?,
        None => sample_trajectory_nodes(graph, seed)?,
    };
    let scene = Scene::new(spec.clone());
    let poses = nodes
        .iter()
        .enumerate()
        .map(|(i, &n)| {
            if augment {
                perturb_viewpoint(&scene, &graph.nodes[n], seed::derive(seed::derive(seed, 0xA06), i as u64))
            } else {
                Ok(graph.nodes[n])
            }
        })
        .collect::<panodream::Result<_>>()?;
    Ok(TrajectoryFile {
        schema_version: TRAJECTORY_SCHEMA_VERSION,
        world_seed: spec.seed,
        seed,
        augment,
        nodes,
        poses,
    })
}

pub fn read_trajectory(path: &Path) -> Result<TrajectoryFile> {
    let t: TrajectoryFile = read_json(path)?;
    ensure!(
        t.schema_version == TRAJECTORY_SCHEMA_VERSION,
        "trajectory schema version {} is not {TRAJECTORY_SCHEMA_VERSION}",
        t.schema_version
    );
    ensure!(!t.poses.is_empty(), "trajectory {} has no poses", path.display());
    Ok(t)
}

/// Renders `frame_NNN_{rgb,depth,sem}.png` plus a sidecar for every pose.
pub fn render(cfg: &RunConfig, spec: &SceneSpec, poses: &[Pose], geometry: PanoGeometry, out: &Path) -> Result<()> {
    std::fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    let scene = Scene::with_palette(spec.clone(), cfg.palette_array());
    for (i, pose) in poses.iter().enumerate() {
        let f = scene
            .render_pano(pose, geometry)
            .with_context(|| format!("rendering pose {i}"))?;
        write_frame(out, &format!("frame_{i:03}"), &f.sem, &f.depth, Some(&f.rgb), &f.pose)?;
    }
    Ok(())
}

fn training_world(cfg: &RunConfig, seed: u64) -> Result<(SceneSpec, NavGraph)> {
    match &cfg.paths.worlds {
        Some(dir) => read_world(&world_path(dir, seed), &graph_path(dir, seed)),
        None => Ok(generate_world(seed, &cfg.world)?),
    }
}

fn training_episodes(cfg: &RunConfig, seeds: &[u64], es: &EpisodeSpec) -> Result<Vec<Episode>> {
    let mut out = Vec::new();
    for &s in seeds {
        let (spec, graph) = training_world(cfg, s)?;
        ensure!(spec.seed == s, "world file for seed {s} holds seed {}", spec.seed);
        out.extend(episodes_with_palette(cfg, &spec, &graph, es)?);
    }
    Ok(out)
}

/// Episodes whose RGB frames follow the configured palette.
fn episodes_with_palette(cfg: &RunConfig, spec: &SceneSpec, graph: &NavGraph, es: &EpisodeSpec) -> Result<Vec<Episode>> {
    let mut eps = episodes_for_world(spec, graph, es)?;
    if cfg.palette_array() != panodream::palette::DEFAULT_PALETTE {
        let scene = Scene::with_palette(spec.clone(), cfg.palette_array());
        for ep in &mut eps {
            for f in &mut ep.frames {
                f.rgb = scene.render_pano(&f.pose, es.geometry)?.rgb;
            }
        }
    }
    Ok(eps)
}

pub fn structure_curve_csv(curve: &[LossRecord]) -> String {
    let mut s = String::from(STRUCTURE_CURVE_HEADER);
    s.push('\n');
    for r in curve {
        writeln!(s, "{},{},{},{},{}", r.step, r.total, r.ce, r.depth, r.kl).unwrap();
    }
    s
}

pub fn image_curve_csv(curve: &[ImageLossRecord]) -> String {
    let mut s = String::from(IMAGE_CURVE_HEADER);
    s.push('\n');
    for r in curve {
        writeln!(s, "{},{},{},{},{},{},{}", r.step, r.g_total, r.gan, r.vgg, r.fm, r.d_loss, r.l1).unwrap();
    }
    s
}

/// Trains the structure generator and writes `structure.ckpt` and
/// `curves.csv` into `out`. `mode` overrides the configured training mode.
pub fn train_structure_stage(
    cfg: &RunConfig,
    mode: Option<TrainMode>,
    out: &Path,
    on_step: impl FnMut(&LossRecord),
) -> Result<PathBuf> {
    std::fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    let mut train = cfg.structure_train.clone();
    if let Some(m) = mode {
        train.mode = m;
    }
    let episodes = training_episodes(cfg, &cfg.data.train_world_seeds, &cfg.structure_episodes())?;
    let mut model = StructureGenerator::new(cfg.structure.clone())?;
    let curve = train_structure(&mut model, &episodes, &train, on_step)?;
    std::fs::write(out.join("curves.csv"), structure_curve_csv(&curve))?;
    let path = out.join("structure.ckpt");
    let meta = CheckpointMeta::Structure {
        run_schema_version: crate::config::RUN_CONFIG_SCHEMA_VERSION,
        config: cfg.structure.clone(),
        train,
    };
    models::save(&path, model.params(), &meta)?;
    Ok(path)
}

/// Trains the image generator on ground-truth semantics and depth and writes
/// `image.ckpt` and `curves.csv` into `out`.
pub fn train_image_stage(cfg: &RunConfig, out: &Path, on_step: impl FnMut(&ImageLossRecord)) -> Result<PathBuf> {
    std::fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    let n = cfg.data.image_worlds.min(cfg.data.train_world_seeds.len());
    ensure!(n > 0, "data.image_worlds must be positive");
    let episodes = training_episodes(cfg, &cfg.data.train_world_seeds[..n], &cfg.image_episodes()?)?;
    let samples = image_samples(&episodes, cfg.structure_train.max_context)?;
    let mut gen = ImageGenerator::new(cfg.image.clone())?;
    let mut disc = Discriminator::new(
        cfg.image.cond_channels(),
        cfg.discriminator.widths,
        cfg.discriminator.init_seed,
    )?;
    let curve = train_image_generator(&mut gen, &mut disc, &samples, &cfg.image_train, on_step)?;
    std::fs::write(out.join("curves.csv"), image_curve_csv(&curve))?;
    let path = out.join("image.ckpt");
    let meta = CheckpointMeta::Image {
        run_schema_version: crate::config::RUN_CONFIG_SCHEMA_VERSION,
        config: cfg.image.clone(),
        train: cfg.image_train.clone(),
    };
    models::save(&path, gen.params(), &meta)?;
    Ok(path)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum DreamModel {
    NearestNeighbor,
    Structure,
}

/// Latent choice for `dream`: the prior mean, or prior samples seeded from
/// a base seed (sample `k` uses a seed derived from the base and `k`).
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ZMode {
    Mean,
    Sample(u64),
}

impl std::str::FromStr for ZMode {
    type Err = anyhow::Error;
    fn from_str(s: &str) -> Result<Self> {
        if s == "mean" {
            return Ok(ZMode::Mean);
        }
        match s.strip_prefix("sample:") {
            Some(seed) => Ok(ZMode::Sample(
                seed.parse().with_context(|| format!("bad seed in z mode `{s}`"))?,
            )),
            None => bail!("z mode must be `mean` or `sample:<seed>`, got `{s}`"),
        }
    }
}

pub struct DreamArgs<'a> {
    pub spec: &'a SceneSpec,
    pub trajectory: &'a [Pose],
    pub context: usize,
    pub model: DreamModel,
    pub structure: Option<&'a StructureGenerator>,
    pub image: Option<&'a ImageGenerator>,
    pub zmode: ZMode,
    pub samples: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepMetrics {
    pub step: usize,
    pub miou: f64,
    pub depth_mae: f64,
    pub pixel_accuracy: f64,
    pub guidance_coverage: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepDiversity {
    pub step: usize,
    pub unobserved: f64,
    pub observed: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DreamReport {
    pub schema_version: u32,
    pub model: String,
    pub context: usize,
    pub steps: usize,
    pub samples: Vec<Vec<StepMetrics>>,
    /// Pairwise disagreement between samples; empty for a single sample.
    pub diversity: Vec<StepDiversity>,
}

/// Rolls a model out along the trajectory from the first `context` frames,
/// feeding predictions back into the point cloud. Writes
/// `sample_KK/step_SS_{sem,depth,rgb}.png` and `metrics.json`.
pub fn dream(cfg: &RunConfig, a: &DreamArgs<'_>, out: &Path) -> Result<DreamReport> {
    let len = a.trajectory.len();
    ensure!(
        a.context >= 1 && a.context < len,
        "context must be in 1..{len} for a trajectory of {len} poses, got {}",
        a.context
    );
    ensure!(a.samples >= 1, "need at least one sample");
    let g = cfg.geometry;
    let scene = Scene::with_palette(a.spec.clone(), cfg.palette_array());
    let gt: Vec<PanoFrame> = a
        .trajectory
        .iter()
        .map(|p| scene.render_pano(p, g))
        .collect::<panodream::Result<_>>()?;
    let (ctx, targets) = gt.split_at(a.context);
    let poses = &a.trajectory[a.context..];
    let image_ctx: Option<Vec<PanoFrame>> = match a.image {
        Some(m) => {
            let ig = m.config().geometry()?;
            Some(
                a.trajectory[..a.context]
                    .iter()
                    .map(|p| scene.render_pano(p, ig))
                    .collect::<panodream::Result<_>>()?,
            )
        }
        None => None,
    };

    let mut all_sem: Vec<Vec<ClassMap>> = Vec::with_capacity(a.samples);
    let mut report = DreamReport {
        schema_version: DREAM_SCHEMA_VERSION,
        model: match a.model {
            DreamModel::NearestNeighbor => "nn".into(),
            DreamModel::Structure => "struct".into(),
        },
        context: a.context,
        steps: poses.len(),
        samples: Vec::new(),
        diversity: Vec::new(),
    };
    std::fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    for k in 0..a.samples {
        let z = match a.zmode {
            ZMode::Mean => ZPolicy::PriorMean,
            ZMode::Sample(s) => ZPolicy::PriorSample(seed::derive(s, k as u64)),
        };
        let gp;
        let predictor: &dyn StructurePredictor = match a.model {
            DreamModel::NearestNeighbor => &NearestNeighbor,
            DreamModel::Structure => {
                let model = a.structure.context("the structure model needs a checkpoint")?;
                gp = GeneratorPredictor { model, z };
                &gp
            }
        };
        let steps = rollout(predictor, ctx, poses, Some(targets), RolloutMode::Recurrent, CLASS_COUNT, g)?;
        let rgbs = match (a.image, &image_ctx) {
            (Some(m), Some(ic)) => image_rollout(m, ic, &steps)?,
            _ => steps
                .iter()
                .map(|s| colorize(&s.sem, &s.depth))
                .collect::<panodream::Result<_>>()?,
        };
        let dir = out.join(format!("sample_{k:02}"));
        std::fs::create_dir_all(&dir)?;
        let mut metrics = Vec::with_capacity(steps.len());
        for (t, (s, rgb)) in steps.iter().zip(&rgbs).enumerate() {
            let (sem, depth) = if rgb.width() == s.sem.width() {
                (s.sem.clone(), s.depth.clone())
            } else {
                (
                    resize_nearest(&s.sem, rgb.width(), rgb.height()),
                    resize_nearest(&s.depth, rgb.width(), rgb.height()),
                )
            };
            write_frame(&dir, &format!("step_{:02}", t + 1), &sem, &depth, Some(rgb), &s.pose)?;
            metrics.push(StepMetrics {
                step: t + 1,
                miou: miou(&targets[t].sem, &s.sem, CLASS_COUNT)?,
                depth_mae: depth_mae(&targets[t].depth, &s.depth)?,
                pixel_accuracy: pixel_accuracy(&targets[t].sem, &s.sem)?,
                guidance_coverage: s.guidance.valid_fraction(),
            });
        }
        report.samples.push(metrics);
        all_sem.push(steps.into_iter().map(|s| s.sem).collect());
    }
    if a.samples >= 2 {
        let mut cloud = PointCloud::new(CLASS_COUNT);
        for f in ctx {
            cloud.insert_frame(f, 1)?;
        }
        for (t, pose) in poses.iter().enumerate() {
            let guide = cloud.render_guidance(pose, g);
            let unobserved: Mask = guide.valid.map(|v| !v);
            let maps: Vec<ClassMap> = all_sem.iter().map(|s| s[t].clone()).collect();
            let (u, o) = diversity_score(&maps, &unobserved)?;
            report.diversity.push(StepDiversity {
                step: t + 1,
                unobserved: u,
                observed: o,
            });
        }
    }
    write_json(&out.join("metrics.json"), &report)?;
    Ok(report)
}

/// RGB for each predicted step. Guidance comes from a cloud at the image
/// resolution seeded with the real context frames and extended with every
/// generated frame.
fn image_rollout(
    m: &ImageGenerator,
    context: &[PanoFrame],
    steps: &[panodream::structgen::RolloutStep],
) -> Result<Vec<panodream::RgbImage>> {
    let ig = m.config().geometry()?;
    let mut cloud = PointCloud::new(CLASS_COUNT);
    for f in context {
        cloud.insert_frame(f, 1)?;
    }
    let mut out = Vec::with_capacity(steps.len());
    for s in steps {
        let sem = resize_nearest(&s.sem, ig.width(), ig.height());
        let depth = resize_nearest(&s.depth, ig.width(), ig.height());
        let guide = cloud.render_guidance(&s.pose, ig);
        let rgb = m.generate_rgb(&sem, &depth, &guide.rgb, &guide.valid)?;
        cloud.insert_frame(&PanoFrame::new(sem, depth, rgb.clone(), s.pose)?, 1)?;
        out.push(rgb);
    }
    Ok(out)
}

/// Runs the evaluation grid over nearest neighbor and whichever learned
/// models are given, writing `report.json` and `report.csv`.
pub fn eval(
    cfg: &RunConfig,
    tf: Option<&StructureGenerator>,
    rec: Option<&StructureGenerator>,
    out: &Path,
) -> Result<EvalReport> {
    std::fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    let models = EvalModels {
        nearest_neighbor: true,
        struct_tf: tf,
        struct_rec: rec,
    };
    let report = run_eval_grid(&models, &cfg.eval)?;
    std::fs::write(out.join("report.json"), report.to_json()?)?;
    std::fs::write(out.join("report.csv"), report.to_csv())?;
    Ok(report)
}
