use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand, ValueEnum};

use panodream::structgen::TrainMode;
use panodream::{PanoGeometry, Pose, Vec3};
use panodream_cli::commands::{self, DreamArgs, DreamModel, ZMode};
use panodream_cli::io::read_world;
use panodream_cli::{models, RunConfig};

#[derive(Parser)]
#[command(name = "panodream", version, about = "Generate, render and predict indoor panoramas")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write the default run configuration.
    Config {
        #[arg(long)]
        out: PathBuf,
    },
    /// Generate worlds and their navigation graphs.
    Worldgen {
        #[arg(long)]
        config: Option<PathBuf>,
        /// First world seed.
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 1)]
        count: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Check a world and navigation graph for structural problems.
    Validate {
        #[arg(long)]
        world: PathBuf,
        #[arg(long)]
        graph: PathBuf,
    },
    /// Sample a trajectory over a navigation graph.
    Traj {
        #[arg(long)]
        world: PathBuf,
        #[arg(long)]
        graph: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Fixed number of viewpoints; 5 to 8 when omitted.
        #[arg(long)]
        length: Option<usize>,
        /// Jitter every viewpoint.
        #[arg(long)]
        augment: bool,
        #[arg(long)]
        out: PathBuf,
    },
    /// Render panoramas at a pose or along a trajectory.
    Render {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        world: PathBuf,
        /// `x,y,z,yaw` in meters and radians.
        #[arg(long, conflicts_with = "traj")]
        pose: Option<String>,
        #[arg(long)]
        traj: Option<PathBuf>,
        #[arg(long)]
        width: Option<usize>,
        #[arg(long)]
        height: Option<usize>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train the structure or image generator.
    Train {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, value_enum)]
        stage: Stage,
        /// Overrides the configured structure training mode.
        #[arg(long, value_enum)]
        mode: Option<ModeArg>,
        /// Print the loss every this many steps (0 = quiet).
        #[arg(long, default_value_t = 50)]
        log_every: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Roll a model out along a trajectory from real context frames.
    Dream {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        world: PathBuf,
        #[arg(long)]
        traj: PathBuf,
        #[arg(long, default_value_t = 1)]
        context: usize,
        #[arg(long, value_enum, default_value = "struct")]
        model: ModelArg,
        /// Structure generator checkpoint.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        /// Image generator checkpoint; without it RGB is a flat colorization.
        #[arg(long)]
        image_checkpoint: Option<PathBuf>,
        /// `mean` or `sample:<seed>`.
        #[arg(long, default_value = "mean")]
        zmode: ZMode,
        #[arg(long, default_value_t = 1)]
        samples: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Evaluate nearest neighbor and trained models on held-out worlds.
    Eval {
        #[arg(long)]
        config: Option<PathBuf>,
        /// Teacher-forced structure checkpoint.
        #[arg(long)]
        tf: Option<PathBuf>,
        /// Recurrently trained structure checkpoint.
        #[arg(long)]
        rec: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum Stage {
    Structure,
    Image,
}

#[derive(Clone, Copy, ValueEnum)]
enum ModeArg {
    TeacherForcing,
    Recurrent,
}

#[derive(Clone, Copy, ValueEnum)]
enum ModelArg {
    Nn,
    Struct,
}

fn load_config(path: Option<&Path>) -> Result<RunConfig> {
    match path {
        Some(p) => RunConfig::load(p),
        None => Ok(RunConfig::default()),
    }
}

fn parse_pose(s: &str) -> Result<Pose> {
    let v: Vec<f64> = s
        .split(',')
        .map(|p| p.trim().parse::<f64>())
        .collect::<Result<_, _>>()
        .with_context(|| format!("pose `{s}` is not four numbers"))?;
    let [x, y, z, yaw] = v[..] else {
        bail!("pose `{s}` must be x,y,z,yaw");
    };
    Ok(Pose::new(Vec3::new(x, y, z), yaw))
}

/// World and graph paths share a directory and seed-based names; the graph
/// is found next to the world file.
fn sibling_graph(world: &Path) -> Result<PathBuf> {
    let name = world
        .file_name()
        .and_then(|n| n.to_str())
        .context("world path has no file name")?;
    let graph = name
        .strip_prefix("world_")
        .map(|rest| format!("graph_{rest}"))
        .with_context(|| format!("world file `{name}` is not named world_<seed>.json"))?;
    Ok(world.with_file_name(graph))
}

fn run(cli: Cli) -> Result<ExitCode> {
    match cli.command {
        Command::Config { out } => {
            std::fs::write(&out, RunConfig::default().to_json()?)
                .with_context(|| format!("writing {}", out.display()))?;
        }
        Command::Worldgen { config, seed, count, out } => {
            let cfg = load_config(config.as_deref())?;
            let seeds: Vec<u64> = (seed..seed + count).collect();
            commands::worldgen(&cfg, &seeds, &out)?;
            eprintln!("wrote {} worlds to {}", seeds.len(), out.display());
        }
        Command::Validate { world, graph } => {
            let problems = commands::validate(&world, &graph)?;
            if problems.is_empty() {
                println!("ok");
            } else {
                for p in &problems {
                    println!("{p}");
                }
                return Ok(ExitCode::FAILURE);
            }
        }
        Command::Traj { world, graph, seed, length, augment, out } => {
            let (spec, graph) = read_world(&world, &graph)?;
            let t = commands::trajectory(&spec, &graph, seed, length, augment)?;
            panodream_cli::io::write_json(&out, &t)?;
        }
        Command::Render { config, world, pose, traj, width, height, out } => {
            let cfg = load_config(config.as_deref())?;
            let spec = panodream_cli::io::read_json(&world)?;
            let poses = match (pose, traj) {
                (Some(p), None) => vec![parse_pose(&p)?],
                (None, Some(t)) => commands::read_trajectory(&t)?.poses,
                _ => bail!("give exactly one of --pose and --traj"),
            };
            let geometry = match (width, height) {
                (None, None) => cfg.geometry,
                (Some(w), Some(h)) => PanoGeometry::new(w, h)?,
                (Some(w), None) => PanoGeometry::new(w, w / 2)?,
                (None, Some(h)) => PanoGeometry::new(2 * h, h)?,
            };
            commands::render(&cfg, &spec, &poses, geometry, &out)?;
        }
        Command::Train { config, stage, mode, log_every, out } => {
            let cfg = load_config(config.as_deref())?;
            let path = match stage {
                Stage::Structure => {
                    let mode = mode.map(|m| match m {
                        ModeArg::TeacherForcing => TrainMode::TeacherForcing,
                        ModeArg::Recurrent => TrainMode::Recurrent,
                    });
                    commands::train_structure_stage(&cfg, mode, &out, |r| {
                        if log_every > 0 && (r.step + 1) % log_every == 0 {
                            eprintln!(
                                "step {} total {:.4} ce {:.4} depth {:.4} kl {:.4}",
                                r.step + 1,
                                r.total,
                                r.ce,
                                r.depth,
                                r.kl
                            );
                        }
                    })?
                }
                Stage::Image => {
                    if mode.is_some() {
                        bail!("--mode only applies to the structure stage");
                    }
                    commands::train_image_stage(&cfg, &out, |r| {
                        if log_every > 0 && (r.step + 1) % log_every == 0 {
                            eprintln!(
                                "step {} g {:.4} gan {:.4} vgg {:.4} fm {:.4} d {:.4} l1 {:.4}",
                                r.step + 1,
                                r.g_total,
                                r.gan,
                                r.vgg,
                                r.fm,
                                r.d_loss,
                                r.l1
                            );
                        }
                    })?
                }
            };
            eprintln!("wrote {}", path.display());
        }
        Command::Dream {
            config,
            world,
            traj,
            context,
            model,
            checkpoint,
            image_checkpoint,
            zmode,
            samples,
            out,
        } => {
            let cfg = load_config(config.as_deref())?;
            let (spec, _) = read_world(&world, &sibling_graph(&world)?)?;
            let t = commands::read_trajectory(&traj)?;
            let structure = match (model, &checkpoint) {
                (ModelArg::Struct, Some(p)) => Some(models::load_structure(p, &cfg.structure)?),
                (ModelArg::Struct, None) => bail!("--model struct needs --checkpoint"),
                (ModelArg::Nn, Some(_)) => bail!("--checkpoint does not apply to --model nn"),
                (ModelArg::Nn, None) => None,
            };
            let image = image_checkpoint
                .as_deref()
                .map(|p| models::load_image(p, &cfg.image))
                .transpose()?;
            let args = DreamArgs {
                spec: &spec,
                trajectory: &t.poses,
                context,
                model: match model {
                    ModelArg::Nn => DreamModel::NearestNeighbor,
                    ModelArg::Struct => DreamModel::Structure,
                },
                structure: structure.as_ref(),
                image: image.as_ref(),
                zmode,
                samples,
            };
            let report = commands::dream(&cfg, &args, &out)?;
            for (k, s) in report.samples.iter().enumerate() {
                let mean = s.iter().map(|m| m.miou).sum::<f64>() / s.len() as f64;
                println!("sample {k}: {} steps, mean mIOU {mean:.4}", s.len());
            }
        }
        Command::Eval { config, tf, rec, out } => {
            let cfg = load_config(config.as_deref())?;
            let tf = tf.as_deref().map(|p| models::load_structure(p, &cfg.structure)).transpose()?;
            let rec = rec.as_deref().map(|p| models::load_structure(p, &cfg.structure)).transpose()?;
            let report = commands::eval(&cfg, tf.as_ref(), rec.as_ref(), &out)?;
            for m in report.models() {
                let one = report.mean_miou(m, &cfg.eval.contexts, 1..=1).unwrap_or(f64::NAN);
                println!("{}: step-1 mIOU {one:.4}", m.name());
            }
        }
    }
    Ok(ExitCode::SUCCESS)
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
