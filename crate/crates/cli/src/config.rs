use std::path::{Path, PathBuf};

use anyhow::{bail, ensure, Context, Result};
use serde::{Deserialize, Serialize};

use panodream::eval::EvalConfig;
use panodream::imggen::{ImageConfig, ImageTrainConfig};
use panodream::palette::{CLASS_COUNT, DEFAULT_PALETTE};
use panodream::structgen::{EpisodeSpec, StructureConfig, StructureTrainConfig};
use panodream::synthworld::WorldParams;
use panodream::{PanoGeometry, D_MAX};

pub const RUN_CONFIG_SCHEMA_VERSION: u32 = 1;

/// Everything a pipeline run needs. All randomness derives from the seeds
/// declared here.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub schema_version: u32,
    /// Panorama size of the structure stage.
    pub geometry: PanoGeometry,
    /// One RGB color per semantic class, used when rendering worlds.
    pub palette: Vec<[u8; 3]>,
    pub d_max: f64,
    pub world: WorldParams,
    pub data: DataConfig,
    pub structure: StructureConfig,
    pub structure_train: StructureTrainConfig,
    pub image: ImageConfig,
    pub image_train: ImageTrainConfig,
    pub discriminator: DiscriminatorConfig,
    pub eval: EvalConfig,
    #[serde(default)]
    pub paths: PathsConfig,
}

/// Training trajectories.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataConfig {
    pub train_world_seeds: Vec<u64>,
    pub trajectories_per_world: usize,
    pub augment: bool,
    pub seed: u64,
    /// Worlds used for the image stage, a prefix of the training worlds.
    pub image_worlds: usize,
    pub image_trajectories_per_world: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DiscriminatorConfig {
    pub widths: [usize; 2],
    pub init_seed: u64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PathsConfig {
    /// Directory of `world_<seed>.json` / `graph_<seed>.json` files to train
    /// on instead of generating the training worlds.
    #[serde(default)]
    pub worlds: Option<PathBuf>,
}

impl Default for RunConfig {
    fn default() -> Self {
        let geometry = PanoGeometry::new(64, 32).expect("valid geometry");
        RunConfig {
            schema_version: RUN_CONFIG_SCHEMA_VERSION,
            geometry,
            palette: DEFAULT_PALETTE.to_vec(),
            d_max: D_MAX,
            world: WorldParams::default(),
            data: DataConfig {
                train_world_seeds: (0..50).collect(),
                trajectories_per_world: 6,
                augment: true,
                seed: 7,
                image_worlds: 10,
                image_trajectories_per_world: 2,
            },
            structure: StructureConfig::default(),
            structure_train: StructureTrainConfig::default(),
            image: ImageConfig::default(),
            image_train: ImageTrainConfig::default(),
            discriminator: DiscriminatorConfig {
                widths: [16, 32],
                init_seed: 1,
            },
            eval: EvalConfig::default(),
            paths: PathsConfig::default(),
        }
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
        let raw: serde_json::Value =
            serde_json::from_str(&text).with_context(|| format!("parsing config {}", path.display()))?;
        match raw.get("schema_version").and_then(|v| v.as_u64()) {
            Some(v) if v == RUN_CONFIG_SCHEMA_VERSION as u64 => {}
            Some(v) => bail!(
                "config {} has schema version {v}, this build reads version {RUN_CONFIG_SCHEMA_VERSION}",
                path.display()
            ),
            None => bail!("config {} lacks a schema_version", path.display()),
        }
        let cfg: RunConfig =
            serde_json::from_value(raw).with_context(|| format!("invalid config {}", path.display()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)? + "\n")
    }

    pub fn validate(&self) -> Result<()> {
        ensure!(
            self.palette.len() == CLASS_COUNT,
            "palette has {} colors, the label set has {CLASS_COUNT} classes",
            self.palette.len()
        );
        ensure!(
            self.d_max == D_MAX,
            "d_max {} is not supported, the depth bound is fixed at {D_MAX} m",
            self.d_max
        );
        let s = &self.structure;
        ensure!(s.class_count == CLASS_COUNT, "structure.class_count must be {CLASS_COUNT}");
        ensure!(s.d_max == self.d_max, "structure.d_max differs from d_max");
        ensure!(
            s.width == self.geometry.width() && s.height == self.geometry.height(),
            "structure size {}x{} differs from geometry {}x{}",
            s.width,
            s.height,
            self.geometry.width(),
            self.geometry.height()
        );
        s.validate()?;
        ensure!(self.image.class_count == CLASS_COUNT, "image.class_count must be {CLASS_COUNT}");
        ensure!(self.image.d_max == self.d_max, "image.d_max differs from d_max");
        self.image.validate()?;
        ensure!(self.eval.geometry == self.geometry, "eval.geometry differs from geometry");
        ensure!(self.eval.world == self.world, "eval.world differs from world");
        ensure!(!self.data.train_world_seeds.is_empty(), "data.train_world_seeds is empty");
        if let Some(clash) = self.data.train_world_seeds.iter().find(|s| self.eval.world_seeds.contains(s)) {
            bail!("world seed {clash} is both a training and an evaluation world");
        }
        Ok(())
    }

    pub fn palette_array(&self) -> [[u8; 3]; CLASS_COUNT] {
        let mut p = [[0; 3]; CLASS_COUNT];
        p.copy_from_slice(&self.palette);
        p
    }

    pub fn structure_episodes(&self) -> EpisodeSpec {
        EpisodeSpec {
            world: self.world.clone(),
            per_world: self.data.trajectories_per_world,
            length: None,
            augment: self.data.augment,
            geometry: self.geometry,
            seed: self.data.seed,
        }
    }

    pub fn image_episodes(&self) -> Result<EpisodeSpec> {
        Ok(EpisodeSpec {
            world: self.world.clone(),
            per_world: self.data.image_trajectories_per_world,
            length: None,
            augment: self.data.augment,
            geometry: self.image.geometry()?,
            seed: self.data.seed,
        })
    }
}
