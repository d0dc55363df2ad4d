//! Checkpoints with the model configuration recorded in their metadata, so
//! a checkpoint only loads under the run configuration it was trained with.

use std::path::Path;

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};

use panodream::imggen::{ImageConfig, ImageGenerator, ImageTrainConfig};
use panodream::structgen::{StructureConfig, StructureGenerator, StructureTrainConfig};
use panodream::tinynn::{load_checkpoint, write_checkpoint, ParamStore};

use crate::config::RUN_CONFIG_SCHEMA_VERSION;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum CheckpointMeta {
    Structure {
        run_schema_version: u32,
        config: StructureConfig,
        train: StructureTrainConfig,
    },
    Image {
        run_schema_version: u32,
        config: ImageConfig,
        train: ImageTrainConfig,
    },
}

impl CheckpointMeta {
    fn kind(&self) -> &'static str {
        match self {
            CheckpointMeta::Structure { .. } => "structure",
            CheckpointMeta::Image { .. } => "image",
        }
    }

    fn run_schema_version(&self) -> u32 {
        match self {
            CheckpointMeta::Structure { run_schema_version, .. } | CheckpointMeta::Image { run_schema_version, .. } => {
                *run_schema_version
            }
        }
    }
}

pub fn save(path: &Path, store: &ParamStore, meta: &CheckpointMeta) -> Result<()> {
    let f = std::fs::File::create(path).with_context(|| format!("creating {}", path.display()))?;
    write_checkpoint(std::io::BufWriter::new(f), store, &serde_json::to_value(meta)?)
        .with_context(|| format!("writing {}", path.display()))
}

fn load_meta(path: &Path) -> Result<(panodream::tinynn::Checkpoint, CheckpointMeta)> {
    let ck = load_checkpoint(path)?;
    let meta: CheckpointMeta = serde_json::from_value(ck.meta.clone())
        .with_context(|| format!("{} has unrecognized model metadata", path.display()))?;
    if meta.run_schema_version() != RUN_CONFIG_SCHEMA_VERSION {
        bail!(
            "{} was written under config schema version {}, this build uses version {RUN_CONFIG_SCHEMA_VERSION}",
            path.display(),
            meta.run_schema_version()
        );
    }
    Ok((ck, meta))
}

/// Loads a structure generator, rejecting checkpoints whose architecture
/// differs from `expected`.
pub fn load_structure(path: &Path, expected: &StructureConfig) -> Result<StructureGenerator> {
    let (ck, meta) = load_meta(path)?;
    let CheckpointMeta::Structure { config, .. } = meta else {
        bail!("{} holds a {} model, expected a structure model", path.display(), meta.kind());
    };
    if &config != expected {
        bail!(
            "{} was trained with a different structure config (config schema version {RUN_CONFIG_SCHEMA_VERSION}): checkpoint {}, run config {}",
            path.display(),
            serde_json::to_string(&config)?,
            serde_json::to_string(expected)?
        );
    }
    let mut model = StructureGenerator::new(config)?;
    ck.load_into(model.params_mut())?;
    Ok(model)
}

pub fn load_image(path: &Path, expected: &ImageConfig) -> Result<ImageGenerator> {
    let (ck, meta) = load_meta(path)?;
    let CheckpointMeta::Image { config, .. } = meta else {
        bail!("{} holds a {} model, expected an image model", path.display(), meta.kind());
    };
    if &config != expected {
        bail!(
            "{} was trained with a different image config (config schema version {RUN_CONFIG_SCHEMA_VERSION}): checkpoint {}, run config {}",
            path.display(),
            serde_json::to_string(&config)?,
            serde_json::to_string(expected)?
        );
    }
    let mut model = ImageGenerator::new(config)?;
    ck.load_into(model.params_mut())?;
    Ok(model)
}
