use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geom::{PanoGeometry, D_MAX};
use crate::palette::CLASS_COUNT;

/// Architecture and loss weights of the structure generator.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StructureConfig {
    pub class_count: usize,
    pub width: usize,
    pub height: usize,
    /// Channels of the latent noise tensor; its spatial size is `H/8 x W/8`.
    pub latent_channels: usize,
    /// Encoder channel widths, one per stride-2 level.
    pub widths: [usize; 4],
    /// Extra full-resolution 3x3 convolutions between the skip fusion and
    /// the output head.
    pub refine_layers: usize,
    pub lambda_ce: f64,
    pub lambda_depth: f64,
    pub lambda_kl: f64,
    pub d_max: f64,
    /// Seed of the weight initialization.
    pub init_seed: u64,
}

impl Default for StructureConfig {
    fn default() -> Self {
        StructureConfig {
            class_count: CLASS_COUNT,
            width: 64,
            height: 32,
            latent_channels: 8,
            widths: [16, 32, 64, 64],
            refine_layers: 0,
            lambda_ce: 1.0,
            lambda_depth: 100.0,
            lambda_kl: 0.5,
            d_max: D_MAX,
            init_seed: 0,
        }
    }
}

impl StructureConfig {
    pub fn validate(&self) -> Result<()> {
        if self.class_count < 2 || self.class_count > 254 {
            return Err(Error::Domain(format!(
                "class_count must be in [2, 254], got {}",
                self.class_count
            )));
        }
        self.geometry()?;
        if !self.width.is_multiple_of(16) || !self.height.is_multiple_of(16) {
            return Err(Error::Domain(format!(
                "geometry {}x{} must be divisible by 16 for four stride-2 levels",
                self.width, self.height
            )));
        }
        if self.latent_channels == 0 || self.widths.contains(&0) {
            return Err(Error::Domain("channel widths must be positive".into()));
        }
        if self.d_max.is_nan() || self.d_max <= 0.0 {
            return Err(Error::Domain(format!("d_max must be positive, got {}", self.d_max)));
        }
        Ok(())
    }

    pub fn geometry(&self) -> Result<PanoGeometry> {
        PanoGeometry::new(self.width, self.height)
    }

    /// Channels of the encoder input: one-hot classes, depth, validity.
    pub fn input_channels(&self) -> usize {
        self.class_count + 2
    }

    pub fn latent_shape(&self, batch: usize) -> [usize; 4] {
        [batch, self.latent_channels, self.height / 8, self.width / 8]
    }
}
