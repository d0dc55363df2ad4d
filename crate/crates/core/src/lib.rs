//! Geometry-aware panorama generation for indoor navigation: a point-cloud
//! memory of visited viewpoints, procedural worlds to train on, a small
//! neural-network toolkit, the structure and image generators, and the
//! evaluation harness.

pub mod cloud;
pub mod error;
pub mod eval;
pub mod geom;
pub mod grid;
pub mod imggen;
pub mod palette;
pub mod seed;
pub mod structgen;
pub mod synthworld;
pub mod tinynn;

pub use cloud::{nn_fill, CloudPoint, GuidanceImage, PanoFrame, PointCloud, INVALID};
pub use error::{Error, Result};
pub use geom::{PanoGeometry, Pose, Vec3, D_MAX};
pub use grid::{ClassMap, DepthMap, Grid, Mask, RgbImage};
