//! PNG and JSON files of the on-disk formats: 8-bit RGB, 16-bit depth in
//! millimeters (0 = invalid), 8-bit class ids, and a JSON sidecar per frame.

use std::path::Path;

use anyhow::{bail, ensure, Context, Result};
use image::{GrayImage, ImageBuffer, Luma, Rgb};
use serde::{de::DeserializeOwned, Deserialize, Serialize};

use panodream::synthworld::{NavGraph, SceneSpec};
use panodream::{ClassMap, DepthMap, Grid, PanoFrame, PanoGeometry, Pose, RgbImage};

pub const FRAME_SCHEMA_VERSION: u32 = 1;

/// Written next to every rendered or predicted frame.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FrameSidecar {
    pub schema_version: u32,
    pub pose: Pose,
    pub geometry: PanoGeometry,
    pub depth_unit: String,
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value)? + "\n";
    std::fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))
}

pub fn write_rgb_png(path: &Path, img: &RgbImage) -> Result<()> {
    let raw: Vec<u8> = img.as_slice().iter().flatten().copied().collect();
    let buf: ImageBuffer<Rgb<u8>, _> = ImageBuffer::from_raw(img.width() as u32, img.height() as u32, raw)
        .context("rgb buffer size")?;
    buf.save(path).with_context(|| format!("writing {}", path.display()))
}

pub fn write_sem_png(path: &Path, sem: &ClassMap) -> Result<()> {
    let buf = GrayImage::from_raw(sem.width() as u32, sem.height() as u32, sem.as_slice().to_vec())
        .context("class buffer size")?;
    buf.save(path).with_context(|| format!("writing {}", path.display()))
}

/// Millimeters, rounded; non-positive and non-finite depths become 0.
pub fn depth_to_mm(d: f64) -> u16 {
    if d.is_finite() && d > 0.0 {
        (d * 1000.0).round().clamp(1.0, u16::MAX as f64) as u16
    } else {
        0
    }
}

pub fn write_depth_png(path: &Path, depth: &DepthMap) -> Result<()> {
    let raw: Vec<u16> = depth.as_slice().iter().map(|&d| depth_to_mm(d)).collect();
    let buf: ImageBuffer<Luma<u16>, _> = ImageBuffer::from_raw(depth.width() as u32, depth.height() as u32, raw)
        .context("depth buffer size")?;
    buf.save(path).with_context(|| format!("writing {}", path.display()))
}

pub fn read_rgb_png(path: &Path) -> Result<RgbImage> {
    let img = image::open(path).with_context(|| format!("reading {}", path.display()))?;
    let rgb = img.to_rgb8();
    let px = rgb.pixels().map(|p| p.0).collect();
    Ok(Grid::from_vec(rgb.width() as usize, rgb.height() as usize, px)?)
}

pub fn read_sem_png(path: &Path) -> Result<ClassMap> {
    let img = image::open(path).with_context(|| format!("reading {}", path.display()))?;
    let image::DynamicImage::ImageLuma8(g) = img else {
        bail!("{} is not an 8-bit grayscale class map", path.display());
    };
    Ok(Grid::from_vec(g.width() as usize, g.height() as usize, g.into_raw())?)
}

pub fn read_depth_png(path: &Path) -> Result<DepthMap> {
    let img = image::open(path).with_context(|| format!("reading {}", path.display()))?;
    let image::DynamicImage::ImageLuma16(g) = img else {
        bail!("{} is not a 16-bit grayscale depth map", path.display());
    };
    let (w, h) = (g.width() as usize, g.height() as usize);
    Ok(Grid::from_vec(w, h, g.into_raw().into_iter().map(|mm| mm as f64 / 1000.0).collect())?)
}

/// Writes `<prefix>_rgb.png`, `<prefix>_depth.png`, `<prefix>_sem.png` and
/// `<prefix>.json`. The RGB image is skipped when `rgb` is `None`.
pub fn write_frame(
    dir: &Path,
    prefix: &str,
    sem: &ClassMap,
    depth: &DepthMap,
    rgb: Option<&RgbImage>,
    pose: &Pose,
) -> Result<()> {
    let geometry = PanoGeometry::new(sem.width(), sem.height())?;
    if let Some(rgb) = rgb {
        write_rgb_png(&dir.join(format!("{prefix}_rgb.png")), rgb)?;
    }
    write_depth_png(&dir.join(format!("{prefix}_depth.png")), depth)?;
    write_sem_png(&dir.join(format!("{prefix}_sem.png")), sem)?;
    write_json(
        &dir.join(format!("{prefix}.json")),
        &FrameSidecar {
            schema_version: FRAME_SCHEMA_VERSION,
            pose: *pose,
            geometry,
            depth_unit: "mm".into(),
        },
    )
}

/// Reads a frame written by [`write_frame`] with an RGB image.
pub fn read_frame(dir: &Path, prefix: &str) -> Result<PanoFrame> {
    let side: FrameSidecar = read_json(&dir.join(format!("{prefix}.json")))?;
    ensure!(
        side.schema_version == FRAME_SCHEMA_VERSION,
        "frame sidecar schema version {} is not {FRAME_SCHEMA_VERSION}",
        side.schema_version
    );
    let rgb = read_rgb_png(&dir.join(format!("{prefix}_rgb.png")))?;
    let depth = read_depth_png(&dir.join(format!("{prefix}_depth.png")))?;
    let sem = read_sem_png(&dir.join(format!("{prefix}_sem.png")))?;
    Ok(PanoFrame::new(sem, depth, rgb, side.pose)?)
}

pub fn world_path(dir: &Path, seed: u64) -> std::path::PathBuf {
    dir.join(format!("world_{seed}.json"))
}

pub fn graph_path(dir: &Path, seed: u64) -> std::path::PathBuf {
    dir.join(format!("graph_{seed}.json"))
}

pub fn read_world(world: &Path, graph: &Path) -> Result<(SceneSpec, NavGraph)> {
    let spec: SceneSpec = read_json(world)?;
    let graph: NavGraph = read_json(graph)?;
    Ok((spec, graph))
}
