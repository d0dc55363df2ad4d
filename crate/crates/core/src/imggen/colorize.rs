use crate::error::{Error, Result};
use crate::geom::D_MAX;
use crate::grid::{ClassMap, DepthMap, RgbImage};
use crate::palette::DEFAULT_PALETTE;

/// Palette color per class, darkened linearly with depth down to half
/// brightness at [`D_MAX`].
pub fn colorize(sem: &ClassMap, depth: &DepthMap) -> Result<RgbImage> {
    sem.check_dims(depth, "colorize")?;
    let mut out = RgbImage::filled(sem.width(), sem.height(), [0; 3]);
    for ((o, &c), &d) in out
        .as_mut_slice()
        .iter_mut()
        .zip(sem.as_slice())
        .zip(depth.as_slice())
    {
        let base = DEFAULT_PALETTE
            .get(c as usize)
            .ok_or_else(|| Error::Data(format!("class id {c} has no palette color")))?;
        let k = 1.0 - 0.5 * (d / D_MAX).clamp(0.0, 1.0);
        *o = base.map(|v| (v as f64 * k).round() as u8);
    }
    Ok(out)
}
