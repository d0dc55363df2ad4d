//! Accumulated semantic point-cloud memory and its re-projection into sparse
//! guidance images.

mod fill;

pub use fill::nn_fill;

use crate::error::{Error, Result};
use crate::geom::{PanoGeometry, Pose, Vec3, D_MAX};
use crate::grid::{ClassMap, DepthMap, Mask, RgbImage};

/// Class id marking pixels that received no point.
pub const INVALID: u8 = u8::MAX;

/// Aligned semantic, depth and RGB panoramas captured at one pose.
#[derive(Clone, Debug, PartialEq)]
pub struct PanoFrame {
    pub sem: ClassMap,
    pub depth: DepthMap,
    pub rgb: RgbImage,
    pub pose: Pose,
}

impl PanoFrame {
    pub fn new(sem: ClassMap, depth: DepthMap, rgb: RgbImage, pose: Pose) -> Result<Self> {
        sem.check_dims(&depth, "frame sem/depth")?;
        sem.check_dims(&rgb, "frame sem/rgb")?;
        PanoGeometry::new(sem.width(), sem.height())?;
        Ok(PanoFrame {
            sem,
            depth,
            rgb,
            pose,
        })
    }

    pub fn geometry(&self) -> PanoGeometry {
        PanoGeometry::new(self.sem.width(), self.sem.height())
            .expect("frame dimensions validated on construction")
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CloudPoint {
    pub position: Vec3,
    pub class_id: u8,
    pub color: [u8; 3],
    pub frame_index: u32,
}

/// Sparse re-projection of a [`PointCloud`] at a query pose.
#[derive(Clone, Debug, PartialEq)]
pub struct GuidanceImage {
    pub sem: ClassMap,
    pub depth: DepthMap,
    pub rgb: RgbImage,
    pub valid: Mask,
}

impl GuidanceImage {
    pub fn empty(g: PanoGeometry) -> Self {
        let (w, h) = (g.width(), g.height());
        GuidanceImage {
            sem: ClassMap::filled(w, h, INVALID),
            depth: DepthMap::filled(w, h, 0.0),
            rgb: RgbImage::filled(w, h, [0; 3]),
            valid: Mask::filled(w, h, false),
        }
    }

    pub fn geometry(&self) -> PanoGeometry {
        PanoGeometry::new(self.sem.width(), self.sem.height())
            .expect("guidance built from a validated geometry")
    }

    pub fn valid_count(&self) -> usize {
        self.valid.as_slice().iter().filter(|v| **v).count()
    }

    pub fn valid_fraction(&self) -> f64 {
        self.valid_count() as f64 / self.valid.len() as f64
    }
}

/// World-frame points tagged with class, color and insertion frame.
#[derive(Clone, Debug)]
pub struct PointCloud {
    class_count: usize,
    points: Vec<CloudPoint>,
    next_frame: u32,
}

impl PointCloud {
    pub fn new(class_count: usize) -> Self {
        PointCloud {
            class_count,
            points: Vec::new(),
            next_frame: 0,
        }
    }

    pub fn class_count(&self) -> usize {
        self.class_count
    }

    pub fn points(&self) -> &[CloudPoint] {
        &self.points
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// Frame index the next inserted frame will receive.
    pub fn next_frame_index(&self) -> u32 {
        self.next_frame
    }

    /// Back-projects every pixel on the `stride` grid of `frame` and appends
    /// the points under a fresh frame index. Returns the number added.
    pub fn insert_frame(&mut self, frame: &PanoFrame, stride: usize) -> Result<usize> {
        if stride == 0 {
            return Err(Error::Domain("stride must be at least 1".into()));
        }
        let g = frame.geometry();
        if let Some(bad) = frame
            .sem
            .as_slice()
            .iter()
            .find(|c| **c as usize >= self.class_count)
        {
            return Err(Error::Data(format!(
                "class id {bad} out of range for {} classes",
                self.class_count
            )));
        }
        let frame_index = self.next_frame;
        let before = self.points.len();
        for y in (0..g.height()).step_by(stride) {
            for x in (0..g.width()).step_by(stride) {
                let depth = *frame.depth.get(x, y);
                let position =
                    g.backproject(x as f64 + 0.5, y as f64 + 0.5, depth, &frame.pose)?;
                self.points.push(CloudPoint {
                    position,
                    class_id: *frame.sem.get(x, y),
                    color: *frame.rgb.get(x, y),
                    frame_index,
                });
            }
        }
        self.next_frame += 1;
        Ok(self.points.len() - before)
    }

    /// Appends pre-built points. Frame indices must not decrease.
    pub fn extend_points(&mut self, points: impl IntoIterator<Item = CloudPoint>) -> Result<()> {
        for p in points {
            if (p.class_id as usize) >= self.class_count {
                return Err(Error::Data(format!("class id {} out of range", p.class_id)));
            }
            if let Some(last) = self.points.last() {
                if p.frame_index < last.frame_index {
                    return Err(Error::Data(format!(
                        "frame index {} after {}",
                        p.frame_index, last.frame_index
                    )));
                }
            }
            self.next_frame = self.next_frame.max(p.frame_index + 1);
            self.points.push(p);
        }
        Ok(())
    }

    /// Z-buffered single-pixel splat of every point at `pose`.
    ///
    /// Per pixel the nearest point wins; ties go to the older frame, then to
    /// the earlier insertion. Points beyond [`D_MAX`] are dropped.
    pub fn render_guidance(&self, pose: &Pose, g: PanoGeometry) -> GuidanceImage {
        let (w, h) = (g.width(), g.height());
        let mut winner: Vec<Option<(f64, u32, usize)>> = vec![None; w * h];
        for (i, p) in self.points.iter().enumerate() {
            let Ok((x, y, depth)) = g.project(&p.position, pose) else {
                continue;
            };
            if depth > D_MAX {
                continue;
            }
            let px = (x.floor() as usize).min(w - 1);
            let py = (y.floor() as usize).min(h - 1);
            let slot = &mut winner[py * w + px];
            let key = (depth, p.frame_index, i);
            let better = match slot {
                None => true,
                Some(cur) => {
                    key.0 < cur.0 || (key.0 == cur.0 && (key.1, key.2) < (cur.1, cur.2))
                }
            };
            if better {
                *slot = Some(key);
            }
        }
        let mut out = GuidanceImage::empty(g);
        for (idx, slot) in winner.iter().enumerate() {
            if let Some((depth, _, i)) = *slot {
                let p = &self.points[i];
                let (x, y) = (idx % w, idx / w);
                out.sem.set(x, y, p.class_id);
                out.depth.set(x, y, depth);
                out.rgb.set(x, y, p.color);
                out.valid.set(x, y, true);
            }
        }
        out
    }
}
