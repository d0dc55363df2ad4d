use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cloud::PanoFrame;
use crate::error::{Error, Result};
use crate::geom::{rotate_yaw, PanoGeometry, Pose, Vec3, D_MAX};
use crate::grid::{ClassMap, DepthMap, RgbImage};
use crate::palette::{self, CEILING, DOOR, FLOOR, WALL, WINDOW};

pub const SCENE_SCHEMA_VERSION: u32 = 1;
pub const CEILING_HEIGHT: f64 = 2.7;
pub const WALL_THICKNESS: f64 = 0.1;
pub const DOOR_HEIGHT: f64 = 2.1;
pub const CAMERA_HEIGHT: f64 = 1.5;

/// Clearance kept between a camera center and any surface.
pub const CAMERA_CLEARANCE: f64 = 0.1;

/// Axis-aligned room footprint on the ground plane, `(x, z)` coordinates.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Room {
    pub min: [f64; 2],
    pub max: [f64; 2],
    pub wall_color: [u8; 3],
    pub floor_color: [u8; 3],
    pub brightness: f64,
}

impl Room {
    pub fn contains(&self, x: f64, z: f64) -> bool {
        x >= self.min[0] && x <= self.max[0] && z >= self.min[1] && z <= self.max[1]
    }

    pub fn area(&self) -> f64 {
        (self.max[0] - self.min[0]) * (self.max[1] - self.min[1])
    }
}

/// Doorway between two rooms: an axis-aligned segment `a`–`b` on their shared
/// wall line.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Opening {
    pub rooms: [usize; 2],
    pub a: [f64; 2],
    pub b: [f64; 2],
}

impl Opening {
    pub fn width(&self) -> f64 {
        (self.b[0] - self.a[0]).abs() + (self.b[1] - self.a[1]).abs()
    }

    pub fn midpoint(&self) -> [f64; 2] {
        [(self.a[0] + self.b[0]) / 2.0, (self.a[1] + self.b[1]) / 2.0]
    }

    pub fn segment(&self) -> WallSegment {
        WallSegment::from_points(self.a, self.b)
    }
}

/// Window pane set into an exterior wall of `room`, between heights `sill`
/// and `top`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Window {
    pub room: usize,
    pub a: [f64; 2],
    pub b: [f64; 2],
    pub sill: f64,
    pub top: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Furniture {
    pub class_id: u8,
    pub min: [f64; 3],
    pub max: [f64; 3],
}

/// Procedural indoor world description.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SceneSpec {
    pub schema_version: u32,
    pub seed: u64,
    pub class_count: usize,
    pub ceiling_height: f64,
    pub wall_thickness: f64,
    pub door_height: f64,
    pub rooms: Vec<Room>,
    pub openings: Vec<Opening>,
    pub windows: Vec<Window>,
    pub furniture: Vec<Furniture>,
}

/// Which world axis a wall line is perpendicular to.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum WallAxis {
    /// Wall at constant x, running along z.
    X,
    /// Wall at constant z, running along x.
    Z,
}

/// Axis-aligned segment on the ground plane.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct WallSegment {
    pub axis: WallAxis,
    pub coord: f64,
    pub from: f64,
    pub to: f64,
}

impl WallSegment {
    pub fn from_points(a: [f64; 2], b: [f64; 2]) -> Self {
        if (a[0] - b[0]).abs() < 1e-9 {
            WallSegment {
                axis: WallAxis::X,
                coord: a[0],
                from: a[1].min(b[1]),
                to: a[1].max(b[1]),
            }
        } else {
            WallSegment {
                axis: WallAxis::Z,
                coord: a[1],
                from: a[0].min(b[0]),
                to: a[0].max(b[0]),
            }
        }
    }

    pub fn len(&self) -> f64 {
        self.to - self.from
    }

    /// Box spanning `along` on the segment's line with half-thickness `half`.
    fn slab(&self, from: f64, to: f64, half: f64, y0: f64, y1: f64) -> ([f64; 3], [f64; 3]) {
        match self.axis {
            WallAxis::X => (
                [self.coord - half, y0, from],
                [self.coord + half, y1, to],
            ),
            WallAxis::Z => (
                [from, y0, self.coord - half],
                [to, y1, self.coord + half],
            ),
        }
    }

    pub fn point(&self, along: f64) -> [f64; 2] {
        match self.axis {
            WallAxis::X => [self.coord, along],
            WallAxis::Z => [along, self.coord],
        }
    }
}

/// The four boundary edges of a room: south, north, west, east.
pub fn room_edges(r: &Room) -> [WallSegment; 4] {
    [
        WallSegment { axis: WallAxis::Z, coord: r.min[1], from: r.min[0], to: r.max[0] },
        WallSegment { axis: WallAxis::Z, coord: r.max[1], from: r.min[0], to: r.max[0] },
        WallSegment { axis: WallAxis::X, coord: r.min[0], from: r.min[1], to: r.max[1] },
        WallSegment { axis: WallAxis::X, coord: r.max[0], from: r.min[1], to: r.max[1] },
    ]
}

/// Solid axis-aligned box with a surface class.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Solid {
    pub min: Vec3,
    pub max: Vec3,
    pub class_id: u8,
}

impl Solid {
    fn new(min: [f64; 3], max: [f64; 3], class_id: u8) -> Self {
        Solid {
            min: Vec3::from(min),
            max: Vec3::from(max),
            class_id,
        }
    }

    pub fn contains(&self, p: &Vec3, margin: f64) -> bool {
        (0..3).all(|a| p[a] > self.min[a] - margin && p[a] < self.max[a] + margin)
    }

    /// Entry distance and outward normal of a ray, `Err` if the origin lies
    /// inside the box.
    #[inline]
    fn intersect(&self, o: &Vec3, d: &Vec3) -> Result<Option<(f64, Vec3)>, ()> {
        let mut t_near = f64::NEG_INFINITY;
        let mut t_far = f64::INFINITY;
        let mut axis = 0;
        for a in 0..3 {
            if d[a] == 0.0 {
                if o[a] <= self.min[a] || o[a] >= self.max[a] {
                    return Ok(None);
                }
                continue;
            }
            let inv = 1.0 / d[a];
            let (mut t0, mut t1) = ((self.min[a] - o[a]) * inv, (self.max[a] - o[a]) * inv);
            if t0 > t1 {
                std::mem::swap(&mut t0, &mut t1);
            }
            if t0 > t_near {
                t_near = t0;
                axis = a;
            }
            t_far = t_far.min(t1);
            if t_near > t_far {
                return Ok(None);
            }
        }
        if t_far <= 0.0 {
            return Ok(None);
        }
        if t_near <= 0.0 {
            return Err(());
        }
        let mut n = Vec3::zeros();
        n[axis] = -d[axis].signum();
        Ok(Some((t_near, n)))
    }
}

/// Nearest surface along a ray.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Hit {
    pub distance: f64,
    pub class_id: u8,
    pub normal: Vec3,
}

/// A [`SceneSpec`] with its solids precomputed for ray casting.
#[derive(Clone, Debug)]
pub struct Scene {
    spec: SceneSpec,
    solids: Vec<Solid>,
    palette: [[u8; 3]; palette::CLASS_COUNT],
}

impl Scene {
    pub fn new(spec: SceneSpec) -> Self {
        let solids = build_solids(&spec);
        Scene {
            spec,
            solids,
            palette: palette::DEFAULT_PALETTE,
        }
    }

    /// Renders non-wall, non-floor classes with `palette` instead of the
    /// default colors.
    pub fn with_palette(spec: SceneSpec, palette: [[u8; 3]; palette::CLASS_COUNT]) -> Self {
        Scene {
            palette,
            ..Scene::new(spec)
        }
    }

    pub fn spec(&self) -> &SceneSpec {
        &self.spec
    }

    pub fn into_spec(self) -> SceneSpec {
        self.spec
    }

    pub fn solids(&self) -> &[Solid] {
        &self.solids
    }

    pub fn room_at(&self, x: f64, z: f64) -> Option<usize> {
        self.spec.rooms.iter().position(|r| r.contains(x, z))
    }

    /// True when `p` lies inside the house, between floor and ceiling, and at
    /// least `margin` away from every solid.
    pub fn is_free(&self, p: &Vec3, margin: f64) -> bool {
        if p.y <= margin || p.y >= self.spec.ceiling_height - margin {
            return false;
        }
        if self.room_at(p.x, p.z).is_none() {
            return false;
        }
        !self.solids.iter().any(|s| s.contains(p, margin))
    }

    pub fn raycast(&self, origin: &Vec3, dir: &Vec3) -> Result<Hit> {
        let mut best: Option<Hit> = None;
        let mut consider = |distance: f64, class_id: u8, normal: Vec3| {
            if best.is_none_or(|b| distance < b.distance) {
                best = Some(Hit { distance, class_id, normal });
            }
        };
        if dir.y < 0.0 {
            consider(-origin.y / dir.y, FLOOR, Vec3::new(0.0, 1.0, 0.0));
        } else if dir.y > 0.0 {
            consider(
                (self.spec.ceiling_height - origin.y) / dir.y,
                CEILING,
                Vec3::new(0.0, -1.0, 0.0),
            );
        }
        for s in &self.solids {
            match s.intersect(origin, dir) {
                Ok(Some((t, n))) => consider(t, s.class_id, n),
                Ok(None) => {}
                Err(()) => {
                    return Err(Error::Geometry(format!(
                        "ray origin ({:.3}, {:.3}, {:.3}) is inside a solid",
                        origin.x, origin.y, origin.z
                    )))
                }
            }
        }
        match best {
            Some(h) if h.distance > 0.0 && h.distance.is_finite() => Ok(h),
            _ => Err(Error::Geometry("ray escaped the scene".into())),
        }
    }

    /// Lambert-shaded surface color at a hit.
    pub fn shade(&self, origin: &Vec3, dir: &Vec3, hit: &Hit) -> [u8; 3] {
        let light = Vec3::new(1.0, 2.0, 1.0).normalize();
        // step back toward the camera so wall hits resolve to the viewer's room
        let p = origin + dir * (hit.distance - 0.06).max(0.0);
        let room = self.room_at(p.x, p.z).map(|i| &self.spec.rooms[i]);
        let base = match (hit.class_id, room) {
            (WALL, Some(r)) => r.wall_color,
            (FLOOR, Some(r)) => r.floor_color,
            (c, _) => self.palette[c as usize],
        };
        let brightness = room.map_or(1.0, |r| r.brightness);
        let lambert = hit.normal.dot(&light).abs().max(0.2);
        let k = brightness * lambert;
        base.map(|c| (c as f64 * k).round().clamp(0.0, 255.0) as u8)
    }

    /// Ground-truth panorama at `pose` by casting one ray per pixel center.
    pub fn render_pano(&self, pose: &Pose, g: PanoGeometry) -> Result<PanoFrame> {
        if !self.is_free(&pose.position, 0.0) {
            return Err(Error::Geometry(format!(
                "pose ({:.3}, {:.3}, {:.3}) is not in free space",
                pose.position.x, pose.position.y, pose.position.z
            )));
        }
        let (w, h) = (g.width(), g.height());
        let rows: Vec<Vec<(u8, f64, [u8; 3])>> = (0..h)
            .into_par_iter()
            .map(|y| {
                (0..w)
                    .map(|x| self.render_pixel(pose, g, x, y))
                    .collect::<Result<Vec<_>>>()
            })
            .collect::<Result<_>>()?;
        let mut sem = Vec::with_capacity(w * h);
        let mut depth = Vec::with_capacity(w * h);
        let mut rgb = Vec::with_capacity(w * h);
        for (c, d, col) in rows.into_iter().flatten() {
            sem.push(c);
            depth.push(d);
            rgb.push(col);
        }
        PanoFrame::new(
            ClassMap::from_vec(w, h, sem)?,
            DepthMap::from_vec(w, h, depth)?,
            RgbImage::from_vec(w, h, rgb)?,
            *pose,
        )
    }

    /// Class, clamped depth and color of one pixel.
    pub fn render_pixel(
        &self,
        pose: &Pose,
        g: PanoGeometry,
        x: usize,
        y: usize,
    ) -> Result<(u8, f64, [u8; 3])> {
        let dir = rotate_yaw(pose.yaw, &g.pixel_to_ray(x as f64 + 0.5, y as f64 + 0.5)?);
        let hit = self.raycast(&pose.position, &dir)?;
        Ok((
            hit.class_id,
            hit.distance.min(D_MAX),
            self.shade(&pose.position, &dir, &hit),
        ))
    }
}

/// Subtracts sorted, disjoint `holes` from `[from, to]`.
pub(crate) fn subtract_intervals(from: f64, to: f64, holes: &[(f64, f64)]) -> Vec<(f64, f64)> {
    let mut out = Vec::new();
    let mut cur = from;
    for &(h0, h1) in holes {
        if h1 <= cur || h0 >= to {
            continue;
        }
        if h0 > cur {
            out.push((cur, h0));
        }
        cur = cur.max(h1);
    }
    if cur < to {
        out.push((cur, to));
    }
    out
}

fn build_solids(spec: &SceneSpec) -> Vec<Solid> {
    let half = spec.wall_thickness / 2.0;
    let top = spec.ceiling_height;
    let mut solids = Vec::new();
    let door_segments: Vec<WallSegment> = spec.openings.iter().map(Opening::segment).collect();

    for room in &spec.rooms {
        for edge in room_edges(room) {
            let mut holes: Vec<(f64, f64)> = door_segments
                .iter()
                .filter(|s| s.axis == edge.axis && (s.coord - edge.coord).abs() < 1e-9)
                .filter(|s| s.from >= edge.from - 1e-9 && s.to <= edge.to + 1e-9)
                .map(|s| (s.from, s.to))
                .collect();
            holes.sort_by(|a, b| a.0.total_cmp(&b.0));
            for (p0, p1) in subtract_intervals(edge.from - half, edge.to + half, &holes) {
                let (min, max) = edge.slab(p0, p1, half, 0.0, top);
                solids.push(Solid::new(min, max, WALL));
            }
        }
    }
    for seg in &door_segments {
        let (min, max) = seg.slab(seg.from, seg.to, half, spec.door_height, top);
        solids.push(Solid::new(min, max, DOOR));
    }
    for w in &spec.windows {
        let seg = WallSegment::from_points(w.a, w.b);
        let (min, max) = seg.slab(seg.from, seg.to, half + 0.01, w.sill, w.top);
        solids.push(Solid::new(min, max, WINDOW));
    }
    for f in &spec.furniture {
        solids.push(Solid::new(f.min, f.max, f.class_id));
    }
    solids
}
