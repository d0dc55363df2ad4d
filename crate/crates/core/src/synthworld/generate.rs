use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::navgraph::{NavGraph, EDGE_MAX, EDGE_MIN};
use super::scene::{
    room_edges, subtract_intervals, Furniture, Opening, Room, Scene, SceneSpec, WallAxis,
    WallSegment, Window, CAMERA_CLEARANCE, CAMERA_HEIGHT, CEILING_HEIGHT, DOOR_HEIGHT,
    SCENE_SCHEMA_VERSION, WALL_THICKNESS,
};
use crate::error::{Error, Result};
use crate::geom::{Pose, Vec3};
use crate::palette::{self, FURNITURE_CLASSES};
use crate::seed;

pub const MAX_ROOMS: usize = 12;
pub const DOOR_WIDTH: f64 = 1.0;
/// Minimum shared wall length between a room and the room it is attached to.
pub const MIN_SHARED_WALL: f64 = 1.6;
/// Distance kept between door jambs and wall corners.
pub const DOOR_MARGIN: f64 = 0.3;
/// Depth of the keep-out zone in front of each doorway.
pub const DOOR_CLEARANCE: f64 = 1.0;
pub const NODE_WALL_CLEARANCE: f64 = 0.4;
pub const NODE_FURNITURE_CLEARANCE: f64 = 0.3;
pub const LATTICE_SPACING: f64 = 1.0;

const ATTEMPTS: u64 = 32;
const SNAP: f64 = 0.5;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WorldParams {
    /// Inclusive range of room counts.
    pub room_count_range: [usize; 2],
    /// Expected furniture pieces per square meter of floor.
    pub furniture_density: f64,
}

impl Default for WorldParams {
    fn default() -> Self {
        WorldParams {
            room_count_range: [3, 6],
            furniture_density: 0.12,
        }
    }
}

/// Builds a random connected floorplan with furniture and its navigation
/// graph. Deterministic in `seed`.
pub fn generate_world(seed: u64, params: &WorldParams) -> Result<(SceneSpec, NavGraph)> {
    let [lo, hi] = params.room_count_range;
    if lo < 1 || hi > MAX_ROOMS || lo > hi {
        return Err(Error::Domain(format!(
            "room_count_range [{lo}, {hi}] must satisfy 1 <= lo <= hi <= {MAX_ROOMS}"
        )));
    }
    if !(params.furniture_density >= 0.0 && params.furniture_density.is_finite()) {
        return Err(Error::Domain(format!(
            "furniture_density must be a non-negative number, got {}",
            params.furniture_density
        )));
    }
    let mut last = String::new();
    for attempt in 0..ATTEMPTS {
        let mut rng = seed::rng(seed::derive(seed, attempt));
        match try_generate(seed, params, &mut rng) {
            Ok(out) => return Ok(out),
            Err(reason) => last = reason,
        }
    }
    Err(Error::Generation {
        seed,
        reason: format!("no valid world after {ATTEMPTS} attempts; last failure: {last}"),
    })
}

fn try_generate(
    seed: u64,
    params: &WorldParams,
    rng: &mut ChaCha8Rng,
) -> std::result::Result<(SceneSpec, NavGraph), String> {
    let n_rooms = rng.random_range(params.room_count_range[0]..=params.room_count_range[1]);
    let (rooms, openings) = layout_rooms(n_rooms, rng)?;
    let windows = place_windows(&rooms, rng);
    let mut spec = SceneSpec {
        schema_version: SCENE_SCHEMA_VERSION,
        seed,
        class_count: palette::CLASS_COUNT,
        ceiling_height: CEILING_HEIGHT,
        wall_thickness: WALL_THICKNESS,
        door_height: DOOR_HEIGHT,
        rooms,
        openings,
        windows,
        furniture: Vec::new(),
    };
    spec.furniture = place_furniture(&spec, params.furniture_density, rng);
    let scene = Scene::new(spec);
    let graph = build_navgraph(&scene, seed);
    if graph.nodes.len() < 2 {
        return Err(format!("navigation graph has {} nodes", graph.nodes.len()));
    }
    if !graph.is_connected() {
        return Err("navigation graph is disconnected".into());
    }
    Ok((scene.into_spec(), graph))
}

fn snapped(rng: &mut ChaCha8Rng, lo: f64, hi: f64) -> f64 {
    let steps = ((hi - lo) / SNAP).round() as i64;
    lo + SNAP * rng.random_range(0..=steps) as f64
}

fn random_color(rng: &mut ChaCha8Rng, base: [u8; 3], spread: i32) -> [u8; 3] {
    base.map(|c| (c as i32 + rng.random_range(-spread..=spread)).clamp(0, 255) as u8)
}

fn interiors_overlap(a: &Room, b: &Room) -> bool {
    let eps = 1e-9;
    a.min[0] < b.max[0] - eps
        && b.min[0] < a.max[0] - eps
        && a.min[1] < b.max[1] - eps
        && b.min[1] < a.max[1] - eps
}

/// Grows a tree of rooms, each attached to an existing one through a door.
fn layout_rooms(
    n: usize,
    rng: &mut ChaCha8Rng,
) -> std::result::Result<(Vec<Room>, Vec<Opening>), String> {
    let new_room = |rng: &mut ChaCha8Rng, min: [f64; 2], size: [f64; 2]| Room {
        min,
        max: [min[0] + size[0], min[1] + size[1]],
        wall_color: random_color(rng, palette::DEFAULT_PALETTE[palette::WALL as usize], 30),
        floor_color: random_color(rng, palette::DEFAULT_PALETTE[palette::FLOOR as usize], 30),
        brightness: 0.7 + 0.05 * rng.random_range(0..=6) as f64,
    };
    let size = [snapped(rng, 3.0, 6.0), snapped(rng, 3.0, 6.0)];
    let mut rooms = vec![new_room(rng, [0.0, 0.0], size)];
    let mut openings = Vec::new();

    while rooms.len() < n {
        let mut placed = false;
        for _ in 0..64 {
            let parent_idx = rng.random_range(0..rooms.len());
            let parent = rooms[parent_idx].clone();
            let side = rng.random_range(0..4usize);
            let size = [snapped(rng, 3.0, 6.0), snapped(rng, 3.0, 6.0)];
            // axis along the shared wall and across it
            let (along, across) = if side < 2 { (1, 0) } else { (0, 1) };
            let mut min = [0.0; 2];
            min[across] = if side % 2 == 0 {
                parent.max[across]
            } else {
                parent.min[across] - size[across]
            };
            let lo = parent.min[along] - size[along] + MIN_SHARED_WALL;
            let hi = parent.max[along] - MIN_SHARED_WALL;
            let lo = (lo / SNAP).ceil() * SNAP;
            if hi < lo {
                continue;
            }
            min[along] = snapped(rng, lo, hi);
            let room = new_room(rng, min, size);
            if rooms.iter().any(|r| interiors_overlap(r, &room)) {
                continue;
            }
            let from = parent.min[along].max(room.min[along]);
            let to = parent.max[along].min(room.max[along]);
            let half = DOOR_WIDTH / 2.0;
            let c_lo = from + DOOR_MARGIN + half;
            let c_hi = to - DOOR_MARGIN - half;
            if c_hi < c_lo {
                continue;
            }
            let center = c_lo + (c_hi - c_lo) * rng.random::<f64>();
            let center = (center * 10.0).round() / 10.0;
            let center = center.clamp(c_lo, c_hi);
            let coord = if side % 2 == 0 { parent.max[across] } else { parent.min[across] };
            let seg = if across == 0 {
                WallSegment { axis: WallAxis::X, coord, from: center - half, to: center + half }
            } else {
                WallSegment { axis: WallAxis::Z, coord, from: center - half, to: center + half }
            };
            openings.push(Opening {
                rooms: [parent_idx, rooms.len()],
                a: seg.point(seg.from),
                b: seg.point(seg.to),
            });
            rooms.push(room);
            placed = true;
            break;
        }
        if !placed {
            return Err(format!("could not attach room {} of {n}", rooms.len() + 1));
        }
    }
    Ok((rooms, openings))
}

/// Parts of a room edge with no other room on the far side.
pub(crate) fn exterior_intervals(rooms: &[Room], idx: usize, edge: &WallSegment) -> Vec<(f64, f64)> {
    let mut covered: Vec<(f64, f64)> = rooms
        .iter()
        .enumerate()
        .filter(|&(j, _)| j != idx)
        .flat_map(|(_, r)| room_edges(r))
        .filter(|e| e.axis == edge.axis && (e.coord - edge.coord).abs() < 1e-9)
        .map(|e| (e.from, e.to))
        .collect();
    covered.sort_by(|a, b| a.0.total_cmp(&b.0));
    // merge so the subtraction sees disjoint holes
    let mut merged: Vec<(f64, f64)> = Vec::new();
    for (a, b) in covered {
        match merged.last_mut() {
            Some(last) if a <= last.1 => last.1 = last.1.max(b),
            _ => merged.push((a, b)),
        }
    }
    subtract_intervals(edge.from, edge.to, &merged)
}

fn place_windows(rooms: &[Room], rng: &mut ChaCha8Rng) -> Vec<Window> {
    let mut windows = Vec::new();
    for (i, room) in rooms.iter().enumerate() {
        for edge in room_edges(room) {
            for (from, to) in exterior_intervals(rooms, i, &edge) {
                if to - from < 2.0 || !rng.random_bool(0.5) {
                    continue;
                }
                let width = if to - from >= 3.0 && rng.random_bool(0.5) { 1.5 } else { 1.0 };
                let mid = (from + to) / 2.0;
                windows.push(Window {
                    room: i,
                    a: edge.point(mid - width / 2.0),
                    b: edge.point(mid + width / 2.0),
                    sill: 0.9,
                    top: 2.0,
                });
            }
        }
    }
    windows
}

/// Footprint ranges `(w, d, h)` per furniture class.
fn furniture_size(class_id: u8, rng: &mut ChaCha8Rng) -> [f64; 3] {
    let mut r = |lo: f64, hi: f64| lo + (hi - lo) * rng.random::<f64>();
    match class_id {
        palette::TABLE => [r(0.8, 1.4), r(0.6, 1.0), 0.75],
        palette::CHAIR => [0.45, 0.45, 0.9],
        palette::BED => [r(1.4, 1.8), 2.0, 0.55],
        palette::SOFA => [r(1.6, 2.0), 0.9, 0.85],
        palette::CABINET => [r(0.5, 1.0), r(0.4, 0.6), 1.8],
        palette::LAMP => [0.3, 0.3, 1.6],
        _ => [0.6, 0.6, r(0.85, 1.2)],
    }
}

/// Ground-plane keep-out rectangle in front of and behind a doorway.
pub(crate) fn door_zone(o: &Opening) -> ([f64; 2], [f64; 2]) {
    let seg = o.segment();
    let pad = 0.2;
    match seg.axis {
        WallAxis::X => (
            [seg.coord - DOOR_CLEARANCE, seg.from - pad],
            [seg.coord + DOOR_CLEARANCE, seg.to + pad],
        ),
        WallAxis::Z => (
            [seg.from - pad, seg.coord - DOOR_CLEARANCE],
            [seg.to + pad, seg.coord + DOOR_CLEARANCE],
        ),
    }
}

fn rects_overlap(a0: [f64; 2], a1: [f64; 2], b0: [f64; 2], b1: [f64; 2]) -> bool {
    a0[0] < b1[0] && b0[0] < a1[0] && a0[1] < b1[1] && b0[1] < a1[1]
}

fn place_furniture(spec: &SceneSpec, density: f64, rng: &mut ChaCha8Rng) -> Vec<Furniture> {
    let inset = spec.wall_thickness / 2.0 + 0.1;
    let zones: Vec<_> = spec.openings.iter().map(door_zone).collect();
    let mut out: Vec<Furniture> = Vec::new();
    for room in &spec.rooms {
        let count = (density * room.area() + rng.random::<f64>()).floor() as usize;
        for _ in 0..count {
            let class_id = FURNITURE_CLASSES[rng.random_range(0..FURNITURE_CLASSES.len())];
            let [mut w, mut d, h] = furniture_size(class_id, rng);
            if rng.random_bool(0.5) {
                std::mem::swap(&mut w, &mut d);
            }
            for _ in 0..20 {
                let x_lo = room.min[0] + inset;
                let x_hi = room.max[0] - inset - w;
                let z_lo = room.min[1] + inset;
                let z_hi = room.max[1] - inset - d;
                if x_hi <= x_lo || z_hi <= z_lo {
                    break;
                }
                let x = x_lo + (x_hi - x_lo) * rng.random::<f64>();
                let z = z_lo + (z_hi - z_lo) * rng.random::<f64>();
                let (m0, m1) = ([x, z], [x + w, z + d]);
                if zones.iter().any(|&(a, b)| rects_overlap(m0, m1, a, b)) {
                    continue;
                }
                let gap = 0.1;
                let clash = out.iter().any(|f| {
                    rects_overlap(
                        [m0[0] - gap, m0[1] - gap],
                        [m1[0] + gap, m1[1] + gap],
                        [f.min[0], f.min[2]],
                        [f.max[0], f.max[2]],
                    )
                });
                if clash {
                    continue;
                }
                out.push(Furniture {
                    class_id,
                    min: [x, 0.0, z],
                    max: [x + w, h, z + d],
                });
                break;
            }
        }
    }
    out
}

/// Horizontal distance from `(x, z)` to the footprint of a box.
fn footprint_distance(x: f64, z: f64, min: &Vec3, max: &Vec3) -> f64 {
    let dx = (min.x - x).max(0.0).max(x - max.x);
    let dz = (min.z - z).max(0.0).max(z - max.z);
    dx.hypot(dz)
}

/// True when the segment between two camera positions is unobstructed.
pub fn line_of_sight(scene: &Scene, a: &Vec3, b: &Vec3) -> bool {
    let d = b - a;
    let dist = d.norm();
    if dist == 0.0 {
        return true;
    }
    match scene.raycast(a, &(d / dist)) {
        Ok(hit) => hit.distance > dist,
        Err(_) => false,
    }
}

/// Lattice viewpoints with clearance from walls and furniture, plus one node
/// per doorway, joined when within range and mutually visible.
pub fn build_navgraph(scene: &Scene, seed: u64) -> NavGraph {
    let spec = scene.spec();
    let furniture_start = scene.solids().len() - spec.furniture.len();
    let mut nodes: Vec<Pose> = Vec::new();
    if let (Some(x0), Some(z0), Some(x1), Some(z1)) = (
        spec.rooms.iter().map(|r| r.min[0]).reduce(f64::min),
        spec.rooms.iter().map(|r| r.min[1]).reduce(f64::min),
        spec.rooms.iter().map(|r| r.max[0]).reduce(f64::max),
        spec.rooms.iter().map(|r| r.max[1]).reduce(f64::max),
    ) {
        let nx = ((x1 - x0) / LATTICE_SPACING).floor() as usize;
        let nz = ((z1 - z0) / LATTICE_SPACING).floor() as usize;
        for j in 0..nz {
            for i in 0..nx {
                let x = x0 + (i as f64 + 0.5) * LATTICE_SPACING;
                let z = z0 + (j as f64 + 0.5) * LATTICE_SPACING;
                if scene.room_at(x, z).is_none() {
                    continue;
                }
                let clear = scene.solids().iter().enumerate().all(|(k, s)| {
                    let need = if k >= furniture_start {
                        NODE_FURNITURE_CLEARANCE
                    } else {
                        NODE_WALL_CLEARANCE
                    };
                    footprint_distance(x, z, &s.min, &s.max) >= need
                });
                if clear {
                    nodes.push(Pose::at(x, CAMERA_HEIGHT, z));
                }
            }
        }
    }
    for o in &spec.openings {
        let [x, z] = o.midpoint();
        let p = Pose::at(x, CAMERA_HEIGHT, z);
        if scene.is_free(&p.position, CAMERA_CLEARANCE) {
            nodes.push(p);
        }
    }

    let mut edges = Vec::new();
    for a in 0..nodes.len() {
        for b in a + 1..nodes.len() {
            let (pa, pb) = (&nodes[a].position, &nodes[b].position);
            let dist = (pa - pb).norm();
            if (EDGE_MIN..=EDGE_MAX).contains(&dist)
                && line_of_sight(scene, pa, pb)
                && line_of_sight(scene, pb, pa)
            {
                edges.push([a, b]);
            }
        }
    }
    NavGraph::new(seed, nodes, edges)
}
