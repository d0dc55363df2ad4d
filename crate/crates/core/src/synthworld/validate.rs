//! Full invariant check for generated worlds.

use super::generate::{door_zone, line_of_sight};
use super::navgraph::{NavGraph, EDGE_MAX, EDGE_MIN};
use super::scene::{room_edges, Scene, SceneSpec, WallSegment, CAMERA_CLEARANCE, CAMERA_HEIGHT};
use crate::palette::FURNITURE_CLASSES;

/// Every violated invariant of a scene, as human-readable messages.
pub fn validate_scene(spec: &SceneSpec) -> Vec<String> {
    let mut problems = Vec::new();
    let eps = 1e-9;
    if spec.rooms.is_empty() {
        problems.push("scene has no rooms".to_string());
    }
    for (i, r) in spec.rooms.iter().enumerate() {
        if !(r.max[0] > r.min[0] && r.max[1] > r.min[1]) {
            problems.push(format!("room {i} has an empty footprint"));
        }
        for (j, s) in spec.rooms.iter().enumerate().skip(i + 1) {
            let overlap = r.min[0] < s.max[0] - eps
                && s.min[0] < r.max[0] - eps
                && r.min[1] < s.max[1] - eps
                && s.min[1] < r.max[1] - eps;
            if overlap {
                problems.push(format!("rooms {i} and {j} overlap"));
            }
        }
    }

    for (k, o) in spec.openings.iter().enumerate() {
        let [a, b] = o.rooms;
        if a >= spec.rooms.len() || b >= spec.rooms.len() || a == b {
            problems.push(format!("opening {k} references invalid rooms {a}, {b}"));
            continue;
        }
        if o.width() < 0.9 - eps {
            problems.push(format!("opening {k} is narrower than 0.9 m"));
        }
        let seg = o.segment();
        let on_edge = |room: usize| {
            room_edges(&spec.rooms[room]).iter().any(|e| contains_segment(e, &seg))
        };
        if !(on_edge(a) && on_edge(b)) {
            problems.push(format!("opening {k} does not lie on a wall shared by rooms {a} and {b}"));
        }
    }

    for (k, w) in spec.windows.iter().enumerate() {
        if w.room >= spec.rooms.len() {
            problems.push(format!("window {k} references invalid room {}", w.room));
            continue;
        }
        let seg = WallSegment::from_points(w.a, w.b);
        if !room_edges(&spec.rooms[w.room]).iter().any(|e| contains_segment(e, &seg)) {
            problems.push(format!("window {k} is not on a wall of room {}", w.room));
        }
        if !(0.0 < w.sill && w.sill < w.top && w.top < spec.ceiling_height) {
            problems.push(format!("window {k} has invalid sill/top heights"));
        }
    }

    let zones: Vec<_> = spec.openings.iter().map(door_zone).collect();
    for (k, f) in spec.furniture.iter().enumerate() {
        if !FURNITURE_CLASSES.contains(&f.class_id) {
            problems.push(format!("furniture {k} has non-furniture class {}", f.class_id));
        }
        if (0..3).any(|a| f.max[a] <= f.min[a]) || f.min[1] < 0.0 || f.max[1] >= spec.ceiling_height {
            problems.push(format!("furniture {k} has an invalid extent"));
        }
        let strictly_inside = spec
            .rooms
            .iter()
            .filter(|r| {
                f.min[0] > r.min[0] && f.max[0] < r.max[0] && f.min[2] > r.min[1] && f.max[2] < r.max[1]
            })
            .count();
        if strictly_inside != 1 {
            problems.push(format!("furniture {k} is not strictly inside exactly one room"));
        }
        for (z, (lo, hi)) in zones.iter().enumerate() {
            if f.min[0] < hi[0] && lo[0] < f.max[0] && f.min[2] < hi[1] && lo[1] < f.max[2] {
                problems.push(format!("furniture {k} blocks opening {z}"));
            }
        }
    }

    if !spec.rooms.is_empty() && !rooms_connected(spec) {
        problems.push("room adjacency graph is disconnected".to_string());
    }
    problems
}

/// Every violated invariant of a scene and its navigation graph.
pub fn validate_world(spec: &SceneSpec, graph: &NavGraph) -> Vec<String> {
    let mut problems = validate_scene(spec);
    let scene = Scene::new(spec.clone());
    for (i, n) in graph.nodes.iter().enumerate() {
        if (n.position.y - CAMERA_HEIGHT).abs() > 1e-12 {
            problems.push(format!("node {i} is not at camera height"));
        }
        if !scene.is_free(&n.position, CAMERA_CLEARANCE) {
            problems.push(format!("node {i} is not in free space"));
        }
    }
    for (k, &[a, b]) in graph.edges.iter().enumerate() {
        if a >= graph.nodes.len() || b >= graph.nodes.len() || a == b {
            problems.push(format!("edge {k} references invalid nodes {a}, {b}"));
            continue;
        }
        let len = graph.edge_length([a, b]);
        if !(EDGE_MIN..=EDGE_MAX).contains(&len) {
            problems.push(format!("edge {k} has length {len:.3} outside [{EDGE_MIN}, {EDGE_MAX}]"));
        }
        let (pa, pb) = (&graph.nodes[a].position, &graph.nodes[b].position);
        if !line_of_sight(&scene, pa, pb) || !line_of_sight(&scene, pb, pa) {
            problems.push(format!("edge {k} endpoints lack line of sight"));
        }
    }
    if !graph.is_connected() {
        problems.push("navigation graph is disconnected".to_string());
    }
    problems
}

fn contains_segment(edge: &WallSegment, seg: &WallSegment) -> bool {
    let eps = 1e-9;
    edge.axis == seg.axis
        && (edge.coord - seg.coord).abs() < eps
        && seg.from >= edge.from - eps
        && seg.to <= edge.to + eps
}

fn rooms_connected(spec: &SceneSpec) -> bool {
    let n = spec.rooms.len();
    let mut seen = vec![false; n];
    let mut stack = vec![0];
    seen[0] = true;
    while let Some(r) = stack.pop() {
        for o in &spec.openings {
            let [a, b] = o.rooms;
            let other = if a == r { b } else if b == r { a } else { continue };
            if other < n && !seen[other] {
                seen[other] = true;
                stack.push(other);
            }
        }
    }
    seen.into_iter().all(|s| s)
}
