use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::scene::{Scene, CAMERA_CLEARANCE};
use crate::error::{Error, Result};
use crate::geom::{Pose, Vec3};
use crate::seed;

pub const NAVGRAPH_SCHEMA_VERSION: u32 = 1;
pub const EDGE_MIN: f64 = 1.0;
pub const EDGE_MAX: f64 = 3.5;
pub const TRAJECTORY_MIN_LEN: usize = 5;
pub const TRAJECTORY_MAX_LEN: usize = 8;
pub const VIEWPOINT_SIGMA: f64 = 0.2;
pub const PERTURB_ATTEMPTS: usize = 100;

/// Navigable viewpoints and the transitions between them.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NavGraph {
    pub schema_version: u32,
    pub seed: u64,
    pub nodes: Vec<Pose>,
    pub edges: Vec<[usize; 2]>,
}

impl NavGraph {
    pub fn new(seed: u64, nodes: Vec<Pose>, edges: Vec<[usize; 2]>) -> Self {
        NavGraph {
            schema_version: NAVGRAPH_SCHEMA_VERSION,
            seed,
            nodes,
            edges,
        }
    }

    /// Sorted neighbor lists.
    pub fn adjacency(&self) -> Vec<Vec<usize>> {
        let mut adj = vec![Vec::new(); self.nodes.len()];
        for &[a, b] in &self.edges {
            if a < adj.len() && b < adj.len() && a != b {
                adj[a].push(b);
                adj[b].push(a);
            }
        }
        for n in &mut adj {
            n.sort_unstable();
            n.dedup();
        }
        adj
    }

    pub fn is_connected(&self) -> bool {
        if self.nodes.is_empty() {
            return false;
        }
        let adj = self.adjacency();
        let mut seen = vec![false; adj.len()];
        let mut stack = vec![0];
        seen[0] = true;
        while let Some(n) = stack.pop() {
            for &m in &adj[n] {
                if !seen[m] {
                    seen[m] = true;
                    stack.push(m);
                }
            }
        }
        seen.into_iter().all(|s| s)
    }

    pub fn edge_length(&self, e: [usize; 2]) -> f64 {
        (self.nodes[e[0]].position - self.nodes[e[1]].position).norm()
    }
}

/// Random walk of `len` nodes: uniform start, then uniform over neighbors
/// other than the node just left (unless it is the only neighbor).
pub fn sample_walk(graph: &NavGraph, len: usize, rng: &mut impl Rng) -> Result<Vec<usize>> {
    if graph.nodes.len() < 2 {
        return Err(Error::Domain(format!(
            "navigation graph needs at least 2 nodes, has {}",
            graph.nodes.len()
        )));
    }
    let adj = graph.adjacency();
    let mut walk = Vec::with_capacity(len);
    if len == 0 {
        return Ok(walk);
    }
    walk.push(rng.random_range(0..graph.nodes.len()));
    while walk.len() < len {
        let cur = *walk.last().unwrap();
        let prev = walk.len().checked_sub(2).map(|i| walk[i]);
        let options: Vec<usize> = adj[cur].iter().copied().filter(|&n| Some(n) != prev).collect();
        let next = match (options.is_empty(), adj[cur].is_empty()) {
            (false, _) => options[rng.random_range(0..options.len())],
            (true, false) => adj[cur][0],
            (true, true) => {
                return Err(Error::Domain(format!("node {cur} has no neighbors")));
            }
        };
        walk.push(next);
    }
    Ok(walk)
}

/// Node indices of a trajectory of 5 to 8 viewpoints.
pub fn sample_trajectory_nodes(graph: &NavGraph, seed: u64) -> Result<Vec<usize>> {
    let mut rng = seed::rng(seed);
    let len = rng.random_range(TRAJECTORY_MIN_LEN..=TRAJECTORY_MAX_LEN);
    sample_walk(graph, len, &mut rng)
}

pub fn sample_trajectory(graph: &NavGraph, seed: u64) -> Result<Vec<Pose>> {
    Ok(sample_trajectory_nodes(graph, seed)?
        .into_iter()
        .map(|i| graph.nodes[i])
        .collect())
}

/// Jitters a viewpoint position with isotropic Gaussian noise, resampling
/// until it lands in free space.
pub fn perturb_viewpoint(scene: &Scene, pose: &Pose, seed: u64) -> Result<Pose> {
    perturb_viewpoint_with_sigma(scene, pose, seed, VIEWPOINT_SIGMA)
}

pub fn perturb_viewpoint_with_sigma(
    scene: &Scene,
    pose: &Pose,
    seed: u64,
    sigma: f64,
) -> Result<Pose> {
    if sigma == 0.0 {
        return Ok(*pose);
    }
    let normal = Normal::new(0.0, sigma)
        .map_err(|e| Error::Domain(format!("invalid perturbation sigma {sigma}: {e}")))?;
    let mut rng = seed::rng(seed);
    for _ in 0..PERTURB_ATTEMPTS {
        let eps = Vec3::new(
            normal.sample(&mut rng),
            normal.sample(&mut rng),
            normal.sample(&mut rng),
        );
        let p = pose.position + eps;
        if scene.is_free(&p, CAMERA_CLEARANCE) {
            return Ok(Pose { position: p, yaw: pose.yaw });
        }
    }
    Err(Error::Augmentation { attempts: PERTURB_ATTEMPTS })
}
