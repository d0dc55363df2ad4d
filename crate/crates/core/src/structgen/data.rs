use rand::Rng;

use crate::cloud::PanoFrame;
use crate::error::Result;
use crate::geom::PanoGeometry;
use crate::seed;
use crate::synthworld::{
    generate_world, perturb_viewpoint, sample_trajectory_nodes, sample_walk, NavGraph, Scene,
    SceneSpec, WorldParams,
};

/// Ground-truth frames along one trajectory in one world.
#[derive(Clone, Debug, PartialEq)]
pub struct Episode {
    pub world_seed: u64,
    pub frames: Vec<PanoFrame>,
}

/// How trajectories are drawn for a set of episodes.
#[derive(Clone, Debug, PartialEq)]
pub struct EpisodeSpec {
    pub world: WorldParams,
    pub per_world: usize,
    /// Fixed trajectory length; `None` draws 5 to 8 viewpoints.
    pub length: Option<usize>,
    /// Jitter every viewpoint with Gaussian noise.
    pub augment: bool,
    pub geometry: PanoGeometry,
    pub seed: u64,
}

/// Renders the frames of a trajectory given as graph nodes.
pub fn render_nodes(
    scene: &Scene,
    graph: &NavGraph,
    nodes: &[usize],
    augment_seed: Option<u64>,
    g: PanoGeometry,
) -> Result<Vec<PanoFrame>> {
    nodes
        .iter()
        .enumerate()
        .map(|(i, &n)| {
            let pose = match augment_seed {
                Some(s) => perturb_viewpoint(scene, &graph.nodes[n], seed::derive(s, i as u64))?,
                None => graph.nodes[n],
            };
            scene.render_pano(&pose, g)
        })
        .collect()
}

/// Episodes for one already generated world.
pub fn episodes_for_world(
    spec: &SceneSpec,
    graph: &NavGraph,
    es: &EpisodeSpec,
) -> Result<Vec<Episode>> {
    let scene = Scene::new(spec.clone());
    let base = seed::derive(es.seed, spec.seed);
    (0..es.per_world)
        .map(|k| {
            let s = seed::derive(base, k as u64);
            let nodes = match es.length {
                Some(len) => sample_walk(graph, len, &mut seed::rng(s))?,
                None => sample_trajectory_nodes(graph, s)?,
            };
            let aug = es.augment.then(|| seed::derive(s, 0xA06));
            Ok(Episode {
                world_seed: spec.seed,
                frames: render_nodes(&scene, graph, &nodes, aug, es.geometry)?,
            })
        })
        .collect()
}

/// Generates each world and renders its episodes, in world order.
pub fn build_episodes(world_seeds: &[u64], es: &EpisodeSpec) -> Result<Vec<Episode>> {
    let mut out = Vec::new();
    for &w in world_seeds {
        let (spec, graph) = generate_world(w, &es.world)?;
        out.extend(episodes_for_world(&spec, &graph, es)?);
    }
    Ok(out)
}

/// Uniform index helper kept separate so training and evaluation share the
/// same draw order.
pub(crate) fn pick<R: Rng>(rng: &mut R, n: usize) -> usize {
    rng.random_range(0..n)
}
