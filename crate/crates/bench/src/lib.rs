//! Fixtures shared by the benchmarks.

use panodream::synthworld::{generate_world, sample_trajectory, Scene, WorldParams};
use panodream::tinynn::Tensor4;
use panodream::{GuidanceImage, PanoFrame, PanoGeometry, PointCloud, Pose};

/// Deterministic pseudo-random tensor with values in `[-1, 1)`.
pub fn tensor(shape: [usize; 4], seed: u64) -> Tensor4 {
    let mut state = seed.wrapping_mul(0x9E37_79B9_7F4A_7C15) | 1;
    Tensor4::from_fn(shape, |_| {
        state ^= state << 13;
        state ^= state >> 7;
        state ^= state << 17;
        (state >> 11) as f64 / (1u64 << 52) as f64 - 1.0
    })
}

/// A generated world, a trajectory through it and its rendered frames.
pub struct WorldFixture {
    pub scene: Scene,
    pub poses: Vec<Pose>,
    pub frames: Vec<PanoFrame>,
}

pub fn world(seed: u64, g: PanoGeometry) -> WorldFixture {
    let (spec, graph) = generate_world(seed, &WorldParams::default()).expect("world generation");
    let scene = Scene::new(spec);
    let poses = sample_trajectory(&graph, seed).expect("trajectory");
    let frames = poses
        .iter()
        .map(|p| scene.render_pano(p, g).expect("render"))
        .collect();
    WorldFixture { scene, poses, frames }
}

/// Cloud of every frame but the last, and the last pose.
pub fn context_cloud(w: &WorldFixture) -> (PointCloud, Pose) {
    let mut cloud = PointCloud::new(panodream::palette::CLASS_COUNT);
    for f in &w.frames[..w.frames.len() - 1] {
        cloud.insert_frame(f, 1).expect("insert");
    }
    (cloud, *w.poses.last().unwrap())
}

pub fn guidance(w: &WorldFixture, g: PanoGeometry) -> GuidanceImage {
    let (cloud, pose) = context_cloud(w);
    cloud.render_guidance(&pose, g)
}
