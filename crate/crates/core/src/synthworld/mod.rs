//! Procedural indoor worlds: floorplans, ray-cast panoramas, navigation
//! graphs, trajectories and viewpoint jitter.

mod generate;
mod navgraph;
mod scene;
mod validate;

pub use generate::{build_navgraph, generate_world, line_of_sight, WorldParams, MAX_ROOMS};
pub use navgraph::{
    perturb_viewpoint, perturb_viewpoint_with_sigma, sample_trajectory, sample_trajectory_nodes,
    sample_walk, NavGraph, EDGE_MAX, EDGE_MIN, NAVGRAPH_SCHEMA_VERSION, PERTURB_ATTEMPTS,
    TRAJECTORY_MAX_LEN, TRAJECTORY_MIN_LEN, VIEWPOINT_SIGMA,
};
pub use scene::{
    room_edges, Furniture, Hit, Opening, Room, Scene, SceneSpec, Solid, WallAxis, WallSegment,
    Window, CAMERA_CLEARANCE, CAMERA_HEIGHT, CEILING_HEIGHT, DOOR_HEIGHT, SCENE_SCHEMA_VERSION,
    WALL_THICKNESS,
};
pub use validate::{validate_scene, validate_world};
