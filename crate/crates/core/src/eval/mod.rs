//! Segmentation, depth and diversity metrics, and the rollout evaluation
//! grid over contexts, steps and models.

mod metrics;
mod protocol;

pub use metrics::{depth_mae, diversity_score, miou, pixel_accuracy};
pub use protocol::{
    eval_episodes, run_eval_grid, EvalCell, EvalConfig, EvalModels, EvalReport, ModelKind, CSV_HEADER,
    EVAL_SCHEMA_VERSION,
};
