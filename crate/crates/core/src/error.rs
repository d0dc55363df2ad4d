use std::path::PathBuf;

/// Errors raised across the crate. Variants follow the failure classes of the
/// individual subsystems rather than the subsystems themselves.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("domain error: {0}")]
    Domain(String),

    #[error("shape error: {0}")]
    Shape(String),

    #[error("data error: {0}")]
    Data(String),

    #[error("degenerate projection: point coincides with the camera center")]
    DegenerateProjection,

    #[error("geometry error: {0}")]
    Geometry(String),

    #[error("guidance image has no valid pixels")]
    NoContext,

    #[error("world generation failed for seed {seed}: {reason}")]
    Generation { seed: u64, reason: String },

    #[error("viewpoint augmentation found no free-space sample after {attempts} attempts")]
    Augmentation { attempts: usize },

    #[error("non-finite gradient for parameter `{0}`")]
    NonFiniteGradient(String),

    #[error("non-finite loss at step {step}: total={total} ce={ce} depth={depth} kl={kl}")]
    NonFiniteLoss {
        step: usize,
        total: f64,
        ce: f64,
        depth: f64,
        kl: f64,
    },

    #[error("usage error: {0}")]
    Usage(String),

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
