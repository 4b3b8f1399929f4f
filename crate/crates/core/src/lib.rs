//! Pose-guided image generation with appearance-adaptive convolution filters.
//!
//! A posemap is encoded to a bottleneck feature map; a fully convolutional
//! network looks at the appearance reference and predicts a per-sample
//! kernel bank that is convolved with those features before decoding.
//! Training combines a conditional adversarial loss with L1, content and
//! Gram-matrix style losses.

pub mod batch;
pub mod checkpoint;
pub mod cli;
pub mod config;
pub mod detector;
pub mod features;
pub mod gradsuite;
pub mod imageio;
pub mod layers;
pub mod losses;
pub mod metrics;
pub mod net;
pub mod optim;
pub mod params;
pub mod posemap;
pub mod sprites;
pub mod trainer;
pub mod workflow;

pub use adar_tensor as tensor;
pub use adar_tensor::{NormMode, Tape, Tensor, Var};

use std::path::{Path, PathBuf};

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error(transparent)]
    Tensor(#[from] adar_tensor::TensorError),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
    #[error("image {path}: {message}")]
    Image { path: PathBuf, message: String },
    #[error("config: {0}")]
    Config(String),
    #[error("resolution mismatch: {0}")]
    Resolution(String),
    #[error("non-finite {term} at generator step {g_step}, discriminator step {d_step}")]
    NonFinite { term: String, g_step: u64, d_step: u64 },
    #[error("non-finite gradient for parameter {0}")]
    NonFiniteGradient(String),
    #[error(transparent)]
    Checkpoint(#[from] checkpoint::CheckpointError),
    #[error("{0}")]
    Invalid(String),
}

impl Error {
    pub(crate) fn io(path: &Path, source: std::io::Error) -> Self {
        Error::Io {
            path: path.to_path_buf(),
            source,
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
