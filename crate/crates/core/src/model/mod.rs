//! A small ViLT-style vision-language transformer with spatial decoders.
//!
//! Caption tokens and image patches share one pre-norm transformer. The
//! pooled `[CLS]` state feeds a two-way classifier; the patch-grid states
//! are reshaped into a feature map and upsampled by three transposed
//! convolution decoders into depth, 3D-coordinate and edge maps. Training
//! minimises the classification loss plus weighted reconstruction losses,
//! optionally restricted to the object masks.

mod checkpoint;
mod config;
mod data;
mod loss;
mod network;
pub mod tokenizer;
mod train;

pub use checkpoint::Checkpoint;
pub use config::{ModelConfig, ReconstructionMode, Variant};
pub use data::{assemble, patchify, Batch, CoordStats, MapTargets, Prepared};
pub use loss::compute_total_loss;
pub use network::{BatchInput, Model, Outputs};
pub use tokenizer::Tokenizer;
pub use train::{accuracy, logits, predict, predict_prepared, train, EpochMetrics, TrainConfig, TrainReport};

use crate::autodiff::AutodiffError;
use crate::featex::FeatexError;

#[derive(Debug, thiserror::Error)]
pub enum ModelError {
    #[error("invalid model configuration: {0}")]
    Config(String),
    #[error("word {0:?} is not in the model vocabulary")]
    Vocabulary(String),
    #[error("shape error: {0}")]
    Shape(String),
    #[error("variant {0} needs spatial targets")]
    MissingTargets(Variant),
    #[error("loss diverged ({loss}) at epoch {epoch}, batch {batch} [{ids}]")]
    Divergence {
        epoch: usize,
        batch: usize,
        ids: String,
        loss: f64,
    },
    #[error("{0} split is empty")]
    EmptySplit(&'static str),
    #[error("checkpoint format error: {0}")]
    Format(String),
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Autodiff(#[from] AutodiffError),
    #[error(transparent)]
    Featex(#[from] FeatexError),
}

pub type Result<T, E = ModelError> = std::result::Result<T, E>;
