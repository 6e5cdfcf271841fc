//! Deterministic spatial feature extraction: Canny edges, pinhole
//! back-projection and projection, depth normalisation, mask application
//! and block pooling.
//!
//! All functions are pure and reentrant.

mod camera;
mod canny;
mod maps;
mod raster;

pub use camera::{backproject, backproject_with, project, CameraIntrinsics, CoordinateMap, DepthKind, Projection};
pub use canny::{canny_edges, to_grayscale, EdgeParams};
pub use maps::{apply_masks, downsample_map, normalize_depth, resize_nearest, MaskMode, Pooling};
pub use raster::Raster;

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum FeatexError {
    #[error("image {height}×{width} is smaller than the {min}×{min} minimum")]
    TooSmall { height: usize, width: usize, min: usize },
    #[error("invalid parameters: {0}")]
    Params(String),
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("pixel ({u}, {v}) has zero depth and cannot be projected")]
    ZeroDepth { u: usize, v: usize },
    #[error("no masks supplied")]
    EmptyMasks,
}

pub type Result<T, E = FeatexError> = std::result::Result<T, E>;
