//! Procedural scenes with analytic ground truth.
//!
//! Scenes hold a few primitives in front of a background plane. Rendering
//! is a per-pixel ray cast that yields the image together with planar
//! depth, back-projected coordinates, silhouette edges and visible-object
//! masks. Captions follow `the <subject> is <relation> the <object>` and
//! are labelled from the geometry.

mod caption;
mod dataset;
mod generate;
pub mod geometry;
mod io;
mod relations;
mod render;

pub use caption::{caption_tokens, make_caption, truth_table, vocabulary, Caption};
pub use dataset::{build_dataset, generate_sample, split_counts, stratified_split, Dataset, Example, Sample};
pub use generate::{default_categories, generate_scene, generate_scene_with, Category, Scene, SceneConfig};
pub use geometry::{SceneObject, Shape};
pub use io::{
    decode_binary_png, decode_rgb_png, encode_binary_png, encode_rgb_png, load_split, read_smap, write_dataset,
    write_smap, SampleRecord, SPLITS,
};
pub use relations::{compute_relation, relation_truth, RelationThresholds, SpatialRelation, Truth};
pub use render::{heading_marker, render};

use crate::featex::Raster;

/// Ground-truth maps for one image.
#[derive(Debug, Clone, PartialEq)]
pub struct SpatialMaps {
    /// Planar depth in metres, `h×w×1`.
    pub depth: Raster,
    /// Camera-frame `(x, y, z)` per pixel, `h×w×3`.
    pub coords: Raster,
    /// Binary silhouette boundaries, `h×w×1`.
    pub edges: Raster,
    /// One binary visibility mask per object, `h×w×1`.
    pub masks: Vec<Raster>,
}

#[derive(Debug, thiserror::Error)]
pub enum ScenegenError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("could not place objects after {attempts} attempts")]
    Placement { attempts: usize },
    #[error("unsupported relation {0:?}")]
    UnsupportedRelation(String),
    #[error("subject and object are the same object ({0})")]
    SameObject(usize),
    #[error("no relation with a different truth value than {0:?}")]
    NoSubstitute(String),
    #[error("need at least {min} samples to stratify, got {n}")]
    TooSmall { n: usize, min: usize },
    #[error("format error in {path}: {reason}")]
    Format { path: String, reason: String },
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

pub type Result<T> = std::result::Result<T, ScenegenError>;
