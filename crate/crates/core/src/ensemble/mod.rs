//! Relation-aware weighted voting.
//!
//! Each model's vote on an instance carries its normalised validation
//! accuracy for the instance's (meta-category, relation) cell. Scores are
//! indexed by class; weights by model, meta-category and relation.

mod record;
pub mod taxonomy;
mod voting;

pub use record::{read_jsonl, write_jsonl, PredictionRecord};
pub use taxonomy::{MetaCategory, RelationTaxonomy};
pub use voting::{ensemble_predict, fit_weights, vote, EnsembleWeights, VoteScore, WeightCell, WeightSource, ENSEMBLE_MODEL_ID};

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum EnsembleError {
    #[error("unknown relation {0:?}")]
    UnknownRelation(String),
    #[error("unknown meta-category {0:?}")]
    UnknownMetaCategory(String),
    #[error("schema error: {0}")]
    Schema(String),
    #[error("inconsistent predictions: {0}")]
    Inconsistent(String),
    #[error("expected {expected} model predictions, got {got}")]
    ModelCount { expected: usize, got: usize },
    #[error("no records")]
    Empty,
}

pub type Result<T> = std::result::Result<T, EnsembleError>;
