//! Metrics, comparison tables, charts and run configuration behind the
//! `spatial-mtl` command-line tool.

mod config;
mod metrics;
mod plot;
mod report;
mod table;

pub use config::{DatasetParams, Paths, RunConfig, SEED_ENV};
pub use metrics::{compute_metrics, group_by_model, Cell, Confusion, MetricsReport};
pub use plot::plot_outputs;
pub use report::{NamedReport, RunReport};
pub use table::{emit_comparison_table, format_pp, ComparisonRow, ComparisonTable, OVERALL};

use std::path::Path;

use crate::ensemble::EnsembleError;
use crate::featex::FeatexError;
use crate::model::ModelError;
use crate::scenegen::ScenegenError;

#[derive(Debug, thiserror::Error)]
pub enum HarnessError {
    #[error("{0}")]
    Usage(String),
    #[error("{0}")]
    Data(String),
    #[error("{0}")]
    Numerical(String),
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

impl HarnessError {
    pub fn io(path: &Path, source: std::io::Error) -> Self {
        Self::Io {
            path: path.display().to_string(),
            source,
        }
    }

    /// Process exit status: 2 usage, 3 data or schema, 4 numerical.
    pub fn exit_code(&self) -> i32 {
        match self {
            Self::Usage(_) => 2,
            Self::Data(_) | Self::Io { .. } => 3,
            Self::Numerical(_) => 4,
        }
    }

    pub fn kind(&self) -> &'static str {
        match self {
            Self::Usage(_) => "usage",
            Self::Data(_) => "data",
            Self::Io { .. } => "io",
            Self::Numerical(_) => "numerical",
        }
    }
}

impl From<EnsembleError> for HarnessError {
    fn from(e: EnsembleError) -> Self {
        Self::Data(e.to_string())
    }
}

impl From<FeatexError> for HarnessError {
    fn from(e: FeatexError) -> Self {
        Self::Data(e.to_string())
    }
}

impl From<ScenegenError> for HarnessError {
    fn from(e: ScenegenError) -> Self {
        match e {
            ScenegenError::Io { path, source } => Self::Io { path, source },
            other => Self::Data(other.to_string()),
        }
    }
}

impl From<ModelError> for HarnessError {
    fn from(e: ModelError) -> Self {
        match e {
            ModelError::Divergence { .. } => Self::Numerical(e.to_string()),
            ModelError::Io { path, source } => Self::Io { path, source },
            other => Self::Data(other.to_string()),
        }
    }
}

pub type Result<T, E = HarnessError> = std::result::Result<T, E>;
