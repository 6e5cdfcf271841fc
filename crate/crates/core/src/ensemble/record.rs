use serde::{Deserialize, Serialize};

use super::{EnsembleError, MetaCategory, Result};

/// One model's verdict on one instance.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PredictionRecord {
    pub id: String,
    pub model_id: String,
    pub predicted: bool,
    pub relation: String,
    pub meta_category: MetaCategory,
    pub correct: bool,
}

impl PredictionRecord {
    /// Ground-truth label implied by the verdict and its correctness.
    pub fn label(&self) -> bool {
        self.predicted == self.correct
    }
}

pub fn write_jsonl(records: &[PredictionRecord]) -> String {
    let mut out = String::new();
    for r in records {
        out.push_str(&serde_json::to_string(r).expect("record serialises"));
        out.push('\n');
    }
    out
}

/// Parses one record per non-blank line; errors name the line.
pub fn read_jsonl(text: &str) -> Result<Vec<PredictionRecord>> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| serde_json::from_str(l).map_err(|e| EnsembleError::Schema(format!("line {}: {e}", i + 1))))
        .collect()
}
