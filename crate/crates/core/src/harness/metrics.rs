use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::{HarnessError, Result};
use crate::ensemble::{PredictionRecord, RelationTaxonomy};

/// Count and accuracy of one group of records.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Cell {
    pub count: usize,
    pub correct: usize,
    pub accuracy: f64,
}

impl Cell {
    fn from_counts(count: usize, correct: usize) -> Self {
        Self {
            count,
            correct,
            accuracy: correct as f64 / count as f64,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct Confusion {
    pub true_positive: usize,
    pub false_positive: usize,
    pub true_negative: usize,
    pub false_negative: usize,
}

impl Confusion {
    /// Binary F1 of the "true" class; 0 when the class never occurs in
    /// either labels or predictions.
    pub fn f1(&self) -> f64 {
        let denom = 2 * self.true_positive + self.false_positive + self.false_negative;
        if denom == 0 {
            0.0
        } else {
            2.0 * self.true_positive as f64 / denom as f64
        }
    }
}

/// Accuracy and F1 overall, with per-meta-category and per-relation
/// breakdowns. Groups without records are absent rather than zero.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub count: usize,
    pub accuracy: f64,
    pub f1: f64,
    pub confusion: Confusion,
    pub per_meta_category: BTreeMap<String, Cell>,
    pub per_relation: BTreeMap<String, Cell>,
}

pub fn compute_metrics(records: &[PredictionRecord], taxonomy: &RelationTaxonomy) -> Result<MetricsReport> {
    if records.is_empty() {
        return Err(HarnessError::Data("no records".into()));
    }
    let mut confusion = Confusion::default();
    let mut meta: BTreeMap<String, (usize, usize)> = BTreeMap::new();
    let mut rel: BTreeMap<String, (usize, usize)> = BTreeMap::new();
    for r in records {
        let m = taxonomy.meta_category(&r.relation)?;
        if m != r.meta_category {
            return Err(HarnessError::Data(format!(
                "record {} files relation {:?} under {} but the taxonomy says {}",
                r.id, r.relation, r.meta_category, m
            )));
        }
        match (r.predicted, r.label()) {
            (true, true) => confusion.true_positive += 1,
            (true, false) => confusion.false_positive += 1,
            (false, false) => confusion.true_negative += 1,
            (false, true) => confusion.false_negative += 1,
        }
        let c = r.correct as usize;
        let e = meta.entry(m.name().to_string()).or_default();
        e.0 += 1;
        e.1 += c;
        let e = rel.entry(r.relation.clone()).or_default();
        e.0 += 1;
        e.1 += c;
    }
    let correct = confusion.true_positive + confusion.true_negative;
    let cells = |m: BTreeMap<String, (usize, usize)>| {
        m.into_iter()
            .map(|(k, (n, c))| (k, Cell::from_counts(n, c)))
            .collect()
    };
    Ok(MetricsReport {
        count: records.len(),
        accuracy: correct as f64 / records.len() as f64,
        f1: confusion.f1(),
        confusion,
        per_meta_category: cells(meta),
        per_relation: cells(rel),
    })
}

/// Splits records by `model_id`, keeping first-seen order of models.
pub fn group_by_model(records: &[PredictionRecord]) -> Vec<(String, Vec<PredictionRecord>)> {
    let mut out: Vec<(String, Vec<PredictionRecord>)> = Vec::new();
    for r in records {
        match out.iter_mut().find(|(m, _)| *m == r.model_id) {
            Some((_, v)) => v.push(r.clone()),
            None => out.push((r.model_id.clone(), vec![r.clone()])),
        }
    }
    out
}
