use std::collections::{BTreeMap, BTreeSet, HashMap};

use serde::{Deserialize, Serialize};

use super::{EnsembleError, MetaCategory, PredictionRecord, RelationTaxonomy, Result};

pub const ENSEMBLE_MODEL_ID: &str = "ensemble";

/// Validation accuracies and normalised weights for one (meta-category,
/// relation) cell, listed in `EnsembleWeights::model_ids` order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WeightCell {
    pub meta_category: MetaCategory,
    pub relation: String,
    pub accuracies: Vec<f64>,
    pub weights: Vec<f64>,
    /// Every model scored zero, so the weights are uniform.
    #[serde(default)]
    pub uniform_fallback: bool,
}

/// Cells exist only for relations seen during fitting.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EnsembleWeights {
    pub model_ids: Vec<String>,
    pub cells: Vec<WeightCell>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WeightSource {
    Cell,
    MetaCategoryAverage,
    Uniform,
}

#[derive(Debug, Clone, PartialEq)]
pub struct VoteScore {
    /// `scores[0]` for false, `scores[1]` for true.
    pub scores: [f64; 2],
    pub chosen: bool,
    pub tie_broken: bool,
    pub source: WeightSource,
}

fn normalise(acc: &[f64]) -> (Vec<f64>, bool) {
    let total: f64 = acc.iter().sum();
    if total > 0.0 {
        (acc.iter().map(|a| a / total).collect(), false)
    } else {
        (vec![1.0 / acc.len() as f64; acc.len()], true)
    }
}

impl EnsembleWeights {
    pub fn cell(&self, meta: MetaCategory, relation: &str) -> Option<&WeightCell> {
        self.cells
            .iter()
            .find(|c| c.meta_category == meta && c.relation == relation)
    }

    /// Weights for a cell, falling back to the meta-category average and
    /// then to uniform weights.
    pub fn weights_for(&self, meta: MetaCategory, relation: &str) -> (Vec<f64>, WeightSource) {
        if let Some(c) = self.cell(meta, relation) {
            return (c.weights.clone(), WeightSource::Cell);
        }
        let n = self.model_ids.len();
        let same: Vec<&WeightCell> = self.cells.iter().filter(|c| c.meta_category == meta).collect();
        if !same.is_empty() {
            log::info!("no weights for {relation:?}; using the {meta} average");
            let mut avg = vec![0.0; n];
            for c in &same {
                for (a, w) in avg.iter_mut().zip(&c.weights) {
                    *a += w;
                }
            }
            avg.iter_mut().for_each(|a| *a /= same.len() as f64);
            return (avg, WeightSource::MetaCategoryAverage);
        }
        log::info!("no weights for {relation:?} or {meta}; using uniform weights");
        (vec![1.0 / n as f64; n], WeightSource::Uniform)
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("weights serialise");
        s.push('\n');
        s
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let w: Self = serde_json::from_str(text).map_err(|e| EnsembleError::Schema(e.to_string()))?;
        for c in &w.cells {
            if c.accuracies.len() != w.model_ids.len() || c.weights.len() != w.model_ids.len() {
                return Err(EnsembleError::Schema(format!(
                    "cell {}/{} has the wrong number of entries",
                    c.meta_category, c.relation
                )));
            }
        }
        Ok(w)
    }
}

fn model_id_of(records: &[PredictionRecord]) -> Result<String> {
    let first = records.first().ok_or(EnsembleError::Empty)?;
    if let Some(r) = records.iter().find(|r| r.model_id != first.model_id) {
        return Err(EnsembleError::Inconsistent(format!(
            "mixed model ids {:?} and {:?} in one prediction list",
            first.model_id, r.model_id
        )));
    }
    Ok(first.model_id.clone())
}

fn check_record(r: &PredictionRecord, taxonomy: &RelationTaxonomy) -> Result<()> {
    let m = taxonomy.meta_category(&r.relation)?;
    if m != r.meta_category {
        return Err(EnsembleError::Inconsistent(format!(
            "instance {} tags {:?} as {} but the taxonomy says {m}",
            r.id, r.relation, r.meta_category
        )));
    }
    Ok(())
}

/// Per-model validation accuracy for every (meta-category, relation) cell,
/// normalised across models.
pub fn fit_weights(per_model: &[Vec<PredictionRecord>], taxonomy: &RelationTaxonomy) -> Result<EnsembleWeights> {
    if per_model.is_empty() {
        return Err(EnsembleError::Empty);
    }
    let model_ids = per_model.iter().map(|r| model_id_of(r)).collect::<Result<Vec<_>>>()?;
    if model_ids.iter().collect::<BTreeSet<_>>().len() != model_ids.len() {
        return Err(EnsembleError::Inconsistent("duplicate model ids".into()));
    }
    let reference: HashMap<&str, &PredictionRecord> = per_model[0].iter().map(|r| (r.id.as_str(), r)).collect();
    if reference.len() != per_model[0].len() {
        return Err(EnsembleError::Inconsistent(format!("duplicate instance ids for {}", model_ids[0])));
    }
    let n = model_ids.len();
    // (meta, relation) -> (instances, correct counts per model)
    let mut tally: BTreeMap<(MetaCategory, String), (usize, Vec<usize>)> = BTreeMap::new();
    for (i, records) in per_model.iter().enumerate() {
        if records.len() != reference.len() {
            return Err(EnsembleError::Inconsistent(format!(
                "{} has {} instances, {} has {}",
                model_ids[i],
                records.len(),
                model_ids[0],
                reference.len()
            )));
        }
        for r in records {
            check_record(r, taxonomy)?;
            let base = reference
                .get(r.id.as_str())
                .ok_or_else(|| EnsembleError::Inconsistent(format!("instance {} missing from {}", r.id, model_ids[0])))?;
            if base.relation != r.relation || base.label() != r.label() {
                return Err(EnsembleError::Inconsistent(format!("instance {} differs across models", r.id)));
            }
            let entry = tally
                .entry((r.meta_category, r.relation.clone()))
                .or_insert_with(|| (0, vec![0; n]));
            if i == 0 {
                entry.0 += 1;
            }
            entry.1[i] += r.correct as usize;
        }
    }
    let cells = tally
        .into_iter()
        .map(|((meta_category, relation), (count, correct))| {
            let accuracies: Vec<f64> = correct.iter().map(|&c| c as f64 / count as f64).collect();
            let (weights, uniform_fallback) = normalise(&accuracies);
            if uniform_fallback {
                log::warn!("all models scored zero on {meta_category}/{relation}; weights are uniform");
            }
            WeightCell {
                meta_category,
                relation,
                accuracies,
                weights,
                uniform_fallback,
            }
        })
        .collect();
    Ok(EnsembleWeights { model_ids, cells })
}

/// Weighted vote for one instance. `predictions` follow `weights.model_ids`.
pub fn vote(
    relation: &str,
    predictions: &[bool],
    weights: &EnsembleWeights,
    taxonomy: &RelationTaxonomy,
) -> Result<VoteScore> {
    if predictions.len() != weights.model_ids.len() || predictions.is_empty() {
        return Err(EnsembleError::ModelCount {
            expected: weights.model_ids.len(),
            got: predictions.len(),
        });
    }
    let meta = taxonomy.meta_category(relation)?;
    let (w, source) = weights.weights_for(meta, relation);
    let mut scores = [0.0f64; 2];
    for (&p, &wi) in predictions.iter().zip(&w) {
        scores[p as usize] += wi;
    }
    let (chosen, tie_broken) = if scores[1] > scores[0] {
        (true, false)
    } else if scores[0] > scores[1] {
        (false, false)
    } else {
        let top = w.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let leaders: BTreeSet<bool> = predictions
            .iter()
            .zip(&w)
            .filter(|(_, &wi)| wi == top)
            .map(|(&p, _)| p)
            .collect();
        (leaders.len() == 1 && leaders.contains(&true), true)
    };
    Ok(VoteScore {
        scores,
        chosen,
        tie_broken,
        source,
    })
}

/// Votes on every test instance. Each inner list holds one model's
/// predictions; lists may arrive in any model order.
pub fn ensemble_predict(
    per_model: &[Vec<PredictionRecord>],
    weights: &EnsembleWeights,
    taxonomy: &RelationTaxonomy,
) -> Result<Vec<PredictionRecord>> {
    if per_model.len() != weights.model_ids.len() {
        return Err(EnsembleError::ModelCount {
            expected: weights.model_ids.len(),
            got: per_model.len(),
        });
    }
    let mut by_model: HashMap<String, HashMap<&str, &PredictionRecord>> = HashMap::new();
    for records in per_model {
        let id = model_id_of(records)?;
        let map: HashMap<&str, &PredictionRecord> = records.iter().map(|r| (r.id.as_str(), r)).collect();
        if by_model.insert(id.clone(), map).is_some() {
            return Err(EnsembleError::Inconsistent(format!("duplicate model id {id}")));
        }
    }
    let ordered: Vec<&HashMap<&str, &PredictionRecord>> = weights
        .model_ids
        .iter()
        .map(|id| {
            by_model
                .get(id)
                .ok_or_else(|| EnsembleError::Inconsistent(format!("no predictions for model {id}")))
        })
        .collect::<Result<_>>()?;
    let anchor = per_model
        .iter()
        .find(|r| r[0].model_id == weights.model_ids[0])
        .expect("model present");
    let mut out = Vec::with_capacity(anchor.len());
    for base in anchor {
        check_record(base, taxonomy)?;
        let mut predictions = Vec::with_capacity(ordered.len());
        for (m, map) in ordered.iter().enumerate() {
            let r = map.get(base.id.as_str()).ok_or_else(|| {
                EnsembleError::Inconsistent(format!("instance {} missing for {}", base.id, weights.model_ids[m]))
            })?;
            if r.relation != base.relation || r.label() != base.label() {
                return Err(EnsembleError::Inconsistent(format!("instance {} differs across models", base.id)));
            }
            predictions.push(r.predicted);
        }
        if ordered.iter().any(|m| m.len() != anchor.len()) {
            return Err(EnsembleError::Inconsistent("models cover different instance sets".into()));
        }
        let score = vote(&base.relation, &predictions, weights, taxonomy)?;
        out.push(PredictionRecord {
            id: base.id.clone(),
            model_id: ENSEMBLE_MODEL_ID.to_string(),
            predicted: score.chosen,
            relation: base.relation.clone(),
            meta_category: base.meta_category,
            correct: score.chosen == base.label(),
        });
    }
    Ok(out)
}
