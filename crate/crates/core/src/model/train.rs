use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{assemble, compute_total_loss, Checkpoint, CoordStats, Model, ModelError, Prepared, Result};
use crate::autodiff::{AdamConfig, AdamState, LossBreakdown, Tape};
use crate::ensemble::PredictionRecord;
use crate::scenegen::Example;

const INFERENCE_BATCH: usize = 32;
/// Stream of the shuffling generator; stream 0 initialises the weights.
const SHUFFLE_STREAM: u64 = 7;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    pub lr: f64,
    pub batch_size: usize,
    /// Epochs without a new best validation accuracy before stopping.
    pub patience: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 15,
            lr: 1e-4,
            batch_size: 8,
            patience: 3,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochMetrics {
    /// 1-based.
    pub epoch: usize,
    /// Sample-weighted mean over the epoch's batches.
    pub train: LossBreakdown,
    pub val_accuracy: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub history: Vec<EpochMetrics>,
    /// Epoch whose weights were returned; `None` when no epoch ran.
    pub best_epoch: Option<usize>,
    pub best_val_accuracy: Option<f64>,
    pub stopped_early: bool,
}

/// Predicted class for each row of `[B×2]` logits; ties go to false.
fn argmax_rows(logits: &[f32]) -> Vec<bool> {
    logits.chunks(2).map(|r| r[1] > r[0]).collect()
}

/// Logits for prepared examples, in order.
pub fn logits(model: &Model, items: &[Prepared]) -> Result<Vec<f32>> {
    let mut out = Vec::with_capacity(items.len() * 2);
    let mut frozen = model.clone();
    frozen.params.iter_mut().for_each(|p| p.requires_grad = false);
    for chunk in items.chunks(INFERENCE_BATCH) {
        let refs: Vec<&Prepared> = chunk.iter().collect();
        let batch = assemble::<f32>(&refs);
        let mut tape = Tape::new();
        let vars = frozen.bind(&mut tape);
        let o = frozen.forward(&mut tape, &vars, &batch.input, false)?;
        out.extend_from_slice(tape.value(o.logits));
    }
    Ok(out)
}

pub fn predict_prepared(model: &Model, items: &[Prepared], model_id: &str) -> Result<Vec<PredictionRecord>> {
    let predicted = argmax_rows(&logits(model, items)?);
    Ok(items
        .iter()
        .zip(predicted)
        .map(|(p, y)| PredictionRecord {
            id: p.id.clone(),
            model_id: model_id.to_string(),
            predicted: y,
            relation: p.relation.clone(),
            meta_category: p.meta_category,
            correct: y == p.label,
        })
        .collect())
}

/// One record per example, in input order.
pub fn predict(model: &Model, examples: &[Example], model_id: &str) -> Result<Vec<PredictionRecord>> {
    let items = model.prepare(examples)?;
    predict_prepared(model, &items, model_id)
}

pub fn accuracy(records: &[PredictionRecord]) -> f64 {
    if records.is_empty() {
        return 0.0;
    }
    records.iter().filter(|r| r.correct).count() as f64 / records.len() as f64
}

/// Trains with Adam and early stopping on validation accuracy; returns the
/// best-epoch checkpoint. Ties keep the earlier epoch. With `epochs == 0`
/// the initial model comes back unchanged with an empty history.
pub fn train(mut model: Model, train: &[Example], val: &[Example], cfg: &TrainConfig) -> Result<(Checkpoint, TrainReport)> {
    if train.is_empty() {
        return Err(ModelError::EmptySplit("train"));
    }
    if val.is_empty() {
        return Err(ModelError::EmptySplit("validation"));
    }
    if cfg.batch_size == 0 {
        return Err(ModelError::Config("batch_size must be positive".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(model.config.seed);
    rng.set_stream(SHUFFLE_STREAM);
    let mut adam = AdamState::new(&model.params);
    let mut report = TrainReport {
        history: Vec::new(),
        best_epoch: None,
        best_val_accuracy: None,
        stopped_early: false,
    };
    if cfg.epochs == 0 {
        let ck = Checkpoint {
            model,
            optimizer: Some(adam),
            epoch: 0,
            rng_word_pos: rng.get_word_pos(),
        };
        return Ok((ck, report));
    }

    model.coord_stats = CoordStats::fit(train, model.config.target_map_size)?;
    let train_items = model.prepare(train)?;
    let val_items = model.prepare(val)?;
    if model.config.variant.uses_maps() {
        if let Some(p) = train_items.iter().find(|p| p.targets.is_none()) {
            return Err(ModelError::Config(format!(
                "variant {} needs spatial maps but example {} has none",
                model.config.variant, p.id
            )));
        }
    }
    let adam_cfg = AdamConfig::with_lr(cfg.lr);
    let weights = model.config.effective_weights();
    let mut best: Option<Checkpoint> = None;
    let mut since_best = 0;

    for epoch in 1..=cfg.epochs {
        let mut order: Vec<usize> = (0..train_items.len()).collect();
        order.shuffle(&mut rng);
        let mut sum = LossBreakdown::default();
        for (bi, idx) in order.chunks(cfg.batch_size).enumerate() {
            let refs: Vec<&Prepared> = idx.iter().map(|&i| &train_items[i]).collect();
            let batch = assemble::<f32>(&refs);
            let mut tape = Tape::new();
            let vars = model.bind(&mut tape);
            let out = model.forward(&mut tape, &vars, &batch.input, true)?;
            let (loss, parts) = compute_total_loss(&mut tape, &model.config, &out, &batch.labels, batch.targets.as_ref())?;
            if !parts.total.is_finite() || !parts.is_consistent(&weights, 1e-4) {
                let ids: Vec<&str> = refs.iter().map(|p| p.id.as_str()).collect();
                return Err(ModelError::Divergence {
                    epoch,
                    batch: bi,
                    ids: ids.join(","),
                    loss: parts.total,
                });
            }
            tape.backward(loss)?;
            model.collect_grads(&tape, &vars)?;
            adam.step(&mut model.params, &adam_cfg)?;
            sum.accumulate(&parts.scaled(refs.len() as f64));
        }
        let mean = sum.scaled(1.0 / train_items.len() as f64);
        let val_acc = accuracy(&predict_prepared(&model, &val_items, "validation")?);
        log::info!(
            "{} epoch {epoch}: loss {:.4} (cls {:.4}) val acc {:.4}",
            model.config.variant,
            mean.total,
            mean.classification,
            val_acc
        );
        report.history.push(EpochMetrics {
            epoch,
            train: mean,
            val_accuracy: val_acc,
        });
        if report.best_val_accuracy.map_or(true, |b| val_acc > b) {
            report.best_epoch = Some(epoch);
            report.best_val_accuracy = Some(val_acc);
            since_best = 0;
            best = Some(Checkpoint {
                model: model.clone(),
                optimizer: Some(adam.clone()),
                epoch,
                rng_word_pos: rng.get_word_pos(),
            });
        } else {
            since_best += 1;
            if since_best >= cfg.patience && epoch < cfg.epochs {
                report.stopped_early = true;
                break;
            }
        }
    }
    Ok((best.expect("at least one epoch ran"), report))
}
