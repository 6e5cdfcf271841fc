//! Brute-force weighted voting recomputed from raw records, plus a random
//! trial generator.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use spatial_mtl::ensemble::{MetaCategory, PredictionRecord, RelationTaxonomy};

pub struct Trial {
    pub val: Vec<Vec<PredictionRecord>>,
    pub test: Vec<Vec<PredictionRecord>>,
}

fn record(tax: &RelationTaxonomy, id: String, model: usize, relation: &str, predicted: bool, label: bool) -> PredictionRecord {
    PredictionRecord {
        id,
        model_id: format!("model{model}"),
        predicted,
        relation: relation.to_string(),
        meta_category: tax.meta_category(relation).unwrap(),
        correct: predicted == label,
    }
}

/// Up to five models and twenty relations; each model has its own skill
/// per relation. Some test relations are unseen during fitting.
pub fn random_trial(seed: u64, tax: &RelationTaxonomy) -> Trial {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n_models = rng.gen_range(1..=5);
    let all: Vec<&str> = tax.iter().map(|(r, _)| r).collect();
    let n_rel = rng.gen_range(1..=20);
    let relations: Vec<&str> = all.choose_multiple(&mut rng, n_rel).copied().collect();
    let seen = rng.gen_range(1..=n_rel);
    let skill: Vec<Vec<f64>> = (0..n_models)
        .map(|_| (0..n_rel).map(|_| if rng.gen_bool(0.1) { 0.0 } else { rng.gen::<f64>() }).collect())
        .collect();
    let make = |prefix: &str, count: usize, pool: usize, rng: &mut ChaCha8Rng| {
        let instances: Vec<(usize, bool)> = (0..count).map(|_| (rng.gen_range(0..pool), rng.gen_bool(0.5))).collect();
        (0..n_models)
            .map(|m| {
                instances
                    .iter()
                    .enumerate()
                    .map(|(k, &(r, label))| {
                        let right = rng.gen_bool(skill[m][r]);
                        record(tax, format!("{prefix}{k}"), m, relations[r], if right { label } else { !label }, label)
                    })
                    .collect()
            })
            .collect::<Vec<Vec<PredictionRecord>>>()
    };
    let val = make("v", rng.gen_range(1..60), seen, &mut rng);
    let test = make("t", rng.gen_range(1..60), n_rel, &mut rng);
    Trial { val, test }
}

/// Weights per model for one relation, by direct recount of the
/// validation records and the documented fallbacks.
pub fn brute_weights(val: &[Vec<PredictionRecord>], relation: &str, tax: &RelationTaxonomy) -> Vec<f64> {
    let n = val.len();
    let cell = |rel: &str| -> Option<Vec<f64>> {
        let mut acc = vec![0.0; n];
        let mut any = false;
        for (m, recs) in val.iter().enumerate() {
            let (mut hit, mut tot) = (0usize, 0usize);
            for r in recs.iter().filter(|r| r.relation == rel) {
                tot += 1;
                if r.correct {
                    hit += 1;
                }
            }
            if tot > 0 {
                any = true;
                acc[m] = hit as f64 / tot as f64;
            }
        }
        if !any {
            return None;
        }
        let sum: f64 = acc.iter().sum();
        Some(if sum > 0.0 { acc.iter().map(|a| a / sum).collect() } else { vec![1.0 / n as f64; n] })
    };
    if let Some(w) = cell(relation) {
        return w;
    }
    let meta: MetaCategory = tax.meta_category(relation).unwrap();
    let mut seen: Vec<String> = val[0]
        .iter()
        .filter(|r| r.meta_category == meta)
        .map(|r| r.relation.clone())
        .collect();
    seen.sort();
    seen.dedup();
    if seen.is_empty() {
        return vec![1.0 / n as f64; n];
    }
    let mut avg = vec![0.0; n];
    for rel in &seen {
        for (a, w) in avg.iter_mut().zip(cell(rel).unwrap()) {
            *a += w;
        }
    }
    avg.iter().map(|a| a / seen.len() as f64).collect()
}

/// Class scores and the decision, including the tie rule.
pub fn brute_vote(weights: &[f64], predictions: &[bool]) -> ([f64; 2], bool) {
    let mut s = [0.0; 2];
    for i in 0..weights.len() {
        if predictions[i] {
            s[1] += weights[i];
        } else {
            s[0] += weights[i];
        }
    }
    if s[1] != s[0] {
        return (s, s[1] > s[0]);
    }
    let top = weights.iter().cloned().fold(f64::MIN, f64::max);
    let top_preds: Vec<bool> = (0..weights.len()).filter(|&i| weights[i] == top).map(|i| predictions[i]).collect();
    (s, top_preds.iter().all(|&p| p) && !top_preds.is_empty())
}
