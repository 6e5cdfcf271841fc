use std::collections::BTreeSet;

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::generate::{Scene, SceneConfig};
use super::relations::{relation_truth, RelationThresholds, SpatialRelation, Truth};
use super::ScenegenError;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Caption {
    pub tokens: Vec<String>,
    pub label: bool,
    pub relation: SpatialRelation,
}

impl Caption {
    pub fn text(&self) -> String {
        self.tokens.join(" ")
    }
}

/// `the <subject> is <phrase> the <object>`; "contains" takes no copula.
pub fn caption_tokens(subject: &str, relation: SpatialRelation, object: &str) -> Vec<String> {
    let mut t = vec!["the".to_string(), subject.to_string()];
    if relation != SpatialRelation::Contains {
        t.push("is".into());
    }
    t.extend(relation.phrase().split(' ').map(str::to_string));
    t.push("the".into());
    t.push(object.to_string());
    t
}

/// Every word a generated caption can contain, sorted.
pub fn vocabulary(config: &SceneConfig) -> Vec<String> {
    let mut words: BTreeSet<String> = ["the", "is"].iter().map(|s| s.to_string()).collect();
    words.extend(config.categories.iter().map(|c| c.name.clone()));
    for r in SpatialRelation::ALL {
        words.extend(r.phrase().split(' ').map(str::to_string));
    }
    words.into_iter().collect()
}

/// Truth of every relation for one ordered pair.
pub fn truth_table(
    scene: &Scene,
    subject: usize,
    object: usize,
    th: &RelationThresholds,
) -> Result<Vec<(SpatialRelation, Truth)>, ScenegenError> {
    SpatialRelation::ALL
        .into_iter()
        .map(|r| Ok((r, relation_truth(scene, subject, object, r, th)?)))
        .collect()
}

/// Caption for `relation(subject, object)`. With `negate`, a relation whose
/// truth value differs is substituted: half the time from the same
/// meta-category when one exists, otherwise from another meta-category.
pub fn make_caption(
    scene: &Scene,
    subject: usize,
    object: usize,
    relation: SpatialRelation,
    negate: bool,
    th: &RelationThresholds,
    rng: &mut ChaCha8Rng,
) -> Result<Caption, ScenegenError> {
    let table = truth_table(scene, subject, object, th)?;
    let own = table.iter().find(|(r, _)| *r == relation).map(|x| x.1).expect("all relations listed");
    let chosen = if negate {
        if own == Truth::Ambiguous {
            return Err(ScenegenError::NoSubstitute(relation.phrase().into()));
        }
        let wanted = if own == Truth::True { Truth::False } else { Truth::True };
        let (same, other): (Vec<SpatialRelation>, Vec<SpatialRelation>) = table
            .iter()
            .filter(|(r, t)| *t == wanted && *r != relation)
            .map(|(r, _)| *r)
            .partition(|r| r.meta_category() == relation.meta_category());
        let pool = match (same.is_empty(), other.is_empty()) {
            (true, true) => return Err(ScenegenError::NoSubstitute(relation.phrase().into())),
            (false, true) => same,
            (true, false) => other,
            (false, false) => {
                if rng.gen_bool(0.5) {
                    same
                } else {
                    other
                }
            }
        };
        pool[rng.gen_range(0..pool.len())]
    } else {
        relation
    };
    let truth = table.iter().find(|(r, _)| *r == chosen).map(|x| x.1).expect("listed");
    Ok(Caption {
        tokens: caption_tokens(&scene.objects[subject].name, chosen, &scene.objects[object].name),
        label: truth.is_true(),
        relation: chosen,
    })
}
