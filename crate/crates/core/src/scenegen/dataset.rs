use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::caption::{make_caption, truth_table};
use super::generate::{generate_scene_with, Scene, SceneConfig};
use super::geometry::{is_inside, surface_distance};
use super::relations::{SpatialRelation, Truth};
use super::render::render;
use super::{Result, ScenegenError, SpatialMaps};
use crate::ensemble::MetaCategory;
use crate::featex::Raster;

pub const MIN_DATASET: usize = 10;

#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub id: String,
    pub scene: Scene,
    pub subject: usize,
    pub object: usize,
    pub relation: SpatialRelation,
    pub caption: String,
    pub label: bool,
    pub image: Raster,
    pub maps: SpatialMaps,
}

/// What training and evaluation consume: a captioned image with optional
/// ground-truth maps. Samples loaded from disk and external annotation
/// files share this form.
#[derive(Debug, Clone, PartialEq)]
pub struct Example {
    pub id: String,
    pub caption: String,
    pub label: bool,
    pub relation: String,
    pub meta_category: MetaCategory,
    pub image: Raster,
    pub maps: Option<SpatialMaps>,
}

impl From<Sample> for Example {
    fn from(s: Sample) -> Self {
        Self {
            id: s.id,
            caption: s.caption,
            label: s.label,
            relation: s.relation.phrase().to_string(),
            meta_category: s.relation.meta_category(),
            image: s.image,
            maps: Some(s.maps),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Dataset {
    pub train: Vec<Sample>,
    pub val: Vec<Sample>,
    pub test: Vec<Sample>,
}

impl Dataset {
    pub fn splits(&self) -> [(&'static str, &[Sample]); 3] {
        [("train", &self.train), ("val", &self.val), ("test", &self.test)]
    }
}

fn sample_rng(seed: u64, index: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index as u64 + 1);
    rng
}

/// Random ordered pair. Nested or touching pairs are rare under uniform
/// choice, so when present they are picked half the time.
fn pick_pair(scene: &Scene, config: &SceneConfig, rng: &mut ChaCha8Rng) -> (usize, usize) {
    let n = scene.objects.len();
    let special: Vec<(usize, usize)> = (0..n)
        .flat_map(|a| (0..n).map(move |b| (a, b)))
        .filter(|&(a, b)| {
            a != b && {
                let (x, y) = (&scene.objects[a], &scene.objects[b]);
                is_inside(x, y) || is_inside(y, x) || surface_distance(x, y) <= config.thresholds.touch_eps
            }
        })
        .collect();
    if !special.is_empty() && rng.gen_bool(0.5) {
        return special[rng.gen_range(0..special.len())];
    }
    let subject = rng.gen_range(0..n);
    (subject, (subject + rng.gen_range(1..n)) % n)
}

/// Sample `index` of the dataset with the given seed. Even indices are
/// true captions, odd ones false.
pub fn generate_sample(index: usize, seed: u64, config: &SceneConfig) -> Result<Sample> {
    let mut rng = sample_rng(seed, index);
    let label = index % 2 == 0;
    for _ in 0..config.max_attempts {
        let scene = generate_scene_with(&mut rng, config)?;
        let (subject, object) = pick_pair(&scene, config, &mut rng);
        let table = truth_table(&scene, subject, object, &config.thresholds)?;
        let mut metas: Vec<MetaCategory> = table
            .iter()
            .filter(|(_, t)| *t == Truth::True)
            .map(|(r, _)| r.meta_category())
            .collect();
        metas.dedup();
        if metas.is_empty() {
            continue;
        }
        let meta = metas[rng.gen_range(0..metas.len())];
        let pool: Vec<SpatialRelation> = table
            .iter()
            .filter(|(r, t)| *t == Truth::True && r.meta_category() == meta)
            .map(|(r, _)| *r)
            .collect();
        let seed_relation = pool[rng.gen_range(0..pool.len())];
        let caption = match make_caption(&scene, subject, object, seed_relation, !label, &config.thresholds, &mut rng) {
            Ok(c) => c,
            Err(ScenegenError::NoSubstitute(_)) => continue,
            Err(e) => return Err(e),
        };
        debug_assert_eq!(caption.label, label);
        let (image, maps) = render(&scene, config)?;
        return Ok(Sample {
            id: format!("s{index:06}"),
            scene,
            subject,
            object,
            relation: caption.relation,
            caption: caption.text(),
            label: caption.label,
            image,
            maps,
        });
    }
    Err(ScenegenError::Placement {
        attempts: config.max_attempts,
    })
}

/// Split sizes: rounded train and validation shares, remainder to test.
pub fn split_counts(n: usize, fractions: [f64; 3]) -> Result<[usize; 3]> {
    let sum: f64 = fractions.iter().sum();
    if fractions.iter().any(|&f| !(0.0..=1.0).contains(&f)) || (sum - 1.0).abs() > 1e-9 {
        return Err(ScenegenError::Config(format!("split fractions {fractions:?} must be in [0,1] and sum to 1")));
    }
    let train = (fractions[0] * n as f64).round() as usize;
    let val = (fractions[1] * n as f64).round() as usize;
    if train + val > n {
        return Err(ScenegenError::Config(format!("split {fractions:?} overflows {n} samples")));
    }
    Ok([train, val, n - train - val])
}

/// Assigns items to three splits. Items are ordered by stratum and then by
/// a random key, and each position goes to the split furthest behind its
/// quota, so every stratum is spread proportionally and the totals hit
/// `split_counts` exactly.
pub fn stratified_split<K: Ord + Copy>(strata: &[K], fractions: [f64; 3], rng: &mut ChaCha8Rng) -> Result<[Vec<usize>; 3]> {
    let n = strata.len();
    let quota = split_counts(n, fractions)?;
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(rng);
    order.sort_by_key(|&i| strata[i]);
    let mut out: [Vec<usize>; 3] = Default::default();
    for (k, &i) in order.iter().enumerate() {
        let seen = (k + 1) as f64;
        let j = (0..3)
            .map(|j| (j, seen * quota[j] as f64 / n as f64 - out[j].len() as f64))
            .fold((0, f64::NEG_INFINITY), |best, (j, d)| if d > best.1 { (j, d) } else { best })
            .0;
        out[j].push(i);
    }
    for part in out.iter_mut() {
        part.sort_unstable();
    }
    Ok(out)
}

/// `n` samples split by `fractions`, stratified on (meta-category, label).
pub fn build_dataset(n: usize, seed: u64, config: &SceneConfig, fractions: [f64; 3]) -> Result<Dataset> {
    if n < MIN_DATASET {
        return Err(ScenegenError::TooSmall { n, min: MIN_DATASET });
    }
    config.validate()?;
    split_counts(n, fractions)?;
    let samples = (0..n)
        .map(|i| generate_sample(i, seed, config))
        .collect::<Result<Vec<_>>>()?;
    let strata: Vec<(MetaCategory, bool)> = samples.iter().map(|s| (s.relation.meta_category(), s.label)).collect();
    let [train, val, test] = stratified_split(&strata, fractions, &mut sample_rng(seed, 0))?;
    let mut slots: Vec<Option<Sample>> = samples.into_iter().map(Some).collect();
    let mut take = |idx: Vec<usize>| -> Vec<Sample> { idx.into_iter().map(|i| slots[i].take().expect("assigned once")).collect() };
    Ok(Dataset {
        train: take(train),
        val: take(val),
        test: take(test),
    })
}
