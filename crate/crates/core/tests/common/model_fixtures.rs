//! Micro-scale model fixtures: random 8×8 examples with maps and a
//! whole-model finite-difference check.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use spatial_mtl::autodiff::{LossWeights, Real, Tape};
use spatial_mtl::ensemble::MetaCategory;
use spatial_mtl::featex::Raster;
use spatial_mtl::model::{assemble, compute_total_loss, Model, ModelConfig, Prepared, ReconstructionMode, Variant};
use spatial_mtl::scenegen::{Example, SpatialMaps};

use super::relative_error;

pub const MICRO_WORDS: [&str; 3] = ["red", "left", "cube"];

pub fn micro_config(variant: Variant, seed: u64) -> ModelConfig {
    ModelConfig {
        image_size: 8,
        patch_size: 4,
        embed_dim: 4,
        num_layers: 1,
        num_heads: 2,
        mlp_dim: 4,
        decoder_channels: 2,
        vocab: MICRO_WORDS.iter().map(|s| s.to_string()).collect(),
        max_text_len: 4,
        target_map_size: 4,
        variant,
        loss_weights: LossWeights {
            lambda_depth: 0.7,
            lambda_coords: 0.3,
            lambda_edges: 0.5,
        },
        reconstruction: ReconstructionMode::RawMaps,
        strict_vocab: true,
        seed,
    }
}

fn binary(rng: &mut ChaCha8Rng, n: usize, p: f64) -> Vec<f32> {
    (0..n).map(|_| if rng.gen_bool(p) { 1.0 } else { 0.0 }).collect()
}

/// Random examples of side `size` with every map present.
pub fn random_examples(n: usize, size: usize, seed: u64) -> Vec<Example> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let plane = size * size;
    (0..n)
        .map(|i| {
            let words = rng.gen_range(0..4);
            let caption = (0..words)
                .map(|_| MICRO_WORDS[rng.gen_range(0..MICRO_WORDS.len())])
                .collect::<Vec<_>>()
                .join(" ");
            let image = Raster::new(size, size, 3, (0..plane * 3).map(|_| rng.gen::<f32>()).collect()).unwrap();
            let depth = Raster::new(size, size, 1, (0..plane).map(|_| rng.gen_range(2.0..9.0)).collect()).unwrap();
            let coords = Raster::new(size, size, 3, (0..plane * 3).map(|_| rng.gen_range(-3.0..3.0)).collect()).unwrap();
            let edges = Raster::new(size, size, 1, binary(&mut rng, plane, 0.3)).unwrap();
            let masks = vec![Raster::new(size, size, 1, binary(&mut rng, plane, 0.2)).unwrap()];
            Example {
                id: format!("m{i:03}"),
                caption,
                label: rng.gen_bool(0.5),
                relation: "left of".into(),
                meta_category: MetaCategory::Projective,
                image,
                maps: Some(SpatialMaps {
                    depth,
                    coords,
                    edges,
                    masks,
                }),
            }
        })
        .collect()
}

/// The model with every parameter jittered so gains and biases are
/// generic too.
pub fn jittered_model(cfg: ModelConfig, seed: u64) -> Model<f64> {
    let mut m = Model::<f64>::new(cfg).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xA5A5);
    for p in &mut m.params {
        for x in p.data_mut() {
            *x += rng.gen_range(-0.3..0.3);
        }
    }
    m
}

pub fn total_loss<T: Real>(model: &Model<T>, items: &[Prepared]) -> f64 {
    let refs: Vec<&Prepared> = items.iter().collect();
    let batch = assemble::<T>(&refs);
    let mut tape = Tape::new();
    let vars = model.bind(&mut tape);
    let out = model.forward(&mut tape, &vars, &batch.input, true).unwrap();
    let (loss, _) = compute_total_loss(&mut tape, &model.config, &out, &batch.labels, batch.targets.as_ref()).unwrap();
    tape.scalar(loss).as_f64()
}

pub fn model_grads<T: Real>(model: &Model<T>, items: &[Prepared]) -> Vec<f64> {
    let refs: Vec<&Prepared> = items.iter().collect();
    let batch = assemble::<T>(&refs);
    let mut tape = Tape::new();
    let vars = model.bind(&mut tape);
    let out = model.forward(&mut tape, &vars, &batch.input, true).unwrap();
    let (loss, _) = compute_total_loss(&mut tape, &model.config, &out, &batch.labels, batch.targets.as_ref()).unwrap();
    tape.backward(loss).unwrap();
    vars.iter()
        .zip(&model.params)
        .flat_map(|(&v, p)| match tape.grad(v) {
            Some(g) => g.iter().map(|x| x.as_f64()).collect::<Vec<_>>(),
            None => vec![0.0; p.len()],
        })
        .collect()
}

pub struct ModelCheck {
    /// Relative error against central differences over smooth coordinates.
    pub e64: f64,
    pub e32: f64,
    /// Coordinates with a ReLU kink within 1e-7, where the two one-sided
    /// slopes differ and no central difference is meaningful.
    pub kinks: usize,
    /// Every kink coordinate matched one of its one-sided slopes.
    pub kinks_ok: bool,
}

impl ModelCheck {
    pub fn passes(&self) -> bool {
        self.e64 < 1e-6 && self.e32 < 1e-3 && self.kinks_ok
    }
}

/// Whole-model loss gradient against finite differences over every
/// parameter, in 64-bit and 32-bit mode.
///
/// Central differences use h = 1e-5. Where the one-sided slopes disagree
/// (high curvature, or a ReLU kink within h) the coordinate is redone at
/// 1e-7: a smooth gap shrinks with the step, a kink's does not.
pub fn check_model(variant: Variant, seed: u64) -> ModelCheck {
    let model = jittered_model(micro_config(variant, seed), seed);
    let items = model.prepare(&random_examples(3, 8, seed)).unwrap();
    let g64 = model_grads(&model, &items);
    let m32 = model.cast::<f32>();
    let g32 = model_grads(&m32, &m32.prepare(&random_examples(3, 8, seed)).unwrap());

    let f0 = total_loss(&model, &items);
    let mut work = model.clone();
    let (mut fd, mut a64, mut a32) = (Vec::new(), Vec::new(), Vec::new());
    let (mut kinks, mut kinks_ok) = (0, true);
    let mut k = 0;
    for i in 0..work.params.len() {
        for j in 0..work.params[i].len() {
            let orig = work.params[i].data()[j];
            let mut slopes = |h: f64| {
                work.params[i].data_mut()[j] = orig + h;
                let plus = total_loss(&work, &items);
                work.params[i].data_mut()[j] = orig - h;
                let minus = total_loss(&work, &items);
                work.params[i].data_mut()[j] = orig;
                let (right, left) = ((plus - f0) / h, (f0 - minus) / h);
                let central = (plus - minus) / (2.0 * h);
                (central, (right - left).abs() > 1e-3 * (1.0 + central.abs()), right, left)
            };
            let (mut central, split, ..) = slopes(1e-5);
            if split {
                let (c, split, right, left) = slopes(1e-7);
                if split {
                    kinks += 1;
                    let near = |g: f64| [right, left].iter().any(|d| (g - d).abs() < 1e-3 * (1.0 + d.abs()));
                    kinks_ok &= near(g64[k]) && near(g32[k]);
                    k += 1;
                    continue;
                }
                central = c;
            }
            fd.push(central);
            a64.push(g64[k]);
            a32.push(g32[k]);
            k += 1;
        }
    }
    ModelCheck {
        e64: relative_error(&a64, &fd),
        e32: relative_error(&a32, &fd),
        kinks,
        kinks_ok,
    }
}
