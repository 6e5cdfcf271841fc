use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::network::MAP_CHANNELS;
use super::{MapTargets, ModelConfig, ModelError, Outputs, ReconstructionMode, Result, Variant};
use crate::autodiff::{ConvParams, LossBreakdown, Real, Tape, Tensor, Var};

fn to_real<T: Real>(xs: &[f32]) -> Vec<T> {
    xs.iter().map(|&x| T::of(x as f64)).collect()
}

/// Union mask repeated over `channels` planes per sample.
fn replicate_mask<T: Real>(mask: &[f32], batch: usize, channels: usize) -> Vec<T> {
    let plane = mask.len() / batch;
    let mut out = Vec::with_capacity(mask.len() * channels);
    for b in 0..batch {
        for _ in 0..channels {
            out.extend(mask[b * plane..(b + 1) * plane].iter().map(|&m| T::of(m as f64)));
        }
    }
    out
}

/// Fixed random encoder taking a `[B×c×t×t]` map to the patch grid
/// `[B×D×g×g]`; its kernels depend only on the seed.
fn latent_encoder<T: Real>(config: &ModelConfig, map: usize) -> Tensor<T> {
    let f = config.target_map_size / config.grid();
    let c = MAP_CHANNELS[map];
    let shape = [config.embed_dim, c, f, f];
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed ^ (0xE7C0_DE00 + map as u64));
    let dist = Normal::new(0.0, 1.0 / ((c * f * f) as f64).sqrt()).expect("positive std");
    let data = (0..shape.iter().product::<usize>())
        .map(|_| T::of(dist.sample(&mut rng) as f32 as f64))
        .collect();
    Tensor::new(&shape, data).expect("encoder shape")
}

/// `L_total = L_c + λd·L_d + λr·L_r + λe·L_e` on `tape`, returning the
/// scalar to differentiate and its breakdown.
///
/// The baseline trains on `L_c` alone; when maps are available its
/// reconstruction terms are still measured and reported. Terms whose
/// weight is exactly zero are left out of the differentiated sum, so they
/// contribute nothing at all to any gradient.
pub fn compute_total_loss<T: Real>(
    tape: &mut Tape<T>,
    config: &ModelConfig,
    out: &Outputs,
    labels: &[usize],
    targets: Option<&MapTargets>,
) -> Result<(Var, LossBreakdown)> {
    let lc = tape.softmax_cross_entropy(out.logits, labels)?;
    let mut breakdown = LossBreakdown {
        classification: tape.scalar(lc).as_f64(),
        ..LossBreakdown::default()
    };
    let mut total = lc;
    let targets = match (targets, config.variant) {
        (Some(t), _) => t,
        (None, Variant::Baseline) => {
            breakdown.total = breakdown.classification;
            return Ok((total, breakdown));
        }
        (None, v) => return Err(ModelError::MissingTargets(v)),
    };

    let b = labels.len();
    let t = config.target_map_size;
    let masked = config.variant == Variant::MaskedSpatial;
    let weights = config.effective_weights();
    let lambdas = [weights.lambda_depth, weights.lambda_coords, weights.lambda_edges];
    let raw = [&targets.depth, &targets.coords, &targets.edges];
    let mut terms = [0.0f64; 3];

    for m in 0..3 {
        let c = MAP_CHANNELS[m];
        let value = match config.reconstruction {
            ReconstructionMode::RawMaps => {
                let maps = out.maps.ok_or_else(|| ModelError::Shape("decoder outputs were not computed".into()))?;
                let pred = maps[m];
                let shape = tape.shape(pred).to_vec();
                let target = tape.constant(&shape, to_real(raw[m]))?;
                let mask = if masked {
                    Some(Tensor::new(&shape, replicate_mask(&targets.mask, b, c))?)
                } else {
                    None
                };
                if m == 2 {
                    tape.bce(pred, target, mask.as_ref())?
                } else {
                    tape.mse(pred, target, mask.as_ref())?
                }
            }
            ReconstructionMode::LatentMatching => {
                let mut data: Vec<T> = to_real(raw[m]);
                if masked {
                    let mask: Vec<T> = replicate_mask(&targets.mask, b, c);
                    data.iter_mut().zip(&mask).for_each(|(x, &k)| *x *= k);
                }
                let map = tape.constant(&[b, c, t, t], data)?;
                let enc = latent_encoder::<T>(config, m);
                let f = config.target_map_size / config.grid();
                let kernel = tape.leaf(&enc);
                let encoded = tape.conv2d(map, kernel, ConvParams::new(f, 0))?;
                tape.mse(out.grid, encoded, None)?
            }
        };
        terms[m] = tape.scalar(value).as_f64();
        if lambdas[m] > 0.0 {
            let weighted = tape.scale(value, T::of(lambdas[m]))?;
            total = tape.add(total, weighted)?;
        }
    }
    breakdown.depth = terms[0];
    breakdown.coords = terms[1];
    breakdown.edges = terms[2];
    breakdown.total = tape.scalar(total).as_f64();
    Ok((total, breakdown))
}
