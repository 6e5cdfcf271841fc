use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::tokenizer::{Tokenizer, PAD};
use super::{CoordStats, ModelConfig, ModelError, Result};
use crate::autodiff::{ConvParams, Real, Tape, Tensor, Var};

const LN_EPS: f64 = 1e-5;
const EMBED_STD: f64 = 0.02;

enum Init {
    Zeros,
    Ones,
    Normal(f64),
}

struct Builder {
    names: Vec<String>,
    shapes: Vec<Vec<usize>>,
    inits: Vec<Init>,
}

impl Builder {
    fn add(&mut self, name: impl Into<String>, shape: &[usize], init: Init) -> usize {
        self.names.push(name.into());
        self.shapes.push(shape.to_vec());
        self.inits.push(init);
        self.names.len() - 1
    }

    fn linear(&mut self, prefix: &str, fan_in: usize, fan_out: usize) -> (usize, usize) {
        let w = self.add(format!("{prefix}.weight"), &[fan_in, fan_out], Init::Normal(1.0 / (fan_in as f64).sqrt()));
        let b = self.add(format!("{prefix}.bias"), &[fan_out], Init::Zeros);
        (w, b)
    }

    fn norm(&mut self, prefix: &str, dim: usize) -> (usize, usize) {
        let g = self.add(format!("{prefix}.gain"), &[dim], Init::Ones);
        let b = self.add(format!("{prefix}.bias"), &[dim], Init::Zeros);
        (g, b)
    }
}

#[derive(Debug, Clone)]
struct Block {
    ln1: (usize, usize),
    q: (usize, usize),
    k: (usize, usize),
    v: (usize, usize),
    out: (usize, usize),
    ln2: (usize, usize),
    fc1: (usize, usize),
    fc2: (usize, usize),
}

/// Kernel and bias indices of one decoder's stages.
#[derive(Debug, Clone)]
struct Decoder {
    stages: Vec<(usize, usize)>,
}

/// Positions of every parameter tensor in the flat parameter list.
#[derive(Debug, Clone)]
struct Layout {
    token_embedding: usize,
    text_position: usize,
    modality: usize,
    patch: (usize, usize),
    image_position: usize,
    blocks: Vec<Block>,
    final_norm: (usize, usize),
    pooler: (usize, usize),
    classifier: (usize, usize),
    /// Depth, coordinates, edges.
    decoders: [Decoder; 3],
}

pub(crate) const MAP_CHANNELS: [usize; 3] = [1, 3, 1];
pub(crate) const MAP_NAMES: [&str; 3] = ["depth", "coords", "edges"];

fn layout(config: &ModelConfig, vocab_size: usize) -> (Layout, Builder) {
    let d = config.embed_dim;
    let mut b = Builder {
        names: Vec::new(),
        shapes: Vec::new(),
        inits: Vec::new(),
    };
    let token_embedding = b.add("embed.tokens", &[vocab_size, d], Init::Normal(EMBED_STD));
    let text_position = b.add("embed.text_position", &[config.max_text_len, d], Init::Normal(EMBED_STD));
    let modality = b.add("embed.modality", &[2, d], Init::Normal(EMBED_STD));
    let patch = b.linear("embed.patch", config.patch_dim(), d);
    let image_position = b.add("embed.image_position", &[config.num_patches(), d], Init::Normal(EMBED_STD));
    let blocks = (0..config.num_layers)
        .map(|l| {
            let p = format!("block{l}");
            Block {
                ln1: b.norm(&format!("{p}.norm1"), d),
                q: b.linear(&format!("{p}.query"), d, d),
                k: b.linear(&format!("{p}.key"), d, d),
                v: b.linear(&format!("{p}.value"), d, d),
                out: b.linear(&format!("{p}.attn_out"), d, d),
                ln2: b.norm(&format!("{p}.norm2"), d),
                fc1: b.linear(&format!("{p}.mlp_in"), d, config.mlp_dim),
                fc2: b.linear(&format!("{p}.mlp_out"), config.mlp_dim, d),
            }
        })
        .collect();
    let final_norm = b.norm("final_norm", d);
    let pooler = b.linear("pooler", d, d);
    let classifier = b.linear("classifier", d, 2);
    let stages = config.decoder_stages();
    let mut decoders = MAP_CHANNELS.map(|_| Decoder { stages: Vec::new() });
    for (m, dec) in decoders.iter_mut().enumerate() {
        let out_c = MAP_CHANNELS[m];
        let name = MAP_NAMES[m];
        if stages == 0 {
            let k = b.add(format!("decoder.{name}.0.kernel"), &[out_c, d, 1, 1], Init::Normal(1.0 / (d as f64).sqrt()));
            let bias = b.add(format!("decoder.{name}.0.bias"), &[out_c], Init::Zeros);
            dec.stages.push((k, bias));
            continue;
        }
        let mut c_in = d;
        for s in 0..stages {
            let c_out = if s + 1 == stages { out_c } else { config.decoder_channels };
            // transposed convolution kernels are laid out [C_x × C_out × kh × kw]
            let k = b.add(
                format!("decoder.{name}.{s}.kernel"),
                &[c_in, c_out, 2, 2],
                Init::Normal(1.0 / (c_in as f64).sqrt()),
            );
            let bias = b.add(format!("decoder.{name}.{s}.bias"), &[c_out], Init::Zeros);
            dec.stages.push((k, bias));
            c_in = c_out;
        }
    }
    (
        Layout {
            token_embedding,
            text_position,
            modality,
            patch,
            image_position,
            blocks,
            final_norm,
            pooler,
            classifier,
            decoders,
        },
        b,
    )
}

/// Model input for one batch: token ids `[B·T]` and flattened patches
/// `[B·N·P]`.
#[derive(Debug, Clone, PartialEq)]
pub struct BatchInput<T = f32> {
    pub batch: usize,
    pub token_ids: Vec<usize>,
    pub patches: Vec<T>,
}

/// Forward results recorded on a tape.
#[derive(Debug, Clone, Copy)]
pub struct Outputs {
    /// `[B×2]`.
    pub logits: Var,
    /// Patch-grid embeddings `[B×D×g×g]` the decoders start from.
    pub grid: Var,
    /// `[B×t×t]`, `[B×3×t×t]`, `[B×t×t]` (edge probabilities).
    pub maps: Option<[Var; 3]>,
}

/// The vision-language transformer with its three spatial decoders.
#[derive(Debug, Clone)]
pub struct Model<T: Real = f32> {
    pub config: ModelConfig,
    pub tokenizer: Tokenizer,
    names: Vec<String>,
    pub params: Vec<Tensor<T>>,
    pub coord_stats: CoordStats,
    layout: Layout,
}

impl<T: Real> Model<T> {
    /// Freshly initialised weights, deterministic in `config.seed`.
    pub fn new(config: ModelConfig) -> Result<Self> {
        config.validate()?;
        let tokenizer = Tokenizer::new(&config);
        let (layout, builder) = layout(&config, tokenizer.vocab_size());
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let params = builder
            .shapes
            .iter()
            .zip(&builder.inits)
            .map(|(shape, init)| {
                let n = shape.iter().product();
                let data = match init {
                    Init::Zeros => vec![T::zero(); n],
                    Init::Ones => vec![T::one(); n],
                    Init::Normal(std) => {
                        let dist = Normal::new(0.0, *std).expect("positive std");
                        (0..n).map(|_| T::of(dist.sample(&mut rng) as f32 as f64)).collect()
                    }
                };
                Tensor::new(shape, data).expect("layout shape").with_grad()
            })
            .collect();
        Ok(Self {
            config,
            tokenizer,
            names: builder.names,
            params,
            coord_stats: CoordStats::default(),
            layout,
        })
    }

    /// Rebuilds a model around stored parameter values.
    pub fn from_parts(config: ModelConfig, named: Vec<(String, Tensor<T>)>, coord_stats: CoordStats) -> Result<Self> {
        let mut m = Self::new(config)?;
        if named.len() != m.params.len() {
            return Err(ModelError::Format(format!(
                "expected {} parameter tensors, found {}",
                m.params.len(),
                named.len()
            )));
        }
        for ((name, t), (want, slot)) in named.into_iter().zip(m.names.iter().zip(m.params.iter_mut())) {
            if &name != want || t.shape() != slot.shape() {
                return Err(ModelError::Format(format!(
                    "parameter {name} {:?} does not match expected {want} {:?}",
                    t.shape(),
                    slot.shape()
                )));
            }
            *slot = t.with_grad();
        }
        m.coord_stats = coord_stats;
        Ok(m)
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn num_parameters(&self) -> usize {
        self.params.iter().map(Tensor::len).sum()
    }

    pub fn cast<U: Real>(&self) -> Model<U> {
        Model {
            config: self.config.clone(),
            tokenizer: self.tokenizer.clone(),
            names: self.names.clone(),
            params: self.params.iter().map(|p| p.cast::<U>()).collect(),
            coord_stats: self.coord_stats,
            layout: self.layout.clone(),
        }
    }

    /// Indices of parameters that belong to the decoders only.
    pub fn decoder_params(&self) -> Vec<usize> {
        self.layout
            .decoders
            .iter()
            .flat_map(|d| d.stages.iter().flat_map(|&(k, b)| [k, b]))
            .collect()
    }

    /// Indices of the shared trunk: embeddings and transformer blocks.
    pub fn trunk_params(&self) -> Vec<usize> {
        let heads = self.decoder_params();
        let l = &self.layout;
        (0..self.params.len())
            .filter(|i| !heads.contains(i) && ![l.pooler.0, l.pooler.1, l.classifier.0, l.classifier.1].contains(i))
            .collect()
    }

    /// Records every parameter on `tape` in layout order.
    pub fn bind(&self, tape: &mut Tape<T>) -> Vec<Var> {
        self.params.iter().map(|p| tape.leaf(p)).collect()
    }

    pub fn zero_grad(&mut self) {
        self.params.iter_mut().for_each(Tensor::zero_grad);
    }

    /// Copies gradients of the bound parameters from `tape` into `params`.
    pub fn collect_grads(&mut self, tape: &Tape<T>, vars: &[Var]) -> Result<()> {
        for (p, &v) in self.params.iter_mut().zip(vars) {
            tape.accumulate_grad(v, p)?;
        }
        Ok(())
    }

    /// Runs the network. Decoders are skipped when `with_maps` is false,
    /// which is all inference needs.
    pub fn forward(&self, tape: &mut Tape<T>, vars: &[Var], input: &BatchInput<T>, with_maps: bool) -> Result<Outputs> {
        let c = &self.config;
        let l = &self.layout;
        let (b, t, n, d) = (input.batch, c.max_text_len, c.num_patches(), c.embed_dim);
        let (heads, dh, seq) = (c.num_heads, c.head_dim(), c.seq_len());
        if b == 0 || input.token_ids.len() != b * t || input.patches.len() != b * n * c.patch_dim() {
            return Err(ModelError::Shape(format!(
                "batch {b} needs {} token ids and {} patch values, got {} and {}",
                b * t,
                b * n * c.patch_dim(),
                input.token_ids.len(),
                input.patches.len()
            )));
        }
        let vocab = self.params[l.token_embedding].shape()[0];
        if let Some(&bad) = input.token_ids.iter().find(|&&i| i >= vocab) {
            return Err(ModelError::Shape(format!("token id {bad} outside vocabulary of {vocab}")));
        }

        let text_pos: Vec<usize> = (0..b).flat_map(|_| 0..t).collect();
        let image_pos: Vec<usize> = (0..b).flat_map(|_| 0..n).collect();
        let tokens = tape.gather_rows(vars[l.token_embedding], &input.token_ids)?;
        let tp = tape.gather_rows(vars[l.text_position], &text_pos)?;
        let tm = tape.gather_rows(vars[l.modality], &vec![0; b * t])?;
        let text = tape.add(tokens, tp)?;
        let text = tape.add(text, tm)?;

        let patches = tape.constant(&[b * n, c.patch_dim()], input.patches.clone())?;
        let img = tape.matmul(patches, vars[l.patch.0])?;
        let img = tape.add_row_bias(img, vars[l.patch.1])?;
        let ip = tape.gather_rows(vars[l.image_position], &image_pos)?;
        let im = tape.gather_rows(vars[l.modality], &vec![1; b * n])?;
        let img = tape.add(img, ip)?;
        let img = tape.add(img, im)?;

        // interleave per sample: text rows then patch rows
        let both = tape.concat_rows(&[text, img])?;
        let order: Vec<usize> = (0..b)
            .flat_map(|s| (s * t..(s + 1) * t).chain(b * t + s * n..b * t + (s + 1) * n))
            .collect();
        let mut x = tape.gather_rows(both, &order)?;

        let mut key_mask = Vec::with_capacity(b * heads * seq);
        for s in 0..b {
            for _ in 0..heads {
                key_mask.extend(input.token_ids[s * t..(s + 1) * t].iter().map(|&id| id != PAD));
                key_mask.extend(std::iter::repeat(true).take(n));
            }
        }

        let eps = T::of(LN_EPS);
        for blk in &l.blocks {
            let h = tape.layer_norm(x, vars[blk.ln1.0], vars[blk.ln1.1], eps)?;
            let split = |tape: &mut Tape<T>, (w, bias): (usize, usize)| -> Result<Var> {
                let y = tape.matmul(h, vars[w])?;
                let y = tape.add_row_bias(y, vars[bias])?;
                let y = tape.reshape(y, &[b, seq, heads, dh])?;
                let y = tape.permute(y, &[0, 2, 1, 3])?;
                Ok(tape.reshape(y, &[b * heads, seq, dh])?)
            };
            let q = split(tape, blk.q)?;
            let k = split(tape, blk.k)?;
            let v = split(tape, blk.v)?;
            let a = tape.softmax_attention(q, k, v, Some(&key_mask))?;
            let a = tape.reshape(a, &[b, heads, seq, dh])?;
            let a = tape.permute(a, &[0, 2, 1, 3])?;
            let a = tape.reshape(a, &[b * seq, d])?;
            let a = tape.matmul(a, vars[blk.out.0])?;
            let a = tape.add_row_bias(a, vars[blk.out.1])?;
            x = tape.add(x, a)?;

            let h = tape.layer_norm(x, vars[blk.ln2.0], vars[blk.ln2.1], eps)?;
            let h = tape.matmul(h, vars[blk.fc1.0])?;
            let h = tape.add_row_bias(h, vars[blk.fc1.1])?;
            let h = tape.relu(h)?;
            let h = tape.matmul(h, vars[blk.fc2.0])?;
            let h = tape.add_row_bias(h, vars[blk.fc2.1])?;
            x = tape.add(x, h)?;
        }
        let x = tape.layer_norm(x, vars[l.final_norm.0], vars[l.final_norm.1], eps)?;

        let cls_rows: Vec<usize> = (0..b).map(|s| s * seq).collect();
        let cls = tape.gather_rows(x, &cls_rows)?;
        let pooled = tape.matmul(cls, vars[l.pooler.0])?;
        let pooled = tape.add_row_bias(pooled, vars[l.pooler.1])?;
        let pooled = tape.tanh(pooled)?;
        let logits = tape.matmul(pooled, vars[l.classifier.0])?;
        let logits = tape.add_row_bias(logits, vars[l.classifier.1])?;

        let g = c.grid();
        let patch_rows: Vec<usize> = (0..b).flat_map(|s| s * seq + t..(s + 1) * seq).collect();
        let grid = tape.gather_rows(x, &patch_rows)?;
        let grid = tape.reshape(grid, &[b, g, g, d])?;
        let grid = tape.permute(grid, &[0, 3, 1, 2])?;

        let maps = if with_maps {
            let tt = c.target_map_size;
            let mut out = [grid; 3];
            for (m, dec) in l.decoders.iter().enumerate() {
                let mut y = grid;
                let last = dec.stages.len() - 1;
                for (s, &(k, bias)) in dec.stages.iter().enumerate() {
                    y = if c.decoder_stages() == 0 {
                        tape.conv2d(y, vars[k], ConvParams::default())?
                    } else {
                        tape.conv_transpose2d(y, vars[k], ConvParams::new(2, 0))?
                    };
                    y = tape.add_channel_bias(y, vars[bias])?;
                    if s < last {
                        y = tape.relu(y)?;
                    }
                }
                out[m] = match m {
                    1 => y,
                    2 => {
                        let y = tape.sigmoid(y)?;
                        tape.reshape(y, &[b, tt, tt])?
                    }
                    _ => tape.reshape(y, &[b, tt, tt])?,
                };
            }
            Some(out)
        } else {
            None
        };
        Ok(Outputs { logits, grid, maps })
    }
}
