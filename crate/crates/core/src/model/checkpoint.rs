//! Checkpoint file: one JSON header line, then little-endian `f32` blocks
//! in manifest order. Offsets in the manifest count bytes from the start
//! of the block section.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{CoordStats, Model, ModelConfig, ModelError, Result};
use crate::autodiff::{AdamState, Tensor};

const FORMAT: &str = "spatial-mtl-checkpoint";
const VERSION: u32 = 1;

/// A trained model together with the state needed to resume training.
#[derive(Debug, Clone)]
pub struct Checkpoint {
    pub model: Model,
    pub optimizer: Option<AdamState>,
    pub epoch: usize,
    /// Position of the shuffling generator.
    pub rng_word_pos: u128,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Entry {
    name: String,
    shape: Vec<usize>,
    offset: usize,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Header {
    format: String,
    version: u32,
    config: ModelConfig,
    coord_stats: CoordStats,
    epoch: usize,
    seed: u64,
    /// Decimal string: JSON numbers cannot hold a full `u128`.
    rng_word_pos: String,
    optimizer_step: Option<u64>,
    tensors: Vec<Entry>,
}

const M_PREFIX: &str = "adam.m.";
const V_PREFIX: &str = "adam.v.";

impl Checkpoint {
    pub fn to_bytes(&self) -> Vec<u8> {
        let m = &self.model;
        let mut blocks: Vec<(String, &[usize], &[f32])> = m
            .names()
            .iter()
            .zip(&m.params)
            .map(|(n, p)| (n.clone(), p.shape(), p.data()))
            .collect();
        if let Some(opt) = &self.optimizer {
            for (prefix, moments) in [(M_PREFIX, &opt.m), (V_PREFIX, &opt.v)] {
                for ((n, p), buf) in m.names().iter().zip(&m.params).zip(moments) {
                    blocks.push((format!("{prefix}{n}"), p.shape(), buf.as_slice()));
                }
            }
        }
        let mut offset = 0;
        let tensors = blocks
            .iter()
            .map(|(name, shape, data)| {
                let e = Entry {
                    name: name.clone(),
                    shape: shape.to_vec(),
                    offset,
                };
                offset += data.len() * 4;
                e
            })
            .collect();
        let header = Header {
            format: FORMAT.into(),
            version: VERSION,
            config: m.config.clone(),
            coord_stats: m.coord_stats,
            epoch: self.epoch,
            seed: m.config.seed,
            rng_word_pos: self.rng_word_pos.to_string(),
            optimizer_step: self.optimizer.as_ref().map(|o| o.step),
            tensors,
        };
        let mut out = serde_json::to_vec(&header).expect("header serialises");
        out.push(b'\n');
        for (_, _, data) in &blocks {
            for x in *data {
                out.extend_from_slice(&x.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let bad = |msg: String| ModelError::Format(msg);
        let nl = bytes
            .iter()
            .position(|&b| b == b'\n')
            .ok_or_else(|| bad("missing header line".into()))?;
        let header: Header = serde_json::from_slice(&bytes[..nl]).map_err(|e| bad(format!("header: {e}")))?;
        if header.format != FORMAT || header.version != VERSION {
            return Err(bad(format!("unsupported format {} v{}", header.format, header.version)));
        }
        if header.seed != header.config.seed {
            return Err(bad("header seed disagrees with config".into()));
        }
        let body = &bytes[nl + 1..];
        let mut expected = 0;
        let mut tensors = Vec::with_capacity(header.tensors.len());
        for e in &header.tensors {
            let n: usize = e.shape.iter().product();
            if e.offset != expected || e.offset + n * 4 > body.len() {
                return Err(bad(format!("tensor {} has offset {} outside the data", e.name, e.offset)));
            }
            let data: Vec<f32> = body[e.offset..e.offset + n * 4]
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
                .collect();
            expected = e.offset + n * 4;
            tensors.push((e.name.clone(), Tensor::new(&e.shape, data)?));
        }
        if expected != body.len() {
            return Err(bad(format!("{} trailing bytes after the last tensor", body.len() - expected)));
        }
        let n_params = tensors.iter().take_while(|(n, _)| !n.starts_with(M_PREFIX)).count();
        let moments = tensors.split_off(n_params);
        let model = Model::from_parts(header.config, tensors, header.coord_stats)?;
        let optimizer = match header.optimizer_step {
            None if moments.is_empty() => None,
            Some(step) if moments.len() == 2 * n_params => {
                let (m, v) = moments.split_at(n_params);
                for (i, name) in model.names().iter().enumerate() {
                    if m[i].0 != format!("{M_PREFIX}{name}") || v[i].0 != format!("{V_PREFIX}{name}") {
                        return Err(bad(format!("optimizer moments out of order at {name}")));
                    }
                }
                Some(AdamState {
                    step,
                    m: m.iter().map(|(_, t)| t.data().to_vec()).collect(),
                    v: v.iter().map(|(_, t)| t.data().to_vec()).collect(),
                })
            }
            _ => return Err(bad("optimizer state does not match the parameters".into())),
        };
        let rng_word_pos = header
            .rng_word_pos
            .parse()
            .map_err(|_| bad(format!("invalid rng position {:?}", header.rng_word_pos)))?;
        Ok(Self {
            model,
            optimizer,
            epoch: header.epoch,
            rng_word_pos,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        crate::write_atomic(path, &self.to_bytes()).map_err(|source| ModelError::Io {
            path: path.display().to_string(),
            source,
        })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|source| ModelError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::from_bytes(&bytes)
    }
}
