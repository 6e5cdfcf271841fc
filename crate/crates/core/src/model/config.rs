use serde::{Deserialize, Serialize};

use super::{ModelError, Result};
use crate::autodiff::LossWeights;
use crate::scenegen::{vocabulary, SceneConfig};

/// Which auxiliary losses take part in training.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    /// Classification loss only; decoders still run but are not trained.
    Baseline,
    /// Classification plus unmasked depth, coordinate and edge reconstruction.
    Spatial,
    /// Reconstruction losses restricted to the union of the object masks.
    MaskedSpatial,
}

impl Variant {
    pub const ALL: [Variant; 3] = [Variant::Baseline, Variant::Spatial, Variant::MaskedSpatial];

    pub fn name(self) -> &'static str {
        match self {
            Variant::Baseline => "baseline",
            Variant::Spatial => "spatial",
            Variant::MaskedSpatial => "masked_spatial",
        }
    }

    pub fn uses_maps(self) -> bool {
        self != Variant::Baseline
    }
}

impl std::fmt::Display for Variant {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for Variant {
    type Err = ModelError;

    fn from_str(s: &str) -> Result<Self> {
        Variant::ALL
            .into_iter()
            .find(|v| v.name() == s.replace('-', "_"))
            .ok_or_else(|| ModelError::Config(format!("unknown variant {s:?}")))
    }
}

/// How the reconstruction losses compare model output with the maps.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReconstructionMode {
    /// Decoder output against the downsampled maps.
    #[default]
    RawMaps,
    /// Patch-grid embeddings against a fixed random convolutional encoding
    /// of the maps.
    LatentMatching,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub image_size: usize,
    pub patch_size: usize,
    pub embed_dim: usize,
    pub num_layers: usize,
    pub num_heads: usize,
    pub mlp_dim: usize,
    pub decoder_channels: usize,
    /// Closed word list; the special tokens are added by the tokenizer.
    pub vocab: Vec<String>,
    /// Token slots including the leading `[CLS]`.
    pub max_text_len: usize,
    pub target_map_size: usize,
    pub variant: Variant,
    pub loss_weights: LossWeights,
    #[serde(default)]
    pub reconstruction: ReconstructionMode,
    /// Reject captions with out-of-vocabulary words instead of mapping
    /// them to `[UNK]`.
    #[serde(default)]
    pub strict_vocab: bool,
    pub seed: u64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            image_size: 64,
            patch_size: 8,
            embed_dim: 128,
            num_layers: 4,
            num_heads: 4,
            mlp_dim: 256,
            decoder_channels: 32,
            vocab: vocabulary(&SceneConfig::default()),
            max_text_len: 12,
            target_map_size: 32,
            variant: Variant::Spatial,
            loss_weights: LossWeights::default(),
            reconstruction: ReconstructionMode::RawMaps,
            strict_vocab: true,
            seed: 0,
        }
    }
}

impl ModelConfig {
    /// The scale used by the end-to-end runs: one-core training of three
    /// variants for fifteen epochs fits in a few minutes.
    pub fn desk() -> Self {
        Self {
            patch_size: 16,
            embed_dim: 64,
            num_layers: 2,
            num_heads: 4,
            mlp_dim: 128,
            decoder_channels: 16,
            target_map_size: 16,
            ..Self::default()
        }
    }

    pub fn with_variant(mut self, variant: Variant) -> Self {
        self.variant = variant;
        self
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn grid(&self) -> usize {
        self.image_size / self.patch_size
    }

    pub fn num_patches(&self) -> usize {
        self.grid() * self.grid()
    }

    pub fn patch_dim(&self) -> usize {
        3 * self.patch_size * self.patch_size
    }

    pub fn seq_len(&self) -> usize {
        self.max_text_len + self.num_patches()
    }

    pub fn head_dim(&self) -> usize {
        self.embed_dim / self.num_heads
    }

    /// Number of stride-2 upsampling stages from the patch grid to the
    /// target maps.
    pub fn decoder_stages(&self) -> usize {
        (self.target_map_size / self.grid()).trailing_zeros() as usize
    }

    /// Loss weights actually applied: the baseline trains on
    /// classification alone.
    pub fn effective_weights(&self) -> LossWeights {
        match self.variant {
            Variant::Baseline => LossWeights::zero(),
            _ => self.loss_weights,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(ModelError::Config(msg));
        if self.image_size == 0 || self.patch_size == 0 || self.image_size % self.patch_size != 0 {
            return bad(format!(
                "image_size {} must be a positive multiple of patch_size {}",
                self.image_size, self.patch_size
            ));
        }
        if self.embed_dim == 0 || self.num_heads == 0 || self.embed_dim % self.num_heads != 0 {
            return bad(format!(
                "embed_dim {} must be a positive multiple of num_heads {}",
                self.embed_dim, self.num_heads
            ));
        }
        if self.target_map_size == 0 || self.image_size % self.target_map_size != 0 {
            return bad(format!(
                "target_map_size {} must divide image_size {}",
                self.target_map_size, self.image_size
            ));
        }
        let g = self.grid();
        let ratio = self.target_map_size / g;
        if self.target_map_size % g != 0 || !ratio.is_power_of_two() {
            return bad(format!(
                "target_map_size {} must be the patch grid {g} times a power of two",
                self.target_map_size
            ));
        }
        if self.max_text_len < 1 || self.mlp_dim == 0 || self.decoder_channels == 0 || self.num_layers == 0 {
            return bad("max_text_len, mlp_dim, decoder_channels and num_layers must be positive".into());
        }
        if !self.loss_weights.is_valid() {
            return bad(format!("loss weights must be finite and non-negative: {:?}", self.loss_weights));
        }
        let mut seen = std::collections::BTreeSet::new();
        for w in &self.vocab {
            if w.is_empty() || w.contains(char::is_whitespace) || w.starts_with('[') || !seen.insert(w) {
                return bad(format!("invalid or duplicate vocabulary entry {w:?}"));
            }
        }
        Ok(())
    }
}
