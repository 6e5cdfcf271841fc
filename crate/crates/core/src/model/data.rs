use serde::{Deserialize, Serialize};

use super::{BatchInput, Model, ModelError, Result};
use crate::autodiff::Real;
use crate::ensemble::MetaCategory;
use crate::featex::{downsample_map, normalize_depth, Pooling, Raster};
use crate::scenegen::{Example, SpatialMaps};

/// Per-channel statistics used to standardise coordinate targets.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CoordStats {
    pub mean: [f32; 3],
    pub std: [f32; 3],
}

impl Default for CoordStats {
    fn default() -> Self {
        Self {
            mean: [0.0; 3],
            std: [1.0; 3],
        }
    }
}

impl CoordStats {
    /// Mean and population standard deviation of the pooled coordinate
    /// maps of `examples`. Examples without maps are skipped; a channel
    /// with no spread keeps unit scale.
    pub fn fit(examples: &[Example], target: usize) -> Result<Self> {
        let mut sum = [0.0f64; 3];
        let mut sq = [0.0f64; 3];
        let mut count = 0usize;
        for e in examples {
            let Some(maps) = &e.maps else { continue };
            let pooled = downsample_map(&maps.coords, target, target, Pooling::Mean)?;
            for px in pooled.data().chunks(3) {
                for c in 0..3 {
                    let x = px[c] as f64;
                    sum[c] += x;
                    sq[c] += x * x;
                }
            }
            count += target * target;
        }
        if count == 0 {
            return Ok(Self::default());
        }
        let mut stats = Self::default();
        for c in 0..3 {
            let mean = sum[c] / count as f64;
            let var = (sq[c] / count as f64 - mean * mean).max(0.0);
            stats.mean[c] = mean as f32;
            stats.std[c] = if var > 1e-12 { var.sqrt() as f32 } else { 1.0 };
        }
        Ok(stats)
    }
}

/// Reconstruction targets at `target_map_size`, channel-major.
#[derive(Debug, Clone, PartialEq)]
pub struct MapTargets {
    /// Min–max normalised depth, mean pooled.
    pub depth: Vec<f32>,
    /// Standardised `(x, y, z)` planes, mean pooled.
    pub coords: Vec<f32>,
    /// Edge occupancy, max pooled.
    pub edges: Vec<f32>,
    /// Union of the object masks, max pooled.
    pub mask: Vec<f32>,
}

impl MapTargets {
    pub fn from_maps(maps: &SpatialMaps, target: usize, stats: &CoordStats) -> Result<Self> {
        let depth = downsample_map(&normalize_depth(&maps.depth), target, target, Pooling::Mean)?;
        let coords = downsample_map(&maps.coords, target, target, Pooling::Mean)?;
        let edges = downsample_map(&maps.edges, target, target, Pooling::Max)?;
        let (h, w) = (maps.depth.height(), maps.depth.width());
        let mut union = Raster::zeros(h, w, 1);
        for m in &maps.masks {
            if m.height() != h || m.width() != w || m.channels() != 1 {
                return Err(ModelError::Shape("object mask does not match the depth map".into()));
            }
            for (u, &x) in union.data_mut().iter_mut().zip(m.data()) {
                if x != 0.0 {
                    *u = 1.0;
                }
            }
        }
        let mask = downsample_map(&union, target, target, Pooling::Max)?;
        let mut coords = coords.to_planar();
        let plane = target * target;
        for c in 0..3 {
            for x in &mut coords[c * plane..(c + 1) * plane] {
                *x = (*x - stats.mean[c]) / stats.std[c];
            }
        }
        Ok(Self {
            depth: depth.into_data(),
            coords,
            edges: edges.into_data(),
            mask: mask.into_data(),
        })
    }
}

/// An example converted to model inputs once, up front.
#[derive(Debug, Clone, PartialEq)]
pub struct Prepared {
    pub id: String,
    pub label: bool,
    pub relation: String,
    pub meta_category: MetaCategory,
    pub token_ids: Vec<usize>,
    pub patches: Vec<f32>,
    pub targets: Option<MapTargets>,
}

/// Splits an `h×w×3` image into row-major patches, each flattened in
/// `(dy, dx, channel)` order.
pub fn patchify(image: &Raster, patch: usize) -> Vec<f32> {
    let g = image.height() / patch;
    let mut out = Vec::with_capacity(image.data().len());
    for py in 0..g {
        for px in 0..g {
            for dy in 0..patch {
                let v = py * patch + dy;
                let start = (v * image.width() + px * patch) * 3;
                out.extend_from_slice(&image.data()[start..start + patch * 3]);
            }
        }
    }
    out
}

impl<T: Real> Model<T> {
    /// Tokenises, patchifies and builds targets for every example.
    pub fn prepare(&self, examples: &[Example]) -> Result<Vec<Prepared>> {
        let c = &self.config;
        examples
            .iter()
            .map(|e| {
                let img = &e.image;
                if img.height() != c.image_size || img.width() != c.image_size || img.channels() != 3 {
                    return Err(ModelError::Shape(format!(
                        "example {} has a {}×{}×{} image, model expects {s}×{s}×3",
                        e.id,
                        img.height(),
                        img.width(),
                        img.channels(),
                        s = c.image_size
                    )));
                }
                let token_ids = self.tokenizer.tokenize(&e.caption).map_err(|err| match err {
                    ModelError::Vocabulary(w) => ModelError::Vocabulary(format!("{w} (example {})", e.id)),
                    other => other,
                })?;
                let targets = match &e.maps {
                    Some(m) => Some(MapTargets::from_maps(m, c.target_map_size, &self.coord_stats)?),
                    None => None,
                };
                Ok(Prepared {
                    id: e.id.clone(),
                    label: e.label,
                    relation: e.relation.clone(),
                    meta_category: e.meta_category,
                    token_ids,
                    patches: patchify(img, c.patch_size),
                    targets,
                })
            })
            .collect()
    }
}

/// Stacked inputs, labels and (when every member has them) targets.
pub struct Batch<T> {
    pub input: BatchInput<T>,
    pub labels: Vec<usize>,
    pub targets: Option<MapTargets>,
}

pub fn assemble<T: Real>(items: &[&Prepared]) -> Batch<T> {
    let mut token_ids = Vec::new();
    let mut patches = Vec::new();
    let mut labels = Vec::new();
    for p in items {
        token_ids.extend_from_slice(&p.token_ids);
        patches.extend(p.patches.iter().map(|&x| T::of(x as f64)));
        labels.push(p.label as usize);
    }
    let targets = if items.iter().all(|p| p.targets.is_some()) {
        let mut t = MapTargets {
            depth: Vec::new(),
            coords: Vec::new(),
            edges: Vec::new(),
            mask: Vec::new(),
        };
        for p in items {
            let s = p.targets.as_ref().expect("checked");
            t.depth.extend_from_slice(&s.depth);
            t.coords.extend_from_slice(&s.coords);
            t.edges.extend_from_slice(&s.edges);
            t.mask.extend_from_slice(&s.mask);
        }
        Some(t)
    } else {
        None
    };
    Batch {
        input: BatchInput {
            batch: items.len(),
            token_ids,
            patches,
        },
        labels,
        targets,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn patch_order_is_row_major() {
        let data: Vec<f32> = (0..4 * 4 * 3).map(|i| i as f32).collect();
        let img = Raster::new(4, 4, 3, data).unwrap();
        let p = patchify(&img, 2);
        assert_eq!(p.len(), 48);
        // second patch starts at pixel (0, 2)
        assert_eq!(p[12], img.at(0, 2, 0));
        // its third row-chunk is pixel (1, 2)
        assert_eq!(p[18], img.at(1, 2, 0));
        // third patch starts at pixel (2, 0)
        assert_eq!(p[24], img.at(2, 0, 0));
    }

    #[test]
    fn standardised_coords_have_unit_spread() {
        let coords: Vec<f32> = (0..8 * 8 * 3).map(|i| (i % 7) as f32 * 0.5 + (i % 3) as f32).collect();
        let maps = SpatialMaps {
            depth: Raster::filled(8, 8, 1, 2.0),
            coords: Raster::new(8, 8, 3, coords).unwrap(),
            edges: Raster::zeros(8, 8, 1),
            masks: vec![],
        };
        let ex = Example {
            id: "a".into(),
            caption: String::new(),
            label: true,
            relation: "left of".into(),
            meta_category: MetaCategory::Projective,
            image: Raster::zeros(8, 8, 3),
            maps: Some(maps.clone()),
        };
        let stats = CoordStats::fit(&[ex], 4).unwrap();
        let t = MapTargets::from_maps(&maps, 4, &stats).unwrap();
        for c in 0..3 {
            let plane = &t.coords[c * 16..(c + 1) * 16];
            let mean = plane.iter().map(|&x| x as f64).sum::<f64>() / 16.0;
            let var = plane.iter().map(|&x| (x as f64 - mean).powi(2)).sum::<f64>() / 16.0;
            assert!(mean.abs() < 1e-5, "{mean}");
            assert!((var - 1.0).abs() < 1e-4, "{var}");
        }
        assert!(t.mask.iter().all(|&m| m == 0.0));
        assert!(t.depth.iter().all(|&d| d == 0.0));
    }
}
