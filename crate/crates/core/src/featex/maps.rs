use serde::{Deserialize, Serialize};

use super::{FeatexError, Raster, Result};

/// Min–max rescale to `[0, 1]`; a constant map becomes all zeros.
pub fn normalize_depth(depth: &Raster) -> Raster {
    let (min, max) = depth
        .data()
        .iter()
        .fold((f32::INFINITY, f32::NEG_INFINITY), |(lo, hi), &d| (lo.min(d), hi.max(d)));
    let range = max - min;
    let data = if range > 0.0 {
        depth.data().iter().map(|&d| (d - min) / range).collect()
    } else {
        vec![0.0; depth.data().len()]
    };
    Raster::new(depth.height(), depth.width(), depth.channels(), data).expect("same shape")
}

/// Nearest-neighbour resize; binary inputs stay binary.
pub fn resize_nearest(src: &Raster, height: usize, width: usize) -> Raster {
    if src.height() == height && src.width() == width {
        return src.clone();
    }
    let c = src.channels();
    let mut out = Raster::zeros(height, width, c);
    for v in 0..height {
        let sv = v * src.height() / height;
        for u in 0..width {
            let su = u * src.width() / width;
            for ch in 0..c {
                out.set(v, u, ch, src.at(sv, su, ch));
            }
        }
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MaskMode {
    /// OR all masks, then apply once.
    Union,
    /// One masked copy per mask.
    PerObject,
}

/// Multiplies every channel of `map` by binary masks. Masks at another
/// resolution are resized with nearest-neighbour sampling first.
pub fn apply_masks(map: &Raster, masks: &[Raster], mode: MaskMode) -> Result<Vec<Raster>> {
    if masks.is_empty() {
        return Err(FeatexError::EmptyMasks);
    }
    let resized: Vec<Raster> = masks
        .iter()
        .map(|m| {
            if m.channels() != 1 {
                return Err(FeatexError::Shape(format!("mask has {} channels", m.channels())));
            }
            Ok(resize_nearest(m, map.height(), map.width()))
        })
        .collect::<Result<_>>()?;
    let apply = |mask: &Raster| -> Raster {
        let c = map.channels();
        let data = map
            .data()
            .iter()
            .enumerate()
            .map(|(i, &x)| x * mask.data()[i / c])
            .collect();
        Raster::new(map.height(), map.width(), c, data).expect("same shape")
    };
    Ok(match mode {
        MaskMode::Union => {
            let mut union = Raster::zeros(map.height(), map.width(), 1);
            for m in &resized {
                for (u, &x) in union.data_mut().iter_mut().zip(m.data()) {
                    if x != 0.0 {
                        *u = 1.0;
                    }
                }
            }
            vec![apply(&union)]
        }
        MaskMode::PerObject => resized.iter().map(apply).collect(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Pooling {
    /// Block average, for real-valued maps.
    Mean,
    /// Block maximum, for binary maps.
    Max,
}

/// Block pooling by integer factors.
pub fn downsample_map(map: &Raster, height: usize, width: usize, pooling: Pooling) -> Result<Raster> {
    if height == 0 || width == 0 || map.height() % height != 0 || map.width() % width != 0 {
        return Err(FeatexError::Shape(format!(
            "cannot pool {}×{} into {height}×{width}",
            map.height(),
            map.width()
        )));
    }
    let (fy, fx) = (map.height() / height, map.width() / width);
    let c = map.channels();
    let mut out = Raster::zeros(height, width, c);
    let count = (fy * fx) as f32;
    for v in 0..height {
        for u in 0..width {
            for ch in 0..c {
                let mut acc = match pooling {
                    Pooling::Mean => 0.0,
                    Pooling::Max => f32::NEG_INFINITY,
                };
                for dy in 0..fy {
                    for dx in 0..fx {
                        let x = map.at(v * fy + dy, u * fx + dx, ch);
                        match pooling {
                            Pooling::Mean => acc += x,
                            Pooling::Max => acc = acc.max(x),
                        }
                    }
                }
                if pooling == Pooling::Mean {
                    acc /= count;
                }
                out.set(v, u, ch, acc);
            }
        }
    }
    Ok(out)
}
