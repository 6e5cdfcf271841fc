//! Canny edge detection: Gaussian smoothing, Sobel gradients, non-maximum
//! suppression along four quantised directions, and double-threshold
//! hysteresis with 8-connectivity.

use serde::{Deserialize, Serialize};

use super::{FeatexError, Raster, Result};

/// Thresholds are fractions of the largest gradient magnitude in the image.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EdgeParams {
    pub gaussian_sigma: f64,
    pub low_threshold: f64,
    pub high_threshold: f64,
}

impl Default for EdgeParams {
    fn default() -> Self {
        Self {
            gaussian_sigma: 1.0,
            low_threshold: 0.1,
            high_threshold: 0.3,
        }
    }
}

impl EdgeParams {
    pub fn validate(&self) -> Result<()> {
        let ok = self.gaussian_sigma > 0.0
            && self.gaussian_sigma.is_finite()
            && self.low_threshold > 0.0
            && self.low_threshold < self.high_threshold
            && self.high_threshold < 1.0;
        if ok {
            Ok(())
        } else {
            Err(FeatexError::Params(format!("invalid edge parameters {self:?}")))
        }
    }
}

pub const MIN_EDGE_INPUT: usize = 5;

/// Luminance `0.299 R + 0.587 G + 0.114 B`.
pub fn to_grayscale(rgb: &Raster) -> Result<Raster> {
    if rgb.channels() != 3 {
        return Err(FeatexError::Shape(format!("expected 3 channels, got {}", rgb.channels())));
    }
    let data = rgb
        .data()
        .chunks(3)
        .map(|p| 0.299 * p[0] + 0.587 * p[1] + 0.114 * p[2])
        .collect();
    Raster::new(rgb.height(), rgb.width(), 1, data)
}

fn gaussian_kernel(sigma: f64) -> Vec<f64> {
    let radius = (3.0 * sigma).ceil().max(1.0) as isize;
    let mut k: Vec<f64> = (-radius..=radius)
        .map(|i| (-((i * i) as f64) / (2.0 * sigma * sigma)).exp())
        .collect();
    let total: f64 = k.iter().sum();
    k.iter_mut().for_each(|x| *x /= total);
    k
}

#[inline]
fn clamp(i: isize, n: usize) -> usize {
    i.clamp(0, n as isize - 1) as usize
}

/// Separable blur with replicated borders.
fn smooth(img: &[f64], h: usize, w: usize, kernel: &[f64]) -> Vec<f64> {
    let r = (kernel.len() / 2) as isize;
    let mut tmp = vec![0.0; h * w];
    for v in 0..h {
        for u in 0..w {
            let mut acc = 0.0;
            for (t, &kv) in kernel.iter().enumerate() {
                acc += kv * img[v * w + clamp(u as isize + t as isize - r, w)];
            }
            tmp[v * w + u] = acc;
        }
    }
    let mut out = vec![0.0; h * w];
    for v in 0..h {
        for u in 0..w {
            let mut acc = 0.0;
            for (t, &kv) in kernel.iter().enumerate() {
                acc += kv * tmp[clamp(v as isize + t as isize - r, h) * w + u];
            }
            out[v * w + u] = acc;
        }
    }
    out
}

/// Neighbour offsets `(dv, du)` along the quantised gradient direction.
fn direction_offsets(gx: f64, gy: f64) -> (isize, isize) {
    let mut angle = gy.atan2(gx).to_degrees();
    if angle < 0.0 {
        angle += 180.0;
    }
    if !(22.5..157.5).contains(&angle) {
        (0, 1)
    } else if angle < 67.5 {
        (1, 1)
    } else if angle < 112.5 {
        (1, 0)
    } else {
        (1, -1)
    }
}

/// Binary edge map of a single-channel image with values in `[0, 1]`.
///
/// The image is first shifted so its top-left pixel is zero; for images
/// whose shifted values are exactly representable this makes the output
/// invariant under adding a constant.
pub fn canny_edges(gray: &Raster, params: &EdgeParams) -> Result<Raster> {
    params.validate()?;
    let (h, w) = (gray.height(), gray.width());
    if h < MIN_EDGE_INPUT || w < MIN_EDGE_INPUT {
        return Err(FeatexError::TooSmall {
            height: h,
            width: w,
            min: MIN_EDGE_INPUT,
        });
    }
    if gray.channels() != 1 {
        return Err(FeatexError::Shape(format!("expected 1 channel, got {}", gray.channels())));
    }
    let origin = gray.data()[0] as f64;
    let img: Vec<f64> = gray.data().iter().map(|&x| x as f64 - origin).collect();
    let s = smooth(&img, h, w, &gaussian_kernel(params.gaussian_sigma));

    let px = |v: isize, u: isize| s[clamp(v, h) * w + clamp(u, w)];
    let mut mag = vec![0.0; h * w];
    let mut gxs = vec![0.0; h * w];
    let mut gys = vec![0.0; h * w];
    for v in 0..h as isize {
        for u in 0..w as isize {
            let gx = (px(v - 1, u + 1) + 2.0 * px(v, u + 1) + px(v + 1, u + 1))
                - (px(v - 1, u - 1) + 2.0 * px(v, u - 1) + px(v + 1, u - 1));
            let gy = (px(v + 1, u - 1) + 2.0 * px(v + 1, u) + px(v + 1, u + 1))
                - (px(v - 1, u - 1) + 2.0 * px(v - 1, u) + px(v - 1, u + 1));
            let i = v as usize * w + u as usize;
            gxs[i] = gx;
            gys[i] = gy;
            mag[i] = (gx * gx + gy * gy).sqrt();
        }
    }
    let max_mag = mag.iter().copied().fold(0.0, f64::max);
    let mut edges = Raster::zeros(h, w, 1);
    if max_mag <= 0.0 {
        return Ok(edges);
    }

    let mut thin = vec![0.0; h * w];
    for v in 1..h - 1 {
        for u in 1..w - 1 {
            let i = v * w + u;
            let m = mag[i];
            if m <= 0.0 {
                continue;
            }
            let (dv, du) = direction_offsets(gxs[i], gys[i]);
            let a = mag[(v as isize + dv) as usize * w + (u as isize + du) as usize];
            let b = mag[(v as isize - dv) as usize * w + (u as isize - du) as usize];
            if m >= a && m >= b {
                thin[i] = m;
            }
        }
    }

    let high = params.high_threshold * max_mag;
    let low = params.low_threshold * max_mag;
    let mut stack: Vec<usize> = (0..h * w).filter(|&i| thin[i] > 0.0 && thin[i] >= high).collect();
    for &i in &stack {
        edges.data_mut()[i] = 1.0;
    }
    while let Some(i) = stack.pop() {
        let (v, u) = ((i / w) as isize, (i % w) as isize);
        for dv in -1..=1 {
            for du in -1..=1 {
                let (nv, nu) = (v + dv, u + du);
                if nv < 0 || nu < 0 || nv >= h as isize || nu >= w as isize {
                    continue;
                }
                let j = nv as usize * w + nu as usize;
                if edges.data()[j] == 0.0 && thin[j] > 0.0 && thin[j] >= low {
                    edges.data_mut()[j] = 1.0;
                    stack.push(j);
                }
            }
        }
    }
    Ok(edges)
}
