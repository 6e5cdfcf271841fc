use serde::{Deserialize, Serialize};

use super::{FeatexError, Raster, Result};

/// Pinhole intrinsics in pixel units. `u` indexes columns, `v` rows.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CameraIntrinsics {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: usize,
    pub height: usize,
}

impl CameraIntrinsics {
    pub fn new(fx: f64, fy: f64, cx: f64, cy: f64, width: usize, height: usize) -> Result<Self> {
        let k = Self {
            fx,
            fy,
            cx,
            cy,
            width,
            height,
        };
        k.validate()?;
        Ok(k)
    }

    /// Focal length `size` pixels, principal point at the image centre.
    pub fn centered(width: usize, height: usize) -> Self {
        Self {
            fx: width as f64,
            fy: height as f64,
            cx: width as f64 / 2.0,
            cy: height as f64 / 2.0,
            width,
            height,
        }
    }

    /// Unit focal lengths with the principal point at the image centre.
    pub fn unit(width: usize, height: usize) -> Self {
        Self {
            fx: 1.0,
            fy: 1.0,
            ..Self::centered(width, height)
        }
    }

    pub fn validate(&self) -> Result<()> {
        let ok = self.fx > 0.0
            && self.fy > 0.0
            && self.fx.is_finite()
            && self.fy.is_finite()
            && self.cx >= 0.0
            && self.cy >= 0.0
            && self.cx < self.width as f64
            && self.cy < self.height as f64;
        if ok {
            Ok(())
        } else {
            Err(FeatexError::Params(format!("invalid intrinsics {self:?}")))
        }
    }

    /// Camera-frame point seen at pixel `(u, v)` with planar depth `z`.
    #[inline]
    pub fn unproject(&self, u: f64, v: f64, z: f64) -> [f64; 3] {
        [(u - self.cx) * z / self.fx, (v - self.cy) * z / self.fy, z]
    }

    /// Pixel position of a camera-frame point; `None` when `z == 0`.
    #[inline]
    pub fn project_point(&self, p: [f64; 3]) -> Option<(f64, f64)> {
        if p[2] == 0.0 {
            return None;
        }
        Some((self.fx * p[0] / p[2] + self.cx, self.fy * p[1] / p[2] + self.cy))
    }
}

/// Per-pixel camera-frame coordinates `(x, y, z)` in metres.
#[derive(Debug, Clone, PartialEq)]
pub struct CoordinateMap {
    pub coords: Raster,
}

impl CoordinateMap {
    pub fn z(&self) -> Raster {
        self.coords.channel(2)
    }
}

/// How stored depth values relate to planar depth.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DepthKind {
    #[default]
    Metric,
    /// Values are `1/z` (as produced by relative monocular depth models).
    /// Zeros stay zero.
    Inverse,
}

/// Back-projects planar depth through the intrinsics:
/// `x = (u − cx)·z/fx`, `y = (v − cy)·z/fy`, `z = depth[v, u]`.
pub fn backproject(depth: &Raster, k: &CameraIntrinsics) -> CoordinateMap {
    backproject_with(depth, k, DepthKind::Metric)
}

pub fn backproject_with(depth: &Raster, k: &CameraIntrinsics, kind: DepthKind) -> CoordinateMap {
    let (h, w) = (depth.height(), depth.width());
    let mut out = Vec::with_capacity(h * w * 3);
    for v in 0..h {
        for u in 0..w {
            let d = depth.at(v, u, 0);
            let z = match kind {
                DepthKind::Metric => d,
                DepthKind::Inverse if d != 0.0 => 1.0 / d,
                DepthKind::Inverse => 0.0,
            };
            let p = k.unproject(u as f64, v as f64, z as f64);
            out.extend_from_slice(&[p[0] as f32, p[1] as f32, z]);
        }
    }
    CoordinateMap {
        coords: Raster::new(h, w, 3, out).expect("sized"),
    }
}

/// Pixel grid recovered by [`project`].
#[derive(Debug, Clone, PartialEq)]
pub struct Projection {
    /// `(u, v)` per pixel, row-major.
    pub pixels: Vec<(f64, f64)>,
    pub depth: Raster,
}

/// Inverse of [`backproject`]: `u = fx·x/z + cx`, `v = fy·y/z + cy`.
pub fn project(coords: &CoordinateMap, k: &CameraIntrinsics) -> Result<Projection> {
    let c = &coords.coords;
    if c.channels() != 3 {
        return Err(FeatexError::Shape(format!("coordinate map has {} channels", c.channels())));
    }
    let mut pixels = Vec::with_capacity(c.height() * c.width());
    for v in 0..c.height() {
        for u in 0..c.width() {
            let p = [c.at(v, u, 0) as f64, c.at(v, u, 1) as f64, c.at(v, u, 2) as f64];
            pixels.push(k.project_point(p).ok_or(FeatexError::ZeroDepth { u, v })?);
        }
    }
    Ok(Projection {
        pixels,
        depth: c.channel(2),
    })
}
