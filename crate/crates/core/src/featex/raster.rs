use super::{FeatexError, Result};

/// Row-major `height×width×channels` array of `f32`.
#[derive(Debug, Clone, PartialEq)]
pub struct Raster {
    height: usize,
    width: usize,
    channels: usize,
    data: Vec<f32>,
}

impl Raster {
    pub fn new(height: usize, width: usize, channels: usize, data: Vec<f32>) -> Result<Self> {
        if data.len() != height * width * channels {
            return Err(FeatexError::Shape(format!(
                "{} values for a {height}×{width}×{channels} raster",
                data.len()
            )));
        }
        Ok(Self {
            height,
            width,
            channels,
            data,
        })
    }

    pub fn filled(height: usize, width: usize, channels: usize, value: f32) -> Self {
        Self {
            height,
            width,
            channels,
            data: vec![value; height * width * channels],
        }
    }

    pub fn zeros(height: usize, width: usize, channels: usize) -> Self {
        Self::filled(height, width, channels, 0.0)
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f32] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f32> {
        self.data
    }

    /// Value at row `v`, column `u`, channel `c`.
    #[inline]
    pub fn at(&self, v: usize, u: usize, c: usize) -> f32 {
        self.data[(v * self.width + u) * self.channels + c]
    }

    #[inline]
    pub fn set(&mut self, v: usize, u: usize, c: usize, value: f32) {
        self.data[(v * self.width + u) * self.channels + c] = value;
    }

    pub fn same_plane(&self, other: &Raster) -> bool {
        self.height == other.height && self.width == other.width
    }

    pub fn is_binary(&self) -> bool {
        self.data.iter().all(|&x| x == 0.0 || x == 1.0)
    }

    /// Channel `c` as a single-channel raster.
    pub fn channel(&self, c: usize) -> Raster {
        let data = self.data.iter().skip(c).step_by(self.channels).copied().collect();
        Raster {
            height: self.height,
            width: self.width,
            channels: 1,
            data,
        }
    }

    /// Channel-major (`C×H×W`) copy of the data.
    pub fn to_planar(&self) -> Vec<f32> {
        let plane = self.height * self.width;
        let mut out = vec![0.0; self.data.len()];
        for p in 0..plane {
            for c in 0..self.channels {
                out[c * plane + p] = self.data[p * self.channels + c];
            }
        }
        out
    }
}
