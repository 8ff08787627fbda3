//! Floating point raster images.

use crate::error::{Error, Result};

/// BT.601 luma weights.
pub const LUMA_WEIGHTS: [f64; 3] = [0.299, 0.587, 0.114];

/// Row-major raster with 1 (gray) or 3 (RGB) interleaved channels.
/// Sample values live in [0, 1].
#[derive(Clone, Debug, PartialEq)]
pub struct ImageBuffer {
    width: usize,
    height: usize,
    channels: usize,
    data: Vec<f64>,
}

impl ImageBuffer {
    pub fn new(width: usize, height: usize, channels: usize) -> Result<Self> {
        Self::from_vec(width, height, channels, vec![0.0; width * height * channels])
    }

    pub fn from_vec(width: usize, height: usize, channels: usize, data: Vec<f64>) -> Result<Self> {
        if channels != 1 && channels != 3 {
            return Err(Error::invalid(format!(
                "image must have 1 or 3 channels, got {channels}"
            )));
        }
        if data.len() != width * height * channels {
            return Err(Error::invalid(format!(
                "image data length {} does not match {width}x{height}x{channels}",
                data.len()
            )));
        }
        Ok(Self {
            width,
            height,
            channels,
            data,
        })
    }

    pub fn from_fn(
        width: usize,
        height: usize,
        channels: usize,
        mut f: impl FnMut(usize, usize, usize) -> f64,
    ) -> Result<Self> {
        let mut data = Vec::with_capacity(width * height * channels);
        for y in 0..height {
            for x in 0..width {
                for c in 0..channels {
                    data.push(f(x, y, c));
                }
            }
        }
        Self::from_vec(width, height, channels, data)
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize, c: usize) -> f64 {
        self.data[(y * self.width + x) * self.channels + c]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, c: usize, v: f64) {
        self.data[(y * self.width + x) * self.channels + c] = v;
    }

    /// Pixel as RGB; gray images replicate their single channel.
    pub fn rgb(&self, x: usize, y: usize) -> [f64; 3] {
        if self.channels == 1 {
            let v = self.get(x, y, 0);
            [v, v, v]
        } else {
            [self.get(x, y, 0), self.get(x, y, 1), self.get(x, y, 2)]
        }
    }

    /// Single channel luma plane. Gray images are returned unchanged.
    pub fn to_luma(&self) -> ImageBuffer {
        if self.channels == 1 {
            return self.clone();
        }
        let data = self
            .data
            .chunks_exact(3)
            .map(|p| LUMA_WEIGHTS[0] * p[0] + LUMA_WEIGHTS[1] * p[1] + LUMA_WEIGHTS[2] * p[2])
            .collect();
        ImageBuffer {
            width: self.width,
            height: self.height,
            channels: 1,
            data,
        }
    }

    /// Bilinear sample at a continuous position where pixel centers sit on
    /// integer coordinates. Neighbors outside the raster contribute black.
    pub fn sample_bilinear(&self, x: f64, y: f64, c: usize) -> f64 {
        let x0 = x.floor();
        let y0 = y.floor();
        let fx = x - x0;
        let fy = y - y0;
        let (x0, y0) = (x0 as i64, y0 as i64);
        let at = |xi: i64, yi: i64| -> f64 {
            if xi >= 0 && yi >= 0 && (xi as usize) < self.width && (yi as usize) < self.height {
                self.get(xi as usize, yi as usize, c)
            } else {
                0.0
            }
        };
        // Nested lerps reproduce constant fields and integer positions exactly.
        let lerp = |a: f64, b: f64, t: f64| if t == 0.0 { a } else { a + t * (b - a) };
        let top = lerp(at(x0, y0), at(x0 + 1, y0), fx);
        if fy == 0.0 {
            return top;
        }
        let bottom = lerp(at(x0, y0 + 1), at(x0 + 1, y0 + 1), fx);
        lerp(top, bottom, fy)
    }

    /// True when (x, y) lies inside the area spanned by pixel centers.
    pub fn contains(&self, x: f64, y: f64) -> bool {
        x >= 0.0
            && y >= 0.0
            && x <= (self.width as f64 - 1.0)
            && y <= (self.height as f64 - 1.0)
    }

    /// Geometric center in pixel-center coordinates.
    pub fn center(&self) -> [f64; 2] {
        [
            (self.width as f64 - 1.0) / 2.0,
            (self.height as f64 - 1.0) / 2.0,
        ]
    }
}
