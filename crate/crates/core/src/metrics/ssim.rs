//! SSIM and multi-scale SSIM on luma images in [0, 1].

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::ImageBuffer;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SsimParams {
    pub window: usize,
    pub sigma: f64,
    pub k1: f64,
    pub k2: f64,
    pub dynamic_range: f64,
}

impl Default for SsimParams {
    fn default() -> Self {
        Self {
            window: 11,
            sigma: 1.5,
            k1: 0.01,
            k2: 0.03,
            dynamic_range: 1.0,
        }
    }
}

impl SsimParams {
    fn constants(&self) -> (f64, f64) {
        (
            (self.k1 * self.dynamic_range).powi(2),
            (self.k2 * self.dynamic_range).powi(2),
        )
    }
}

/// Exponents of the five scales, finest first.
pub const MS_SSIM_WEIGHTS: [f64; 5] = [0.0448, 0.2856, 0.3001, 0.2363, 0.1333];

/// Mean SSIM over all valid window positions and the per-position map
/// (`(w - window + 1) x (h - window + 1)`).
#[derive(Clone, Debug, PartialEq)]
pub struct SsimResult {
    pub mean: f64,
    pub map: ImageBuffer,
}

/// Normalized 1D Gaussian taps; the 2D window is their outer product.
pub fn gaussian_taps(size: usize, sigma: f64) -> Vec<f64> {
    let c = (size as f64 - 1.0) / 2.0;
    let raw: Vec<f64> = (0..size)
        .map(|i| (-(i as f64 - c).powi(2) / (2.0 * sigma * sigma)).exp())
        .collect();
    let sum: f64 = raw.iter().sum();
    raw.into_iter().map(|v| v / sum).collect()
}

/// Converts RGB to luma and checks sizes shared by every metric.
pub(crate) fn prepare_pair(
    a: &ImageBuffer,
    b: &ImageBuffer,
    min_side: usize,
) -> Result<(ImageBuffer, ImageBuffer)> {
    if a.width() != b.width() || a.height() != b.height() {
        return Err(Error::invalid(format!(
            "image sizes differ: {}x{} vs {}x{}",
            a.width(),
            a.height(),
            b.width(),
            b.height()
        )));
    }
    if a.width() < min_side || a.height() < min_side {
        return Err(Error::invalid(format!(
            "images are {}x{}, smaller than the {min_side}-pixel window",
            a.width(),
            a.height()
        )));
    }
    Ok((a.to_luma(), b.to_luma()))
}

/// Valid-mode separable filtering of a single-channel plane.
fn filter_valid(data: &[f64], w: usize, h: usize, taps: &[f64]) -> (Vec<f64>, usize, usize) {
    let k = taps.len();
    let (ow, oh) = (w - k + 1, h - k + 1);
    let mut rows = vec![0.0; ow * h];
    for y in 0..h {
        let line = &data[y * w..(y + 1) * w];
        for x in 0..ow {
            rows[y * ow + x] = taps.iter().zip(&line[x..x + k]).map(|(t, v)| t * v).sum();
        }
    }
    let mut out = vec![0.0; ow * oh];
    for y in 0..oh {
        for x in 0..ow {
            out[y * ow + x] = (0..k).map(|j| taps[j] * rows[(y + j) * ow + x]).sum();
        }
    }
    (out, ow, oh)
}

/// Per-position luminance term `l` and contrast-structure term `cs`.
fn ssim_terms(
    a: &ImageBuffer,
    b: &ImageBuffer,
    params: &SsimParams,
) -> (Vec<f64>, Vec<f64>, usize, usize) {
    let (w, h) = (a.width(), a.height());
    let taps = gaussian_taps(params.window, params.sigma);
    let (x, y) = (a.data(), b.data());
    let xx: Vec<f64> = x.iter().map(|v| v * v).collect();
    let yy: Vec<f64> = y.iter().map(|v| v * v).collect();
    let xy: Vec<f64> = x.iter().zip(y).map(|(p, q)| p * q).collect();
    let (mx, ow, oh) = filter_valid(x, w, h, &taps);
    let (my, ..) = filter_valid(y, w, h, &taps);
    let (sxx, ..) = filter_valid(&xx, w, h, &taps);
    let (syy, ..) = filter_valid(&yy, w, h, &taps);
    let (sxy, ..) = filter_valid(&xy, w, h, &taps);
    let (c1, c2) = params.constants();
    let mut lum = Vec::with_capacity(mx.len());
    let mut cs = Vec::with_capacity(mx.len());
    for i in 0..mx.len() {
        let (ux, uy) = (mx[i], my[i]);
        let vx = sxx[i] - ux * ux;
        let vy = syy[i] - uy * uy;
        let cov = sxy[i] - ux * uy;
        lum.push((2.0 * ux * uy + c1) / (ux * ux + uy * uy + c1));
        cs.push((2.0 * cov + c2) / (vx + vy + c2));
    }
    (lum, cs, ow, oh)
}

pub fn ssim(a: &ImageBuffer, b: &ImageBuffer) -> Result<SsimResult> {
    ssim_with(a, b, &SsimParams::default())
}

pub fn ssim_with(a: &ImageBuffer, b: &ImageBuffer, params: &SsimParams) -> Result<SsimResult> {
    let (a, b) = prepare_pair(a, b, params.window)?;
    let (lum, cs, ow, oh) = ssim_terms(&a, &b, params);
    let map: Vec<f64> = lum.iter().zip(&cs).map(|(l, c)| l * c).collect();
    let mean = map.iter().sum::<f64>() / map.len() as f64;
    Ok(SsimResult {
        mean,
        map: ImageBuffer::from_vec(ow, oh, 1, map)?,
    })
}

/// Number of scales usable for an image whose smaller side is `min_side`:
/// the coarsest scale must still fit one window.
pub fn ms_ssim_scale_count(min_side: usize, window: usize) -> usize {
    let mut scales = 0;
    let mut side = min_side;
    while scales < MS_SSIM_WEIGHTS.len() && side >= window {
        scales += 1;
        side /= 2;
    }
    scales
}

/// 2x2 box average followed by decimation; odd trailing rows/columns drop.
pub fn downsample2(img: &ImageBuffer) -> Result<ImageBuffer> {
    let (w, h) = (img.width() / 2, img.height() / 2);
    ImageBuffer::from_fn(w, h, img.channels(), |x, y, c| {
        0.25 * (img.get(2 * x, 2 * y, c)
            + img.get(2 * x + 1, 2 * y, c)
            + img.get(2 * x, 2 * y + 1, c)
            + img.get(2 * x + 1, 2 * y + 1, c))
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MsSsimResult {
    pub value: f64,
    pub scales: usize,
    /// Exponents actually used (renormalized when fewer than five scales fit).
    pub weights: Vec<f64>,
}

/// Product of contrast-structure means over dyadic scales with the full SSIM
/// mean at the coarsest scale, each raised to its exponent. Negative
/// per-scale terms are clamped to zero before exponentiation.
pub fn ms_ssim(a: &ImageBuffer, b: &ImageBuffer) -> Result<MsSsimResult> {
    ms_ssim_with(a, b, &SsimParams::default())
}

pub fn ms_ssim_with(a: &ImageBuffer, b: &ImageBuffer, params: &SsimParams) -> Result<MsSsimResult> {
    let (mut a, mut b) = prepare_pair(a, b, params.window)?;
    let scales = ms_ssim_scale_count(a.width().min(a.height()), params.window);
    let total: f64 = MS_SSIM_WEIGHTS[..scales].iter().sum();
    let weights: Vec<f64> = MS_SSIM_WEIGHTS[..scales].iter().map(|w| w / total).collect();
    let mut value = 1.0;
    for (s, w) in weights.iter().enumerate() {
        let (lum, cs, ..) = ssim_terms(&a, &b, params);
        let n = cs.len() as f64;
        let term = if s + 1 == scales {
            lum.iter().zip(&cs).map(|(l, c)| l * c).sum::<f64>() / n
        } else {
            cs.iter().sum::<f64>() / n
        };
        value *= term.max(0.0).powf(*w);
        if s + 1 < scales {
            a = downsample2(&a)?;
            b = downsample2(&b)?;
        }
    }
    Ok(MsSsimResult {
        value,
        scales,
        weights,
    })
}
