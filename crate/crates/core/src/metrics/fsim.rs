//! Feature similarity (FSIM) from log-Gabor phase congruency and Scharr
//! gradient magnitude.
//!
//! Phase congruency follows Kovesi's `phasecong2` formulation (energy with
//! noise compensation, summed over orientations, divided by total amplitude).
//! It is computed on luma scaled to [0, 255] so that its small stabilizing
//! epsilon has the magnitude it was tuned for; the gradient term works on
//! [0, 1] luma with the gradient constant rescaled accordingly.

use std::f64::consts::PI;
use std::sync::Arc;

use rustfft::num_complex::Complex64;
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::image::ImageBuffer;
use crate::metrics::ssim::prepare_pair;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PhaseCongruencyParams {
    pub nscale: usize,
    pub norient: usize,
    pub min_wavelength: f64,
    pub mult: f64,
    pub sigma_onf: f64,
    pub d_theta_on_sigma: f64,
    /// Noise threshold in standard deviations.
    pub k: f64,
    pub epsilon: f64,
    pub lowpass_cutoff: f64,
    pub lowpass_order: i32,
    /// Divisor applied to the estimated noise threshold.
    pub noise_rescale: f64,
}

impl Default for PhaseCongruencyParams {
    fn default() -> Self {
        Self {
            nscale: 4,
            norient: 4,
            min_wavelength: 6.0,
            mult: 2.0,
            sigma_onf: 0.55,
            d_theta_on_sigma: 1.2,
            k: 2.0,
            epsilon: 1e-4,
            lowpass_cutoff: 0.45,
            lowpass_order: 15,
            noise_rescale: 1.7,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FsimParams {
    pub phase: PhaseCongruencyParams,
    pub t1: f64,
    /// Gradient constant for [0, 1] intensities (160 on the 8-bit scale).
    pub t2: f64,
    /// Intensity scale applied before phase congruency.
    pub phase_intensity_scale: f64,
}

impl Default for FsimParams {
    fn default() -> Self {
        Self {
            phase: PhaseCongruencyParams::default(),
            t1: 0.85,
            t2: 160.0 / (255.0 * 255.0),
            phase_intensity_scale: 255.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FsimResult {
    pub value: f64,
    /// Integer downsampling factor applied before feature extraction.
    pub downsample: usize,
}

/// Unnormalized 2D DFT over a row-major `rows x cols` buffer.
struct Fft2 {
    rows: usize,
    cols: usize,
    row: [Arc<dyn Fft<f64>>; 2],
    col: [Arc<dyn Fft<f64>>; 2],
}

impl Fft2 {
    fn new(rows: usize, cols: usize) -> Self {
        let mut planner = FftPlanner::new();
        Self {
            rows,
            cols,
            row: [planner.plan_fft_forward(cols), planner.plan_fft_inverse(cols)],
            col: [planner.plan_fft_forward(rows), planner.plan_fft_inverse(rows)],
        }
    }

    fn run(&self, data: &mut [Complex64], inverse: bool) {
        let k = inverse as usize;
        self.row[k].process(data);
        let mut t = vec![Complex64::default(); data.len()];
        for r in 0..self.rows {
            for c in 0..self.cols {
                t[c * self.rows + r] = data[r * self.cols + c];
            }
        }
        self.col[k].process(&mut t);
        for r in 0..self.rows {
            for c in 0..self.cols {
                data[r * self.cols + c] = t[c * self.rows + r];
            }
        }
    }
}

/// Normalized frequency of DFT index `j` of an `n`-point axis, laid out with
/// zero frequency at index 0.
fn axis_frequency(j: usize, n: usize) -> f64 {
    let signed = if j <= (n - 1) / 2 { j as f64 } else { j as f64 - n as f64 };
    let denom = if n % 2 == 0 { n } else { n - 1 }.max(1);
    signed / denom as f64
}

fn median(values: &mut [f64]) -> f64 {
    values.sort_by(f64::total_cmp);
    let n = values.len();
    if n % 2 == 1 {
        values[n / 2]
    } else {
        0.5 * (values[n / 2 - 1] + values[n / 2])
    }
}

/// Phase congruency map of a row-major plane, values in [0, 1). Pixels with
/// zero total filter amplitude get 0.
pub fn phase_congruency(
    plane: &[f64],
    rows: usize,
    cols: usize,
    params: &PhaseCongruencyParams,
) -> Vec<f64> {
    let n = rows * cols;
    let fft = Fft2::new(rows, cols);
    let mut spectrum: Vec<Complex64> = plane.iter().map(|&v| Complex64::new(v, 0.0)).collect();
    fft.run(&mut spectrum, false);

    let mut radius = vec![0.0; n];
    let mut sin_t = vec![0.0; n];
    let mut cos_t = vec![0.0; n];
    let mut lowpass = vec![0.0; n];
    for r in 0..rows {
        let y = axis_frequency(r, rows);
        for c in 0..cols {
            let x = axis_frequency(c, cols);
            let i = r * cols + c;
            let rad = (x * x + y * y).sqrt();
            lowpass[i] = 1.0 / (1.0 + (rad / params.lowpass_cutoff).powi(2 * params.lowpass_order));
            radius[i] = rad;
            let theta = (-y).atan2(x);
            sin_t[i] = theta.sin();
            cos_t[i] = theta.cos();
        }
    }
    radius[0] = 1.0;

    let log_sigma = params.sigma_onf.ln();
    let log_gabor: Vec<Vec<f64>> = (0..params.nscale)
        .map(|s| {
            let fo = 1.0 / (params.min_wavelength * params.mult.powi(s as i32));
            let mut g: Vec<f64> = radius
                .iter()
                .zip(&lowpass)
                .map(|(&rad, &lp)| (-(rad / fo).ln().powi(2) / (2.0 * log_sigma * log_sigma)).exp() * lp)
                .collect();
            g[0] = 0.0;
            g
        })
        .collect();

    let theta_sigma = PI / params.norient as f64 / params.d_theta_on_sigma;
    let mut energy_all = vec![0.0; n];
    let mut an_all = vec![0.0; n];
    let inv_n = 1.0 / n as f64;
    let root_n = (n as f64).sqrt();

    for o in 0..params.norient {
        let angle = o as f64 * PI / params.norient as f64;
        let (sa, ca) = angle.sin_cos();
        let spread: Vec<f64> = (0..n)
            .map(|i| {
                let ds = sin_t[i] * ca - cos_t[i] * sa;
                let dc = cos_t[i] * ca + sin_t[i] * sa;
                let d = ds.atan2(dc).abs();
                (-d * d / (2.0 * theta_sigma * theta_sigma)).exp()
            })
            .collect();

        let mut sum_e = vec![0.0; n];
        let mut sum_o = vec![0.0; n];
        let mut sum_an = vec![0.0; n];
        let mut responses = Vec::with_capacity(params.nscale);
        let mut spatial_filters = Vec::with_capacity(params.nscale);
        let mut em_n = 0.0;
        for (s, g) in log_gabor.iter().enumerate() {
            let filter: Vec<f64> = g.iter().zip(&spread).map(|(a, b)| a * b).collect();
            if s == 0 {
                em_n = filter.iter().map(|f| f * f).sum();
            }
            let mut spatial: Vec<Complex64> =
                filter.iter().map(|&f| Complex64::new(f, 0.0)).collect();
            fft.run(&mut spatial, true);
            spatial_filters.push(spatial.iter().map(|z| z.re * inv_n * root_n).collect::<Vec<f64>>());

            let mut eo: Vec<Complex64> = spectrum.iter().zip(&filter).map(|(z, f)| z * f).collect();
            fft.run(&mut eo, true);
            for (i, z) in eo.iter_mut().enumerate() {
                *z *= inv_n;
                sum_an[i] += z.norm();
                sum_e[i] += z.re;
                sum_o[i] += z.im;
            }
            responses.push(eo);
        }

        let mut energy = vec![0.0; n];
        for i in 0..n {
            let x_energy = (sum_e[i] * sum_e[i] + sum_o[i] * sum_o[i]).sqrt() + params.epsilon;
            let (me, mo) = (sum_e[i] / x_energy, sum_o[i] / x_energy);
            for eo in &responses {
                let (e, od) = (eo[i].re, eo[i].im);
                energy[i] += e * me + od * mo - (e * mo - od * me).abs();
            }
        }

        let mut e2: Vec<f64> = responses[0].iter().map(|z| z.norm_sqr()).collect();
        let mean_e2n = -median(&mut e2) / 0.5f64.ln();
        let noise_power = mean_e2n / em_n;
        let mut sum_an2 = 0.0;
        let mut sum_aiaj = 0.0;
        for (si, fi) in spatial_filters.iter().enumerate() {
            sum_an2 += fi.iter().map(|v| v * v).sum::<f64>();
            for fj in &spatial_filters[si + 1..] {
                sum_aiaj += fi.iter().zip(fj).map(|(a, b)| a * b).sum::<f64>();
            }
        }
        let noise_energy2 = 2.0 * noise_power * sum_an2 + 4.0 * noise_power * sum_aiaj;
        let tau = (noise_energy2 / 2.0).sqrt();
        let noise_mean = tau * (PI / 2.0).sqrt();
        let noise_sigma = ((2.0 - PI / 2.0) * tau * tau).sqrt();
        let threshold = (noise_mean + params.k * noise_sigma) / params.noise_rescale;

        for i in 0..n {
            energy_all[i] += (energy[i] - threshold).max(0.0);
            an_all[i] += sum_an[i];
        }
    }
    energy_all
        .iter()
        .zip(&an_all)
        .map(|(&e, &a)| if a > 0.0 { e / a } else { 0.0 })
        .collect()
}

/// Scharr gradient magnitude, zero padding, output the size of the input.
pub fn scharr_magnitude(plane: &[f64], rows: usize, cols: usize) -> Vec<f64> {
    const K: [[f64; 3]; 3] = [[3.0, 0.0, -3.0], [10.0, 0.0, -10.0], [3.0, 0.0, -3.0]];
    let at = |r: isize, c: isize| {
        if r < 0 || c < 0 || r >= rows as isize || c >= cols as isize {
            0.0
        } else {
            plane[r as usize * cols + c as usize]
        }
    };
    let mut out = vec![0.0; rows * cols];
    for r in 0..rows as isize {
        for c in 0..cols as isize {
            let (mut gx, mut gy) = (0.0, 0.0);
            for i in 0..3 {
                for j in 0..3 {
                    let v = at(r + i as isize - 1, c + j as isize - 1);
                    gx += K[i][j] * v;
                    gy += K[j][i] * v;
                }
            }
            out[r as usize * cols + c as usize] = (gx * gx + gy * gy).sqrt() / 16.0;
        }
    }
    out
}

/// `max(1, round(min_side / 256))`.
pub fn fsim_downsample_factor(min_side: usize) -> usize {
    ((min_side as f64 / 256.0).round() as usize).max(1)
}

/// `factor x factor` box average ('same' placement, zero padding) sampled
/// every `factor` pixels from the origin.
fn box_downsample(plane: &[f64], rows: usize, cols: usize, factor: usize) -> (Vec<f64>, usize, usize) {
    if factor == 1 {
        return (plane.to_vec(), rows, cols);
    }
    let back = (factor - 1 - factor / 2) as isize;
    let (orows, ocols) = (rows.div_ceil(factor), cols.div_ceil(factor));
    let norm = 1.0 / (factor * factor) as f64;
    let mut out = Vec::with_capacity(orows * ocols);
    for r in (0..rows).step_by(factor) {
        for c in (0..cols).step_by(factor) {
            let mut sum = 0.0;
            for dr in 0..factor as isize {
                for dc in 0..factor as isize {
                    let (y, x) = (r as isize - back + dr, c as isize - back + dc);
                    if y >= 0 && x >= 0 && (y as usize) < rows && (x as usize) < cols {
                        sum += plane[y as usize * cols + x as usize];
                    }
                }
            }
            out.push(sum * norm);
        }
    }
    (out, orows, ocols)
}

pub fn fsim(a: &ImageBuffer, b: &ImageBuffer) -> Result<FsimResult> {
    fsim_with(a, b, &FsimParams::default())
}

/// Mean of gradient and phase similarity weighted by the larger phase
/// congruency. Falls back to the unweighted mean when both images have zero
/// phase congruency everywhere.
pub fn fsim_with(a: &ImageBuffer, b: &ImageBuffer, params: &FsimParams) -> Result<FsimResult> {
    let (a, b) = prepare_pair(a, b, 11)?;
    let (rows, cols) = (a.height(), a.width());
    let factor = fsim_downsample_factor(rows.min(cols));
    let (ya, r, c) = box_downsample(a.data(), rows, cols, factor);
    let (yb, ..) = box_downsample(b.data(), rows, cols, factor);

    let scale = params.phase_intensity_scale;
    let scaled = |p: &[f64]| p.iter().map(|v| v * scale).collect::<Vec<f64>>();
    let pc1 = phase_congruency(&scaled(&ya), r, c, &params.phase);
    let pc2 = phase_congruency(&scaled(&yb), r, c, &params.phase);
    let g1 = scharr_magnitude(&ya, r, c);
    let g2 = scharr_magnitude(&yb, r, c);

    let (mut weighted, mut weight, mut plain) = (0.0, 0.0, 0.0);
    for i in 0..r * c {
        let pc_sim = (2.0 * pc1[i] * pc2[i] + params.t1) / (pc1[i] * pc1[i] + pc2[i] * pc2[i] + params.t1);
        let g_sim = (2.0 * g1[i] * g2[i] + params.t2) / (g1[i] * g1[i] + g2[i] * g2[i] + params.t2);
        let pcm = pc1[i].max(pc2[i]);
        weighted += g_sim * pc_sim * pcm;
        weight += pcm;
        plain += g_sim * pc_sim;
    }
    let value = if weight > 0.0 {
        weighted / weight
    } else {
        plain / (r * c) as f64
    };
    Ok(FsimResult {
        value,
        downsample: factor,
    })
}
