//! Direct-formula image quality references.
//!
//! SSIM uses an explicit 2D weighted window at every valid position. FSIM
//! follows the reference MATLAB `FSIM.m` / `phasecong2.m` step by step on the
//! 0-255 intensity scale: `meshgrid` frequency grids moved with `ifftshift`,
//! `conv2(..., 'same')` for the averaging and Scharr kernels.

use std::f64::consts::PI;

use rustfft::num_complex::Complex64;
use rustfft::FftPlanner;

/// Row-major luma plane.
#[derive(Clone)]
pub struct Plane {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl Plane {
    pub fn at(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }
}

/// `(l, cs)` at every valid window position.
pub fn ssim_terms(x: &Plane, y: &Plane) -> (Vec<f64>, Vec<f64>) {
    let size = 11usize;
    let sigma: f64 = 1.5;
    let half = 5.0;
    let mut w = vec![0.0; size * size];
    for i in 0..size {
        for j in 0..size {
            let (di, dj) = (i as f64 - half, j as f64 - half);
            w[i * size + j] = (-(di * di + dj * dj) / (2.0 * sigma * sigma)).exp();
        }
    }
    let total: f64 = w.iter().sum();
    w.iter_mut().for_each(|v| *v /= total);
    let (c1, c2) = (0.01f64.powi(2), 0.03f64.powi(2));
    let (mut l, mut cs) = (Vec::new(), Vec::new());
    for r in 0..=x.rows - size {
        for c in 0..=x.cols - size {
            let (mut mx, mut my) = (0.0, 0.0);
            for i in 0..size {
                for j in 0..size {
                    mx += w[i * size + j] * x.at(r + i, c + j);
                    my += w[i * size + j] * y.at(r + i, c + j);
                }
            }
            let (mut vx, mut vy, mut cov) = (0.0, 0.0, 0.0);
            for i in 0..size {
                for j in 0..size {
                    let (a, b) = (x.at(r + i, c + j) - mx, y.at(r + i, c + j) - my);
                    vx += w[i * size + j] * a * a;
                    vy += w[i * size + j] * b * b;
                    cov += w[i * size + j] * a * b;
                }
            }
            l.push((2.0 * mx * my + c1) / (mx * mx + my * my + c1));
            cs.push((2.0 * cov + c2) / (vx + vy + c2));
        }
    }
    (l, cs)
}

pub fn ssim(x: &Plane, y: &Plane) -> f64 {
    let (l, cs) = ssim_terms(x, y);
    l.iter().zip(&cs).map(|(a, b)| a * b).sum::<f64>() / l.len() as f64
}

fn halve(p: &Plane) -> Plane {
    let (rows, cols) = (p.rows / 2, p.cols / 2);
    let mut data = Vec::with_capacity(rows * cols);
    for r in 0..rows {
        for c in 0..cols {
            let block = [p.at(2 * r, 2 * c), p.at(2 * r, 2 * c + 1), p.at(2 * r + 1, 2 * c), p.at(2 * r + 1, 2 * c + 1)];
            data.push(block.iter().sum::<f64>() / 4.0);
        }
    }
    Plane { rows, cols, data }
}

/// Five (or fewer) dyadic scales, each term clamped at zero.
pub fn ms_ssim(x: &Plane, y: &Plane) -> f64 {
    let weights = [0.0448, 0.2856, 0.3001, 0.2363, 0.1333];
    let mut scales = 0;
    let mut side = x.rows.min(x.cols);
    while scales < 5 && side >= 11 {
        scales += 1;
        side /= 2;
    }
    let norm: f64 = weights[..scales].iter().sum();
    let (mut a, mut b) = (x.clone(), y.clone());
    let mut out = 1.0;
    for s in 0..scales {
        let (l, cs) = ssim_terms(&a, &b);
        let term = if s == scales - 1 {
            l.iter().zip(&cs).map(|(p, q)| p * q).sum::<f64>() / l.len() as f64
        } else {
            cs.iter().sum::<f64>() / cs.len() as f64
        };
        out *= term.max(0.0).powf(weights[s] / norm);
        a = halve(&a);
        b = halve(&b);
    }
    out
}

/// MATLAB `conv2(img, k, 'same')` with zero padding (true convolution).
fn conv2_same(img: &Plane, k: &[Vec<f64>]) -> Plane {
    let (kr, kc) = (k.len() as isize, k[0].len() as isize);
    // 'same' keeps the full convolution from 0-based index floor(size(k)/2).
    let (sr, sc) = (kr / 2, kc / 2);
    let mut data = vec![0.0; img.rows * img.cols];
    for r in 0..img.rows as isize {
        for c in 0..img.cols as isize {
            let (fr, fc) = (r + sr, c + sc);
            let mut acc = 0.0;
            for m in 0..kr {
                for n in 0..kc {
                    let (ir, ic) = (fr - m, fc - n);
                    if ir >= 0 && ic >= 0 && ir < img.rows as isize && ic < img.cols as isize {
                        acc += k[m as usize][n as usize] * img.at(ir as usize, ic as usize);
                    }
                }
            }
            data[(r * img.cols as isize + c) as usize] = acc;
        }
    }
    Plane { rows: img.rows, cols: img.cols, data }
}

fn fft2(data: &[Complex64], rows: usize, cols: usize, inverse: bool) -> Vec<Complex64> {
    let mut planner = FftPlanner::<f64>::new();
    let (fr, fc) = if inverse {
        (planner.plan_fft_inverse(rows), planner.plan_fft_inverse(cols))
    } else {
        (planner.plan_fft_forward(rows), planner.plan_fft_forward(cols))
    };
    // Columns first, then rows.
    let mut out = data.to_vec();
    let mut col = vec![Complex64::default(); rows];
    for c in 0..cols {
        for r in 0..rows {
            col[r] = out[r * cols + c];
        }
        fr.process(&mut col);
        for r in 0..rows {
            out[r * cols + c] = col[r];
        }
    }
    for r in 0..rows {
        fc.process(&mut out[r * cols..(r + 1) * cols]);
    }
    if inverse {
        let s = 1.0 / (rows * cols) as f64;
        out.iter_mut().for_each(|z| *z *= s);
    }
    out
}

/// MATLAB `ifftshift` of a row-major matrix.
fn ifftshift(m: &[f64], rows: usize, cols: usize) -> Vec<f64> {
    let (sr, sc) = (rows / 2, cols / 2);
    let mut out = vec![0.0; rows * cols];
    for r in 0..rows {
        for c in 0..cols {
            // The centre element at floor(n/2) moves to index 0.
            out[r * cols + c] = m[((r + sr) % rows) * cols + (c + sc) % cols];
        }
    }
    out
}

fn axis_range(n: usize) -> Vec<f64> {
    if n % 2 == 1 {
        let h = (n - 1) as f64 / 2.0;
        (0..n).map(|i| (i as f64 - h) / (n - 1) as f64).collect()
    } else {
        let h = (n / 2) as f64;
        (0..n).map(|i| (i as f64 - h) / n as f64).collect()
    }
}

fn median(v: &mut [f64]) -> f64 {
    v.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let n = v.len();
    if n % 2 == 1 { v[n / 2] } else { (v[n / 2 - 1] + v[n / 2]) / 2.0 }
}

pub fn phasecong2(im: &Plane) -> Vec<f64> {
    let (nscale, norient) = (4, 4);
    let (min_wave_length, mult, sigma_onf, d_theta_on_sigma, k, epsilon) = (6.0, 2.0f64, 0.55f64, 1.2, 2.0, 0.0001);
    let theta_sigma = PI / norient as f64 / d_theta_on_sigma;
    let (rows, cols) = (im.rows, im.cols);
    let n = rows * cols;
    let imagefft = fft2(&im.data.iter().map(|&v| Complex64::new(v, 0.0)).collect::<Vec<_>>(), rows, cols, false);

    let (xr, yr) = (axis_range(cols), axis_range(rows));
    let mut radius = vec![0.0; n];
    let mut theta = vec![0.0; n];
    for r in 0..rows {
        for c in 0..cols {
            let (x, y) = (xr[c], yr[r]);
            radius[r * cols + c] = (x * x + y * y).sqrt();
            theta[r * cols + c] = (-y).atan2(x);
        }
    }
    let lp = ifftshift(&radius.iter().map(|&rad| 1.0 / (1.0 + (rad / 0.45).powi(30))).collect::<Vec<_>>(), rows, cols);
    let mut radius = ifftshift(&radius, rows, cols);
    let theta = ifftshift(&theta, rows, cols);
    radius[0] = 1.0;
    let sintheta: Vec<f64> = theta.iter().map(|t| t.sin()).collect();
    let costheta: Vec<f64> = theta.iter().map(|t| t.cos()).collect();

    let log_gabor: Vec<Vec<f64>> = (0..nscale)
        .map(|s| {
            let fo = 1.0 / (min_wave_length * mult.powi(s as i32));
            let mut g: Vec<f64> = (0..n)
                .map(|i| (-(radius[i] / fo).ln().powi(2) / (2.0 * sigma_onf.ln().powi(2))).exp() * lp[i])
                .collect();
            g[0] = 0.0;
            g
        })
        .collect();
    let spread: Vec<Vec<f64>> = (0..norient)
        .map(|o| {
            let angl = o as f64 * PI / norient as f64;
            (0..n)
                .map(|i| {
                    let ds = sintheta[i] * angl.cos() - costheta[i] * angl.sin();
                    let dc = costheta[i] * angl.cos() + sintheta[i] * angl.sin();
                    let dtheta = ds.atan2(dc).abs();
                    (-dtheta * dtheta / (2.0 * theta_sigma * theta_sigma)).exp()
                })
                .collect()
        })
        .collect();

    let mut energy_all = vec![0.0; n];
    let mut an_all = vec![0.0; n];
    for o in 0..norient {
        let mut sum_e = vec![0.0; n];
        let mut sum_o = vec![0.0; n];
        let mut sum_an = vec![0.0; n];
        let mut energy = vec![0.0; n];
        let mut eo_all = Vec::new();
        let mut ifft_filters = Vec::new();
        let mut em_n = 0.0;
        for s in 0..nscale {
            let filter: Vec<f64> = (0..n).map(|i| log_gabor[s][i] * spread[o][i]).collect();
            let f = fft2(&filter.iter().map(|&v| Complex64::new(v, 0.0)).collect::<Vec<_>>(), rows, cols, true);
            ifft_filters.push(f.iter().map(|z| z.re * (n as f64).sqrt()).collect::<Vec<_>>());
            let prod: Vec<Complex64> = imagefft.iter().zip(&filter).map(|(z, f)| z * f).collect();
            let eo = fft2(&prod, rows, cols, true);
            for i in 0..n {
                sum_an[i] += eo[i].norm();
                sum_e[i] += eo[i].re;
                sum_o[i] += eo[i].im;
            }
            if s == 0 {
                em_n = filter.iter().map(|v| v * v).sum();
            }
            eo_all.push(eo);
        }
        for i in 0..n {
            let x_energy = (sum_e[i].powi(2) + sum_o[i].powi(2)).sqrt() + epsilon;
            let (mean_e, mean_o) = (sum_e[i] / x_energy, sum_o[i] / x_energy);
            for eo in &eo_all {
                let (e, od) = (eo[i].re, eo[i].im);
                energy[i] += e * mean_e + od * mean_o - (e * mean_o - od * mean_e).abs();
            }
        }
        let mut e2: Vec<f64> = eo_all[0].iter().map(|z| z.norm().powi(2)).collect();
        let mean_e2n = -median(&mut e2) / 0.5f64.ln();
        let noise_power = mean_e2n / em_n;
        let mut est_sum_an2 = 0.0;
        for f in &ifft_filters {
            est_sum_an2 += f.iter().map(|v| v * v).sum::<f64>();
        }
        let mut est_sum_aiaj = 0.0;
        for si in 0..nscale - 1 {
            for sj in si + 1..nscale {
                est_sum_aiaj += (0..n).map(|i| ifft_filters[si][i] * ifft_filters[sj][i]).sum::<f64>();
            }
        }
        let est_noise_energy2 = 2.0 * noise_power * est_sum_an2 + 4.0 * noise_power * est_sum_aiaj;
        let tau = (est_noise_energy2 / 2.0).sqrt();
        let est_noise_energy = tau * (PI / 2.0).sqrt();
        let est_noise_energy_sigma = ((2.0 - PI / 2.0) * tau * tau).sqrt();
        let t = (est_noise_energy + k * est_noise_energy_sigma) / 1.7;
        for i in 0..n {
            energy_all[i] += (energy[i] - t).max(0.0);
            an_all[i] += sum_an[i];
        }
    }
    (0..n).map(|i| energy_all[i] / an_all[i]).collect()
}

/// FSIM of two luma planes given in [0, 1]; computed on the 0-255 scale.
pub fn fsim(a: &Plane, b: &Plane) -> f64 {
    let scale = |p: &Plane| Plane { rows: p.rows, cols: p.cols, data: p.data.iter().map(|v| v * 255.0).collect() };
    let (y1, y2) = (scale(a), scale(b));
    let (rows, cols) = (y1.rows, y1.cols);
    let f = ((rows.min(cols) as f64 / 256.0).round() as usize).max(1);
    let ave = vec![vec![1.0 / (f * f) as f64; f]; f];
    let sub = |p: &Plane| {
        let q = conv2_same(p, &ave);
        let mut data = Vec::new();
        let (mut r2, mut c2) = (0, 0);
        for r in (0..rows).step_by(f) {
            r2 += 1;
            c2 = 0;
            for c in (0..cols).step_by(f) {
                c2 += 1;
                data.push(q.at(r, c));
            }
        }
        Plane { rows: r2, cols: c2, data }
    };
    let (y1, y2) = (sub(&y1), sub(&y2));
    let pc1 = phasecong2(&y1);
    let pc2 = phasecong2(&y2);
    let dx = vec![vec![3.0 / 16.0, 0.0, -3.0 / 16.0], vec![10.0 / 16.0, 0.0, -10.0 / 16.0], vec![3.0 / 16.0, 0.0, -3.0 / 16.0]];
    let dy = vec![vec![3.0 / 16.0, 10.0 / 16.0, 3.0 / 16.0], vec![0.0; 3], vec![-3.0 / 16.0, -10.0 / 16.0, -3.0 / 16.0]];
    let grad = |p: &Plane| {
        let (ix, iy) = (conv2_same(p, &dx), conv2_same(p, &dy));
        ix.data.iter().zip(&iy.data).map(|(a, b)| (a * a + b * b).sqrt()).collect::<Vec<_>>()
    };
    let (g1, g2) = (grad(&y1), grad(&y2));
    let (t1, t2) = (0.85, 160.0);
    let (mut num, mut den) = (0.0, 0.0);
    for i in 0..pc1.len() {
        let pc_sim = (2.0 * pc1[i] * pc2[i] + t1) / (pc1[i].powi(2) + pc2[i].powi(2) + t1);
        let g_sim = (2.0 * g1[i] * g2[i] + t2) / (g1[i].powi(2) + g2[i].powi(2) + t2);
        let pcm = pc1[i].max(pc2[i]);
        num += g_sim * pc_sim * pcm;
        den += pcm;
    }
    num / den
}
