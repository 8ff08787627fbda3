//! Independent reference implementations used as test oracles.
#![allow(dead_code)]

use morphface::model::{ModelParams, MorphableBasis};
use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub mod quality;

/// Closed-form expansion of Rz(roll) Ry(yaw) Rx(pitch), row-major.
pub fn rotation(pitch: f64, yaw: f64, roll: f64) -> [[f64; 3]; 3] {
    let (sa, ca) = (pitch.sin(), pitch.cos());
    let (sb, cb) = (yaw.sin(), yaw.cos());
    let (sc, cc) = (roll.sin(), roll.cos());
    [
        [cc * cb, cc * sb * sa - sc * ca, cc * sb * ca + sc * sa],
        [sc * cb, sc * sb * sa + cc * ca, sc * sb * ca - cc * sa],
        [-sb, cb * sa, cb * ca],
    ]
}

/// Flattened shape by explicit matrix-vector products.
pub fn shape(basis: &MorphableBasis, id: &[f64], exp: &[f64]) -> Vec<f64> {
    let n = basis.mean_shape().len();
    let mut out = basis.mean_shape().to_vec();
    for (m, c) in [(basis.id_basis(), id), (basis.exp_basis(), exp)] {
        for k in 0..m.ncols() {
            for r in 0..n {
                out[r] += m[(r, k)] * c[k];
            }
        }
    }
    out
}

pub fn project(basis: &MorphableBasis, p: &ModelParams) -> Vec<[f64; 2]> {
    let s = shape(basis, &p.id_coeffs, &p.exp_coeffs);
    let r = rotation(p.rotation.pitch, p.rotation.yaw, p.rotation.roll);
    s.chunks(3)
        .map(|v| {
            let x = r[0][0] * v[0] + r[0][1] * v[1] + r[0][2] * v[2];
            let y = r[1][0] * v[0] + r[1][1] * v[1] + r[1][2] * v[2];
            [p.scale * x + p.translation[0], p.scale * y + p.translation[1]]
        })
        .collect()
}

pub fn landmarks(basis: &MorphableBasis, p: &ModelParams) -> Vec<[f64; 2]> {
    let all = project(basis, p);
    basis.landmark_indices().iter().map(|&i| all[i as usize]).collect()
}

pub fn vdc(basis: &MorphableBasis, a: &ModelParams, b: &ModelParams) -> f64 {
    let (pa, pb) = (project(basis, a), project(basis, b));
    let mut total = 0.0;
    for i in 0..pa.len() {
        let dx = pa[i][0] - pb[i][0];
        let dy = pa[i][1] - pb[i][1];
        total += dx * dx + dy * dy;
    }
    total / pa.len() as f64
}

/// Replace-one-parameter weights, normalized by the maximum.
pub fn wpdc_weights(basis: &MorphableBasis, pred: &ModelParams, gt: &ModelParams) -> Vec<f64> {
    let g = gt.to_flat();
    let q = pred.to_flat();
    let base = project(basis, gt);
    let mut w: Vec<f64> = (0..g.len())
        .map(|i| {
            let mut s = g.clone();
            s[i] = q[i];
            let p = ModelParams::from_flat(&s, basis.id_dim(), basis.exp_dim()).unwrap();
            let moved = project(basis, &p);
            moved
                .iter()
                .zip(&base)
                .map(|(a, b)| (a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2))
                .sum::<f64>()
                .sqrt()
        })
        .collect();
    let max = w.iter().cloned().fold(0.0, f64::max);
    if max == 0.0 {
        return vec![1.0 / w.len() as f64; w.len()];
    }
    for x in &mut w {
        *x /= max;
    }
    w
}

/// Small dense random basis with `n` vertices and one triangle per three
/// consecutive vertices.
pub fn random_basis(n: usize, id: usize, exp: usize, seed: u64) -> MorphableBasis {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mean: Vec<f64> = (0..3 * n).map(|_| rng.random_range(-50.0..50.0)).collect();
    let a = DMatrix::from_fn(3 * n, id, |_, _| rng.random_range(-5.0..5.0));
    let b = DMatrix::from_fn(3 * n, exp, |_, _| rng.random_range(-5.0..5.0));
    let tris = (0..n / 3).map(|t| [3 * t as u32, 3 * t as u32 + 1, 3 * t as u32 + 2]).collect();
    let lms = (0..n as u32).collect();
    MorphableBasis::new(mean, a, b, tris, lms).unwrap()
}

pub fn random_params(basis: &MorphableBasis, rng: &mut impl Rng) -> ModelParams {
    let mut p = ModelParams::for_basis(basis);
    p.scale = rng.random_range(0.5..2.0);
    p.rotation.pitch = rng.random_range(-0.6..0.6);
    p.rotation.yaw = rng.random_range(-0.9..0.9);
    p.rotation.roll = rng.random_range(-0.6..0.6);
    p.translation = [rng.random_range(-60.0..60.0), rng.random_range(-60.0..60.0)];
    for c in p.id_coeffs.iter_mut().chain(p.exp_coeffs.iter_mut()) {
        *c = rng.random_range(-1.5..1.5);
    }
    p
}

/// Central differences of the stacked landmark residual, step `h`.
pub fn numeric_jacobian(basis: &MorphableBasis, p: &ModelParams, h: f64) -> DMatrix<f64> {
    let flat = p.to_flat();
    let l = basis.landmark_indices().len();
    let mut jac = DMatrix::zeros(2 * l, flat.len());
    for k in 0..flat.len() {
        let eval = |d: f64| {
            let mut f = flat.clone();
            f[k] += d;
            landmarks(basis, &ModelParams::from_flat(&f, basis.id_dim(), basis.exp_dim()).unwrap())
        };
        let (plus, minus) = (eval(h), eval(-h));
        for j in 0..l {
            for a in 0..2 {
                jac[(2 * j + a, k)] = (plus[j][a] - minus[j][a]) / (2.0 * h);
            }
        }
    }
    jac
}
