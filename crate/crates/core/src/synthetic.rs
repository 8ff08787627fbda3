//! Seeded synthetic bases for tests, demos and benchmarks.
//!
//! Real face models are license-encumbered, so everything in this crate is
//! exercised against these generators: a front-facing ellipsoidal patch with
//! smooth random deformation modes, and a closed-ish "toy head" ellipsoid with
//! a full UV layout and left/right mirror map.

use std::f64::consts::PI;

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::model::{landmark_positions, ModelParams, MorphableBasis};

/// Ellipsoid semi-axes (x, y, z) of the generated heads, in model units.
pub const HEAD_RADII: [f64; 3] = [80.0, 100.0, 60.0];

/// Parameters of [`smooth_patch_basis`].
#[derive(Clone, Debug)]
pub struct PatchSpec {
    pub rows: usize,
    pub cols: usize,
    pub id_dim: usize,
    pub exp_dim: usize,
    pub landmarks: usize,
    pub seed: u64,
}

impl PatchSpec {
    /// Picks the most square `rows x cols` grid with exactly `vertex_count` vertices.
    pub fn with_vertex_count(
        vertex_count: usize,
        id_dim: usize,
        exp_dim: usize,
        landmarks: usize,
        seed: u64,
    ) -> Self {
        let mut rows = (vertex_count as f64).sqrt().floor() as usize;
        while rows > 1 && vertex_count % rows != 0 {
            rows -= 1;
        }
        let rows = rows.max(1);
        Self {
            rows,
            cols: vertex_count / rows,
            id_dim,
            exp_dim,
            landmarks,
            seed,
        }
    }
}

/// Front half of an ellipsoid head sampled on a `rows x cols` grid with
/// smooth random identity/expression modes, UVs from grid position and a
/// column-reversal mirror map. Landmarks are distinct random vertices.
pub fn smooth_patch_basis(spec: &PatchSpec) -> Result<MorphableBasis> {
    let PatchSpec {
        rows,
        cols,
        id_dim,
        exp_dim,
        landmarks,
        seed,
    } = *spec;
    if rows < 2 || cols < 2 {
        return Err(Error::invalid(format!("patch grid {rows}x{cols} is too small")));
    }
    let n = rows * cols;
    if landmarks > n {
        return Err(Error::invalid(format!("{landmarks} landmarks requested from {n} vertices")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let lon_max = 70f64.to_radians();
    let lat_max = 60f64.to_radians();

    let mut mean = Vec::with_capacity(3 * n);
    let mut uv = Vec::with_capacity(n);
    for r in 0..rows {
        let v = r as f64 / (rows - 1) as f64;
        let lat = -lat_max + 2.0 * lat_max * v;
        for c in 0..cols {
            let u = c as f64 / (cols - 1) as f64;
            let lon = -lon_max + 2.0 * lon_max * u;
            mean.extend_from_slice(&ellipsoid_point(lat, lon));
            uv.push([u, v]);
        }
    }
    let mirror = (0..rows)
        .flat_map(|r| (0..cols).map(move |c| (r * cols + (cols - 1 - c)) as u32))
        .collect();
    let triangles = grid_triangles(rows, cols, cols, &mean);

    let id_basis = smooth_modes(&mut rng, &mean, id_dim, 6.0..12.0);
    let exp_basis = smooth_modes(&mut rng, &mean, exp_dim, 3.0..6.0);
    let landmark_indices = rand::seq::index::sample(&mut rng, n, landmarks)
        .into_iter()
        .map(|i| i as u32)
        .collect();

    MorphableBasis::new(mean, id_basis, exp_basis, triangles, landmark_indices)?
        .with_uv_coords(uv)?
        .with_mirror_map(mirror)
}

/// Ellipsoid head with `rings` latitude rings and `segments` longitude steps
/// (the back seam column is duplicated so UVs stay continuous). `segments`
/// must be even so the mirror map `x -> -x` pairs whole columns.
pub fn toy_head_basis(
    rings: usize,
    segments: usize,
    id_dim: usize,
    exp_dim: usize,
    landmarks: usize,
    seed: u64,
) -> Result<MorphableBasis> {
    if rings < 2 || segments < 4 || segments % 2 != 0 {
        return Err(Error::invalid(format!(
            "toy head needs rings >= 2 and an even segment count >= 4, got {rings}x{segments}"
        )));
    }
    let cols = segments + 1;
    let n = rings * cols;
    let lat_max = 75f64.to_radians();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    let mut mean = Vec::with_capacity(3 * n);
    let mut uv = Vec::with_capacity(n);
    for r in 0..rings {
        let v = r as f64 / (rings - 1) as f64;
        let lat = -lat_max + 2.0 * lat_max * v;
        for j in 0..cols {
            let u = j as f64 / segments as f64;
            let lon = -PI + 2.0 * PI * u;
            mean.extend_from_slice(&ellipsoid_point(lat, lon));
            uv.push([u, v]);
        }
    }
    let mirror = (0..rings)
        .flat_map(|r| (0..cols).map(move |j| (r * cols + (segments - j)) as u32))
        .collect();
    let triangles = grid_triangles(rings, cols, cols, &mean);

    let id_basis = smooth_modes(&mut rng, &mean, id_dim, 4.0..8.0);
    let exp_basis = smooth_modes(&mut rng, &mean, exp_dim, 2.0..4.0);

    // Landmarks from the front-facing half only.
    let front: Vec<u32> = (0..n)
        .filter(|&i| mean[3 * i + 2] > 0.3 * HEAD_RADII[2])
        .map(|i| i as u32)
        .collect();
    if landmarks > front.len() {
        return Err(Error::invalid(format!(
            "{landmarks} landmarks requested, only {} front vertices",
            front.len()
        )));
    }
    let landmark_indices = rand::seq::index::sample(&mut rng, front.len(), landmarks)
        .into_iter()
        .map(|k| front[k])
        .collect();

    MorphableBasis::new(mean, id_basis, exp_basis, triangles, landmark_indices)?
        .with_uv_coords(uv)?
        .with_mirror_map(mirror)
}

/// Random ground-truth parameters and their noise-free landmark observations:
/// scale in [0.8, 1.5], yaw within 45 degrees, pitch and roll within 15
/// degrees, translation within 50 units and `nonzero` randomly placed
/// coefficients with magnitude in [0.2, 1].
pub fn fit_instance(
    basis: &MorphableBasis,
    nonzero: usize,
    seed: u64,
) -> Result<(ModelParams, Vec<[f64; 2]>)> {
    let dim = basis.id_dim() + basis.exp_dim();
    if nonzero > dim {
        return Err(Error::invalid(format!("{nonzero} nonzero coefficients from {dim}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut p = ModelParams::for_basis(basis);
    p.scale = rng.random_range(0.8..=1.5);
    p.rotation.yaw = rng.random_range(-45f64..=45.0).to_radians();
    p.rotation.pitch = rng.random_range(-15f64..=15.0).to_radians();
    p.rotation.roll = rng.random_range(-15f64..=15.0).to_radians();
    p.translation = [rng.random_range(-50.0..=50.0), rng.random_range(-50.0..=50.0)];
    for k in rand::seq::index::sample(&mut rng, dim, nonzero) {
        let sign = if rng.random_bool(0.5) { 1.0 } else { -1.0 };
        let value = sign * rng.random_range(0.2..=1.0);
        if k < basis.id_dim() {
            p.id_coeffs[k] = value;
        } else {
            p.exp_coeffs[k - basis.id_dim()] = value;
        }
    }
    let observed = landmark_positions(basis, &p)?;
    Ok((p, observed))
}

fn ellipsoid_point(lat: f64, lon: f64) -> [f64; 3] {
    let [a, b, c] = HEAD_RADII;
    [
        a * lat.cos() * lon.sin(),
        b * lat.sin(),
        c * lat.cos() * lon.cos(),
    ]
}

/// Two triangles per grid quad, wound so normals point away from the origin.
fn grid_triangles(rows: usize, cols: usize, stride: usize, mean: &[f64]) -> Vec<[u32; 3]> {
    let p = |i: u32| {
        let i = i as usize;
        [mean[3 * i], mean[3 * i + 1], mean[3 * i + 2]]
    };
    let mut tris = Vec::with_capacity(2 * (rows - 1) * (cols - 1));
    for r in 0..rows - 1 {
        for c in 0..cols - 1 {
            let a = (r * stride + c) as u32;
            let b = (r * stride + c + 1) as u32;
            let d = ((r + 1) * stride + c) as u32;
            let e = ((r + 1) * stride + c + 1) as u32;
            for mut t in [[a, b, e], [a, e, d]] {
                let (p0, p1, p2) = (p(t[0]), p(t[1]), p(t[2]));
                let n = cross(sub(p1, p0), sub(p2, p0));
                let centroid = [
                    (p0[0] + p1[0] + p2[0]) / 3.0,
                    (p0[1] + p1[1] + p2[1]) / 3.0,
                    (p0[2] + p1[2] + p2[2]) / 3.0,
                ];
                if dot(n, centroid) < 0.0 {
                    t.swap(1, 2);
                }
                tris.push(t);
            }
        }
    }
    tris
}

/// Columns of low-frequency sinusoidal displacement fields.
fn smooth_modes(
    rng: &mut ChaCha8Rng,
    mean: &[f64],
    count: usize,
    amplitude: std::ops::Range<f64>,
) -> DMatrix<f64> {
    let n = mean.len() / 3;
    let mut m = DMatrix::zeros(3 * n, count);
    for k in 0..count {
        for d in 0..3 {
            let amp = rng.random_range(amplitude.clone());
            let freq = rng.random_range(1.5..3.0);
            let theta = rng.random_range(0.0..PI);
            let phi = rng.random_range(0.0..2.0 * PI);
            let dir = [
                theta.sin() * phi.cos() * freq,
                theta.sin() * phi.sin() * freq,
                theta.cos() * freq,
            ];
            let phase = rng.random_range(0.0..2.0 * PI);
            for i in 0..n {
                let q = [
                    mean[3 * i] / HEAD_RADII[0],
                    mean[3 * i + 1] / HEAD_RADII[1],
                    mean[3 * i + 2] / HEAD_RADII[2],
                ];
                m[(3 * i + d, k)] = amp * (dot(dir, q) + phase).sin();
            }
        }
    }
    m
}

fn sub(a: [f64; 3], b: [f64; 3]) -> [f64; 3] {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

fn cross(a: [f64; 3], b: [f64; 3]) -> [f64; 3] {
    [
        a[1] * b[2] - a[2] * b[1],
        a[2] * b[0] - a[0] * b[2],
        a[0] * b[1] - a[1] * b[0],
    ]
}

fn dot(a: [f64; 3], b: [f64; 3]) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}
