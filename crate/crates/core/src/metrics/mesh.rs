//! Triangle count and sampled average triangle area of a mesh.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::FaceMesh;

pub const DEFAULT_SAMPLE_COUNT: usize = 50;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MeshStats {
    pub triangle_count: usize,
    /// Mean area of the triangles incident to the sampled vertices; 0 when
    /// no sampled vertex touches a triangle.
    pub avg_triangle_area: f64,
    pub sample_seed: u64,
    pub sampled_vertex_count: usize,
    pub incident_triangle_count: usize,
}

pub fn triangle_area(a: [f64; 3], b: [f64; 3], c: [f64; 3]) -> f64 {
    let u = [b[0] - a[0], b[1] - a[1], b[2] - a[2]];
    let v = [c[0] - a[0], c[1] - a[1], c[2] - a[2]];
    let cr = [
        u[1] * v[2] - u[2] * v[1],
        u[2] * v[0] - u[0] * v[2],
        u[0] * v[1] - u[1] * v[0],
    ];
    0.5 * (cr[0] * cr[0] + cr[1] * cr[1] + cr[2] * cr[2]).sqrt()
}

/// The vertices drawn by [`mesh_stats`] for `seed`, in draw order.
pub fn sample_vertices(vertex_count: usize, sample_count: usize, seed: u64) -> Result<Vec<usize>> {
    if sample_count == 0 || sample_count > vertex_count {
        return Err(Error::invalid(format!(
            "cannot sample {sample_count} distinct vertices from {vertex_count}"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Ok(rand::seq::index::sample(&mut rng, vertex_count, sample_count).into_vec())
}

/// Samples `sample_count` distinct vertices with a seeded RNG and averages
/// the areas of every triangle incident to at least one of them (each
/// triangle counted once).
pub fn mesh_stats(mesh: &FaceMesh, sample_count: usize, seed: u64) -> Result<MeshStats> {
    if mesh.triangles.is_empty() {
        return Err(Error::invalid("mesh has no triangles"));
    }
    let sampled = sample_vertices(mesh.vertex_count(), sample_count, seed)?;
    let mut chosen = vec![false; mesh.vertex_count()];
    for &i in &sampled {
        chosen[i] = true;
    }
    let mut total = 0.0;
    let mut count = 0usize;
    for t in &mesh.triangles {
        if t.iter().any(|&i| chosen[i as usize]) {
            let [a, b, c] = t.map(|i| mesh.vertices[i as usize]);
            total += triangle_area(a, b, c);
            count += 1;
        }
    }
    Ok(MeshStats {
        triangle_count: mesh.triangles.len(),
        avg_triangle_area: if count > 0 { total / count as f64 } else { 0.0 },
        sample_seed: seed,
        sampled_vertex_count: sample_count,
        incident_triangle_count: count,
    })
}
