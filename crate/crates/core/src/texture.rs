//! Per-vertex texture extraction with z-buffer visibility, mirror-symmetry
//! fill for occluded vertices, and UV atlas baking.
//!
//! Depth is the rotated z coordinate; larger z is closer to the camera, which
//! looks down -z. Atlas row 0 is v = 1 (top of the image).

use crate::error::{Error, Result};
use crate::image::ImageBuffer;
use crate::model::{check_mirror_map, FaceMesh, ModelParams, MorphableBasis};

pub const DEFAULT_ATLAS_RESOLUTION: usize = 1024;
pub const DEFAULT_RASTER_SIZE: usize = 512;
pub const MIN_RASTER_SIZE: usize = 64;
pub const DILATION_PASSES: usize = 4;

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct VisibilityMask(pub Vec<bool>);

impl VisibilityMask {
    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn visible_count(&self) -> usize {
        self.0.iter().filter(|&&v| v).count()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TextureAtlas {
    pub image: ImageBuffer,
    /// Row-major, true where a triangle wrote the texel (before dilation).
    pub coverage: Vec<bool>,
}

impl TextureAtlas {
    pub fn resolution(&self) -> usize {
        self.image.width()
    }

    pub fn is_covered(&self, x: usize, y: usize) -> bool {
        self.coverage[y * self.resolution() + x]
    }
}

/// Signed double area of the 2D triangle `(a, b, p)`.
fn edge(a: [f64; 2], b: [f64; 2], p: [f64; 2]) -> f64 {
    (b[0] - a[0]) * (p[1] - a[1]) - (b[1] - a[1]) * (p[0] - a[0])
}

/// Barycentric coordinates of `p` in `(a, b, c)`, `None` for a degenerate triangle.
fn barycentric(a: [f64; 2], b: [f64; 2], c: [f64; 2], p: [f64; 2]) -> Option<[f64; 3]> {
    let area = edge(a, b, c);
    if area == 0.0 {
        return None;
    }
    Some([edge(b, c, p) / area, edge(c, a, p) / area, edge(a, b, p) / area])
}

const INSIDE_TOL: f64 = 1e-9;

fn inside(w: [f64; 3]) -> bool {
    w.iter().all(|&x| x >= -INSIDE_TOL)
}

/// Integer sample positions within `[lo, hi]` clamped to `[0, size - 1]`.
fn span(lo: f64, hi: f64, size: usize) -> std::ops::RangeInclusive<usize> {
    let a = lo.ceil().max(0.0) as usize;
    let b = hi.floor().min((size - 1) as f64);
    if b < 0.0 || (a as f64) > b {
        return 1..=0;
    }
    a..=b as usize
}

/// Which vertices of `mesh`, posed by `params`, the camera sees.
///
/// Triangles are rasterized into a `raster_size`-square depth buffer covering
/// the projected bounding box. A vertex is visible when the front-most surface
/// at its pixel lies no more than `depth_epsilon` in front of it (or nothing
/// was drawn there) and its area-weighted normal has positive z.
pub fn visibility_mask(
    mesh: &FaceMesh,
    params: &ModelParams,
    raster_size: usize,
) -> Result<VisibilityMask> {
    if raster_size < MIN_RASTER_SIZE {
        return Err(Error::invalid(format!(
            "raster_size must be at least {MIN_RASTER_SIZE}, got {raster_size}"
        )));
    }
    if mesh.triangles.is_empty() {
        return Err(Error::invalid("visibility needs at least one triangle"));
    }
    let n = mesh.vertex_count();
    let rot = params.rotation.to_matrix()?;
    let rotated: Vec<[f64; 3]> = mesh.vertices.iter().map(|&v| rot.apply(v)).collect();

    let (mut lo, mut hi) = ([f64::INFINITY; 3], [f64::NEG_INFINITY; 3]);
    for p in &rotated {
        for a in 0..3 {
            lo[a] = lo[a].min(p[a]);
            hi[a] = hi[a].max(p[a]);
        }
    }
    let extent = (hi[0] - lo[0]).max(hi[1] - lo[1]);
    let to_raster = if extent > 0.0 {
        (raster_size - 1) as f64 / extent
    } else {
        1.0
    };
    let screen: Vec<[f64; 2]> = rotated
        .iter()
        .map(|p| [(p[0] - lo[0]) * to_raster, (p[1] - lo[1]) * to_raster])
        .collect();
    let eps = (1e-4 * (hi[2] - lo[2])).max(1e-9 * extent).max(f64::MIN_POSITIVE);

    let mut depth = vec![f64::NEG_INFINITY; raster_size * raster_size];
    let mut owner = vec![u32::MAX; raster_size * raster_size];
    for (t, tri) in mesh.triangles.iter().enumerate() {
        let [a, b, c] = tri.map(|i| screen[i as usize]);
        let z = tri.map(|i| rotated[i as usize][2]);
        if edge(a, b, c) == 0.0 {
            continue;
        }
        let xs = span(a[0].min(b[0]).min(c[0]), a[0].max(b[0]).max(c[0]), raster_size);
        let ys = span(a[1].min(b[1]).min(c[1]), a[1].max(b[1]).max(c[1]), raster_size);
        for y in ys {
            for x in xs.clone() {
                let p = [x as f64, y as f64];
                let Some(w) = barycentric(a, b, c, p) else { continue };
                if !inside(w) {
                    continue;
                }
                let d = w[0] * z[0] + w[1] * z[1] + w[2] * z[2];
                let k = y * raster_size + x;
                // Strictly in front by more than eps: ties keep the earlier triangle.
                if owner[k] == u32::MAX || d > depth[k] + eps {
                    depth[k] = d;
                    owner[k] = t as u32;
                }
            }
        }
    }

    let mut normals = vec![[0.0f64; 3]; n];
    for tri in &mesh.triangles {
        let [p0, p1, p2] = tri.map(|i| rotated[i as usize]);
        let u = [p1[0] - p0[0], p1[1] - p0[1], p1[2] - p0[2]];
        let v = [p2[0] - p0[0], p2[1] - p0[1], p2[2] - p0[2]];
        let cr = [
            u[1] * v[2] - u[2] * v[1],
            u[2] * v[0] - u[0] * v[2],
            u[0] * v[1] - u[1] * v[0],
        ];
        for &i in tri {
            for a in 0..3 {
                normals[i as usize][a] += cr[a];
            }
        }
    }

    let max_index = (raster_size - 1) as f64;
    let visible = (0..n)
        .map(|i| {
            if normals[i][2] <= 0.0 {
                return false;
            }
            let s = screen[i];
            let x = s[0].round().clamp(0.0, max_index) as usize;
            let y = s[1].round().clamp(0.0, max_index) as usize;
            let t = owner[y * raster_size + x];
            if t == u32::MAX {
                return true;
            }
            let tri = mesh.triangles[t as usize];
            let [a, b, c] = tri.map(|j| screen[j as usize]);
            let z = tri.map(|j| rotated[j as usize][2]);
            let w = barycentric(a, b, c, s).expect("owning triangles are non-degenerate");
            let front = w[0] * z[0] + w[1] * z[1] + w[2] * z[2];
            front <= rotated[i][2] + eps
        })
        .collect();
    Ok(VisibilityMask(visible))
}

/// Bilinear RGB samples at the projected positions of visible, in-bounds
/// vertices; everything else is black and flagged invalid. Gray images are
/// replicated into all three channels.
pub fn extract_vertex_colors(
    image: &ImageBuffer,
    projected: &[[f64; 2]],
    visibility: &VisibilityMask,
) -> Result<(Vec<[f64; 3]>, Vec<bool>)> {
    if projected.len() != visibility.len() {
        return Err(Error::invalid(format!(
            "{} projected points for {} visibility flags",
            projected.len(),
            visibility.len()
        )));
    }
    let mut colors = vec![[0.0; 3]; projected.len()];
    let mut valid = vec![false; projected.len()];
    for (i, p) in projected.iter().enumerate() {
        if !visibility.0[i] || !image.contains(p[0], p[1]) {
            continue;
        }
        for (c, out) in colors[i].iter_mut().enumerate() {
            *out = image.sample_bilinear(p[0], p[1], c.min(image.channels() - 1));
        }
        valid[i] = true;
    }
    Ok((colors, valid))
}

/// Copies colors from valid mirror partners into invalid vertices, then
/// gives any vertex still invalid the mean color of the originally valid ones.
pub fn symmetry_fill(
    colors: &[[f64; 3]],
    valid: &[bool],
    mirror_map: &[u32],
) -> Result<(Vec<[f64; 3]>, Vec<bool>)> {
    let n = colors.len();
    if valid.len() != n {
        return Err(Error::invalid(format!("{} colors for {} validity flags", n, valid.len())));
    }
    check_mirror_map(mirror_map, n)?;
    let valid_count = valid.iter().filter(|&&v| v).count();
    if valid_count == 0 {
        return Err(Error::EmptyTexture);
    }
    let mut mean = [0.0; 3];
    for (c, _) in colors.iter().zip(valid).filter(|(_, &v)| v) {
        for a in 0..3 {
            mean[a] += c[a];
        }
    }
    mean = mean.map(|m| m / valid_count as f64);

    let mut out = colors.to_vec();
    for i in 0..n {
        if valid[i] {
            continue;
        }
        let j = mirror_map[i] as usize;
        out[i] = if valid[j] { colors[j] } else { mean };
    }
    Ok((out, vec![true; n]))
}

fn check_resolution(resolution: usize) -> Result<()> {
    if resolution < 64 || !resolution.is_power_of_two() {
        return Err(Error::invalid(format!(
            "atlas resolution must be a power of two >= 64, got {resolution}"
        )));
    }
    Ok(())
}

/// UV of the center of texel `(x, y)`.
pub fn texel_uv(x: usize, y: usize, resolution: usize) -> [f64; 2] {
    let r = resolution as f64;
    [(x as f64 + 0.5) / r, 1.0 - (y as f64 + 0.5) / r]
}

/// Rasterizes every triangle in UV space with barycentric color
/// interpolation, then dilates the written region [`DILATION_PASSES`] times.
/// Where UV triangles overlap, the first triangle wins.
pub fn bake_atlas(
    uv: &[[f64; 2]],
    triangles: &[[u32; 3]],
    colors: &[[f64; 3]],
    resolution: usize,
) -> Result<TextureAtlas> {
    check_resolution(resolution)?;
    if colors.len() != uv.len() {
        return Err(Error::invalid(format!(
            "{} vertex colors for {} UV coordinates",
            colors.len(),
            uv.len()
        )));
    }
    if triangles.iter().flatten().any(|&i| i as usize >= uv.len()) {
        return Err(Error::invalid("triangle index out of range for UV coordinates"));
    }
    let res = resolution as f64;
    // Texel (x, y) has its center at pixel-space (x, y).
    let to_px = |p: [f64; 2]| [p[0] * res - 0.5, (1.0 - p[1]) * res - 0.5];
    let mut image = ImageBuffer::new(resolution, resolution, 3)?;
    let mut coverage = vec![false; resolution * resolution];

    for tri in triangles {
        let [a, b, c] = tri.map(|i| to_px(uv[i as usize]));
        let [ca, cb, cc] = tri.map(|i| colors[i as usize]);
        let [ua, ub, uc] = tri.map(|i| uv[i as usize]);
        if edge(ua, ub, uc) == 0.0 {
            continue;
        }
        let xs = span(a[0].min(b[0]).min(c[0]), a[0].max(b[0]).max(c[0]), resolution);
        let ys = span(a[1].min(b[1]).min(c[1]), a[1].max(b[1]).max(c[1]), resolution);
        for y in ys {
            for x in xs.clone() {
                let k = y * resolution + x;
                if coverage[k] {
                    continue;
                }
                let Some(w) = barycentric(ua, ub, uc, texel_uv(x, y, resolution)) else {
                    continue;
                };
                if !inside(w) {
                    continue;
                }
                let w = w.map(|v| v.max(0.0));
                let s = w[0] + w[1] + w[2];
                for ch in 0..3 {
                    let v = (w[0] * ca[ch] + w[1] * cb[ch] + w[2] * cc[ch]) / s;
                    image.set(x, y, ch, v);
                }
                coverage[k] = true;
            }
        }
    }
    dilate(&mut image, &coverage, DILATION_PASSES);
    Ok(TextureAtlas { image, coverage })
}

/// [`bake_atlas`] with the basis UV layout and triangles.
pub fn bake_uv_atlas(
    basis: &MorphableBasis,
    colors: &[[f64; 3]],
    resolution: usize,
) -> Result<TextureAtlas> {
    let uv = basis
        .uv_coords()
        .ok_or_else(|| Error::invalid("basis has no UV coordinates; atlas baking needs them"))?;
    bake_atlas(uv, basis.triangles(), colors, resolution)
}

/// Each pass fills every unfilled texel that touches a filled one (8-neighbor)
/// with the mean of its filled neighbors.
fn dilate(image: &mut ImageBuffer, coverage: &[bool], passes: usize) {
    let (w, h) = (image.width(), image.height());
    let mut filled = coverage.to_vec();
    for _ in 0..passes {
        let snapshot = image.clone();
        let before = filled.clone();
        for y in 0..h {
            for x in 0..w {
                if before[y * w + x] {
                    continue;
                }
                let mut sum = [0.0; 3];
                let mut count = 0usize;
                for dy in -1i64..=1 {
                    for dx in -1i64..=1 {
                        let (nx, ny) = (x as i64 + dx, y as i64 + dy);
                        if nx < 0 || ny < 0 || nx >= w as i64 || ny >= h as i64 {
                            continue;
                        }
                        let (nx, ny) = (nx as usize, ny as usize);
                        if before[ny * w + nx] {
                            for (c, s) in sum.iter_mut().enumerate() {
                                *s += snapshot.get(nx, ny, c);
                            }
                            count += 1;
                        }
                    }
                }
                if count > 0 {
                    for (c, s) in sum.iter().enumerate() {
                        image.set(x, y, c, s / count as f64);
                    }
                    filled[y * w + x] = true;
                }
            }
        }
    }
}

/// Outputs of [`texture_from_image`].
#[derive(Clone, Debug, PartialEq)]
pub struct TextureResult {
    pub visibility: VisibilityMask,
    /// Sampled colors and validity before symmetry fill.
    pub sampled: Vec<[f64; 3]>,
    pub sampled_valid: Vec<bool>,
    /// Colors after symmetry fill; every vertex is valid.
    pub colors: Vec<[f64; 3]>,
    pub atlas: TextureAtlas,
}

/// Visibility, extraction, symmetry fill and atlas baking in one pass.
pub fn texture_from_image(
    basis: &MorphableBasis,
    params: &ModelParams,
    image: &ImageBuffer,
    resolution: usize,
    raster_size: usize,
) -> Result<TextureResult> {
    check_resolution(resolution)?;
    let mirror = basis.mirror_map().ok_or_else(|| {
        Error::invalid("basis has no mirror map; symmetry fill needs left/right vertex pairs")
    })?;
    if basis.uv_coords().is_none() {
        return Err(Error::invalid(
            "basis has no UV coordinates; atlas baking needs them",
        ));
    }
    let mesh = crate::model::synthesize_shape(basis, &params.id_coeffs, &params.exp_coeffs)?;
    let visibility = visibility_mask(&mesh, params, raster_size)?;
    let projected = crate::model::project_model(basis, params)?;
    let (sampled, sampled_valid) = extract_vertex_colors(image, &projected, &visibility)?;
    let (colors, _) = symmetry_fill(&sampled, &sampled_valid, mirror)?;
    let atlas = bake_uv_atlas(basis, &colors, resolution)?;
    Ok(TextureResult {
        visibility,
        sampled,
        sampled_valid,
        colors,
        atlas,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn square() -> FaceMesh {
        FaceMesh::new(
            vec![[0.0, 0.0, 0.0], [1.0, 0.0, 0.0], [1.0, 1.0, 0.0], [0.0, 1.0, 0.0]],
            vec![[0, 1, 2], [0, 2, 3]],
        )
        .unwrap()
    }

    #[test]
    fn planar_quad_fully_visible() {
        let p = ModelParams::neutral(0, 0);
        for size in [64, 100, 257] {
            assert_eq!(visibility_mask(&square(), &p, size).unwrap().visible_count(), 4);
        }
    }

    #[test]
    fn small_raster_and_empty_mesh_rejected() {
        let p = ModelParams::neutral(0, 0);
        assert!(visibility_mask(&square(), &p, 32).is_err());
        let empty = FaceMesh::new(vec![[0.0; 3]], vec![]).unwrap();
        assert!(visibility_mask(&empty, &p, 64).is_err());
    }

    #[test]
    fn occluded_triangle_hidden() {
        let mesh = FaceMesh::new(
            vec![
                [0.2, 0.2, 0.0],
                [0.8, 0.2, 0.0],
                [0.5, 0.8, 0.0],
                [-1.0, -1.0, 1.0],
                [2.0, -1.0, 1.0],
                [0.5, 2.0, 1.0],
            ],
            vec![[0, 1, 2], [3, 4, 5]],
        )
        .unwrap();
        let v = visibility_mask(&mesh, &ModelParams::neutral(0, 0), 128).unwrap();
        assert_eq!(v.0, vec![false, false, false, true, true, true]);
    }

    #[test]
    fn symmetry_fill_copies_then_falls_back_to_mean() {
        let colors = [[1.0, 0.0, 0.0], [0.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0; 3]];
        let valid = [true, false, true, false];
        let (out, v) = symmetry_fill(&colors, &valid, &[1, 0, 2, 3]).unwrap();
        assert_eq!(out[1], [1.0, 0.0, 0.0]);
        assert_eq!(out[3], [0.5, 0.5, 0.0]);
        assert!(v.iter().all(|&x| x));
        assert!(matches!(
            symmetry_fill(&colors, &[false; 4], &[1, 0, 2, 3]),
            Err(Error::EmptyTexture)
        ));
    }

    #[test]
    fn atlas_resolution_checked() {
        let uv = [[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]];
        let c = [[1.0, 0.0, 0.0]; 3];
        assert!(bake_atlas(&uv, &[[0, 1, 2]], &c, 100).is_err());
        assert!(bake_atlas(&uv, &[[0, 1, 2]], &c, 32).is_err());
        let atlas = bake_atlas(&uv, &[[0, 1, 2]], &c, 64).unwrap();
        for y in 0..64 {
            for x in 0..64 {
                if atlas.is_covered(x, y) {
                    assert_eq!(atlas.image.rgb(x, y), [1.0, 0.0, 0.0]);
                }
            }
        }
        assert!(atlas.coverage.iter().filter(|&&c| c).count() > 1900);
    }
}
