//! Linear morphable shape model and scaled orthographic projection.
//!
//! A face shape is the mean shape plus identity and expression offsets,
//! `S = mean + A_id * a_id + A_exp * a_exp`, stored as an interleaved
//! `x0, y0, z0, x1, ...` vector. A shape is placed in the image by
//! `f * Pr * R * S + t`, where `Pr` keeps the first two rows after rotation.
//!
//! # Euler convention
//!
//! `R = Rz(roll) * Ry(yaw) * Rx(pitch)`, right-handed, angles in radians.
//! Pitch turns about x, yaw about y, roll about z; pitch is applied first.

use nalgebra::{DMatrix, Matrix3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Mean shape, PCA bases and topology of a morphable face model.
#[derive(Clone, Debug, PartialEq)]
pub struct MorphableBasis {
    mean_shape: Vec<f64>,
    id_basis: DMatrix<f64>,
    exp_basis: DMatrix<f64>,
    triangles: Vec<[u32; 3]>,
    landmark_indices: Vec<u32>,
    uv_coords: Option<Vec<[f64; 2]>>,
    mirror_map: Option<Vec<u32>>,
}

impl MorphableBasis {
    /// Builds a basis, validating dimensions and index ranges.
    pub fn new(
        mean_shape: Vec<f64>,
        id_basis: DMatrix<f64>,
        exp_basis: DMatrix<f64>,
        triangles: Vec<[u32; 3]>,
        landmark_indices: Vec<u32>,
    ) -> Result<Self> {
        if mean_shape.is_empty() || mean_shape.len() % 3 != 0 {
            return Err(Error::invalid(format!(
                "mean shape length {} is not a positive multiple of 3",
                mean_shape.len()
            )));
        }
        let rows = mean_shape.len();
        let n = rows / 3;
        if id_basis.nrows() != rows {
            return Err(Error::invalid(format!(
                "id_basis has {} rows, expected {rows}",
                id_basis.nrows()
            )));
        }
        if exp_basis.nrows() != rows {
            return Err(Error::invalid(format!(
                "exp_basis has {} rows, expected {rows}",
                exp_basis.nrows()
            )));
        }
        if let Some(t) = triangles.iter().find(|t| t.iter().any(|&i| i as usize >= n)) {
            return Err(Error::invalid(format!(
                "triangle {t:?} references a vertex outside 0..{n}"
            )));
        }
        if let Some(&i) = landmark_indices.iter().find(|&&i| i as usize >= n) {
            return Err(Error::invalid(format!(
                "landmark index {i} outside 0..{n}"
            )));
        }
        Ok(Self {
            mean_shape,
            id_basis,
            exp_basis,
            triangles,
            landmark_indices,
            uv_coords: None,
            mirror_map: None,
        })
    }

    pub fn with_uv_coords(mut self, uv: Vec<[f64; 2]>) -> Result<Self> {
        if uv.len() != self.vertex_count() {
            return Err(Error::invalid(format!(
                "uv_coords has {} entries, expected {}",
                uv.len(),
                self.vertex_count()
            )));
        }
        if uv
            .iter()
            .any(|p| !(0.0..=1.0).contains(&p[0]) || !(0.0..=1.0).contains(&p[1]))
        {
            return Err(Error::invalid("uv coordinates must lie in [0, 1]^2"));
        }
        self.uv_coords = Some(uv);
        Ok(self)
    }

    pub fn with_mirror_map(mut self, map: Vec<u32>) -> Result<Self> {
        check_mirror_map(&map, self.vertex_count())?;
        self.mirror_map = Some(map);
        Ok(self)
    }

    pub fn vertex_count(&self) -> usize {
        self.mean_shape.len() / 3
    }

    pub fn id_dim(&self) -> usize {
        self.id_basis.ncols()
    }

    pub fn exp_dim(&self) -> usize {
        self.exp_basis.ncols()
    }

    /// Length of the flattened parameter vector, see [`ModelParams::to_flat`].
    pub fn param_dim(&self) -> usize {
        POSE_PARAMS + self.id_dim() + self.exp_dim()
    }

    pub fn mean_shape(&self) -> &[f64] {
        &self.mean_shape
    }

    pub fn id_basis(&self) -> &DMatrix<f64> {
        &self.id_basis
    }

    pub fn exp_basis(&self) -> &DMatrix<f64> {
        &self.exp_basis
    }

    pub fn triangles(&self) -> &[[u32; 3]] {
        &self.triangles
    }

    pub fn landmark_indices(&self) -> &[u32] {
        &self.landmark_indices
    }

    pub fn uv_coords(&self) -> Option<&[[f64; 2]]> {
        self.uv_coords.as_deref()
    }

    pub fn mirror_map(&self) -> Option<&[u32]> {
        self.mirror_map.as_deref()
    }

    /// Fails unless both coefficient vectors match the basis column counts.
    pub fn check_coeffs(&self, id_coeffs: &[f64], exp_coeffs: &[f64]) -> Result<()> {
        if id_coeffs.len() != self.id_dim() {
            return Err(Error::invalid(format!(
                "id_coeffs has length {}, basis expects {}",
                id_coeffs.len(),
                self.id_dim()
            )));
        }
        if exp_coeffs.len() != self.exp_dim() {
            return Err(Error::invalid(format!(
                "exp_coeffs has length {}, basis expects {}",
                exp_coeffs.len(),
                self.exp_dim()
            )));
        }
        Ok(())
    }

    /// One coordinate of the synthesized shape. Every synthesis path goes
    /// through here so subselections agree bit-for-bit with full synthesis.
    #[inline]
    pub(crate) fn shape_coord(&self, row: usize, id_coeffs: &[f64], exp_coeffs: &[f64]) -> f64 {
        // Zero coefficients are skipped so the mean comes back bit for bit.
        let mut v = self.mean_shape[row];
        for (k, &a) in id_coeffs.iter().enumerate().filter(|(_, &a)| a != 0.0) {
            v += self.id_basis[(row, k)] * a;
        }
        for (k, &a) in exp_coeffs.iter().enumerate().filter(|(_, &a)| a != 0.0) {
            v += self.exp_basis[(row, k)] * a;
        }
        v
    }

    #[inline]
    pub(crate) fn shape_vertex(&self, i: usize, id_coeffs: &[f64], exp_coeffs: &[f64]) -> [f64; 3] {
        [
            self.shape_coord(3 * i, id_coeffs, exp_coeffs),
            self.shape_coord(3 * i + 1, id_coeffs, exp_coeffs),
            self.shape_coord(3 * i + 2, id_coeffs, exp_coeffs),
        ]
    }
}

pub(crate) fn check_mirror_map(map: &[u32], n: usize) -> Result<()> {
    if map.len() != n {
        return Err(Error::invalid(format!(
            "mirror map has {} entries, expected {n}",
            map.len()
        )));
    }
    for (i, &j) in map.iter().enumerate() {
        if j as usize >= n {
            return Err(Error::invalid(format!("mirror map entry {i} -> {j} out of range")));
        }
        if map[j as usize] as usize != i {
            return Err(Error::invalid(format!(
                "mirror map is not an involution at vertex {i}"
            )));
        }
    }
    Ok(())
}

/// Number of pose entries at the front of the flattened parameter vector.
pub const POSE_PARAMS: usize = 6;

/// Pitch, yaw and roll in radians.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct EulerAngles {
    pub pitch: f64,
    pub yaw: f64,
    pub roll: f64,
}

/// Shape coefficients plus camera pose.
///
/// The flattened order, used by the WPDC weights and the parameter JSON, is
/// `[f, pitch, yaw, roll, t_x, t_y, id..., exp...]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelParams {
    pub scale: f64,
    pub rotation: EulerAngles,
    pub translation: [f64; 2],
    pub id_coeffs: Vec<f64>,
    pub exp_coeffs: Vec<f64>,
}

impl ModelParams {
    /// Unit scale, zero pose and zero coefficients.
    pub fn neutral(id_dim: usize, exp_dim: usize) -> Self {
        Self {
            scale: 1.0,
            rotation: EulerAngles::default(),
            translation: [0.0, 0.0],
            id_coeffs: vec![0.0; id_dim],
            exp_coeffs: vec![0.0; exp_dim],
        }
    }

    pub fn for_basis(basis: &MorphableBasis) -> Self {
        Self::neutral(basis.id_dim(), basis.exp_dim())
    }

    pub fn to_flat(&self) -> Vec<f64> {
        let mut v = Vec::with_capacity(POSE_PARAMS + self.id_coeffs.len() + self.exp_coeffs.len());
        v.extend_from_slice(&[
            self.scale,
            self.rotation.pitch,
            self.rotation.yaw,
            self.rotation.roll,
            self.translation[0],
            self.translation[1],
        ]);
        v.extend_from_slice(&self.id_coeffs);
        v.extend_from_slice(&self.exp_coeffs);
        v
    }

    pub fn from_flat(flat: &[f64], id_dim: usize, exp_dim: usize) -> Result<Self> {
        if flat.len() != POSE_PARAMS + id_dim + exp_dim {
            return Err(Error::invalid(format!(
                "flat parameter vector has length {}, expected {}",
                flat.len(),
                POSE_PARAMS + id_dim + exp_dim
            )));
        }
        Ok(Self {
            scale: flat[0],
            rotation: EulerAngles {
                pitch: flat[1],
                yaw: flat[2],
                roll: flat[3],
            },
            translation: [flat[4], flat[5]],
            id_coeffs: flat[POSE_PARAMS..POSE_PARAMS + id_dim].to_vec(),
            exp_coeffs: flat[POSE_PARAMS + id_dim..].to_vec(),
        })
    }

    /// Names of the flattened entries, in order.
    pub fn flat_names(id_dim: usize, exp_dim: usize) -> Vec<String> {
        let mut names: Vec<String> = ["scale", "pitch", "yaw", "roll", "tx", "ty"]
            .iter()
            .map(|s| s.to_string())
            .collect();
        names.extend((0..id_dim).map(|k| format!("id_{k}")));
        names.extend((0..exp_dim).map(|k| format!("exp_{k}")));
        names
    }

    pub fn check_compatible(&self, basis: &MorphableBasis) -> Result<()> {
        if !(self.scale > 0.0) || !self.scale.is_finite() {
            return Err(Error::invalid(format!("scale must be positive, got {}", self.scale)));
        }
        basis.check_coeffs(&self.id_coeffs, &self.exp_coeffs)
    }
}

/// Concrete vertex positions with topology.
#[derive(Clone, Debug, PartialEq)]
pub struct FaceMesh {
    pub vertices: Vec<[f64; 3]>,
    pub triangles: Vec<[u32; 3]>,
    /// Per-vertex RGB in [0, 1].
    pub colors: Option<Vec<[f64; 3]>>,
    /// Per-vertex texture coordinates, carried over from the basis.
    pub uv_coords: Option<Vec<[f64; 2]>>,
}

impl FaceMesh {
    pub fn new(vertices: Vec<[f64; 3]>, triangles: Vec<[u32; 3]>) -> Result<Self> {
        let n = vertices.len();
        if let Some(t) = triangles.iter().find(|t| t.iter().any(|&i| i as usize >= n)) {
            return Err(Error::invalid(format!(
                "triangle {t:?} references a vertex outside 0..{n}"
            )));
        }
        Ok(Self {
            vertices,
            triangles,
            colors: None,
            uv_coords: None,
        })
    }

    pub fn vertex_count(&self) -> usize {
        self.vertices.len()
    }
}

/// Proper rotation matrix.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RotationMatrix(Matrix3<f64>);

impl RotationMatrix {
    pub fn identity() -> Self {
        Self(Matrix3::identity())
    }

    pub fn matrix(&self) -> &Matrix3<f64> {
        &self.0
    }

    #[inline]
    pub fn apply(&self, v: [f64; 3]) -> [f64; 3] {
        let m = &self.0;
        [
            m[(0, 0)] * v[0] + m[(0, 1)] * v[1] + m[(0, 2)] * v[2],
            m[(1, 0)] * v[0] + m[(1, 1)] * v[1] + m[(1, 2)] * v[2],
            m[(2, 0)] * v[0] + m[(2, 1)] * v[1] + m[(2, 2)] * v[2],
        ]
    }
}

pub(crate) fn rot_x(a: f64) -> Matrix3<f64> {
    let (s, c) = a.sin_cos();
    Matrix3::new(1.0, 0.0, 0.0, 0.0, c, -s, 0.0, s, c)
}

pub(crate) fn rot_y(a: f64) -> Matrix3<f64> {
    let (s, c) = a.sin_cos();
    Matrix3::new(c, 0.0, s, 0.0, 1.0, 0.0, -s, 0.0, c)
}

pub(crate) fn rot_z(a: f64) -> Matrix3<f64> {
    let (s, c) = a.sin_cos();
    Matrix3::new(c, -s, 0.0, s, c, 0.0, 0.0, 0.0, 1.0)
}

/// `Rz(roll) * Ry(yaw) * Rx(pitch)`; see the module docs.
pub fn rotation_from_euler(pitch: f64, yaw: f64, roll: f64) -> Result<RotationMatrix> {
    if !(pitch.is_finite() && yaw.is_finite() && roll.is_finite()) {
        return Err(Error::invalid(format!(
            "Euler angles must be finite, got ({pitch}, {yaw}, {roll})"
        )));
    }
    Ok(RotationMatrix(rot_z(roll) * rot_y(yaw) * rot_x(pitch)))
}

impl EulerAngles {
    pub fn to_matrix(&self) -> Result<RotationMatrix> {
        rotation_from_euler(self.pitch, self.yaw, self.roll)
    }
}

/// Evaluates `mean + A_id * id + A_exp * exp` and reshapes it into vertices.
pub fn synthesize_shape(
    basis: &MorphableBasis,
    id_coeffs: &[f64],
    exp_coeffs: &[f64],
) -> Result<FaceMesh> {
    basis.check_coeffs(id_coeffs, exp_coeffs)?;
    let vertices = (0..basis.vertex_count())
        .map(|i| basis.shape_vertex(i, id_coeffs, exp_coeffs))
        .collect();
    Ok(FaceMesh {
        vertices,
        triangles: basis.triangles.clone(),
        colors: None,
        uv_coords: basis.uv_coords.clone(),
    })
}

#[inline]
pub(crate) fn project_point(
    scale: f64,
    rotation: &RotationMatrix,
    translation: [f64; 2],
    v: [f64; 3],
) -> [f64; 2] {
    let r = rotation.apply(v);
    [scale * r[0] + translation[0], scale * r[1] + translation[1]]
}

fn check_scale(scale: f64) -> Result<()> {
    if scale > 0.0 && scale.is_finite() {
        Ok(())
    } else {
        Err(Error::invalid(format!("scale must be positive and finite, got {scale}")))
    }
}

/// `f * Pr * R * v + t` for every vertex.
pub fn project_vertices(
    mesh: &FaceMesh,
    scale: f64,
    rotation: &RotationMatrix,
    translation: [f64; 2],
) -> Result<Vec<[f64; 2]>> {
    check_scale(scale)?;
    Ok(mesh
        .vertices
        .iter()
        .map(|&v| project_point(scale, rotation, translation, v))
        .collect())
}

/// Image positions of every model vertex under `params`.
pub fn project_model(basis: &MorphableBasis, params: &ModelParams) -> Result<Vec<[f64; 2]>> {
    params.check_compatible(basis)?;
    let mesh = synthesize_shape(basis, &params.id_coeffs, &params.exp_coeffs)?;
    let rotation = params.rotation.to_matrix()?;
    project_vertices(&mesh, params.scale, &rotation, params.translation)
}

/// Image positions of the basis landmarks, in `landmark_indices` order.
pub fn landmark_positions(basis: &MorphableBasis, params: &ModelParams) -> Result<Vec<[f64; 2]>> {
    if basis.landmark_indices.is_empty() {
        return Err(Error::invalid("basis has no landmark indices"));
    }
    params.check_compatible(basis)?;
    let rotation = params.rotation.to_matrix()?;
    Ok(basis
        .landmark_indices
        .iter()
        .map(|&i| {
            let v = basis.shape_vertex(i as usize, &params.id_coeffs, &params.exp_coeffs);
            project_point(params.scale, &rotation, params.translation, v)
        })
        .collect())
}
