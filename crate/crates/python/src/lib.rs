//! Python bindings for the morphface toolkit.

use std::path::PathBuf;

use morphface::alignment::{self, LandmarkScheme, LandmarkSet, RigidTransform2D};
use morphface::io::{self, MeshFormat, ParamsDocument};
use morphface::synthetic::{self, PatchSpec};
use morphface::{fitting, metrics, model, texture, FitConfig};
use pyo3::create_exception;
use pyo3::exceptions::PyException;
use pyo3::prelude::*;
use pyo3::types::PyDict;

create_exception!(pymorphface, MorphfaceError, PyException);

fn err(e: morphface::Error) -> PyErr {
    MorphfaceError::new_err(e.to_string())
}

trait OrRaise<T> {
    fn py(self) -> PyResult<T>;
}

impl<T> OrRaise<T> for morphface::Result<T> {
    fn py(self) -> PyResult<T> {
        self.map_err(err)
    }
}

#[pyclass(name = "Basis", frozen)]
pub struct PyBasis {
    inner: model::MorphableBasis,
}

#[pymethods]
impl PyBasis {
    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        Ok(Self { inner: io::load_basis(&path).py()? })
    }

    #[staticmethod]
    #[pyo3(signature = (rings=24, segments=48, id_dim=10, exp_dim=5, landmarks=20, seed=0))]
    fn toy_head(
        rings: usize,
        segments: usize,
        id_dim: usize,
        exp_dim: usize,
        landmarks: usize,
        seed: u64,
    ) -> PyResult<Self> {
        let inner = synthetic::toy_head_basis(rings, segments, id_dim, exp_dim, landmarks, seed).py()?;
        Ok(Self { inner })
    }

    #[staticmethod]
    #[pyo3(signature = (vertices=200, id_dim=10, exp_dim=5, landmarks=20, seed=0))]
    fn patch(vertices: usize, id_dim: usize, exp_dim: usize, landmarks: usize, seed: u64) -> PyResult<Self> {
        let spec = PatchSpec::with_vertex_count(vertices, id_dim, exp_dim, landmarks, seed);
        Ok(Self { inner: synthetic::smooth_patch_basis(&spec).py()? })
    }

    fn save(&self, path: PathBuf) -> PyResult<()> {
        io::save_basis(&self.inner, &path).py()
    }

    #[getter]
    fn vertex_count(&self) -> usize {
        self.inner.vertex_count()
    }

    #[getter]
    fn id_dim(&self) -> usize {
        self.inner.id_dim()
    }

    #[getter]
    fn exp_dim(&self) -> usize {
        self.inner.exp_dim()
    }

    #[getter]
    fn landmark_indices(&self) -> Vec<u32> {
        self.inner.landmark_indices().to_vec()
    }

    #[getter]
    fn mean_shape(&self) -> Vec<f64> {
        self.inner.mean_shape().to_vec()
    }

    #[getter]
    fn triangles(&self) -> Vec<[u32; 3]> {
        self.inner.triangles().to_vec()
    }

    fn __repr__(&self) -> String {
        format!(
            "Basis(vertices={}, id_dim={}, exp_dim={}, landmarks={})",
            self.inner.vertex_count(),
            self.inner.id_dim(),
            self.inner.exp_dim(),
            self.inner.landmark_indices().len()
        )
    }
}

#[pyclass(name = "Params", skip_from_py_object)]
#[derive(Clone)]
pub struct PyParams {
    inner: model::ModelParams,
}

#[pymethods]
impl PyParams {
    /// Neutral parameters (unit scale, no rotation, zero coefficients).
    #[new]
    fn new(basis: PyRef<'_, PyBasis>) -> Self {
        Self { inner: model::ModelParams::for_basis(&basis.inner) }
    }

    #[staticmethod]
    fn from_flat(flat: Vec<f64>, id_dim: usize, exp_dim: usize) -> PyResult<Self> {
        Ok(Self { inner: model::ModelParams::from_flat(&flat, id_dim, exp_dim).py()? })
    }

    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        Ok(Self { inner: io::load_params(&path).py()? })
    }

    fn save(&self, path: PathBuf) -> PyResult<()> {
        io::save_params(&ParamsDocument::new(self.inner.clone(), None), &path).py()
    }

    /// `[scale, pitch, yaw, roll, tx, ty, id..., exp...]`.
    fn to_flat(&self) -> Vec<f64> {
        self.inner.to_flat()
    }

    #[getter]
    fn scale(&self) -> f64 {
        self.inner.scale
    }

    #[setter]
    fn set_scale(&mut self, v: f64) {
        self.inner.scale = v;
    }

    /// `(pitch, yaw, roll)` in radians.
    #[getter]
    fn rotation(&self) -> (f64, f64, f64) {
        let r = &self.inner.rotation;
        (r.pitch, r.yaw, r.roll)
    }

    #[setter]
    fn set_rotation(&mut self, v: (f64, f64, f64)) {
        self.inner.rotation = model::EulerAngles { pitch: v.0, yaw: v.1, roll: v.2 };
    }

    #[getter]
    fn translation(&self) -> [f64; 2] {
        self.inner.translation
    }

    #[setter]
    fn set_translation(&mut self, v: [f64; 2]) {
        self.inner.translation = v;
    }

    #[getter]
    fn id_coeffs(&self) -> Vec<f64> {
        self.inner.id_coeffs.clone()
    }

    #[setter]
    fn set_id_coeffs(&mut self, v: Vec<f64>) {
        self.inner.id_coeffs = v;
    }

    #[getter]
    fn exp_coeffs(&self) -> Vec<f64> {
        self.inner.exp_coeffs.clone()
    }

    #[setter]
    fn set_exp_coeffs(&mut self, v: Vec<f64>) {
        self.inner.exp_coeffs = v;
    }

    fn __repr__(&self) -> String {
        let p = &self.inner;
        format!(
            "Params(scale={}, rotation=({}, {}, {}), translation={:?}, id_dim={}, exp_dim={})",
            p.scale,
            p.rotation.pitch,
            p.rotation.yaw,
            p.rotation.roll,
            p.translation,
            p.id_coeffs.len(),
            p.exp_coeffs.len()
        )
    }
}

#[pyclass(name = "Mesh")]
pub struct PyMesh {
    inner: model::FaceMesh,
}

#[pymethods]
impl PyMesh {
    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        Ok(Self { inner: io::load_mesh(&path).py()? })
    }

    /// Format follows the extension (`.obj` or `.ply`).
    fn save(&self, path: PathBuf) -> PyResult<()> {
        let format = MeshFormat::from_path(&path).py()?;
        io::export_mesh(&self.inner, format, &path, None).py()
    }

    #[getter]
    fn vertices(&self) -> Vec<[f64; 3]> {
        self.inner.vertices.clone()
    }

    #[getter]
    fn triangles(&self) -> Vec<[u32; 3]> {
        self.inner.triangles.clone()
    }

    #[getter]
    fn colors(&self) -> Option<Vec<[f64; 3]>> {
        self.inner.colors.clone()
    }

    #[pyo3(signature = (samples=50, seed=0))]
    fn stats<'py>(&self, py: Python<'py>, samples: usize, seed: u64) -> PyResult<Bound<'py, PyDict>> {
        let s = metrics::mesh_stats(&self.inner, samples, seed).py()?;
        let d = PyDict::new(py);
        d.set_item("triangle_count", s.triangle_count)?;
        d.set_item("avg_triangle_area", s.avg_triangle_area)?;
        d.set_item("sample_seed", s.sample_seed)?;
        d.set_item("sampled_vertex_count", s.sampled_vertex_count)?;
        Ok(d)
    }

    fn __len__(&self) -> usize {
        self.inner.vertex_count()
    }
}

#[pyclass(name = "FitResult", frozen)]
pub struct PyFitResult {
    #[pyo3(get)]
    params: Py<PyParams>,
    #[pyo3(get)]
    final_cost: f64,
    #[pyo3(get)]
    iterations: usize,
    #[pyo3(get)]
    converged: bool,
    #[pyo3(get)]
    cost_trace: Vec<f64>,
    #[pyo3(get)]
    branch_trace: Vec<&'static str>,
    #[pyo3(get)]
    rmse: f64,
}

#[pyfunction]
#[pyo3(signature = (basis, id_coeffs=None, exp_coeffs=None))]
fn synthesize(basis: PyRef<'_, PyBasis>, id_coeffs: Option<Vec<f64>>, exp_coeffs: Option<Vec<f64>>) -> PyResult<PyMesh> {
    let b = &basis.inner;
    let id = id_coeffs.unwrap_or_else(|| vec![0.0; b.id_dim()]);
    let exp = exp_coeffs.unwrap_or_else(|| vec![0.0; b.exp_dim()]);
    Ok(PyMesh { inner: model::synthesize_shape(b, &id, &exp).py()? })
}

#[pyfunction]
fn project(basis: PyRef<'_, PyBasis>, params: PyRef<'_, PyParams>) -> PyResult<Vec<[f64; 2]>> {
    model::project_model(&basis.inner, &params.inner).py()
}

#[pyfunction]
fn landmarks(basis: PyRef<'_, PyBasis>, params: PyRef<'_, PyParams>) -> PyResult<Vec<[f64; 2]>> {
    model::landmark_positions(&basis.inner, &params.inner).py()
}

#[pyfunction]
fn vdc(basis: PyRef<'_, PyBasis>, pred: PyRef<'_, PyParams>, gt: PyRef<'_, PyParams>) -> PyResult<f64> {
    fitting::vdc(&basis.inner, &pred.inner, &gt.inner).py()
}

#[pyfunction]
fn wpdc(basis: PyRef<'_, PyBasis>, pred: PyRef<'_, PyParams>, gt: PyRef<'_, PyParams>) -> PyResult<f64> {
    fitting::wpdc(&basis.inner, &pred.inner, &gt.inner).py()
}

/// Random ground truth and its landmark observations.
#[pyfunction]
#[pyo3(signature = (basis, nonzero=5, seed=0))]
fn random_instance(basis: PyRef<'_, PyBasis>, nonzero: usize, seed: u64) -> PyResult<(PyParams, Vec<[f64; 2]>)> {
    let (p, obs) = synthetic::fit_instance(&basis.inner, nonzero, seed).py()?;
    Ok((PyParams { inner: p }, obs))
}

#[pyfunction]
#[pyo3(signature = (basis, observed, meta_joint=false, seed=0, max_iterations=None, init=None))]
fn fit(
    py: Python<'_>,
    basis: PyRef<'_, PyBasis>,
    observed: Vec<[f64; 2]>,
    meta_joint: bool,
    seed: u64,
    max_iterations: Option<usize>,
    init: Option<PyRef<'_, PyParams>>,
) -> PyResult<PyFitResult> {
    let b = &basis.inner;
    let mut config = FitConfig { rng_seed: seed, ..FitConfig::default() };
    if let Some(n) = max_iterations {
        config.max_iterations = n;
    }
    let init = init.map(|p| p.inner.clone());
    let result = if meta_joint {
        let start = match init {
            Some(p) => p,
            None => fitting::pose_estimate(b, &observed, &config).py()?,
        };
        fitting::meta_joint_fit(b, &observed, &start, &config).py()?
    } else {
        fitting::fit_landmarks(b, &observed, &config, init.as_ref()).py()?
    };
    let rmse = fitting::reprojection_rmse(b, &observed, &result.params).py()?;
    Ok(PyFitResult {
        params: Py::new(py, PyParams { inner: result.params })?,
        final_cost: result.final_cost,
        iterations: result.iterations,
        converged: result.converged,
        cost_trace: result.cost_trace,
        branch_trace: result
            .branch_trace
            .iter()
            .map(|b| match b {
                fitting::Branch::Vdc => "VDC",
                fitting::Branch::Wpdc => "WPDC",
            })
            .collect(),
        rmse,
    })
}

fn landmark_set(points: Vec<[f64; 2]>) -> PyResult<LandmarkSet> {
    let scheme = match points.len() {
        2 => LandmarkScheme::EyesOnly,
        _ => LandmarkScheme::Full68,
    };
    LandmarkSet::new(scheme, points).py()
}

/// `(r_degrees, tx, ty)` mapping the aligned eyes onto the unaligned ones.
/// Accepts 68-point sets or `[left_eye, right_eye]` pairs.
#[pyfunction]
#[pyo3(signature = (unaligned, aligned, center=[0.0, 0.0]))]
fn pseudo_transform(unaligned: Vec<[f64; 2]>, aligned: Vec<[f64; 2]>, center: [f64; 2]) -> PyResult<(f64, f64, f64)> {
    let t = alignment::compute_pseudo_transform(&landmark_set(unaligned)?, &landmark_set(aligned)?, center).py()?;
    Ok((t.r, t.tx, t.ty))
}

/// Warps an image file by `(r, tx, ty)` about `center` (image center when omitted).
#[pyfunction]
#[pyo3(signature = (image, out, transform, center=None))]
fn warp_image(image: PathBuf, out: PathBuf, transform: (f64, f64, f64), center: Option<[f64; 2]>) -> PyResult<()> {
    let img = io::load_image(&image).py()?;
    let t = RigidTransform2D { r: transform.0, tx: transform.1, ty: transform.2 };
    let warped = alignment::apply_rigid_transform(&img, &t, center.unwrap_or(img.center())).py()?;
    io::save_image(&warped, &out).py()
}

/// SSIM, MS-SSIM and FSIM between two image files.
#[pyfunction]
fn image_metrics<'py>(py: Python<'py>, a: PathBuf, b: PathBuf) -> PyResult<Bound<'py, PyDict>> {
    let (a, b) = (io::load_image(&a).py()?, io::load_image(&b).py()?);
    let r = metrics::evaluate(&a, &b).py()?;
    let d = PyDict::new(py);
    d.set_item("ssim", r.ssim)?;
    d.set_item("ms_ssim", r.ms_ssim)?;
    d.set_item("fsim", r.fsim)?;
    Ok(d)
}

/// Extracts per-vertex colors from an image and writes an OBJ + MTL + PNG atlas.
/// Returns `(visible, sampled)` vertex counts.
#[pyfunction]
#[pyo3(signature = (basis, params, image, out_mesh, out_atlas, resolution=1024, raster_size=512))]
fn extract_texture(
    basis: PyRef<'_, PyBasis>,
    params: PyRef<'_, PyParams>,
    image: PathBuf,
    out_mesh: PathBuf,
    out_atlas: PathBuf,
    resolution: usize,
    raster_size: usize,
) -> PyResult<(usize, usize)> {
    let (b, p) = (&basis.inner, &params.inner);
    let img = io::load_image(&image).py()?;
    let result = texture::texture_from_image(b, p, &img, resolution, raster_size).py()?;
    let mut mesh = model::synthesize_shape(b, &p.id_coeffs, &p.exp_coeffs).py()?;
    mesh.colors = Some(result.colors);
    let files = io::textured_obj_files(&mesh, &out_mesh, &result.atlas, &out_atlas).py()?;
    io::write_files(&files).py()?;
    let sampled = result.sampled_valid.iter().filter(|v| **v).count();
    Ok((result.visibility.visible_count(), sampled))
}

#[pymodule]
fn pymorphface(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add("MorphfaceError", m.py().get_type::<MorphfaceError>())?;
    m.add_class::<PyBasis>()?;
    m.add_class::<PyParams>()?;
    m.add_class::<PyMesh>()?;
    m.add_class::<PyFitResult>()?;
    m.add_function(wrap_pyfunction!(synthesize, m)?)?;
    m.add_function(wrap_pyfunction!(project, m)?)?;
    m.add_function(wrap_pyfunction!(landmarks, m)?)?;
    m.add_function(wrap_pyfunction!(vdc, m)?)?;
    m.add_function(wrap_pyfunction!(wpdc, m)?)?;
    m.add_function(wrap_pyfunction!(random_instance, m)?)?;
    m.add_function(wrap_pyfunction!(fit, m)?)?;
    m.add_function(wrap_pyfunction!(pseudo_transform, m)?)?;
    m.add_function(wrap_pyfunction!(warp_image, m)?)?;
    m.add_function(wrap_pyfunction!(image_metrics, m)?)?;
    m.add_function(wrap_pyfunction!(extract_texture, m)?)?;
    Ok(())
}
