//! Subcommand bodies. Each computes everything in memory and returns the
//! files to write, so a failing command leaves the file system untouched.

use std::path::{Path, PathBuf};

use morphface::alignment::{apply_rigid_transform, compute_pseudo_transform, LandmarkScheme, LandmarkSet};
use morphface::fitting::{pose_estimate, reprojection_rmse};
use morphface::io::{self, FitDiagnostics, ImageFormat, MeshFormat, ParamsDocument};
use morphface::metrics::{evaluate, mesh_stats};
use morphface::model::{synthesize_shape, FaceMesh, ModelParams, MorphableBasis};
use morphface::synthetic::{fit_instance, smooth_patch_basis, toy_head_basis, PatchSpec};
use morphface::texture::texture_from_image;
use morphface::{fit_landmarks, meta_joint_fit, FitConfig};
use rayon::prelude::*;

use crate::args::*;
use crate::error::{CliError, CliResult};

/// What a successful command wants written and printed.
#[derive(Debug, Default)]
pub struct Outcome {
    pub files: Vec<(PathBuf, Vec<u8>)>,
    pub stdout: String,
    pub warnings: Vec<String>,
}

pub fn run(command: &Command) -> CliResult<Outcome> {
    match command {
        Command::Synth(a) => synth(a),
        Command::Fit(a) => fit(a),
        Command::Align(a) => align(a),
        Command::Texture(a) => texture(a),
        Command::Metrics(a) => metrics(a),
        Command::Stats(a) => stats(a),
        Command::GenBasis(a) => gen_basis(a),
        Command::GenInstance(a) => gen_instance(a),
    }
}

/// Numbers separated by commas and/or whitespace.
pub fn parse_values(text: &str) -> Result<Vec<f64>, String> {
    text.split(|c: char| c == ',' || c.is_whitespace())
        .filter(|t| !t.is_empty())
        .map(|t| t.parse::<f64>().map_err(|_| format!("{t:?} is not a number")))
        .collect()
}

/// Inline list, or the contents of the file it names.
fn read_coeffs(arg: Option<&str>, expected: usize, what: &str) -> CliResult<Vec<f64>> {
    let Some(arg) = arg else {
        return Ok(vec![0.0; expected]);
    };
    let path = Path::new(arg);
    let values = if path.is_file() {
        let bytes = io::read_file(path)?;
        let text = String::from_utf8(bytes)
            .map_err(|_| CliError::data(format!("{}: not UTF-8 text", path.display())))?;
        parse_values(&text).map_err(|e| CliError::data(format!("{}: {e}", path.display())))?
    } else {
        parse_values(arg).map_err(|e| CliError::usage(format!("--{what}-coeffs: {e}")))?
    };
    if values.len() != expected {
        return Err(CliError::usage(format!(
            "--{what}-coeffs: basis expects K = {expected} {what} coefficients, got {}",
            values.len()
        )));
    }
    if values.iter().any(|v| !v.is_finite()) {
        return Err(CliError::usage(format!("--{what}-coeffs: values must be finite")));
    }
    Ok(values)
}

fn output_image_format(path: &Path) -> CliResult<ImageFormat> {
    ImageFormat::from_path(path).map_err(|e| CliError::usage(e.to_string()))
}

fn output_mesh_format(path: &Path) -> CliResult<MeshFormat> {
    MeshFormat::from_path(path).map_err(|e| CliError::usage(e.to_string()))
}

fn synth(a: &SynthArgs) -> CliResult<Outcome> {
    let format = match a.format {
        Some(MeshFormatArg::Obj) => MeshFormat::Obj,
        Some(MeshFormatArg::Ply) => MeshFormat::Ply,
        None => output_mesh_format(&a.out)?,
    };
    let basis = io::load_basis(&a.basis)?;
    let id = read_coeffs(a.id_coeffs.as_deref(), basis.id_dim(), "id")?;
    let exp = read_coeffs(a.exp_coeffs.as_deref(), basis.exp_dim(), "exp")?;
    let mesh = synthesize_shape(&basis, &id, &exp)?;
    let bytes = match format {
        MeshFormat::Obj => io::encode_obj(&mesh, None)?.into_bytes(),
        MeshFormat::Ply => io::encode_ply(&mesh),
    };
    Ok(Outcome {
        files: vec![(a.out.clone(), bytes)],
        stdout: format!("vertices={} triangles={}\n", mesh.vertex_count(), mesh.triangles.len()),
        warnings: vec![],
    })
}

fn fit(a: &FitArgs) -> CliResult<Outcome> {
    let mut config = FitConfig { rng_seed: a.seed, ..FitConfig::default() };
    if let Some(n) = a.max_iterations {
        config.max_iterations = n;
    }
    if let Some(k) = a.meta_k {
        config.meta_k = k;
    }
    config.validate()?;
    let basis = io::load_basis(&a.basis)?;
    let landmarks = io::load_landmarks(&a.landmarks)?;
    let observed = &landmarks.points;
    let expected = basis.landmark_indices().len();
    if observed.len() != expected {
        return Err(CliError::data(format!(
            "{}: {} landmarks, but the basis defines {expected}",
            a.landmarks.display(),
            observed.len()
        )));
    }
    let init = match &a.init {
        Some(p) => {
            let params = io::load_params(p)?;
            params.check_compatible(&basis)?;
            Some(params)
        }
        None => None,
    };
    let result = if a.meta_joint {
        let start = match init {
            Some(p) => p,
            None => pose_estimate(&basis, observed, &config)?,
        };
        meta_joint_fit(&basis, observed, &start, &config)?
    } else {
        fit_landmarks(&basis, observed, &config, init.as_ref())?
    };
    let rmse = reprojection_rmse(&basis, observed, &result.params)?;
    let mut warnings = vec![];
    if !result.converged {
        let why = result.diagnostic.clone().unwrap_or_else(|| "iteration limit reached".into());
        let msg = format!("fit did not converge after {} steps: {why}", result.iterations);
        if a.strict {
            return Err(CliError::numerical(msg));
        }
        warnings.push(format!("{msg}; writing best estimate"));
    }
    let diagnostics = FitDiagnostics::from_fit(&result, rmse, a.meta_joint);
    let doc = ParamsDocument::new(result.params.clone(), Some(diagnostics));
    Ok(Outcome {
        files: vec![(a.out_params.clone(), doc.to_json().into_bytes())],
        stdout: format!(
            "converged={} iterations={} final_cost={:e} rmse={:e}\n",
            result.converged, result.iterations, result.final_cost, rmse
        ),
        warnings,
    })
}

fn align(a: &AlignArgs) -> CliResult<Outcome> {
    let out_format = a.out.as_deref().map(output_image_format).transpose()?;
    let unaligned = io::load_landmarks(&a.unaligned_landmarks)?;
    let aligned = io::load_landmarks(&a.aligned_landmarks)?;
    let image = a.image.as_deref().map(io::load_image).transpose()?;
    let center = a
        .center
        .or_else(|| image.as_ref().map(|i| i.center()))
        .unwrap_or([0.0, 0.0]);
    let t = compute_pseudo_transform(&unaligned, &aligned, center)?;
    let mut files = vec![];
    if let (Some(image), Some(out), Some(format)) = (image, &a.out, out_format) {
        let warped = apply_rigid_transform(&image, &t, center)?;
        files.push((out.clone(), io::encode_image(&warped, format)?));
    }
    let mut stdout = serde_json::to_string(&t).expect("transform serializes");
    stdout.push('\n');
    Ok(Outcome { files, stdout, warnings: vec![] })
}

fn texture(a: &TextureArgs) -> CliResult<Outcome> {
    if output_mesh_format(&a.out_mesh)? != MeshFormat::Obj {
        return Err(CliError::usage("--out-mesh must be an .obj file (the atlas is referenced from its MTL)"));
    }
    if output_image_format(&a.out_atlas)? != ImageFormat::Png {
        return Err(CliError::usage("--out-atlas must be a .png file"));
    }
    let basis = io::load_basis(&a.basis)?;
    if basis.uv_coords().is_none() || basis.mirror_map().is_none() {
        let missing = if basis.uv_coords().is_none() { "UV coordinates" } else { "a mirror map" };
        return Err(CliError::data(format!(
            "{} has no {missing}; texturing needs per-vertex UVs and left/right vertex pairs. \
             Rebuild the basis with them (for example `morphface gen-basis --kind head`).",
            a.basis.display()
        )));
    }
    let params = io::load_params(&a.params)?;
    params.check_compatible(&basis)?;
    let image = io::load_image(&a.image)?;
    let result = texture_from_image(&basis, &params, &image, a.resolution, a.raster_size)?;
    let mut mesh = synthesize_shape(&basis, &params.id_coeffs, &params.exp_coeffs)?;
    mesh.colors = Some(result.colors.clone());
    let files = io::textured_obj_files(&mesh, &a.out_mesh, &result.atlas, &a.out_atlas)?;
    let sampled = result.sampled_valid.iter().filter(|v| **v).count();
    Ok(Outcome {
        files,
        stdout: format!(
            "vertices={} visible={} sampled={} mirrored={}\n",
            mesh.vertex_count(),
            result.visibility.visible_count(),
            sampled,
            mesh.vertex_count() - sampled
        ),
        warnings: vec![],
    })
}

#[derive(Debug, serde::Deserialize)]
struct PairRow {
    image_a: String,
    image_b: String,
}

#[derive(Debug, serde::Serialize)]
struct MetricRow<'a> {
    image_a: &'a str,
    image_b: &'a str,
    ssim: Option<f64>,
    ms_ssim: Option<f64>,
    fsim: Option<f64>,
    error: String,
}

fn metrics(a: &MetricsArgs) -> CliResult<Outcome> {
    let bytes = io::read_file(&a.pairs)?;
    let mut reader = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(bytes.as_slice());
    let rows: Vec<PairRow> = reader
        .deserialize()
        .collect::<Result<_, _>>()
        .map_err(|e| CliError::data(format!("{}: {e}", a.pairs.display())))?;
    let base = a.pairs.parent().unwrap_or(Path::new(""));
    let results: Vec<morphface::Result<morphface::metrics::MetricReport>> = rows
        .par_iter()
        .map(|r| {
            let x = io::load_image(&base.join(&r.image_a))?;
            let y = io::load_image(&base.join(&r.image_b))?;
            evaluate(&x, &y)
        })
        .collect();
    let mut failures = vec![];
    let mut writer = csv::Writer::from_writer(vec![]);
    for (row, result) in rows.iter().zip(&results) {
        let record = match result {
            Ok(m) => MetricRow {
                image_a: &row.image_a,
                image_b: &row.image_b,
                ssim: Some(m.ssim),
                ms_ssim: Some(m.ms_ssim),
                fsim: Some(m.fsim),
                error: String::new(),
            },
            Err(e) => {
                failures.push(format!("{} vs {}: {e}", row.image_a, row.image_b));
                MetricRow {
                    image_a: &row.image_a,
                    image_b: &row.image_b,
                    ssim: None,
                    ms_ssim: None,
                    fsim: None,
                    error: e.to_string(),
                }
            }
        };
        writer.serialize(record).map_err(|e| CliError::data(e.to_string()))?;
    }
    if a.strict && !failures.is_empty() {
        return Err(CliError::data(format!("{} pair(s) failed:\n{}", failures.len(), failures.join("\n"))));
    }
    let csv = writer.into_inner().map_err(|e| CliError::data(e.to_string()))?;
    Ok(Outcome {
        files: vec![(a.out.clone(), csv)],
        stdout: format!("pairs={} failed={}\n", rows.len(), failures.len()),
        warnings: failures,
    })
}

/// Mesh from OBJ/PLY, or the mean shape of a basis container.
fn load_any_mesh(path: &Path) -> CliResult<FaceMesh> {
    let is_basis = path
        .extension()
        .and_then(|e| e.to_str())
        .is_some_and(|e| e.eq_ignore_ascii_case("mmb"));
    if is_basis {
        let basis = io::load_basis(path)?;
        let p = ModelParams::for_basis(&basis);
        return Ok(synthesize_shape(&basis, &p.id_coeffs, &p.exp_coeffs)?);
    }
    Ok(io::load_mesh(path)?)
}

#[derive(Debug, serde::Serialize)]
struct StatsRow<'a> {
    mesh: &'a str,
    triangles: usize,
    avg_triangle_area: f64,
    seed: u64,
}

fn stats(a: &StatsArgs) -> CliResult<Outcome> {
    let mut writer = csv::Writer::from_writer(vec![]);
    let mut stdout = String::new();
    let mut warnings = vec![];
    for path in &a.mesh {
        let mesh = load_any_mesh(path)?;
        let name = path.to_string_lossy();
        let samples = a.samples.min(mesh.vertex_count());
        if samples < a.samples {
            warnings.push(format!(
                "{name}: {} vertices, sampling all of them instead of {}",
                mesh.vertex_count(),
                a.samples
            ));
        }
        let s = mesh_stats(&mesh, samples, a.seed)?;
        writer
            .serialize(StatsRow {
                mesh: &name,
                triangles: s.triangle_count,
                avg_triangle_area: s.avg_triangle_area,
                seed: s.sample_seed,
            })
            .map_err(|e| CliError::data(e.to_string()))?;
        stdout.push_str(&format!(
            "{name}: triangles={} avg_triangle_area={} sampled={} incident={}\n",
            s.triangle_count, s.avg_triangle_area, s.sampled_vertex_count, s.incident_triangle_count
        ));
    }
    let csv = writer.into_inner().map_err(|e| CliError::data(e.to_string()))?;
    Ok(Outcome { files: vec![(a.out.clone(), csv)], stdout, warnings })
}

fn gen_basis(a: &GenBasisArgs) -> CliResult<Outcome> {
    let usage = |e: morphface::Error| CliError::usage(e.to_string());
    let basis: MorphableBasis = match a.kind {
        BasisKind::Patch => smooth_patch_basis(&PatchSpec::with_vertex_count(
            a.vertices, a.id_dim, a.exp_dim, a.landmarks, a.seed,
        ))
        .map_err(usage)?,
        BasisKind::Head => {
            toy_head_basis(a.rings, a.segments, a.id_dim, a.exp_dim, a.landmarks, a.seed).map_err(usage)?
        }
    };
    Ok(Outcome {
        stdout: format!(
            "vertices={} triangles={} id_dim={} exp_dim={} landmarks={}\n",
            basis.vertex_count(),
            basis.triangles().len(),
            basis.id_dim(),
            basis.exp_dim(),
            basis.landmark_indices().len()
        ),
        files: vec![(a.out.clone(), io::encode_basis(&basis))],
        warnings: vec![],
    })
}

fn gen_instance(a: &GenInstanceArgs) -> CliResult<Outcome> {
    let basis = io::load_basis(&a.basis)?;
    let (params, points) = fit_instance(&basis, a.nonzero, a.seed).map_err(|e| CliError::usage(e.to_string()))?;
    let set = LandmarkSet::new(LandmarkScheme::Generic, points)?;
    let doc = ParamsDocument::new(params, None);
    Ok(Outcome {
        files: vec![
            (a.out_params.clone(), doc.to_json().into_bytes()),
            (a.out_landmarks.clone(), io::landmarks::encode_landmarks(&set).into_bytes()),
        ],
        stdout: format!("landmarks={}\n", set.points.len()),
        warnings: vec![],
    })
}
