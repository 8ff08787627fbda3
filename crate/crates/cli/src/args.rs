//! Command-line surface.

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Debug, Parser)]
#[command(name = "morphface", version, about = "Morphable face model toolkit")]
pub struct Cli {
    /// JSON file with one object of flag defaults per subcommand, e.g.
    /// {"fit": {"seed": 7, "meta-joint": true}}. Explicit flags win.
    #[arg(long, global = true, value_name = "PATH")]
    pub config: Option<PathBuf>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Synthesize a mesh from identity and expression coefficients.
    Synth(SynthArgs),
    /// Fit pose and coefficients to 2D landmarks.
    Fit(FitArgs),
    /// Estimate the in-plane transform between two landmark sets.
    Align(AlignArgs),
    /// Extract a texture from an image and bake a UV atlas.
    Texture(TextureArgs),
    /// SSIM, MS-SSIM and FSIM for a list of image pairs.
    Metrics(MetricsArgs),
    /// Triangle count and sampled average triangle area of meshes.
    Stats(StatsArgs),
    /// Write a synthetic basis.
    GenBasis(GenBasisArgs),
    /// Write random ground-truth parameters and their landmarks.
    GenInstance(GenInstanceArgs),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum MeshFormatArg {
    Obj,
    Ply,
}

#[derive(Debug, Args)]
#[command(args_override_self = true)]
pub struct SynthArgs {
    #[arg(long, value_name = "PATH")]
    pub basis: PathBuf,
    /// Comma-separated values, or a file holding them. Omitted means zeros.
    #[arg(long, value_name = "CSV")]
    pub id_coeffs: Option<String>,
    #[arg(long, value_name = "CSV")]
    pub exp_coeffs: Option<String>,
    #[arg(long, value_name = "PATH")]
    pub out: PathBuf,
    /// Defaults to the extension of --out.
    #[arg(long, value_enum)]
    pub format: Option<MeshFormatArg>,
}

#[derive(Debug, Args)]
#[command(args_override_self = true)]
pub struct FitArgs {
    #[arg(long, value_name = "PATH")]
    pub basis: PathBuf,
    #[arg(long, value_name = "PATH")]
    pub landmarks: PathBuf,
    #[arg(long, value_name = "PATH")]
    pub out_params: PathBuf,
    /// Start parameters; defaults to a rigid pose estimate from the landmarks.
    #[arg(long, value_name = "PATH")]
    pub init: Option<PathBuf>,
    /// Alternate VDC- and WPDC-anchored lookahead branches.
    #[arg(long)]
    pub meta_joint: bool,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub max_iterations: Option<usize>,
    #[arg(long)]
    pub meta_k: Option<usize>,
    /// Exit with code 3 instead of writing a fit that did not converge.
    #[arg(long)]
    pub strict: bool,
}

#[derive(Debug, Args)]
#[command(args_override_self = true)]
pub struct AlignArgs {
    #[arg(long, value_name = "PATH")]
    pub unaligned_landmarks: PathBuf,
    #[arg(long, value_name = "PATH")]
    pub aligned_landmarks: PathBuf,
    /// Image to warp; the rotation pivots on its center unless --center is given.
    #[arg(long, value_name = "PATH", requires = "out")]
    pub image: Option<PathBuf>,
    #[arg(long, value_name = "PATH", requires = "image")]
    pub out: Option<PathBuf>,
    /// Rotation center as "x,y".
    #[arg(long, value_name = "X,Y", value_parser = parse_point)]
    pub center: Option<[f64; 2]>,
}

#[derive(Debug, Args)]
#[command(args_override_self = true)]
pub struct TextureArgs {
    #[arg(long, value_name = "PATH")]
    pub basis: PathBuf,
    #[arg(long, value_name = "PATH")]
    pub params: PathBuf,
    #[arg(long, value_name = "PATH")]
    pub image: PathBuf,
    /// OBJ path; the MTL is written beside it.
    #[arg(long, value_name = "PATH")]
    pub out_mesh: PathBuf,
    /// PNG path of the atlas.
    #[arg(long, value_name = "PATH")]
    pub out_atlas: PathBuf,
    /// Atlas side; a power of two, at least 64.
    #[arg(long, default_value_t = morphface::texture::DEFAULT_ATLAS_RESOLUTION, value_parser = parse_resolution)]
    pub resolution: usize,
    /// Z-buffer side used for visibility.
    #[arg(long, default_value_t = morphface::texture::DEFAULT_RASTER_SIZE, value_parser = parse_raster_size)]
    pub raster_size: usize,
}

#[derive(Debug, Args)]
#[command(args_override_self = true)]
pub struct MetricsArgs {
    /// CSV with columns image_a,image_b; relative paths resolve against its directory.
    #[arg(long, value_name = "CSV")]
    pub pairs: PathBuf,
    #[arg(long, value_name = "CSV")]
    pub out: PathBuf,
    /// Fail (exit 2, nothing written) if any row errors.
    #[arg(long)]
    pub strict: bool,
}

#[derive(Debug, Args)]
#[command(args_override_self = true)]
pub struct StatsArgs {
    /// OBJ, PLY or basis (.mmb, mean shape) file; repeat for several rows.
    #[arg(long, value_name = "PATH", required = true)]
    pub mesh: Vec<PathBuf>,
    /// Vertices to sample; capped at the vertex count.
    #[arg(long, default_value_t = morphface::metrics::DEFAULT_SAMPLE_COUNT, value_parser = parse_positive)]
    pub samples: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, value_name = "CSV")]
    pub out: PathBuf,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum BasisKind {
    /// Front half of an ellipsoid on a regular grid.
    Patch,
    /// Closed ellipsoid head.
    Head,
}

#[derive(Debug, Args)]
#[command(args_override_self = true)]
pub struct GenBasisArgs {
    #[arg(long, value_enum, default_value_t = BasisKind::Head)]
    pub kind: BasisKind,
    #[arg(long, value_name = "PATH")]
    pub out: PathBuf,
    /// Vertex count of a patch basis.
    #[arg(long, default_value_t = 200)]
    pub vertices: usize,
    /// Latitude rings of a head basis.
    #[arg(long, default_value_t = 24)]
    pub rings: usize,
    /// Longitude steps of a head basis (even).
    #[arg(long, default_value_t = 48)]
    pub segments: usize,
    #[arg(long, default_value_t = 10)]
    pub id_dim: usize,
    #[arg(long, default_value_t = 5)]
    pub exp_dim: usize,
    #[arg(long, default_value_t = 20)]
    pub landmarks: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Debug, Args)]
#[command(args_override_self = true)]
pub struct GenInstanceArgs {
    #[arg(long, value_name = "PATH")]
    pub basis: PathBuf,
    #[arg(long, default_value_t = 5)]
    pub nonzero: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, value_name = "PATH")]
    pub out_params: PathBuf,
    #[arg(long, value_name = "PATH")]
    pub out_landmarks: PathBuf,
}

fn parse_point(s: &str) -> Result<[f64; 2], String> {
    let v = crate::commands::parse_values(s)?;
    match v[..] {
        [x, y] if x.is_finite() && y.is_finite() => Ok([x, y]),
        _ => Err(format!("expected two finite numbers \"x,y\", got {s:?}")),
    }
}

fn parse_positive(s: &str) -> Result<usize, String> {
    match s.parse::<usize>() {
        Ok(0) => Err("must be at least 1".into()),
        Ok(n) => Ok(n),
        Err(e) => Err(e.to_string()),
    }
}

fn parse_resolution(s: &str) -> Result<usize, String> {
    let r: usize = s.parse().map_err(|e| format!("{e}"))?;
    if r < 64 || !r.is_power_of_two() {
        return Err(format!("atlas resolution must be a power of two >= 64, got {r}"));
    }
    Ok(r)
}

fn parse_raster_size(s: &str) -> Result<usize, String> {
    let r: usize = s.parse().map_err(|e| format!("{e}"))?;
    if r < morphface::texture::MIN_RASTER_SIZE {
        return Err(format!(
            "raster size must be at least {}, got {r}",
            morphface::texture::MIN_RASTER_SIZE
        ));
    }
    Ok(r)
}
