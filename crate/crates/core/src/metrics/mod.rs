//! Full-reference image quality metrics and mesh statistics.
//!
//! All image metrics compare luma (BT.601) planes in [0, 1].

pub mod fsim;
pub mod mesh;
pub mod ssim;

use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::image::ImageBuffer;

pub use fsim::{fsim, fsim_with, phase_congruency, FsimParams, FsimResult, PhaseCongruencyParams};
pub use mesh::{mesh_stats, sample_vertices, triangle_area, MeshStats, DEFAULT_SAMPLE_COUNT};
pub use ssim::{
    ms_ssim, ms_ssim_with, ssim, ssim_with, MsSsimResult, SsimParams, SsimResult, MS_SSIM_WEIGHTS,
};

/// All three image metrics plus the settings that produced them.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub ssim: f64,
    pub ms_ssim: f64,
    pub fsim: f64,
    pub ssim_params: SsimParams,
    pub ms_ssim_scales: usize,
    pub ms_ssim_weights: Vec<f64>,
    pub fsim_params: FsimParams,
    pub fsim_downsample: usize,
}

pub fn evaluate(a: &ImageBuffer, b: &ImageBuffer) -> Result<MetricReport> {
    let ssim_params = SsimParams::default();
    let fsim_params = FsimParams::default();
    let s = ssim_with(a, b, &ssim_params)?;
    let ms = ms_ssim_with(a, b, &ssim_params)?;
    let f = fsim_with(a, b, &fsim_params)?;
    Ok(MetricReport {
        ssim: s.mean,
        ms_ssim: ms.value,
        fsim: f.value,
        ssim_params,
        ms_ssim_scales: ms.scales,
        ms_ssim_weights: ms.weights,
        fsim_params,
        fsim_downsample: f.downsample,
    })
}
