//! File formats: the binary basis container, OBJ/PLY meshes, landmark and
//! parameter JSON, and 8-bit PNG/PGM/PPM images.
//!
//! Every format has a pure encoder/decoder over bytes plus path-based
//! `load_*`/`save_*` wrappers. Saves go through a temporary file in the
//! target directory and a rename, so readers never see partial files.

pub mod basis;
pub mod image;
pub mod landmarks;
pub mod mesh;
pub mod params;

use std::io::Write;
use std::path::Path;

use crate::error::{Error, Result};

pub use basis::{decode_basis, encode_basis, load_basis, save_basis};
pub use image::{decode_image, encode_image, load_image, save_image, ImageFormat};
pub use landmarks::{load_landmarks, save_landmarks};
pub use mesh::{
    decode_obj, decode_ply, encode_mtl, encode_obj, encode_ply, export_mesh, load_mesh,
    textured_obj_files, write_files, MeshFormat,
};
pub use params::{load_params, save_params, FitDiagnostics, ParamsDocument};

pub fn read_file(path: &Path) -> Result<Vec<u8>> {
    std::fs::read(path).map_err(|e| Error::io(path, e))
}

/// Sibling temporary path used while `path` is being written.
fn temp_path(path: &Path) -> Result<std::path::PathBuf> {
    let dir = match path.parent() {
        Some(d) if !d.as_os_str().is_empty() => d,
        _ => Path::new("."),
    };
    let name = path
        .file_name()
        .ok_or_else(|| Error::invalid(format!("{} is not a file path", path.display())))?;
    let mut tmp_name = std::ffi::OsString::from(".");
    tmp_name.push(name);
    tmp_name.push(format!(".{}.tmp", std::process::id()));
    Ok(dir.join(tmp_name))
}

fn write_temp(path: &Path, bytes: &[u8]) -> Result<std::path::PathBuf> {
    let tmp = temp_path(path)?;
    let result = std::fs::File::create(&tmp).and_then(|mut f| {
        f.write_all(bytes)?;
        f.sync_all()
    });
    if let Err(e) = result {
        let _ = std::fs::remove_file(&tmp);
        return Err(Error::io(path, e));
    }
    Ok(tmp)
}

/// Writes `bytes` to a sibling temporary file and renames it over `path`.
pub fn atomic_write(path: &Path, bytes: &[u8]) -> Result<()> {
    atomic_write_all(&[(path, bytes)])
}

/// Stages every file as a temporary sibling and renames them into place only
/// once all were written, so a failure leaves the targets untouched.
pub fn atomic_write_all(files: &[(&Path, &[u8])]) -> Result<()> {
    let mut staged = Vec::with_capacity(files.len());
    for (path, bytes) in files {
        match write_temp(path, bytes) {
            Ok(tmp) => staged.push(tmp),
            Err(e) => {
                for tmp in &staged {
                    let _ = std::fs::remove_file(tmp);
                }
                return Err(e);
            }
        }
    }
    for (k, ((path, _), tmp)) in files.iter().zip(&staged).enumerate() {
        if let Err(e) = std::fs::rename(tmp, path) {
            for tmp in &staged[k..] {
                let _ = std::fs::remove_file(tmp);
            }
            return Err(Error::io(path, e));
        }
    }
    Ok(())
}

/// 8-bit quantization used by every image and color writer.
pub fn quantize_u8(v: f64) -> u8 {
    (v * 255.0 + 0.5).floor().clamp(0.0, 255.0) as u8
}
