//! `MMB1` basis container.
//!
//! Little-endian layout: magic `MMB1`, then u32 `version, N, K_id, K_exp, T,
//! L, flags` (bit 0 UV present, bit 1 mirror map present), then f32 mean
//! (3N), f32 A_id (3N x K_id, column-major), f32 A_exp (column-major), u32
//! triangles (3T), u32 landmark indices (L), optional f32 UV (2N), optional
//! u32 mirror map (N), and a trailing CRC32 (IEEE) of all preceding bytes.
//!
//! Reals are stored as f32; a loaded basis holds the f64 values of those
//! f32s, so save -> load -> save is byte-identical.

use std::path::Path;

use nalgebra::DMatrix;

use crate::error::{Error, FormatError, Result};
use crate::model::MorphableBasis;

pub const MAGIC: [u8; 4] = *b"MMB1";
pub const VERSION: u32 = 1;
pub const HEADER_LEN: usize = 32;
pub const FLAG_UV: u32 = 1;
pub const FLAG_MIRROR: u32 = 2;

pub fn encode_basis(basis: &MorphableBasis) -> Vec<u8> {
    let n = basis.vertex_count();
    let mut flags = 0;
    if basis.uv_coords().is_some() {
        flags |= FLAG_UV;
    }
    if basis.mirror_map().is_some() {
        flags |= FLAG_MIRROR;
    }
    let mut out = Vec::new();
    out.extend_from_slice(&MAGIC);
    for v in [
        VERSION,
        n as u32,
        basis.id_dim() as u32,
        basis.exp_dim() as u32,
        basis.triangles().len() as u32,
        basis.landmark_indices().len() as u32,
        flags,
    ] {
        out.extend_from_slice(&v.to_le_bytes());
    }
    let put_f32 = |out: &mut Vec<u8>, v: f64| out.extend_from_slice(&(v as f32).to_le_bytes());
    for &v in basis.mean_shape() {
        put_f32(&mut out, v);
    }
    // nalgebra storage is column-major already.
    for m in [basis.id_basis(), basis.exp_basis()] {
        for &v in m.as_slice() {
            put_f32(&mut out, v);
        }
    }
    for &i in basis.triangles().iter().flatten() {
        out.extend_from_slice(&i.to_le_bytes());
    }
    for &i in basis.landmark_indices() {
        out.extend_from_slice(&i.to_le_bytes());
    }
    if let Some(uv) = basis.uv_coords() {
        for &v in uv.iter().flatten() {
            put_f32(&mut out, v);
        }
    }
    if let Some(m) = basis.mirror_map() {
        for &i in m {
            out.extend_from_slice(&i.to_le_bytes());
        }
    }
    let crc = crc32fast::hash(&out);
    out.extend_from_slice(&crc.to_le_bytes());
    out
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl Reader<'_> {
    fn u32(&mut self) -> u32 {
        let v = u32::from_le_bytes(self.bytes[self.pos..self.pos + 4].try_into().unwrap());
        self.pos += 4;
        v
    }

    fn f32s(&mut self, count: usize) -> Result<Vec<f64>, FormatError> {
        (0..count)
            .map(|_| {
                let v = f32::from_bits(self.u32());
                if v.is_finite() {
                    Ok(v as f64)
                } else {
                    Err(FormatError::InvalidData(format!(
                        "non-finite value at byte {}",
                        self.pos - 4
                    )))
                }
            })
            .collect()
    }

    fn u32s(&mut self, count: usize) -> Vec<u32> {
        (0..count).map(|_| self.u32()).collect()
    }
}

/// Decodes a container, checking in order: header length, magic, version,
/// flags, total length, CRC, then array contents.
pub fn decode_basis(bytes: &[u8]) -> Result<MorphableBasis, FormatError> {
    if bytes.len() < HEADER_LEN {
        return Err(FormatError::Truncated {
            expected: HEADER_LEN as u64,
            actual: bytes.len() as u64,
        });
    }
    let found: [u8; 4] = bytes[..4].try_into().unwrap();
    if found != MAGIC {
        return Err(FormatError::BadMagic {
            expected: MAGIC,
            found,
        });
    }
    let mut r = Reader { bytes, pos: 4 };
    let version = r.u32();
    if version != VERSION {
        return Err(FormatError::UnsupportedVersion {
            found: version,
            supported: VERSION,
        });
    }
    let [n, k_id, k_exp, t, l, flags] = [r.u32(), r.u32(), r.u32(), r.u32(), r.u32(), r.u32()];
    if flags & !(FLAG_UV | FLAG_MIRROR) != 0 {
        return Err(FormatError::InvalidData(format!("unknown flag bits {flags:#x}")));
    }
    let has_uv = flags & FLAG_UV != 0;
    let has_mirror = flags & FLAG_MIRROR != 0;
    // u128 so hostile header counts cannot overflow.
    let [wn, wid, wexp, wt, wl] = [n, k_id, k_exp, t, l].map(u128::from);
    let words = 3 * wn * (1 + wid + wexp)
        + 3 * wt
        + wl
        + if has_uv { 2 * wn } else { 0 }
        + if has_mirror { wn } else { 0 };
    let expected = HEADER_LEN as u128 + 4 * words + 4;
    let actual = bytes.len() as u128;
    if actual < expected {
        return Err(FormatError::Truncated {
            expected: u64::try_from(expected).unwrap_or(u64::MAX),
            actual: actual as u64,
        });
    }
    if actual > expected {
        return Err(FormatError::TrailingBytes {
            extra: (actual - expected) as u64,
        });
    }
    let body = &bytes[..bytes.len() - 4];
    let stored = u32::from_le_bytes(bytes[bytes.len() - 4..].try_into().unwrap());
    let computed = crc32fast::hash(body);
    if stored != computed {
        return Err(FormatError::CrcMismatch { stored, computed });
    }
    if n == 0 {
        return Err(FormatError::InvalidData("basis has no vertices".into()));
    }

    let (n, k_id, k_exp, t, l) = (n as usize, k_id as usize, k_exp as usize, t as usize, l as usize);
    let mean = r.f32s(3 * n)?;
    let id = DMatrix::from_vec(3 * n, k_id, r.f32s(3 * n * k_id)?);
    let exp = DMatrix::from_vec(3 * n, k_exp, r.f32s(3 * n * k_exp)?);
    let tris = r
        .u32s(3 * t)
        .chunks_exact(3)
        .map(|c| [c[0], c[1], c[2]])
        .collect();
    let lms = r.u32s(l);
    let uv = if has_uv {
        let flat = r.f32s(2 * n)?;
        Some(flat.chunks_exact(2).map(|c| [c[0], c[1]]).collect())
    } else {
        None
    };
    let mirror = has_mirror.then(|| r.u32s(n));

    let invalid = |e: Error| FormatError::InvalidData(e.to_string());
    let mut basis = MorphableBasis::new(mean, id, exp, tris, lms).map_err(invalid)?;
    if let Some(uv) = uv {
        basis = basis.with_uv_coords(uv).map_err(invalid)?;
    }
    if let Some(m) = mirror {
        basis = basis.with_mirror_map(m).map_err(invalid)?;
    }
    Ok(basis)
}

pub fn load_basis(path: &Path) -> Result<MorphableBasis> {
    let bytes = super::read_file(path)?;
    Ok(decode_basis(&bytes)?)
}

pub fn save_basis(basis: &MorphableBasis, path: &Path) -> Result<()> {
    super::atomic_write(path, &encode_basis(basis))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synthetic::{smooth_patch_basis, PatchSpec};

    fn sample() -> MorphableBasis {
        smooth_patch_basis(&PatchSpec::with_vertex_count(12, 2, 1, 4, 1)).unwrap()
    }

    #[test]
    fn round_trip_is_stable() {
        let bytes = encode_basis(&sample());
        let loaded = decode_basis(&bytes).unwrap();
        assert_eq!(encode_basis(&loaded), bytes);
        assert!(loaded.uv_coords().is_some() && loaded.mirror_map().is_some());
    }

    #[test]
    fn distinct_errors() {
        let bytes = encode_basis(&sample());
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(matches!(decode_basis(&bad), Err(FormatError::BadMagic { .. })));
        let mut bad = bytes.clone();
        bad[4] = 2;
        assert!(matches!(
            decode_basis(&bad),
            Err(FormatError::UnsupportedVersion { found: 2, .. })
        ));
        let mut bad = bytes.clone();
        let k = bad.len() - 10;
        bad[k] ^= 0x40;
        assert!(matches!(decode_basis(&bad), Err(FormatError::CrcMismatch { .. })));
        let cut = &bytes[..bytes.len() - 7];
        match decode_basis(cut) {
            Err(FormatError::Truncated { expected, actual }) => {
                assert_eq!(expected, bytes.len() as u64);
                assert_eq!(actual, cut.len() as u64);
            }
            other => panic!("{other:?}"),
        }
    }
}
