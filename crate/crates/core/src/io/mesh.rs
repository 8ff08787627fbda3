//! OBJ (+MTL) and binary little-endian PLY meshes.
//!
//! OBJ positions and UVs are written with shortest round-trip formatting, so
//! they reload exactly. OBJ texture coordinates share the vertex numbering
//! (`f a/a b/b c/c`). Vertex colors go into OBJ as the common `v x y z r g b`
//! extension. PLY stores float32 positions and uchar colors.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use crate::error::{Error, FormatError, Result};
use crate::model::FaceMesh;
use crate::texture::TextureAtlas;

use super::quantize_u8;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum MeshFormat {
    Obj,
    Ply,
}

impl MeshFormat {
    pub fn from_path(path: &Path) -> Result<Self> {
        match path.extension().and_then(|e| e.to_str()).map(str::to_ascii_lowercase).as_deref() {
            Some("obj") => Ok(Self::Obj),
            Some("ply") => Ok(Self::Ply),
            _ => Err(Error::invalid(format!(
                "{}: mesh extension must be .obj or .ply",
                path.display()
            ))),
        }
    }
}

/// OBJ text; `material` names an MTL library and material to reference.
pub fn encode_obj(mesh: &FaceMesh, material: Option<(&str, &str)>) -> Result<String> {
    if material.is_some() && mesh.uv_coords.is_none() {
        return Err(Error::invalid(
            "textured OBJ export needs per-vertex UV coordinates",
        ));
    }
    let mut s = String::new();
    if let Some((lib, name)) = material {
        writeln!(s, "mtllib {lib}").unwrap();
        writeln!(s, "usemtl {name}").unwrap();
    }
    for (i, v) in mesh.vertices.iter().enumerate() {
        match &mesh.colors {
            Some(c) => {
                let c = c[i];
                writeln!(s, "v {} {} {} {} {} {}", v[0], v[1], v[2], c[0], c[1], c[2]).unwrap()
            }
            None => writeln!(s, "v {} {} {}", v[0], v[1], v[2]).unwrap(),
        }
    }
    if let Some(uv) = &mesh.uv_coords {
        for t in uv {
            writeln!(s, "vt {} {}", t[0], t[1]).unwrap();
        }
    }
    for t in &mesh.triangles {
        let [a, b, c] = t.map(|i| i + 1);
        if mesh.uv_coords.is_some() {
            writeln!(s, "f {a}/{a} {b}/{b} {c}/{c}").unwrap();
        } else {
            writeln!(s, "f {a} {b} {c}").unwrap();
        }
    }
    Ok(s)
}

pub fn encode_mtl(material: &str, texture_file: &str) -> String {
    format!(
        "newmtl {material}\nKa 1 1 1\nKd 1 1 1\nKs 0 0 0\nd 1\nillum 1\nmap_Kd {texture_file}\n"
    )
}

fn obj_error(line: usize, msg: impl std::fmt::Display) -> FormatError {
    FormatError::InvalidData(format!("OBJ line {line}: {msg}"))
}

/// Resolves a 1-based (or negative, relative) OBJ index.
fn obj_index(token: &str, count: usize, line: usize) -> Result<u32, FormatError> {
    let raw: i64 = token.parse().map_err(|_| obj_error(line, format!("bad index {token:?}")))?;
    let idx = if raw > 0 {
        raw - 1
    } else if raw < 0 {
        count as i64 + raw
    } else {
        return Err(obj_error(line, "index 0"));
    };
    if idx < 0 || idx as usize >= count {
        return Err(obj_error(line, format!("index {raw} out of range")));
    }
    Ok(idx as u32)
}

/// Reads `v`, `vt` and `f` records; polygons are fan-triangulated. UVs are
/// kept only when every face corner pairs a vertex with the same-numbered
/// texture coordinate (the layout [`encode_obj`] writes).
pub fn decode_obj(text: &str) -> Result<FaceMesh, FormatError> {
    let mut vertices = Vec::new();
    let mut colors = Vec::new();
    let mut uvs = Vec::new();
    let mut triangles = Vec::new();
    let mut uv_consistent = true;
    let mut any_uv_ref = false;
    for (k, raw) in text.lines().enumerate() {
        let line = k + 1;
        let mut parts = raw.split_whitespace();
        let nums = |parts: std::str::SplitWhitespace<'_>| -> Result<Vec<f64>, FormatError> {
            parts
                .map(|t| t.parse::<f64>().map_err(|_| obj_error(line, format!("bad number {t:?}"))))
                .collect()
        };
        match parts.next() {
            Some("v") => {
                let v = nums(parts)?;
                match v.len() {
                    3 => vertices.push([v[0], v[1], v[2]]),
                    6 => {
                        vertices.push([v[0], v[1], v[2]]);
                        colors.push([v[3], v[4], v[5]]);
                    }
                    n => return Err(obj_error(line, format!("vertex with {n} values"))),
                }
            }
            Some("vt") => {
                let v = nums(parts)?;
                if v.len() < 2 {
                    return Err(obj_error(line, "texture coordinate needs u and v"));
                }
                uvs.push([v[0], v[1]]);
            }
            Some("f") => {
                let mut corners = Vec::new();
                for tok in parts {
                    let mut fields = tok.split('/');
                    let v = obj_index(fields.next().unwrap_or(""), vertices.len(), line)?;
                    if let Some(t) = fields.next().filter(|t| !t.is_empty()) {
                        any_uv_ref = true;
                        if obj_index(t, uvs.len(), line)? != v {
                            uv_consistent = false;
                        }
                    } else {
                        uv_consistent = false;
                    }
                    corners.push(v);
                }
                if corners.len() < 3 {
                    return Err(obj_error(line, "face with fewer than 3 vertices"));
                }
                for i in 1..corners.len() - 1 {
                    triangles.push([corners[0], corners[i], corners[i + 1]]);
                }
            }
            _ => {}
        }
    }
    if !colors.is_empty() && colors.len() != vertices.len() {
        return Err(FormatError::InvalidData(
            "OBJ mixes colored and uncolored vertices".into(),
        ));
    }
    let mut mesh = FaceMesh::new(vertices, triangles)
        .map_err(|e| FormatError::InvalidData(e.to_string()))?;
    if !colors.is_empty() {
        mesh.colors = Some(colors);
    }
    if any_uv_ref && uv_consistent && uvs.len() == mesh.vertex_count() {
        mesh.uv_coords = Some(uvs);
    }
    Ok(mesh)
}

pub fn encode_ply(mesh: &FaceMesh) -> Vec<u8> {
    let mut header = format!(
        "ply\nformat binary_little_endian 1.0\ncomment morphface\nelement vertex {}\n\
         property float x\nproperty float y\nproperty float z\n",
        mesh.vertex_count()
    );
    if mesh.colors.is_some() {
        header.push_str("property uchar red\nproperty uchar green\nproperty uchar blue\n");
    }
    write!(
        header,
        "element face {}\nproperty list uchar int vertex_indices\nend_header\n",
        mesh.triangles.len()
    )
    .unwrap();
    let mut out = header.into_bytes();
    for (i, v) in mesh.vertices.iter().enumerate() {
        for &c in v {
            out.extend_from_slice(&(c as f32).to_le_bytes());
        }
        if let Some(colors) = &mesh.colors {
            out.extend(colors[i].iter().map(|&c| quantize_u8(c)));
        }
    }
    for t in &mesh.triangles {
        out.push(3);
        for &i in t {
            out.extend_from_slice(&(i as i32).to_le_bytes());
        }
    }
    out
}

#[derive(Clone, Copy, Debug, PartialEq)]
enum Scalar {
    I8,
    U8,
    I16,
    U16,
    I32,
    U32,
    F32,
    F64,
}

impl Scalar {
    fn parse(name: &str) -> Result<Self, FormatError> {
        Ok(match name {
            "char" | "int8" => Self::I8,
            "uchar" | "uint8" => Self::U8,
            "short" | "int16" => Self::I16,
            "ushort" | "uint16" => Self::U16,
            "int" | "int32" => Self::I32,
            "uint" | "uint32" => Self::U32,
            "float" | "float32" => Self::F32,
            "double" | "float64" => Self::F64,
            other => return Err(FormatError::Unsupported(format!("PLY type {other}"))),
        })
    }

    fn size(self) -> usize {
        match self {
            Self::I8 | Self::U8 => 1,
            Self::I16 | Self::U16 => 2,
            Self::I32 | Self::U32 | Self::F32 => 4,
            Self::F64 => 8,
        }
    }

    fn read(self, b: &[u8]) -> f64 {
        match self {
            Self::I8 => b[0] as i8 as f64,
            Self::U8 => b[0] as f64,
            Self::I16 => i16::from_le_bytes([b[0], b[1]]) as f64,
            Self::U16 => u16::from_le_bytes([b[0], b[1]]) as f64,
            Self::I32 => i32::from_le_bytes(b[..4].try_into().unwrap()) as f64,
            Self::U32 => u32::from_le_bytes(b[..4].try_into().unwrap()) as f64,
            Self::F32 => f32::from_le_bytes(b[..4].try_into().unwrap()) as f64,
            Self::F64 => f64::from_le_bytes(b[..8].try_into().unwrap()),
        }
    }
}

enum Property {
    Scalar(String, Scalar),
    List(String, Scalar, Scalar),
}

struct Element {
    name: String,
    count: usize,
    props: Vec<Property>,
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl Cursor<'_> {
    fn take(&mut self, ty: Scalar) -> Result<f64, FormatError> {
        let end = self.pos + ty.size();
        if end > self.bytes.len() {
            return Err(FormatError::Truncated {
                expected: end as u64,
                actual: self.bytes.len() as u64,
            });
        }
        let v = ty.read(&self.bytes[self.pos..end]);
        self.pos = end;
        Ok(v)
    }
}

/// Binary little-endian PLY with `vertex` (x, y, z, optional red/green/blue)
/// and `face` (vertex_indices list) elements; other properties and elements
/// are skipped. Faces with more than three corners are fan-triangulated.
pub fn decode_ply(bytes: &[u8]) -> Result<FaceMesh, FormatError> {
    const END: &[u8] = b"end_header\n";
    let end = bytes
        .windows(END.len())
        .position(|w| w == END)
        .ok_or_else(|| FormatError::InvalidData("PLY header has no end_header".into()))?
        + END.len();
    let header = std::str::from_utf8(&bytes[..end])
        .map_err(|_| FormatError::InvalidData("PLY header is not ASCII".into()))?;
    let mut lines = header.lines();
    if lines.next() != Some("ply") {
        return Err(FormatError::BadMagic {
            expected: *b"ply\n",
            found: bytes.get(..4).and_then(|b| b.try_into().ok()).unwrap_or([0; 4]),
        });
    }
    let mut elements: Vec<Element> = Vec::new();
    for line in lines {
        let t: Vec<&str> = line.split_whitespace().collect();
        match t.as_slice() {
            ["format", "binary_little_endian", _] => {}
            ["format", other, _] => {
                return Err(FormatError::Unsupported(format!("PLY format {other}")))
            }
            ["element", name, count] => elements.push(Element {
                name: name.to_string(),
                count: count
                    .parse()
                    .map_err(|_| FormatError::InvalidData(format!("bad element count {count}")))?,
                props: Vec::new(),
            }),
            ["property", "list", len, item, name] => elements
                .last_mut()
                .ok_or_else(|| FormatError::InvalidData("property before element".into()))?
                .props
                .push(Property::List(name.to_string(), Scalar::parse(len)?, Scalar::parse(item)?)),
            ["property", ty, name] => elements
                .last_mut()
                .ok_or_else(|| FormatError::InvalidData("property before element".into()))?
                .props
                .push(Property::Scalar(name.to_string(), Scalar::parse(ty)?)),
            _ => {}
        }
    }

    let mut cur = Cursor { bytes, pos: end };
    let mut vertices = Vec::new();
    let mut colors = Vec::new();
    let mut triangles = Vec::new();
    for el in &elements {
        for _ in 0..el.count {
            let mut xyz = [0.0; 3];
            let mut rgb = [0.0; 3];
            let mut has_rgb = false;
            for p in &el.props {
                match p {
                    Property::Scalar(name, ty) => {
                        let v = cur.take(*ty)?;
                        match name.as_str() {
                            "x" => xyz[0] = v,
                            "y" => xyz[1] = v,
                            "z" => xyz[2] = v,
                            "red" | "green" | "blue" => {
                                let k = ["red", "green", "blue"].iter().position(|c| c == name).unwrap();
                                rgb[k] = if *ty == Scalar::U8 { v / 255.0 } else { v };
                                has_rgb = true;
                            }
                            _ => {}
                        }
                    }
                    Property::List(name, len_ty, item_ty) => {
                        let len = cur.take(*len_ty)? as usize;
                        let mut idx = Vec::with_capacity(len);
                        for _ in 0..len {
                            idx.push(cur.take(*item_ty)?);
                        }
                        if el.name == "face" && (name == "vertex_indices" || name == "vertex_index") {
                            if len < 3 {
                                return Err(FormatError::InvalidData("face with fewer than 3 vertices".into()));
                            }
                            if idx.iter().any(|&i| i < 0.0) {
                                return Err(FormatError::InvalidData("negative face index".into()));
                            }
                            for k in 1..len - 1 {
                                triangles.push([idx[0] as u32, idx[k] as u32, idx[k + 1] as u32]);
                            }
                        }
                    }
                }
            }
            if el.name == "vertex" {
                vertices.push(xyz);
                if has_rgb {
                    colors.push(rgb);
                }
            }
        }
    }
    if cur.pos != bytes.len() {
        return Err(FormatError::TrailingBytes {
            extra: (bytes.len() - cur.pos) as u64,
        });
    }
    let mut mesh = FaceMesh::new(vertices, triangles)
        .map_err(|e| FormatError::InvalidData(e.to_string()))?;
    if !colors.is_empty() {
        mesh.colors = Some(colors);
    }
    Ok(mesh)
}

/// Loads an OBJ or PLY mesh, chosen by extension.
pub fn load_mesh(path: &Path) -> Result<FaceMesh> {
    let format = MeshFormat::from_path(path)?;
    let bytes = super::read_file(path)?;
    Ok(match format {
        MeshFormat::Obj => decode_obj(
            std::str::from_utf8(&bytes)
                .map_err(|_| FormatError::InvalidData("OBJ file is not UTF-8".into()))?,
        )?,
        MeshFormat::Ply => decode_ply(&bytes)?,
    })
}

/// Writes `path` as OBJ or PLY. A textured OBJ also writes `<stem>.mtl` and
/// `<stem>.png` next to it; nothing is written unless every file encodes.
pub fn export_mesh(
    mesh: &FaceMesh,
    format: MeshFormat,
    path: &Path,
    atlas: Option<&TextureAtlas>,
) -> Result<()> {
    let files = match (format, atlas) {
        (MeshFormat::Ply, Some(_)) => {
            return Err(Error::invalid("PLY export carries vertex colors, not an atlas"))
        }
        (MeshFormat::Ply, None) => vec![(path.to_path_buf(), encode_ply(mesh))],
        (MeshFormat::Obj, None) => vec![(path.to_path_buf(), encode_obj(mesh, None)?.into_bytes())],
        (MeshFormat::Obj, Some(atlas)) => {
            textured_obj_files(mesh, path, atlas, &path.with_extension("png"))?
        }
    };
    write_files(&files)
}

/// OBJ at `obj_path`, `<stem>.mtl` beside it and the atlas PNG at
/// `atlas_path`, as `(path, bytes)` pairs ready for one atomic write.
pub fn textured_obj_files(
    mesh: &FaceMesh,
    obj_path: &Path,
    atlas: &TextureAtlas,
    atlas_path: &Path,
) -> Result<Vec<(PathBuf, Vec<u8>)>> {
    let stem = obj_path
        .file_stem()
        .and_then(|s| s.to_str())
        .ok_or_else(|| Error::invalid(format!("{} has no UTF-8 file stem", obj_path.display())))?;
    let mtl_path = obj_path.with_extension("mtl");
    let mtl_name = format!("{stem}.mtl");
    let obj = encode_obj(mesh, Some((&mtl_name, "face_texture")))?;
    let png = super::image::encode_image(&atlas.image, super::ImageFormat::Png)?;
    let texture_ref = texture_reference(obj_path, atlas_path)?;
    Ok(vec![
        (atlas_path.to_path_buf(), png),
        (mtl_path, encode_mtl("face_texture", &texture_ref).into_bytes()),
        (obj_path.to_path_buf(), obj.into_bytes()),
    ])
}

/// `atlas` as the MTL should name it: relative to the OBJ's directory when it
/// lives there or below, otherwise the path as given.
fn texture_reference(obj_path: &Path, atlas_path: &Path) -> Result<String> {
    let dir = obj_path.parent().unwrap_or(Path::new(""));
    let rel = atlas_path.strip_prefix(dir).unwrap_or(atlas_path);
    let text = rel
        .to_str()
        .ok_or_else(|| Error::invalid(format!("{} is not valid UTF-8", atlas_path.display())))?;
    if text.chars().any(char::is_whitespace) {
        return Err(Error::invalid(format!("texture path {text:?} contains whitespace")));
    }
    Ok(text.replace('\\', "/"))
}

pub fn write_files(files: &[(PathBuf, Vec<u8>)]) -> Result<()> {
    let refs: Vec<(&Path, &[u8])> = files.iter().map(|(p, b)| (p.as_path(), b.as_slice())).collect();
    super::atomic_write_all(&refs)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn square() -> FaceMesh {
        let mut m = FaceMesh::new(
            vec![[0.0, 0.0, 0.0], [1.0, 0.0, 0.0], [1.0, 1.0, 0.0], [0.0, 1.0, 0.0]],
            vec![[0, 1, 2], [0, 2, 3]],
        )
        .unwrap();
        m.colors = Some(vec![[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0], [0.5, 0.5, 0.5]]);
        m
    }

    #[test]
    fn ply_records() {
        let bytes = encode_ply(&square());
        let text = String::from_utf8_lossy(&bytes);
        assert!(text.contains("element vertex 4\n") && text.contains("element face 2\n"));
        let back = decode_ply(&bytes).unwrap();
        assert_eq!(back.vertices, square().vertices);
        assert_eq!(back.triangles, square().triangles);
        for (a, b) in back.colors.unwrap().iter().flatten().zip(square().colors.unwrap().iter().flatten()) {
            assert!((a - b).abs() <= 1.0 / 255.0);
        }
    }

    #[test]
    fn obj_round_trip() {
        let mut m = square();
        m.uv_coords = Some(vec![[0.0, 0.0], [1.0, 0.0], [1.0, 1.0], [0.0, 1.0]]);
        let back = decode_obj(&encode_obj(&m, Some(("a.mtl", "x"))).unwrap()).unwrap();
        assert_eq!(back, m);
        m.uv_coords = None;
        assert!(encode_obj(&m, Some(("a.mtl", "x"))).is_err());
    }

    #[test]
    fn obj_polygons_and_negative_indices() {
        let m = decode_obj("v 0 0 0\nv 1 0 0\nv 1 1 0\nv 0 1 0\nf -4 -3 -2 -1\n").unwrap();
        assert_eq!(m.triangles, vec![[0, 1, 2], [0, 2, 3]]);
        assert!(decode_obj("v 0 0 0\nf 1 2 3\n").is_err());
    }
}
