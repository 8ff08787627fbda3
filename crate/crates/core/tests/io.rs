mod common;

use std::io::Cursor;
use std::panic;

use morphface::alignment::{LandmarkScheme, LandmarkSet};
use morphface::image::ImageBuffer;
use morphface::io::basis::{HEADER_LEN, MAGIC};
use morphface::io::{
    decode_basis, decode_image, decode_ply, encode_basis, encode_image, encode_ply, export_mesh,
    load_basis, load_image, load_landmarks, load_mesh, load_params, save_basis, save_image,
    save_landmarks, save_params, ImageFormat, MeshFormat, ParamsDocument,
};
use morphface::model::{synthesize_shape, FaceMesh, MorphableBasis};
use morphface::synthetic::toy_head_basis;
use morphface::texture::bake_uv_atlas;
use morphface::{Error, FormatError};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn f32_exact(v: f64) -> f64 {
    v as f32 as f64
}

fn sample_basis() -> MorphableBasis {
    toy_head_basis(6, 8, 3, 2, 5, 9).unwrap()
}

#[test]
fn basis_round_trip_is_exact_at_f32() {
    let b = sample_basis();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("head.mmb");
    save_basis(&b, &path).unwrap();
    let back = load_basis(&path).unwrap();
    assert!(back.mean_shape().iter().zip(b.mean_shape()).all(|(x, y)| *x == f32_exact(*y)));
    assert!(back.id_basis().iter().zip(b.id_basis().iter()).all(|(x, y)| *x == f32_exact(*y)));
    assert!(back.exp_basis().iter().zip(b.exp_basis().iter()).all(|(x, y)| *x == f32_exact(*y)));
    assert_eq!(back.triangles(), b.triangles());
    assert_eq!(back.landmark_indices(), b.landmark_indices());
    assert_eq!(back.mirror_map(), b.mirror_map());
    let uv: Vec<[f64; 2]> = b.uv_coords().unwrap().iter().map(|p| p.map(f32_exact)).collect();
    assert_eq!(back.uv_coords().unwrap(), &uv[..]);
    // A second pass is bit-exact.
    assert_eq!(encode_basis(&back), std::fs::read(&path).unwrap());
}

#[test]
fn basis_header_is_normative() {
    let b = sample_basis();
    let bytes = encode_basis(&b);
    let u32_at = |o: usize| u32::from_le_bytes(bytes[o..o + 4].try_into().unwrap());
    assert_eq!(&bytes[..4], b"MMB1");
    assert_eq!(u32_at(4), 1);
    assert_eq!(u32_at(8) as usize, b.vertex_count());
    assert_eq!(u32_at(12) as usize, b.id_dim());
    assert_eq!(u32_at(16) as usize, b.exp_dim());
    assert_eq!(u32_at(20) as usize, b.triangles().len());
    assert_eq!(u32_at(24) as usize, b.landmark_indices().len());
    assert_eq!(u32_at(28), 3);
    let n = b.vertex_count();
    let body = 4 * (3 * n * (1 + b.id_dim() + b.exp_dim()) + 3 * b.triangles().len() + 5 + 2 * n + n);
    assert_eq!(bytes.len(), HEADER_LEN + body + 4);
    let crc = crc32fast::hash(&bytes[..bytes.len() - 4]);
    assert_eq!(u32_at(bytes.len() - 4), crc);
    // First mean coordinate as little-endian f32.
    let first = f32::from_le_bytes(bytes[32..36].try_into().unwrap());
    assert_eq!(first as f64, f32_exact(b.mean_shape()[0]));
}

#[test]
fn basis_errors_are_distinct() {
    let bytes = encode_basis(&sample_basis());
    let mut bad_magic = bytes.clone();
    bad_magic[0] = b'X';
    assert!(matches!(decode_basis(&bad_magic), Err(FormatError::BadMagic { .. })));
    let mut bad_version = bytes.clone();
    bad_version[4] = 9;
    assert!(matches!(decode_basis(&bad_version), Err(FormatError::UnsupportedVersion { found: 9, .. })));
    let mut bad_crc = bytes.clone();
    let last = bad_crc.len() - 1;
    bad_crc[last] ^= 0x55;
    assert!(matches!(decode_basis(&bad_crc), Err(FormatError::CrcMismatch { .. })));
    let cut = &bytes[..bytes.len() / 2];
    match decode_basis(cut) {
        Err(FormatError::Truncated { expected, actual }) => {
            assert_eq!(expected, bytes.len() as u64);
            assert_eq!(actual, cut.len() as u64);
        }
        other => panic!("{other:?}"),
    }
    let mut long = bytes.clone();
    long.push(0);
    assert!(matches!(decode_basis(&long), Err(FormatError::TrailingBytes { extra: 1 })));
}

#[test]
fn fuzzed_containers_fail_with_typed_errors() {
    let clean = encode_basis(&sample_basis());
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    for i in 0..1000 {
        let mut bytes = clean.clone();
        match i % 5 {
            0 => bytes.truncate(rng.random_range(0..clean.len())),
            1 => {
                for _ in 0..rng.random_range(1..8) {
                    let k = rng.random_range(0..bytes.len());
                    bytes[k] ^= rng.random_range(1..=255u8);
                }
            }
            2 => {
                // Header fields rewritten, CRC left stale.
                let field = 4 * rng.random_range(1..8);
                let v: u32 = if rng.random_bool(0.5) { rng.random() } else { rng.random_range(0..64) };
                bytes[field..field + 4].copy_from_slice(&v.to_le_bytes());
            }
            3 => {
                // Header rewritten with a recomputed CRC: only structure checks remain.
                let field = 4 * rng.random_range(1..8);
                let v: u32 = rng.random_range(0..100);
                bytes[field..field + 4].copy_from_slice(&v.to_le_bytes());
                let n = bytes.len() - 4;
                let crc = crc32fast::hash(&bytes[..n]);
                bytes[n..].copy_from_slice(&crc.to_le_bytes());
            }
            _ => {
                let len = rng.random_range(0..200);
                bytes = (0..len).map(|_| rng.random()).collect();
                if rng.random_bool(0.5) && bytes.len() >= 4 {
                    bytes[..4].copy_from_slice(&MAGIC);
                }
            }
        }
        if bytes == clean {
            continue;
        }
        let result = panic::catch_unwind(|| decode_basis(&bytes));
        let decoded = result.unwrap_or_else(|_| panic!("decoder panicked on iteration {i}"));
        if let Ok(b) = decoded {
            // Only a structurally valid rewrite with a matching CRC may decode.
            assert_eq!(i % 5, 3, "iteration {i} decoded corrupted bytes");
            assert_eq!(encode_basis(&b), bytes);
        }
    }
}

#[test]
fn corrupted_file_load_reports_format_error() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("bad.mmb");
    std::fs::write(&path, b"MMB1 short").unwrap();
    assert!(matches!(load_basis(&path), Err(Error::Format(FormatError::Truncated { .. }))));
    let missing = dir.path().join("missing.mmb");
    match load_basis(&missing) {
        Err(e @ Error::Io { .. }) => assert!(e.to_string().contains("missing.mmb")),
        other => panic!("{other:?}"),
    }
}

fn unit_square() -> FaceMesh {
    FaceMesh::new(
        vec![[0.0, 0.0, 0.0], [1.0, 0.0, 0.0], [1.0, 1.0, 0.0], [0.0, 1.0, 0.0]],
        vec![[0, 1, 2], [0, 2, 3]],
    )
    .unwrap()
}

#[test]
fn square_ply_has_four_vertices_and_two_faces() {
    let bytes = encode_ply(&unit_square());
    let header_end = bytes.windows(11).position(|w| w == b"end_header\n").unwrap() + 11;
    let header = std::str::from_utf8(&bytes[..header_end]).unwrap();
    assert!(header.contains("format binary_little_endian 1.0"));
    assert!(header.contains("element vertex 4\n"));
    assert!(header.contains("element face 2\n"));
    assert_eq!(bytes.len() - header_end, 4 * 12 + 2 * 13);
}

/// Minimal reader for the fixed layout the writer documents.
fn reparse_ply(bytes: &[u8]) -> (Vec<[f32; 3]>, Vec<[u8; 3]>, Vec<[i32; 3]>) {
    let end = bytes.windows(11).position(|w| w == b"end_header\n").unwrap() + 11;
    let header = std::str::from_utf8(&bytes[..end]).unwrap();
    let count = |name: &str| -> usize {
        header.lines().find_map(|l| l.strip_prefix(&format!("element {name} "))).unwrap().parse().unwrap()
    };
    let colored = header.contains("property uchar red");
    let mut cur = Cursor::new(&bytes[end..]);
    let mut read = |n: usize| {
        let mut buf = vec![0u8; n];
        std::io::Read::read_exact(&mut cur, &mut buf).unwrap();
        buf
    };
    let (mut v, mut c, mut f) = (Vec::new(), Vec::new(), Vec::new());
    for _ in 0..count("vertex") {
        let b = read(12);
        v.push([0, 4, 8].map(|o| f32::from_le_bytes(b[o..o + 4].try_into().unwrap())));
        if colored {
            let b = read(3);
            c.push([b[0], b[1], b[2]]);
        }
    }
    for _ in 0..count("face") {
        assert_eq!(read(1)[0], 3);
        let b = read(12);
        f.push([0, 4, 8].map(|o| i32::from_le_bytes(b[o..o + 4].try_into().unwrap())));
    }
    (v, c, f)
}

#[test]
fn colored_ply_reparses_within_quantization() {
    let basis = sample_basis();
    let mut mesh = synthesize_shape(&basis, &[0.3, -0.2, 0.1], &[0.5, 0.0]).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    mesh.colors = Some((0..mesh.vertex_count()).map(|_| [rng.random(), rng.random(), rng.random()]).collect());
    let bytes = encode_ply(&mesh);
    let (v, c, f) = reparse_ply(&bytes);
    assert_eq!(v.len(), mesh.vertex_count());
    for (a, b) in v.iter().zip(&mesh.vertices) {
        assert_eq!(a.map(|x| x as f64), b.map(f32_exact));
    }
    for (a, b) in c.iter().zip(mesh.colors.as_ref().unwrap()) {
        for k in 0..3 {
            assert!((a[k] as f64 / 255.0 - b[k]).abs() <= 1.0 / 255.0);
        }
    }
    let tris: Vec<[i32; 3]> = mesh.triangles.iter().map(|t| t.map(|i| i as i32)).collect();
    assert_eq!(f, tris);
    let own = decode_ply(&bytes).unwrap();
    assert_eq!(own.triangles, mesh.triangles);
}

#[test]
fn textured_obj_reparses_with_tobj() {
    let basis = sample_basis();
    let mut mesh = synthesize_shape(&basis, &[0.1, 0.2, 0.3], &[0.0, -0.4]).unwrap();
    mesh.uv_coords = basis.uv_coords().map(|u| u.to_vec());
    let colors = vec![[0.2, 0.4, 0.6]; basis.vertex_count()];
    let atlas = bake_uv_atlas(&basis, &colors, 64).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("face.obj");
    export_mesh(&mesh, MeshFormat::Obj, &path, Some(&atlas)).unwrap();
    assert!(dir.path().join("face.png").exists());
    let mtl = std::fs::read_to_string(dir.path().join("face.mtl")).unwrap();
    assert!(mtl.contains("map_Kd face.png"));

    let (models, materials) = tobj::load_obj(&path, &tobj::LoadOptions { triangulate: true, ..Default::default() }).unwrap();
    let materials = materials.unwrap();
    assert_eq!(materials[0].diffuse_texture.as_deref(), Some("face.png"));
    let m = &models[0].mesh;
    assert_eq!(m.positions.len(), 3 * mesh.vertex_count());
    assert_eq!(m.texcoords.len(), 2 * mesh.vertex_count());
    assert_eq!(m.indices.len(), 3 * mesh.triangles.len());
    for (corner, &i) in mesh.triangles.iter().flatten().enumerate() {
        let k = m.indices[corner] as usize;
        let v = mesh.vertices[i as usize];
        assert_eq!([0, 1, 2].map(|a| m.positions[3 * k + a] as f64), v.map(f32_exact));
        let uv = mesh.uv_coords.as_ref().unwrap()[i as usize];
        assert_eq!([0, 1].map(|a| m.texcoords[2 * k + a] as f64), uv.map(f32_exact));
    }
    let png = load_image(&dir.path().join("face.png")).unwrap();
    assert_eq!((png.width(), png.channels()), (64, 3));

    let back = load_mesh(&path).unwrap();
    assert_eq!(back.vertices, mesh.vertices);
    assert_eq!(back.triangles, mesh.triangles);
    assert_eq!(back.uv_coords, mesh.uv_coords);
}

#[test]
fn atlas_export_without_uvs_writes_nothing() {
    let mesh = unit_square();
    let atlas = bake_uv_atlas(&sample_basis(), &vec![[0.5; 3]; sample_basis().vertex_count()], 64).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("square.obj");
    assert!(matches!(export_mesh(&mesh, MeshFormat::Obj, &path, Some(&atlas)), Err(Error::InvalidArgument(_))));
    assert_eq!(std::fs::read_dir(dir.path()).unwrap().count(), 0);
}

#[test]
fn landmark_files_round_trip_and_validate() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("eyes.json");
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let set = LandmarkSet::new(
        LandmarkScheme::EyesOnly,
        (0..2).map(|_| [rng.random_range(-1e3..1e3), rng.random::<f64>() * 1e-7]).collect(),
    )
    .unwrap();
    save_landmarks(&set, &path).unwrap();
    assert_eq!(load_landmarks(&path).unwrap(), set);

    let points: Vec<[f64; 2]> = (0..67).map(|i| [i as f64, 0.0]).collect();
    std::fs::write(&path, serde_json::json!({"scheme": "FULL_68", "points": points}).to_string()).unwrap();
    assert!(matches!(load_landmarks(&path), Err(Error::Format(FormatError::Schema(_)))));
    std::fs::write(&path, r#"{"scheme": "EYES_ONLY", "points": [[1, "a"], [2, 3]]}"#).unwrap();
    assert!(matches!(load_landmarks(&path), Err(Error::Format(FormatError::Schema(_)))));
    let full: Vec<[f64; 2]> = (0..68).map(|i| [i as f64, 2.0 * i as f64]).collect();
    std::fs::write(&path, serde_json::json!({"scheme": "FULL_68", "points": full}).to_string()).unwrap();
    assert_eq!(load_landmarks(&path).unwrap().scheme, LandmarkScheme::Full68);
}

#[test]
fn pgm_values_scale_linearly() {
    let bytes = b"P5\n2 2\n255\n\x00\x55\xaa\xff";
    let img = decode_image(bytes).unwrap();
    let want = [0.0, 1.0 / 3.0, 2.0 / 3.0, 1.0];
    for (g, w) in img.data().iter().zip(want) {
        assert!((g - w).abs() <= 1.0 / 510.0);
    }
}

#[test]
fn images_round_trip_within_half_a_level() {
    let dir = tempfile::tempdir().unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    for (name, channels) in [("a.png", 3), ("b.png", 1), ("c.ppm", 3), ("d.pgm", 1)] {
        let img = ImageBuffer::from_fn(13, 7, channels, |_, _, _| rng.random()).unwrap();
        let path = dir.path().join(name);
        save_image(&img, &path).unwrap();
        let back = load_image(&path).unwrap();
        assert_eq!((back.width(), back.height(), back.channels()), (13, 7, channels));
        for (a, b) in img.data().iter().zip(back.data()) {
            assert!((a - b).abs() <= 1.0 / 510.0 + 1e-12, "{name}");
        }
    }
}

#[test]
fn sixteen_bit_png_is_unsupported() {
    let mut bytes = Vec::new();
    {
        let mut enc = png::Encoder::new(&mut bytes, 2, 2);
        enc.set_color(png::ColorType::Grayscale);
        enc.set_depth(png::BitDepth::Sixteen);
        enc.write_header().unwrap().write_image_data(&[0u8; 8]).unwrap();
    }
    assert!(matches!(decode_image(&bytes), Err(FormatError::Unsupported(_))));
    assert!(matches!(decode_image(b"P2\n1 1\n255\n0\n"), Err(FormatError::Unsupported(_))));
}

#[test]
fn params_round_trip_exactly() {
    let basis = sample_basis();
    let p = common::random_params(&basis, &mut ChaCha8Rng::seed_from_u64(3));
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("p.json");
    save_params(&ParamsDocument::new(p.clone(), None), &path).unwrap();
    assert_eq!(load_params(&path).unwrap(), p);
    let doc: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(&path).unwrap()).unwrap();
    assert_eq!(doc["flat"].as_array().unwrap().len(), 6 + 3 + 2);
    assert_eq!(doc["flat_names"][0], "scale");
    assert!(matches!(load_params(&dir.path().join("nope.json")), Err(Error::Io { .. })));
}

proptest! {
    #[test]
    fn landmark_json_is_lossless(points in prop::collection::vec(prop::array::uniform2(-1e9f64..1e9), 0..20)) {
        let set = LandmarkSet::new(LandmarkScheme::Generic, points).unwrap();
        let text = morphface::io::landmarks::encode_landmarks(&set);
        prop_assert_eq!(morphface::io::landmarks::decode_landmarks(&text).unwrap(), set);
    }

    #[test]
    fn params_json_is_lossless(seed in any::<u64>()) {
        let basis = common::random_basis(6, 3, 2, 1);
        let p = common::random_params(&basis, &mut ChaCha8Rng::seed_from_u64(seed));
        let text = ParamsDocument::new(p.clone(), None).to_json();
        prop_assert_eq!(morphface::io::params::decode_params(&text).unwrap(), p);
    }

    #[test]
    fn pnm_round_trip_is_exact_on_levels(levels in prop::collection::vec(0u8..=255, 12)) {
        let img = ImageBuffer::from_vec(2, 2, 3, levels.iter().map(|&l| l as f64 / 255.0).collect()).unwrap();
        let bytes = encode_image(&img, ImageFormat::Pnm).unwrap();
        prop_assert_eq!(decode_image(&bytes).unwrap(), img);
    }
}


#[test]
fn failed_multi_file_write_leaves_targets_alone() {
    let dir = tempfile::tempdir().unwrap();
    let good = dir.path().join("keep.txt");
    std::fs::write(&good, b"old").unwrap();
    let bad = dir.path().join("no_such_dir").join("x.txt");
    let r = morphface::io::atomic_write_all(&[(&good, b"new"), (&bad, b"x")]);
    assert!(matches!(r, Err(Error::Io { .. })));
    assert_eq!(std::fs::read(&good).unwrap(), b"old");
    assert_eq!(std::fs::read_dir(dir.path()).unwrap().count(), 1);
}
