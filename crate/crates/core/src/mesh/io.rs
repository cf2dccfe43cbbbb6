use std::collections::HashMap;
use std::fs;
use std::io::Write;
use std::path::Path;

use super::{MeshData, NormalizationTransform};
use crate::{Error, Result, Vec3};

/// Loads an OBJ or STL (ASCII or binary) triangle mesh, dropping unreferenced vertices.
pub fn load_mesh(path: impl AsRef<Path>) -> Result<MeshData> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let ext = path
        .extension()
        .and_then(|e| e.to_str())
        .map(|e| e.to_ascii_lowercase());
    let mut mesh = match ext.as_deref() {
        Some("obj") => {
            let text = std::str::from_utf8(&bytes).map_err(|e| Error::Parse {
                line: 0,
                message: format!("not utf-8: {e}"),
            })?;
            parse_obj(text)?
        }
        Some("stl") => parse_stl(&bytes)?,
        other => {
            return Err(Error::UnsupportedFormat(
                other.unwrap_or("<no extension>").to_string(),
            ))
        }
    };
    mesh.prune_unreferenced();
    if mesh.is_empty() {
        return Err(Error::EmptyMesh);
    }
    Ok(mesh)
}

fn parse_floats<'a>(
    fields: impl Iterator<Item = &'a str>,
    line: usize,
    want: usize,
) -> Result<Vec<f64>> {
    let values = fields
        .take(want)
        .map(|f| {
            f.parse::<f64>().map_err(|e| Error::Parse {
                line,
                message: format!("bad number {f:?}: {e}"),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    if values.len() < want {
        return Err(Error::Parse {
            line,
            message: format!("expected {want} coordinates"),
        });
    }
    Ok(values)
}

/// Parses `v` and `f` records; every face must have exactly three corners.
pub fn parse_obj(text: &str) -> Result<MeshData> {
    let mut vertices = Vec::new();
    let mut triangles = Vec::new();
    let mut face = 0usize;
    for (lineno, raw) in text.lines().enumerate() {
        let line = lineno + 1;
        let raw = raw.split('#').next().unwrap_or("");
        let mut fields = raw.split_whitespace();
        match fields.next() {
            Some("v") => {
                let xyz = parse_floats(fields, line, 3)?;
                vertices.push(Vec3::new(xyz[0], xyz[1], xyz[2]));
            }
            Some("f") => {
                let corners = fields.collect::<Vec<_>>();
                if corners.len() != 3 {
                    return Err(Error::NonTriangleFace {
                        face,
                        count: corners.len(),
                    });
                }
                let mut tri = [0usize; 3];
                for (slot, corner) in tri.iter_mut().zip(&corners) {
                    let head = corner.split('/').next().unwrap_or("");
                    let idx: i64 = head.parse().map_err(|e| Error::Parse {
                        line,
                        message: format!("bad face index {corner:?}: {e}"),
                    })?;
                    let resolved = match idx {
                        i if i > 0 => i - 1,
                        i if i < 0 => vertices.len() as i64 + i,
                        _ => -1,
                    };
                    if resolved < 0 || resolved as usize >= vertices.len() {
                        return Err(Error::Parse {
                            line,
                            message: format!("face index {idx} out of range"),
                        });
                    }
                    *slot = resolved as usize;
                }
                triangles.push(tri);
                face += 1;
            }
            _ => {}
        }
    }
    MeshData::new(vertices, triangles)
}

/// Parses binary or ASCII STL, welding bitwise-identical corner positions.
pub fn parse_stl(bytes: &[u8]) -> Result<MeshData> {
    let is_binary = bytes.len() >= 84 && {
        let count = u32::from_le_bytes([bytes[80], bytes[81], bytes[82], bytes[83]]) as usize;
        bytes.len() == 84 + count * 50
    };
    let corners = if is_binary {
        let count = (bytes.len() - 84) / 50;
        let mut corners = Vec::with_capacity(count * 3);
        for t in 0..count {
            let rec = &bytes[84 + t * 50..84 + (t + 1) * 50];
            for c in 0..3 {
                let mut xyz = [0.0; 3];
                for (d, value) in xyz.iter_mut().enumerate() {
                    let at = 12 + c * 12 + d * 4;
                    *value =
                        f32::from_le_bytes([rec[at], rec[at + 1], rec[at + 2], rec[at + 3]]) as f64;
                }
                corners.push(Vec3::from(xyz));
            }
        }
        corners
    } else {
        let text = std::str::from_utf8(bytes).map_err(|_| Error::Parse {
            line: 0,
            message: "neither binary STL nor utf-8 text".into(),
        })?;
        let mut corners = Vec::new();
        let mut in_facet = 0usize;
        for (lineno, raw) in text.lines().enumerate() {
            let mut fields = raw.split_whitespace();
            match fields.next() {
                Some("facet") => in_facet = 0,
                Some("vertex") => {
                    let xyz = parse_floats(fields, lineno + 1, 3)?;
                    corners.push(Vec3::new(xyz[0], xyz[1], xyz[2]));
                    in_facet += 1;
                }
                Some("endfacet") if in_facet != 3 => {
                    return Err(Error::NonTriangleFace {
                        face: corners.len() / 3,
                        count: in_facet,
                    })
                }
                _ => {}
            }
        }
        corners
    };

    let mut lookup: HashMap<[u64; 3], usize> = HashMap::new();
    let mut vertices = Vec::new();
    let mut triangles = Vec::with_capacity(corners.len() / 3);
    for tri in corners.chunks_exact(3) {
        let mut ids = [0usize; 3];
        for (slot, p) in ids.iter_mut().zip(tri) {
            let key = [p.x.to_bits(), p.y.to_bits(), p.z.to_bits()];
            *slot = *lookup.entry(key).or_insert_with(|| {
                vertices.push(*p);
                vertices.len() - 1
            });
        }
        triangles.push(ids);
    }
    MeshData::new(vertices, triangles)
}

/// Writes an OBJ file; with `transform`, vertices are mapped back to original model coordinates.
pub fn write_obj(
    mesh: &MeshData,
    path: impl AsRef<Path>,
    transform: Option<&NormalizationTransform>,
) -> Result<()> {
    let path = path.as_ref();
    let mut out = Vec::with_capacity(mesh.vertices.len() * 40 + mesh.triangles.len() * 24);
    write_obj_to(mesh, &mut out, transform).map_err(|e| Error::io(path, e))?;
    fs::write(path, out).map_err(|e| Error::io(path, e))
}

pub(crate) fn write_obj_to(
    mesh: &MeshData,
    out: &mut impl Write,
    transform: Option<&NormalizationTransform>,
) -> std::io::Result<()> {
    for v in &mesh.vertices {
        let p = transform.map_or(*v, |t| t.invert(v));
        writeln!(out, "v {} {} {}", p.x, p.y, p.z)?;
    }
    for [a, b, c] in &mesh.triangles {
        writeln!(out, "f {} {} {}", a + 1, b + 1, c + 1)?;
    }
    Ok(())
}

impl MeshData {
    pub fn to_obj_string(&self, transform: Option<&NormalizationTransform>) -> String {
        let mut out = Vec::new();
        write_obj_to(self, &mut out, transform).expect("writing to memory");
        String::from_utf8(out).expect("obj output is ascii")
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::primitives;

    #[test]
    fn cube_round_trip() {
        let cube = primitives::cuboid(Vec3::zeros(), Vec3::repeat(1.0));
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("cube.obj");
        write_obj(&cube, &path, None).unwrap();
        let loaded = load_mesh(&path).unwrap();
        assert_eq!((loaded.vertices.len(), loaded.triangles.len()), (8, 12));
        assert_eq!(loaded, cube);
    }

    #[test]
    fn quad_face_is_rejected_with_index() {
        let text = "v 0 0 0\nv 1 0 0\nv 1 1 0\nv 0 1 0\nf 1 2 3\nf 1 2 3 4\n";
        match parse_obj(text) {
            Err(Error::NonTriangleFace { face, count }) => assert_eq!((face, count), (1, 4)),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn obj_slash_and_negative_indices() {
        let text = "v 0 0 0\nv 1 0 0\nv 0 1 0\nvn 0 0 1\nf 1//1 2//1 -1//1\n";
        let m = parse_obj(text).unwrap();
        assert_eq!(m.triangles, vec![[0, 1, 2]]);
        assert!(parse_obj("v 0 0 0\nf 1 2 3\n").is_err());
    }

    #[test]
    fn icosphere_counts() {
        let sphere = primitives::icosphere(3, Vec3::repeat(0.5), 0.3);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("ico.obj");
        write_obj(&sphere, &path, None).unwrap();
        let loaded = load_mesh(&path).unwrap();
        assert_eq!(loaded.vertices.len(), 642);
        assert_eq!(loaded.triangles.len(), 1280);
    }

    #[test]
    fn unreferenced_vertices_are_pruned_on_load() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("extra.obj");
        fs::write(&path, "v 5 5 5\nv 0 0 0\nv 1 0 0\nv 0 1 0\nf 2 3 4\n").unwrap();
        let m = load_mesh(&path).unwrap();
        assert_eq!(m.vertices.len(), 3);
        assert_eq!(m.triangles, vec![[0, 1, 2]]);
    }

    #[test]
    fn empty_and_unknown_files() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("empty.obj");
        fs::write(&path, "# nothing\n").unwrap();
        assert!(matches!(load_mesh(&path), Err(Error::EmptyMesh)));
        let ply = dir.path().join("mesh.ply");
        fs::write(&ply, "ply\n").unwrap();
        assert!(matches!(load_mesh(&ply), Err(Error::UnsupportedFormat(_))));
        assert!(matches!(
            load_mesh(dir.path().join("missing.obj")),
            Err(Error::Io { .. })
        ));
    }

    fn binary_stl(mesh: &MeshData) -> Vec<u8> {
        let mut out = vec![0u8; 80];
        out.extend_from_slice(&(mesh.triangles.len() as u32).to_le_bytes());
        for t in 0..mesh.triangles.len() {
            out.extend_from_slice(&[0u8; 12]);
            for p in mesh.corners(t) {
                for d in 0..3 {
                    out.extend_from_slice(&(p[d] as f32).to_le_bytes());
                }
            }
            out.extend_from_slice(&[0u8; 2]);
        }
        out
    }

    #[test]
    fn stl_binary_and_ascii_weld_to_same_mesh() {
        let cube = primitives::cuboid(Vec3::zeros(), Vec3::repeat(1.0));
        let bin = parse_stl(&binary_stl(&cube)).unwrap();
        assert_eq!((bin.vertices.len(), bin.triangles.len()), (8, 12));

        let mut ascii = String::from("solid cube\n");
        for t in 0..cube.triangles.len() {
            ascii.push_str("facet normal 0 0 0\nouter loop\n");
            for p in cube.corners(t) {
                ascii.push_str(&format!("vertex {} {} {}\n", p.x, p.y, p.z));
            }
            ascii.push_str("endloop\nendfacet\n");
        }
        ascii.push_str("endsolid cube\n");
        let text = parse_stl(ascii.as_bytes()).unwrap();
        assert_eq!(text, bin);
        assert!(text.edge_report().is_watertight());
    }
}
