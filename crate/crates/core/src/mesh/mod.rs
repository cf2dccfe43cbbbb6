//! Triangle meshes: storage, unit-cube normalization, edge diagnostics and file I/O.

mod io;
pub mod primitives;

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

pub use io::{load_mesh, parse_obj, parse_stl, write_obj};

use crate::{Error, Result, Vec3};

#[derive(Debug, Clone, Default, PartialEq)]
pub struct MeshData {
    pub vertices: Vec<Vec3>,
    pub triangles: Vec<[usize; 3]>,
}

impl MeshData {
    pub fn new(vertices: Vec<Vec3>, triangles: Vec<[usize; 3]>) -> Result<Self> {
        let mesh = MeshData {
            vertices,
            triangles,
        };
        mesh.validate()?;
        Ok(mesh)
    }

    pub fn validate(&self) -> Result<()> {
        let count = self.vertices.len();
        for (t, tri) in self.triangles.iter().enumerate() {
            for &index in tri {
                if index >= count {
                    return Err(Error::IndexOutOfRange {
                        triangle: t,
                        index,
                        count,
                    });
                }
            }
        }
        Ok(())
    }

    pub fn is_empty(&self) -> bool {
        self.triangles.is_empty()
    }

    #[inline]
    pub fn corners(&self, t: usize) -> [Vec3; 3] {
        let [a, b, c] = self.triangles[t];
        [self.vertices[a], self.vertices[b], self.vertices[c]]
    }

    /// Unnormalized face normal (twice the area, right-handed winding).
    #[inline]
    pub fn face_cross(&self, t: usize) -> Vec3 {
        let [a, b, c] = self.corners(t);
        (b - a).cross(&(c - a))
    }

    pub fn area(&self, t: usize) -> f64 {
        0.5 * self.face_cross(t).norm()
    }

    pub fn bounding_box(&self) -> Option<(Vec3, Vec3)> {
        let first = *self.vertices.first()?;
        Some(self.vertices.iter().fold((first, first), |(lo, hi), v| {
            (lo.inf(v), hi.sup(v))
        }))
    }

    /// Drops vertices no triangle refers to, keeping the relative order of the rest.
    pub fn prune_unreferenced(&mut self) {
        let mut used = vec![false; self.vertices.len()];
        for tri in &self.triangles {
            for &v in tri {
                used[v] = true;
            }
        }
        if used.iter().all(|&u| u) {
            return;
        }
        let mut remap = vec![usize::MAX; self.vertices.len()];
        let mut kept = Vec::with_capacity(self.vertices.len());
        for (i, v) in self.vertices.iter().enumerate() {
            if used[i] {
                remap[i] = kept.len();
                kept.push(*v);
            }
        }
        self.vertices = kept;
        for tri in &mut self.triangles {
            for v in tri.iter_mut() {
                *v = remap[*v];
            }
        }
    }

    /// Reverses the winding of every triangle.
    pub fn flipped(&self) -> MeshData {
        MeshData {
            vertices: self.vertices.clone(),
            triangles: self.triangles.iter().map(|&[a, b, c]| [a, c, b]).collect(),
        }
    }

    pub fn transformed(&self, f: impl Fn(&Vec3) -> Vec3) -> MeshData {
        MeshData {
            vertices: self.vertices.iter().map(f).collect(),
            triangles: self.triangles.clone(),
        }
    }

    /// Appends `other`, offsetting its indices.
    pub fn merge(&mut self, other: &MeshData) {
        let base = self.vertices.len();
        self.vertices.extend_from_slice(&other.vertices);
        self.triangles.extend(
            other
                .triangles
                .iter()
                .map(|&[a, b, c]| [a + base, b + base, c + base]),
        );
    }

    /// Undirected edge -> number of incident triangles.
    pub fn edge_valence(&self) -> HashMap<(usize, usize), usize> {
        let mut edges = HashMap::with_capacity(self.triangles.len() * 3 / 2);
        for tri in &self.triangles {
            for e in 0..3 {
                let (a, b) = (tri[e], tri[(e + 1) % 3]);
                *edges.entry((a.min(b), a.max(b))).or_insert(0) += 1;
            }
        }
        edges
    }

    pub fn edge_report(&self) -> EdgeReport {
        let mut report = EdgeReport::default();
        for (_, count) in self.edge_valence() {
            match count {
                1 => report.boundary_edges += 1,
                2 => {}
                _ => report.non_manifold_edges += 1,
            }
        }
        report
    }
}

/// Watertightness diagnostics for a triangle mesh.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct EdgeReport {
    pub boundary_edges: usize,
    pub non_manifold_edges: usize,
}

impl EdgeReport {
    pub fn is_watertight(&self) -> bool {
        self.boundary_edges == 0 && self.non_manifold_edges == 0
    }
}

/// Uniform scale plus offset mapping original coordinates into the unit cube:
/// `q_unit = scale * q_orig + offset`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NormalizationTransform {
    pub scale: f64,
    pub offset: [f64; 3],
}

impl NormalizationTransform {
    pub fn identity() -> Self {
        NormalizationTransform {
            scale: 1.0,
            offset: [0.0; 3],
        }
    }

    #[inline]
    pub fn apply(&self, q: &Vec3) -> Vec3 {
        q * self.scale + Vec3::from(self.offset)
    }

    #[inline]
    pub fn invert(&self, q: &Vec3) -> Vec3 {
        (q - Vec3::from(self.offset)) / self.scale
    }
}

pub const DEFAULT_MARGIN: f64 = 0.1;

/// Uniformly scales and centers `mesh` so its bounding box sits inside
/// `[margin, 1 - margin]^3` with the longest axis spanning exactly `1 - 2 margin`.
pub fn normalize_to_unit(
    mesh: &MeshData,
    margin: f64,
) -> Result<(MeshData, NormalizationTransform)> {
    if !(margin > 0.0 && margin < 0.5) {
        return Err(Error::InvalidArgument(format!(
            "margin must lie in (0, 0.5), got {margin}"
        )));
    }
    if mesh.is_empty() {
        return Err(Error::EmptyMesh);
    }
    let (lo, hi) = mesh.bounding_box().ok_or(Error::EmptyMesh)?;
    let extent = (hi - lo).max();
    if !(extent > 0.0) || !extent.is_finite() {
        return Err(Error::DegenerateMesh);
    }
    let scale = (1.0 - 2.0 * margin) / extent;
    let center = (lo + hi) * 0.5;
    let offset = Vec3::repeat(0.5) - center * scale;
    let transform = NormalizationTransform {
        scale,
        offset: offset.into(),
    };
    Ok((mesh.transformed(|v| transform.apply(v)), transform))
}
