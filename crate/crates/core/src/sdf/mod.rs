//! Signed distance to a triangle mesh and sampling onto the fitting lattice.
//!
//! Closest points come from a BVH over triangles; the sign is taken from the
//! angle-weighted pseudo-normal of the closest feature (face, edge or vertex),
//! which is exact for closed, consistently oriented meshes.

pub mod bvh;

use std::collections::HashMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use bvh::Bvh;

use crate::grid::GridSpec;
use crate::mesh::{EdgeReport, MeshData};
use crate::{Error, Result, Vec3};

/// Part of a triangle a closest point lies on.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Feature {
    Face,
    /// Local corner index 0..3.
    Vertex(u8),
    /// Edge from local corner `i` to `(i + 1) % 3`.
    Edge(u8),
}

/// Closest point on triangle `abc` to `p` together with the feature it lies on.
pub fn closest_point_on_triangle(p: &Vec3, a: &Vec3, b: &Vec3, c: &Vec3) -> (Vec3, Feature) {
    let ab = b - a;
    let ac = c - a;
    let ap = p - a;
    let d1 = ab.dot(&ap);
    let d2 = ac.dot(&ap);
    if d1 <= 0.0 && d2 <= 0.0 {
        return (*a, Feature::Vertex(0));
    }
    let bp = p - b;
    let d3 = ab.dot(&bp);
    let d4 = ac.dot(&bp);
    if d3 >= 0.0 && d4 <= d3 {
        return (*b, Feature::Vertex(1));
    }
    let vc = d1 * d4 - d3 * d2;
    if vc <= 0.0 && d1 >= 0.0 && d3 <= 0.0 {
        let v = d1 / (d1 - d3);
        return (a + ab * v, Feature::Edge(0));
    }
    let cp = p - c;
    let d5 = ab.dot(&cp);
    let d6 = ac.dot(&cp);
    if d6 >= 0.0 && d5 <= d6 {
        return (*c, Feature::Vertex(2));
    }
    let vb = d5 * d2 - d1 * d6;
    if vb <= 0.0 && d2 >= 0.0 && d6 <= 0.0 {
        let w = d2 / (d2 - d6);
        return (a + ac * w, Feature::Edge(2));
    }
    let va = d3 * d6 - d5 * d4;
    if va <= 0.0 && (d4 - d3) >= 0.0 && (d5 - d6) >= 0.0 {
        let w = (d4 - d3) / ((d4 - d3) + (d5 - d6));
        return (b + (c - b) * w, Feature::Edge(1));
    }
    let denom = 1.0 / (va + vb + vc);
    let v = vb * denom;
    let w = vc * denom;
    (a + ab * v + ac * w, Feature::Face)
}

/// Signed distance oracle over a normalized triangle mesh. Immutable after
/// construction and safe to share across threads.
#[derive(Debug, Clone)]
pub struct MeshSdf {
    mesh: MeshData,
    bvh: Bvh,
    face_normals: Vec<Vec3>,
    vertex_normals: Vec<Vec3>,
    edge_normals: HashMap<(usize, usize), Vec3>,
    report: EdgeReport,
}

#[inline]
fn edge_key(a: usize, b: usize) -> (usize, usize) {
    (a.min(b), a.max(b))
}

impl MeshSdf {
    pub fn new(mesh: MeshData) -> Result<Self> {
        if mesh.is_empty() {
            return Err(Error::EmptyMesh);
        }
        mesh.validate()?;
        let report = mesh.edge_report();
        if !report.is_watertight() {
            log::warn!(
                "mesh is not watertight ({} boundary edges, {} non-manifold edges); inside/outside signs are best-effort",
                report.boundary_edges,
                report.non_manifold_edges
            );
        }

        let face_normals: Vec<Vec3> = (0..mesh.triangles.len())
            .map(|t| {
                let n = mesh.face_cross(t);
                let len = n.norm();
                if len > 0.0 {
                    n / len
                } else {
                    Vec3::zeros()
                }
            })
            .collect();

        let mut vertex_normals = vec![Vec3::zeros(); mesh.vertices.len()];
        let mut edge_normals: HashMap<(usize, usize), Vec3> = HashMap::new();
        for (t, tri) in mesh.triangles.iter().enumerate() {
            let n = face_normals[t];
            for i in 0..3 {
                let (v, prev, next) = (tri[i], tri[(i + 2) % 3], tri[(i + 1) % 3]);
                let e1 = mesh.vertices[next] - mesh.vertices[v];
                let e2 = mesh.vertices[prev] - mesh.vertices[v];
                let angle = e1.angle(&e2);
                if angle.is_finite() {
                    vertex_normals[v] += n * angle;
                }
                *edge_normals.entry(edge_key(v, next)).or_insert_with(Vec3::zeros) += n;
            }
        }

        let boxes: Vec<(Vec3, Vec3)> = (0..mesh.triangles.len())
            .map(|t| {
                let [a, b, c] = mesh.corners(t);
                (a.inf(&b).inf(&c), a.sup(&b).sup(&c))
            })
            .collect();
        let bvh = Bvh::build(&boxes);
        Ok(MeshSdf {
            mesh,
            bvh,
            face_normals,
            vertex_normals,
            edge_normals,
            report,
        })
    }

    pub fn mesh(&self) -> &MeshData {
        &self.mesh
    }

    pub fn edge_report(&self) -> EdgeReport {
        self.report
    }

    /// Closest surface point, its squared distance, triangle and feature.
    pub fn closest(&self, q: &Vec3) -> (Vec3, f64, usize, Feature) {
        let probe = |t: usize| {
            let [a, b, c] = self.mesh.corners(t);
            closest_point_on_triangle(q, &a, &b, &c)
        };
        let (tri, d2) = self
            .bvh
            .nearest(q, |t| (probe(t).0 - q).norm_squared())
            .expect("mesh has triangles");
        let (p, feature) = probe(tri);
        (p, d2, tri, feature)
    }

    fn pseudo_normal(&self, tri: usize, feature: Feature) -> Vec3 {
        let t = self.mesh.triangles[tri];
        match feature {
            Feature::Face => self.face_normals[tri],
            Feature::Vertex(i) => self.vertex_normals[t[i as usize]],
            Feature::Edge(i) => {
                let (a, b) = (t[i as usize], t[(i as usize + 1) % 3]);
                self.edge_normals[&edge_key(a, b)]
            }
        }
    }

    /// Distance to the surface, negative inside the solid.
    pub fn signed_distance(&self, q: &Vec3) -> f64 {
        let (p, d2, tri, feature) = self.closest(q);
        if d2 == 0.0 {
            return 0.0;
        }
        let dist = d2.sqrt();
        if (q - p).dot(&self.pseudo_normal(tri, feature)) < 0.0 {
            -dist
        } else {
            dist
        }
    }

    /// Unsigned distance from `q` to the surface.
    pub fn distance(&self, q: &Vec3) -> f64 {
        self.closest(q).1.sqrt()
    }
}

/// Signed distances sampled at every lattice vertex, x fastest.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SdfGrid {
    pub spec: GridSpec,
    pub values: Vec<f64>,
}

impl SdfGrid {
    pub fn from_fn(spec: GridSpec, f: impl Fn(Vec3) -> f64 + Sync) -> SdfGrid {
        let values = (0..spec.vertex_count())
            .into_par_iter()
            .map(|idx| {
                let [i, j, k] = spec.unindex(idx);
                f(spec.vertex(i, j, k))
            })
            .collect();
        SdfGrid { spec, values }
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize, k: usize) -> f64 {
        self.values[self.spec.index(i, j, k)]
    }
}

/// Samples `sdf` at all `(n + 1)^3` lattice vertices.
pub fn sample_grid(sdf: &MeshSdf, spec: GridSpec) -> SdfGrid {
    SdfGrid::from_fn(spec, |q| sdf.signed_distance(&q))
}
