//! Procedural closed meshes used for demo scenes and tests. All are wound
//! counter-clockwise seen from outside.

use std::collections::HashMap;
use std::f64::consts::{PI, TAU};

use super::MeshData;
use crate::Vec3;

/// Axis-aligned box with 8 vertices and 12 triangles.
pub fn cuboid(lo: Vec3, hi: Vec3) -> MeshData {
    let vertices = (0..8)
        .map(|b| {
            Vec3::new(
                if b & 1 == 0 { lo.x } else { hi.x },
                if b & 2 == 0 { lo.y } else { hi.y },
                if b & 4 == 0 { lo.z } else { hi.z },
            )
        })
        .collect();
    // quads listed counter-clockwise from outside
    let quads = [
        [0, 2, 3, 1], // -z
        [4, 5, 7, 6], // +z
        [0, 1, 5, 4], // -y
        [2, 6, 7, 3], // +y
        [0, 4, 6, 2], // -x
        [1, 3, 7, 5], // +x
    ];
    let triangles = quads
        .iter()
        .flat_map(|&[a, b, c, d]| [[a, b, c], [a, c, d]])
        .collect();
    MeshData {
        vertices,
        triangles,
    }
}

/// Subdivided icosahedron projected onto a sphere; `10 * 4^levels + 2` vertices.
pub fn icosphere(levels: u32, center: Vec3, radius: f64) -> MeshData {
    let t = (1.0 + 5f64.sqrt()) / 2.0;
    let mut verts: Vec<Vec3> = [
        [-1.0, t, 0.0],
        [1.0, t, 0.0],
        [-1.0, -t, 0.0],
        [1.0, -t, 0.0],
        [0.0, -1.0, t],
        [0.0, 1.0, t],
        [0.0, -1.0, -t],
        [0.0, 1.0, -t],
        [t, 0.0, -1.0],
        [t, 0.0, 1.0],
        [-t, 0.0, -1.0],
        [-t, 0.0, 1.0],
    ]
    .iter()
    .map(|p| Vec3::from(*p).normalize())
    .collect();
    let mut faces: Vec<[usize; 3]> = vec![
        [0, 11, 5],
        [0, 5, 1],
        [0, 1, 7],
        [0, 7, 10],
        [0, 10, 11],
        [1, 5, 9],
        [5, 11, 4],
        [11, 10, 2],
        [10, 7, 6],
        [7, 1, 8],
        [3, 9, 4],
        [3, 4, 2],
        [3, 2, 6],
        [3, 6, 8],
        [3, 8, 9],
        [4, 9, 5],
        [2, 4, 11],
        [6, 2, 10],
        [8, 6, 7],
        [9, 8, 1],
    ];
    for _ in 0..levels {
        let mut midpoints: HashMap<(usize, usize), usize> = HashMap::new();
        let mut midpoint = |a: usize, b: usize, verts: &mut Vec<Vec3>| {
            *midpoints.entry((a.min(b), a.max(b))).or_insert_with(|| {
                verts.push(((verts[a] + verts[b]) * 0.5).normalize());
                verts.len() - 1
            })
        };
        let mut next = Vec::with_capacity(faces.len() * 4);
        for &[a, b, c] in &faces {
            let ab = midpoint(a, b, &mut verts);
            let bc = midpoint(b, c, &mut verts);
            let ca = midpoint(c, a, &mut verts);
            next.extend_from_slice(&[[a, ab, ca], [b, bc, ab], [c, ca, bc], [ab, bc, ca]]);
        }
        faces = next;
    }
    MeshData {
        vertices: verts.into_iter().map(|v| center + v * radius).collect(),
        triangles: faces,
    }
}

/// Torus around the z axis through `center`.
pub fn torus(center: Vec3, major: f64, minor: f64, segments: usize, rings: usize) -> MeshData {
    let mut vertices = Vec::with_capacity(segments * rings);
    for i in 0..segments {
        let u = TAU * i as f64 / segments as f64;
        for j in 0..rings {
            let v = TAU * j as f64 / rings as f64;
            let rho = major + minor * v.cos();
            vertices.push(center + Vec3::new(rho * u.cos(), rho * u.sin(), minor * v.sin()));
        }
    }
    let id = |i: usize, j: usize| (i % segments) * rings + (j % rings);
    let mut triangles = Vec::with_capacity(2 * segments * rings);
    for i in 0..segments {
        for j in 0..rings {
            let (a, b, c, d) = (id(i, j), id(i + 1, j), id(i + 1, j + 1), id(i, j + 1));
            triangles.push([a, b, c]);
            triangles.push([a, c, d]);
        }
    }
    MeshData {
        vertices,
        triangles,
    }
}

/// Closed surface of revolution about the x axis through `center`.
///
/// `profile(t)` for `t` in `[0, pi]` returns `(x, radius)`; the radius must vanish
/// at both ends, which become poles.
pub fn revolution(
    center: Vec3,
    profile: impl Fn(f64) -> (f64, f64),
    stations: usize,
    segments: usize,
) -> MeshData {
    let mut vertices = Vec::with_capacity((stations - 1) * segments + 2);
    let (x0, _) = profile(0.0);
    vertices.push(center + Vec3::new(x0, 0.0, 0.0));
    for s in 1..stations {
        let (x, r) = profile(PI * s as f64 / stations as f64);
        for k in 0..segments {
            let phi = TAU * k as f64 / segments as f64;
            vertices.push(center + Vec3::new(x, r * phi.cos(), r * phi.sin()));
        }
    }
    let (x1, _) = profile(PI);
    vertices.push(center + Vec3::new(x1, 0.0, 0.0));
    let last = vertices.len() - 1;
    let ring = |s: usize, k: usize| 1 + (s - 1) * segments + k % segments;

    let mut triangles = Vec::new();
    for k in 0..segments {
        triangles.push([0, ring(1, k + 1), ring(1, k)]);
    }
    for s in 1..stations - 1 {
        for k in 0..segments {
            let (a, b, c, d) = (ring(s, k), ring(s, k + 1), ring(s + 1, k + 1), ring(s + 1, k));
            triangles.push([a, b, c]);
            triangles.push([a, c, d]);
        }
    }
    for k in 0..segments {
        triangles.push([last, ring(stations - 1, k), ring(stations - 1, k + 1)]);
    }
    MeshData {
        vertices,
        triangles,
    }
}

/// Peanut-shaped solid of revolution along x with a neck of radius `neck` at `center`.
pub fn peanut(center: Vec3, half_length: f64, neck: f64, bulge: f64) -> MeshData {
    // profile x = -L cos t so stations run from -x to +x
    revolution(
        center,
        |t| {
            let c = t.cos();
            (-half_length * c, t.sin() * (neck + bulge * c * c))
        },
        96,
        64,
    )
}
